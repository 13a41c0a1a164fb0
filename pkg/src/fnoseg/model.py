"""Network assembly: the spectral segmentation model and its ablation
variants, parameter initialization and counting, checkpoint I/O, and a
small spatial-CNN baseline used only for resolution-robustness contrast.

Pipeline of the spectral architecture:

    input -> learnable stride-2 downsampling -> N Fourier blocks
          -> learnable stride-2 upsampling -> per-voxel softmax

One Fourier block is pre-norm: u = LN(v); y = W u + spectral(u);
out = v + SELU(y) (the identity skip spans the block and is dropped when
the residual flag is off). No parameter shape depends on the input grid,
so one parameter set serves any input resolution with spatial dims >= 4.

During training with deep supervision, every tap layer feeds its own
stride-2 transposed-conv head (a clone of the main output head) whose
softmax scores enter the loss alongside the main output.
"""

from __future__ import annotations

import dataclasses
import json
import struct
from dataclasses import dataclass, field

import numpy as np

from . import ops
from .errors import (
    CheckpointVersionError,
    CorruptCheckpointError,
    DimensionError,
    InvalidConfigError,
)
from .ops import ModeMask, Node, Parameter, Tape
from .seeding import derive_rng

CHECKPOINT_MAGIC = b"FNCK"
CHECKPOINT_VERSION = 1

VARIANTS = ("fnoseg3d", "fno_shared", "fno_original", "baseline_cnn")


@dataclass(frozen=True)
class ModelConfig:
    in_channels: int = 4
    out_labels: int = 4  # background + three annotations
    width: int = 12
    n_layers: int = 32
    k_max: tuple = (15, 15, 10)
    shared_weights: bool = True
    residual: bool = True
    deep_supervision: bool = True
    learnable_resampling: bool = True
    ds_tap_stride: int = 1
    seed: int = 0
    arch: str = "fno"  # "fno" or "cnn" (spatial baseline)

    def validate(self):
        if self.arch not in ("fno", "cnn"):
            raise InvalidConfigError(f"unknown arch {self.arch!r}")
        if self.width < 1 or self.n_layers < 1:
            raise InvalidConfigError(f"width and n_layers must be >= 1, got {self.width}, {self.n_layers}")
        if self.in_channels < 1 or self.out_labels < 2:
            raise InvalidConfigError("need in_channels >= 1 and out_labels >= 2")
        if len(self.k_max) != 3 or min(self.k_max) < 0:
            raise InvalidConfigError(f"k_max must be three counts >= 0, got {self.k_max}")
        if self.ds_tap_stride < 1:
            raise InvalidConfigError("ds_tap_stride must be >= 1")

    def ds_taps(self) -> tuple:
        """1-based layer indices whose outputs feed auxiliary heads (all
        strictly before the final layer, which feeds the main head)."""
        if not self.deep_supervision:
            return ()
        return tuple(t for t in range(self.ds_tap_stride, self.n_layers, self.ds_tap_stride))

    def to_dict(self):
        d = dataclasses.asdict(self)
        d["k_max"] = list(self.k_max)
        return d

    @staticmethod
    def from_dict(d) -> "ModelConfig":
        d = dict(d)
        d["k_max"] = tuple(d["k_max"])
        return ModelConfig(**d)


def variant_config(variant: str, **overrides) -> ModelConfig:
    """Preset flag combinations for the four studied model variants."""
    presets = {
        "fnoseg3d": dict(shared_weights=True, residual=True, deep_supervision=True),
        "fno_shared": dict(shared_weights=True, residual=False, deep_supervision=False),
        "fno_original": dict(shared_weights=False, residual=False, deep_supervision=False),
        "baseline_cnn": dict(arch="cnn"),
    }
    if variant not in presets:
        raise InvalidConfigError(f"unknown variant {variant!r}, expected one of {VARIANTS}")
    kw = dict(presets[variant])
    kw.update(overrides)
    return ModelConfig(**kw)


@dataclass
class ModelParams:
    config: ModelConfig
    params: dict  # name -> Parameter, insertion-ordered

    def parameters(self):
        return self.params.values()

    def __getitem__(self, name) -> Parameter:
        return self.params[name]

    def zero_grads(self):
        for p in self.params.values():
            p.zero_grad()


@dataclass
class ForwardOutput:
    main: Node  # softmax scores at input resolution
    aux: list = field(default_factory=list)  # auxiliary head scores (training only)

    @property
    def scores(self) -> np.ndarray:
        return self.main.value

    def all_outputs(self):
        return [self.main, *self.aux]


# ---------------------------------------------------------------------------
# construction


def _uniform(rng, shape, bound, dtype):
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


class _Builder:
    def __init__(self, seed, dtype):
        self.seed = seed
        self.dtype = dtype
        self.params = {}

    def add(self, name, value) -> Parameter:
        p = Parameter(name, value)
        self.params[name] = p
        return p

    def uniform(self, name, shape, fan_in) -> Parameter:
        rng = derive_rng(self.seed, "init", name)
        return self.add(name, _uniform(rng, shape, 1.0 / np.sqrt(fan_in), self.dtype))

    def spectral(self, name, shape, width) -> Parameter:
        rng = derive_rng(self.seed, "init", name)
        return self.add(name, _uniform(rng, shape, 1.0 / width, self.dtype))

    def constant(self, name, shape, value) -> Parameter:
        return self.add(name, np.full(shape, value, dtype=self.dtype))


def _build_fno(config: ModelConfig, b: _Builder):
    c_in, d, L = config.in_channels, config.width, config.out_labels
    if config.learnable_resampling:
        b.uniform("lift.k", (d, c_in, 2, 2, 2), c_in * 8)
        b.constant("lift.b", (d,), 0.0)
    else:
        b.uniform("lift.w", (d, c_in), c_in)
        b.constant("lift.b", (d,), 0.0)
    kx, ky, kz = config.k_max
    for i in range(config.n_layers):
        b.constant(f"layer{i}.ln_g", (d,), 1.0)
        b.constant(f"layer{i}.ln_b", (d,), 0.0)
        b.uniform(f"layer{i}.w", (d, d), d)
        b.constant(f"layer{i}.w_b", (d,), 0.0)
        if config.shared_weights:
            shape = (d, d)
        else:
            shape = (2 * kx + 1, 2 * ky + 1, 2 * kz + 1, d, d)
        b.spectral(f"layer{i}.r_re", shape, d)
        b.spectral(f"layer{i}.r_im", shape, d)
    if config.learnable_resampling:
        b.uniform("head.k", (d, L, 2, 2, 2), d)
        b.constant("head.b", (L,), 0.0)
        for t in config.ds_taps():
            b.uniform(f"aux{t}.k", (d, L, 2, 2, 2), d)
            b.constant(f"aux{t}.b", (L,), 0.0)
    else:
        b.uniform("head.w", (L, d), d)
        b.constant("head.b", (L,), 0.0)
        for t in config.ds_taps():
            b.uniform(f"aux{t}.w", (L, d), d)
            b.constant(f"aux{t}.b", (L,), 0.0)


def _build_cnn(config: ModelConfig, b: _Builder):
    c_in, L = config.in_channels, config.out_labels
    c1 = config.width
    c2 = config.width + 4
    b.uniform("down1.k", (c1, c_in, 2, 2, 2), c_in * 8)
    b.constant("down1.b", (c1,), 0.0)
    for name, c in (("block1", c1), ("block2", c2), ("block3", c1)):
        b.constant(f"{name}.ln_g", (c,), 1.0)
        b.constant(f"{name}.ln_b", (c,), 0.0)
        b.uniform(f"{name}.k", (c, c, 3, 3, 3), c * 27)
        b.constant(f"{name}.b", (c,), 0.0)
    b.uniform("down2.k", (c2, c1, 2, 2, 2), c1 * 8)
    b.constant("down2.b", (c2,), 0.0)
    b.uniform("up1.k", (c2, c1, 2, 2, 2), c2)
    b.constant("up1.b", (c1,), 0.0)
    b.uniform("up2.k", (c1, L, 2, 2, 2), c1)
    b.constant("up2.b", (L,), 0.0)


def build(config: ModelConfig, dtype=np.float64) -> ModelParams:
    """Allocate and initialize all parameters; deterministic given
    config.seed (each tensor draws from its own named substream)."""
    config.validate()
    builder = _Builder(config.seed, np.dtype(dtype))
    if config.arch == "cnn":
        _build_cnn(config, builder)
    else:
        _build_fno(config, builder)
    return ModelParams(config=config, params=builder.params)


def build_baseline_cnn(config: ModelConfig, dtype=np.float64) -> ModelParams:
    """Small plain spatial-convolution encoder-decoder used only to
    exhibit the resolution-fragility contrast."""
    return build(dataclasses.replace(config, arch="cnn"), dtype=dtype)


# ---------------------------------------------------------------------------
# counting


def param_count(params: ModelParams) -> int:
    """Exact number of scalar learnables (complex weights count their two
    real tensors)."""
    return int(sum(p.value.size for p in params.parameters()))


def param_count_breakdown(params: ModelParams) -> dict:
    """Per-block subtotals keyed by the name prefix before the dot."""
    out = {}
    for name, p in params.params.items():
        block = name.split(".")[0]
        out[block] = out.get(block, 0) + int(p.value.size)
    return out


def count_from_config(config: ModelConfig) -> int:
    """Parameter count as a pure function of the config, without
    allocating tensors (the count never depends on input data)."""
    config.validate()
    c_in, d, L = config.in_channels, config.width, config.out_labels
    if config.arch == "cnn":
        c1, c2 = d, d + 4
        total = c1 * c_in * 8 + c1  # down1
        for c in (c1, c2, c1):  # blocks
            total += 2 * c + c * c * 27 + c
        total += c2 * c1 * 8 + c2  # down2
        total += c2 * c1 * 8 + c1  # up1
        total += c1 * L * 8 + L  # up2
        return total
    kx, ky, kz = config.k_max
    if config.shared_weights:
        r_size = d * d
    else:
        r_size = (2 * kx + 1) * (2 * ky + 1) * (2 * kz + 1) * d * d
    per_layer = 2 * d + (d * d + d) + 2 * r_size
    total = config.n_layers * per_layer
    if config.learnable_resampling:
        total += d * c_in * 8 + d  # lift
        head = d * L * 8 + L
    else:
        total += d * c_in + d
        head = L * d + L
    total += head * (1 + len(config.ds_taps()))
    return total


# ---------------------------------------------------------------------------
# forward passes


def _check_volume(config, volume):
    volume = np.asarray(volume)
    if volume.ndim != 4 or volume.shape[0] != config.in_channels:
        raise DimensionError(f"expected volume of shape ({config.in_channels}, nx, ny, nz), got {volume.shape}")
    if min(volume.shape[1:]) < 4:
        raise DimensionError(f"volume spatial dims must be >= 4 per axis, got {volume.shape[1:]}")
    return volume


def _forward_fno(params: ModelParams, volume, training, tape):
    cfg = params.config
    p = params.params
    target = volume.shape[1:]
    x = Node(volume)
    if cfg.learnable_resampling:
        h = ops.conv3_down(tape, x, p["lift.k"], p["lift.b"])
    else:
        h = ops.pointwise_linear(tape, ops.avg_pool_down2(tape, x), p["lift.w"], p["lift.b"])
    mask = ModeMask(cfg.k_max)
    spectral = ops.spectral_conv_shared if cfg.shared_weights else ops.spectral_conv_permode
    taps = {}
    tap_set = set(cfg.ds_taps()) if training else set()
    for i in range(cfg.n_layers):
        u = ops.layer_norm(tape, h, p[f"layer{i}.ln_g"], p[f"layer{i}.ln_b"])
        a = ops.pointwise_linear(tape, u, p[f"layer{i}.w"], p[f"layer{i}.w_b"])
        s = spectral(tape, u, p[f"layer{i}.r_re"], p[f"layer{i}.r_im"], mask)
        y = ops.selu(tape, ops.residual_add(tape, a, s))
        h = ops.residual_add(tape, h, y) if cfg.residual else y
        if (i + 1) in tap_set:
            taps[i + 1] = h

    def head(feat, prefix):
        if cfg.learnable_resampling:
            z = ops.tconv3_up(tape, feat, p[f"{prefix}.k"], p[f"{prefix}.b"], target)
        else:
            z = ops.nearest_up2(tape, ops.pointwise_linear(tape, feat, p[f"{prefix}.w"], p[f"{prefix}.b"]), target)
        return ops.softmax_channels(tape, z)

    main = head(h, "head")
    aux = [head(taps[t], f"aux{t}") for t in sorted(taps)]
    return ForwardOutput(main=main, aux=aux)


def _forward_cnn(params: ModelParams, volume, training, tape):
    p = params.params
    target = volume.shape[1:]
    x = Node(volume)

    def block(v, name):
        u = ops.layer_norm(tape, v, p[f"{name}.ln_g"], p[f"{name}.ln_b"])
        return ops.selu(tape, ops.conv3_same(tape, u, p[f"{name}.k"], p[f"{name}.b"]))

    h1 = ops.conv3_down(tape, x, p["down1.k"], p["down1.b"])
    mid_target = h1.value.shape[1:]
    h = block(h1, "block1")
    h = ops.conv3_down(tape, h, p["down2.k"], p["down2.b"])
    h = block(h, "block2")
    h = ops.tconv3_up(tape, h, p["up1.k"], p["up1.b"], mid_target)
    h = block(h, "block3")
    h = ops.tconv3_up(tape, h, p["up2.k"], p["up2.b"], target)
    return ForwardOutput(main=ops.softmax_channels(tape, h))


def forward(params: ModelParams, volume, training=False, tape: Tape | None = None) -> ForwardOutput:
    """Evaluate the model on one volume of any resolution >= 4 per axis.

    Pure function of (params, volume): repeated calls are bit-identical.
    Pass a Tape to record for backward; `training` additionally enables
    the deep-supervision heads.
    """
    volume = _check_volume(params.config, volume)
    dtype = next(iter(params.parameters())).value.dtype
    volume = np.ascontiguousarray(volume, dtype=dtype)
    if params.config.arch == "cnn":
        return _forward_cnn(params, volume, training, tape)
    return _forward_fno(params, volume, training, tape)


# ---------------------------------------------------------------------------
# checkpoints


def save_checkpoint(params: ModelParams, path) -> None:
    """Bit-exact serialization: magic, version, config JSON, named-tensor
    manifest (name, dtype, shape, offset), then little-endian payload."""
    manifest = []
    offset = 0
    payload = []
    for name, p in params.params.items():
        arr = np.ascontiguousarray(p.value)
        le = arr.astype(arr.dtype.newbyteorder("<"), copy=False)
        raw = le.tobytes()
        manifest.append({"name": name, "dtype": arr.dtype.name, "shape": list(arr.shape), "offset": offset})
        payload.append(raw)
        offset += len(raw)
    config_json = json.dumps(params.config.to_dict(), sort_keys=True, separators=(",", ":")).encode()
    manifest_json = json.dumps(manifest, sort_keys=True, separators=(",", ":")).encode()
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<III", CHECKPOINT_VERSION, len(config_json), len(manifest_json)))
        fh.write(config_json)
        fh.write(manifest_json)
        for raw in payload:
            fh.write(raw)


def load_checkpoint(path) -> ModelParams:
    blob = open(path, "rb").read()
    if len(blob) < 16 or blob[:4] != CHECKPOINT_MAGIC:
        raise CorruptCheckpointError(f"{path}: bad checkpoint magic")
    version, config_len, manifest_len = struct.unpack("<III", blob[4:16])
    if version != CHECKPOINT_VERSION:
        raise CheckpointVersionError(f"{path}: unsupported checkpoint version {version}")
    try:
        config = ModelConfig.from_dict(json.loads(blob[16 : 16 + config_len].decode()))
        manifest = json.loads(blob[16 + config_len : 16 + config_len + manifest_len].decode())
    except (ValueError, KeyError, TypeError) as exc:
        raise CorruptCheckpointError(f"{path}: malformed checkpoint header: {exc}") from exc
    base = 16 + config_len + manifest_len
    params = {}
    for entry in manifest:
        dtype = np.dtype(entry["dtype"]).newbyteorder("<")
        shape = tuple(entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        start = base + entry["offset"]
        if start + count * dtype.itemsize > len(blob):
            raise CorruptCheckpointError(f"{path}: payload truncated at tensor {entry['name']}")
        arr = np.frombuffer(blob, dtype=dtype, count=count, offset=start).reshape(shape)
        params[entry["name"]] = Parameter(entry["name"], arr.astype(dtype.newbyteorder("=")))
    loaded = ModelParams(config=config, params=params)
    expected = build(config, dtype=next(iter(params.values())).value.dtype)
    if set(expected.params) != set(params):
        raise CorruptCheckpointError(f"{path}: tensor names do not match the embedded config")
    return loaded
