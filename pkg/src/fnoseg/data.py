"""Synthetic multi-modality 3D dataset generation and bit-exact volume I/O.

Each synthetic sample contains three strictly nested deformed ellipsoids
(labels 3 inside 2 inside 1, background 0) filled with per-modality
contrast constants plus Gaussian noise. Evaluation regions are unions of
the base labels: whole = {1,2,3}, core = {2,3}, inner = {3}, mirroring a
nested whole/core/enhancing evaluation protocol.

Volume files use the self-contained "FNV1" format: magic, version, a
canonical JSON header, a little-endian float32 image payload and a uint8
label payload. Round trips are bit-exact.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import (
    CorruptHeaderError,
    DatasetError,
    LabelAlphabetError,
    TruncatedPayloadError,
    UnknownVersionError,
)
from .seeding import derive_rng

MAGIC = b"FNV1"
FORMAT_VERSION = 1

REGION_NAMES = ("whole", "core", "inner")

# per-channel intensity of [background, outer, middle, inner]; chosen so
# every region has a distinct multi-channel signature
DEFAULT_CONTRAST = (
    (0.0, 0.5, 0.8, 1.0),
    (0.0, 0.9, 0.4, 0.7),
    (0.0, 0.3, 1.0, 0.2),
    (0.0, 1.0, 0.9, 0.15),
)


def canonical_json(obj) -> str:
    """Deterministic JSON: sorted keys, no whitespace, repr floats."""
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


@dataclass
class VolumeSample:
    image: np.ndarray  # (channels, nx, ny, nz) float32
    labels: np.ndarray  # (nx, ny, nz) uint8
    sample_id: str
    spacing: tuple = (1.0, 1.0, 1.0)

    def __post_init__(self):
        if self.image.shape[1:] != self.labels.shape:
            raise DatasetError(f"image {self.image.shape} and labels {self.labels.shape} disagree on spatial shape")


@dataclass(frozen=True)
class SyntheticSpec:
    grid: tuple = (64, 64, 64)
    num_samples: int = 200  # training pool, split 90/10 into train/val
    num_test: int = 20
    num_channels: int = 4
    num_labels: int = 4  # background + three nested regions
    contrast: tuple = DEFAULT_CONTRAST
    noise: float = 0.08
    center_band: tuple = (0.38, 0.62)  # center range as fraction of grid
    radius_band: tuple = (0.16, 0.27)  # outer radius range as fraction of grid
    nested_scales: tuple = (1.0, 0.62, 0.36)
    scale_jitter: float = 0.06
    wobble: float = 0.22

    def to_dict(self):
        return dataclasses.asdict(self)

    def spec_hash(self) -> str:
        return hashlib.sha256(canonical_json(self.to_dict()).encode()).hexdigest()[:16]

    def validate(self):
        if min(self.grid) < 8:
            raise DatasetError(f"grid {self.grid} too small for nested regions")
        if self.num_samples < 2 or self.num_test < 0:
            raise DatasetError("need at least 2 pool samples")
        if len(self.contrast) != self.num_channels or any(len(row) != self.num_labels for row in self.contrast):
            raise DatasetError("contrast table must be num_channels x num_labels")
        if not (0 < self.nested_scales[2] < self.nested_scales[1] < self.nested_scales[0]):
            raise DatasetError("nested_scales must strictly decrease")


@dataclass
class ManifestEntry:
    path: str
    split: str
    sample_id: str


@dataclass
class DatasetManifest:
    entries: list
    spec_hash: str
    root: Path = field(default=Path("."), compare=False)

    def paths(self, split: str) -> list:
        return [self.root / e.path for e in self.entries if e.split == split]

    def to_dict(self):
        return {
            "spec_hash": self.spec_hash,
            "samples": [{"path": e.path, "split": e.split, "id": e.sample_id} for e in self.entries],
        }


# ---------------------------------------------------------------------------
# generation


def _rotation_matrix(rng) -> np.ndarray:
    axis = rng.standard_normal(3)
    axis /= np.linalg.norm(axis)
    angle = rng.uniform(0.0, np.pi)
    kx, ky, kz = axis
    k = np.array([[0, -kz, ky], [kz, 0, -kx], [-ky, kx, 0]])
    return np.eye(3) + np.sin(angle) * k + (1 - np.cos(angle)) * (k @ k)


def _draw_regions(spec: SyntheticSpec, rng) -> np.ndarray:
    """Label volume with three strictly nested deformed ellipsoids.

    All three regions share one deformation field (an anisotropic rotated
    ellipsoid with a smooth directional wobble) and differ only by their
    radial scale, so nesting holds for every voxel by construction.
    """
    nx, ny, nz = spec.grid
    lo, hi = spec.center_band
    center = np.array([rng.uniform(lo * n, hi * n) for n in spec.grid])
    radii = np.array([rng.uniform(spec.radius_band[0] * n, spec.radius_band[1] * n) for n in spec.grid])
    rot = _rotation_matrix(rng)
    scales = np.array(spec.nested_scales) * (1.0 + rng.uniform(-spec.scale_jitter, spec.scale_jitter, size=3))
    scales = np.sort(scales)[::-1]
    wobble_dir = rng.standard_normal(3)
    wobble_dir /= np.linalg.norm(wobble_dir)
    wobble_amp = rng.uniform(-spec.wobble, spec.wobble)

    grid = np.stack(
        np.meshgrid(np.arange(nx), np.arange(ny), np.arange(nz), indexing="ij"), axis=-1
    ).astype(np.float64)
    u = (grid - center) @ rot.T / radii
    rho = np.linalg.norm(u, axis=-1)
    with np.errstate(invalid="ignore", divide="ignore"):
        d = np.where(rho[..., None] > 0, u / np.maximum(rho, 1e-12)[..., None], 0.0)
    w = 1.0 + wobble_amp * (d @ wobble_dir) ** 2
    labels = np.zeros(spec.grid, dtype=np.uint8)
    for level, s in enumerate(scales, start=1):
        labels[rho <= s * w] = level
    return labels


def _render_sample(spec: SyntheticSpec, labels: np.ndarray, rng) -> np.ndarray:
    contrast = np.asarray(spec.contrast, dtype=np.float64)
    image = contrast[:, labels.astype(np.intp)]
    if spec.noise > 0:
        image = image + spec.noise * rng.standard_normal(image.shape)
    return image.astype(np.float32)


def make_sample(spec: SyntheticSpec, seed: int, index: int) -> VolumeSample:
    """Deterministically generate sample `index` of a dataset."""
    for attempt in range(20):
        rng = derive_rng(seed, "sample", index, attempt)
        labels = _draw_regions(spec, rng)
        counts = np.bincount(labels.reshape(-1), minlength=spec.num_labels)
        if np.all(counts[1:] > 0):
            image = _render_sample(spec, labels, rng)
            return VolumeSample(image=image, labels=labels, sample_id=f"synth_{index:04d}")
    raise DatasetError(f"could not draw non-empty nested regions for sample {index}")


def generate_synthetic(spec: SyntheticSpec, seed: int, out_dir) -> DatasetManifest:
    """Generate the full dataset under `out_dir` and write its manifest.

    Deterministic given (spec, seed): identical inputs give byte-identical
    files. The training pool is split 90/10 into train/val; the test pool
    is disjoint.
    """
    spec.validate()
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    # 90/10 split, clamped so neither split is ever empty
    n_train = min(spec.num_samples - 1, max(1, int(round(spec.num_samples * 0.9))))
    entries = []
    for index in range(spec.num_samples + spec.num_test):
        sample = make_sample(spec, seed, index)
        if index < n_train:
            split = "train"
        elif index < spec.num_samples:
            split = "val"
        else:
            split = "test"
        rel = f"{sample.sample_id}.fnv"
        write_volume(sample, out_dir / rel)
        entries.append(ManifestEntry(path=rel, split=split, sample_id=sample.sample_id))
    manifest = DatasetManifest(entries=entries, spec_hash=spec.spec_hash(), root=out_dir)
    (out_dir / "manifest.json").write_text(canonical_json(manifest.to_dict()) + "\n")
    return manifest


def load_manifest(path) -> DatasetManifest:
    path = Path(path)
    try:
        raw = json.loads(path.read_text())
        entries = [ManifestEntry(path=s["path"], split=s["split"], sample_id=s["id"]) for s in raw["samples"]]
        return DatasetManifest(entries=entries, spec_hash=raw["spec_hash"], root=path.parent)
    except (KeyError, ValueError, TypeError) as exc:
        raise DatasetError(f"invalid manifest {path}: {exc}") from exc


# ---------------------------------------------------------------------------
# FNV1 volume files


def write_volume(sample: VolumeSample, path) -> None:
    image = np.ascontiguousarray(sample.image, dtype="<f4")
    labels = np.ascontiguousarray(sample.labels, dtype=np.uint8)
    header = canonical_json(
        {
            "shape": list(image.shape),
            "image_dtype": "<f4",
            "label_dtype": "u1",
            "id": sample.sample_id,
            "spacing": list(sample.spacing),
        }
    ).encode()
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<II", FORMAT_VERSION, len(header)))
        fh.write(header)
        fh.write(image.tobytes())
        fh.write(labels.tobytes())


def read_volume(path) -> VolumeSample:
    blob = Path(path).read_bytes()
    if len(blob) < 12 or blob[:4] != MAGIC:
        raise CorruptHeaderError(f"{path}: bad magic bytes")
    version, header_len = struct.unpack("<II", blob[4:12])
    if version != FORMAT_VERSION:
        raise UnknownVersionError(f"{path}: unsupported volume format version {version}")
    if len(blob) < 12 + header_len:
        raise CorruptHeaderError(f"{path}: truncated header")
    try:
        header = json.loads(blob[12 : 12 + header_len].decode())
        shape = tuple(int(s) for s in header["shape"])
        sample_id = header["id"]
        spacing = tuple(header["spacing"])
    except (ValueError, KeyError, TypeError) as exc:
        raise CorruptHeaderError(f"{path}: malformed header JSON: {exc}") from exc
    if len(shape) != 4:
        raise CorruptHeaderError(f"{path}: header shape {shape} is not 4D")
    image_bytes = int(np.prod(shape)) * 4
    label_bytes = int(np.prod(shape[1:]))
    offset = 12 + header_len
    if len(blob) < offset + image_bytes + label_bytes:
        raise TruncatedPayloadError(
            f"{path}: payload has {len(blob) - offset} bytes, header promises {image_bytes + label_bytes}"
        )
    image = np.frombuffer(blob, dtype="<f4", count=int(np.prod(shape)), offset=offset).reshape(shape).copy()
    labels = (
        np.frombuffer(blob, dtype=np.uint8, count=label_bytes, offset=offset + image_bytes)
        .reshape(shape[1:])
        .copy()
    )
    return VolumeSample(image=image, labels=labels, sample_id=sample_id, spacing=spacing)


def read_split(manifest: DatasetManifest, split: str) -> list:
    paths = manifest.paths(split)
    if not paths:
        raise DatasetError(f"manifest has no samples in split '{split}'")
    return [read_volume(p) for p in paths]


# ---------------------------------------------------------------------------
# label encodings


def one_hot(labels: np.ndarray, num_labels: int, dtype=np.float64) -> np.ndarray:
    """Encode an integer label volume as a (num_labels, ...) indicator
    Field; exactly one 1 per voxel."""
    labels = np.asarray(labels)
    if labels.min() < 0 or labels.max() >= num_labels:
        raise LabelAlphabetError(f"labels outside [0, {num_labels}): found range [{labels.min()}, {labels.max()}]")
    out = np.zeros((num_labels,) + labels.shape, dtype=dtype)
    idx = np.indices(labels.shape)
    out[(labels.astype(np.intp),) + tuple(idx)] = 1
    return out


def region_masks(labels: np.ndarray) -> dict:
    """Nested evaluation regions from base labels: whole = {1,2,3},
    core = {2,3}, inner = {3}."""
    labels = np.asarray(labels)
    return {
        "whole": labels >= 1,
        "core": labels >= 2,
        "inner": labels == 3,
    }
