"""Differentiable layer vocabulary: forward evaluation plus reverse-mode
gradients composed through a recorded tape.

The tape is a Wengert list: every op appends one backward closure, and
`Tape.backward` replays the closures in reverse execution order, which
guarantees each value has received all of its downstream gradient
contributions before its own closure runs. Complex spectral weights are
stored as paired real tensors (real part, imaginary part); all gradients
are real-valued because the loss is real.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from . import tensor
from .errors import (
    ChannelMismatchError,
    DimensionError,
    EmptyMaskError,
    ShapeMismatchError,
    TapeConsumedError,
    TargetSizeError,
)

SELU_ALPHA = 1.6732632423543772
SELU_LAMBDA = 1.0507009873554805
LN_EPS = 1e-5


class Node:
    """A value produced during a taped forward pass, with a gradient slot."""

    __slots__ = ("value", "grad", "_owns_grad")

    def __init__(self, value):
        self.value = np.asarray(value)
        self.grad = None
        self._owns_grad = False

    def add_grad(self, g):
        if self.grad is None:
            self.grad = g
            self._owns_grad = False
        elif self._owns_grad:
            self.grad += g
        else:
            self.grad = self.grad + g
            self._owns_grad = True


class Parameter(Node):
    """A named learnable tensor; its gradient buffer always exists and
    mirrors the value's shape."""

    __slots__ = ("name",)

    def __init__(self, name: str, value):
        super().__init__(np.asarray(value))
        self.name = name
        self.grad = np.zeros_like(self.value)
        self._owns_grad = True

    def zero_grad(self):
        self.grad = np.zeros_like(self.value)
        self._owns_grad = True


class Tape:
    """Ordered record of executed ops with the caches their backward
    passes need. One forward pass, one backward pass; the caches are
    consumed by backward()."""

    def __init__(self):
        self._records = []
        self._consumed = False

    def record(self, out: Node, backward_fn):
        self._records.append((out, backward_fn))

    def backward(self, seeds):
        """Accumulate gradients for one or more seeded outputs.

        `seeds` is (node, grad) or a list of such pairs. Raises
        TapeConsumedError if no forward pass is recorded or backward
        already ran.
        """
        if self._consumed:
            raise TapeConsumedError("backward() already consumed this tape; record a new forward pass")
        if not self._records:
            raise TapeConsumedError("backward() called before any forward pass was recorded")
        if isinstance(seeds, tuple) and len(seeds) == 2 and isinstance(seeds[0], Node):
            seeds = [seeds]
        for node, g in seeds:
            node.add_grad(np.asarray(g, dtype=node.value.dtype))
        for out, fn in reversed(self._records):
            if out.grad is not None:
                fn(out.grad)
        self._consumed = True
        self._records = []


def backward(tape: Tape, seeds) -> None:
    """Replay `tape` in reverse, writing gradients into every Parameter."""
    tape.backward(seeds)


def _record(tape, out, fn):
    if tape is not None:
        tape.record(out, fn)


def _spatial(v: Node):
    return v.value.shape[1:]


# ---------------------------------------------------------------------------
# mode mask


@dataclass(frozen=True)
class ModeMask:
    """Retained-mode bounds per axis.

    A mode is retained iff its signed frequency magnitude min(k, n - k)
    is <= k_max on the full x/y axes, and its direct index is <= k_max on
    the half z axis. Retention is separable per axis, so the retained set
    is a product of per-axis index lists.
    """

    k_max: tuple

    def __post_init__(self):
        kx, ky, kz = self.k_max
        if min(kx, ky, kz) < 0:
            raise EmptyMaskError(f"k_max components must be >= 0, got {self.k_max}")

    def half_axes(self, spatial):
        """Per-axis retained index arrays for a stored half-spectrum."""
        nx, ny, nz = spatial
        return _half_axes(nx, ny, nz, self.k_max)

    def full_axes(self, spatial):
        """Per-axis (grid index, slot index, mirror slot index) triples for
        full-spectrum per-mode weights on a symmetric slot grid
        [-k_max .. k_max]."""
        return tuple(_full_axis(n, m) for n, m in zip(spatial, self.k_max))

    def retained_count(self, spatial) -> int:
        ax = self.half_axes(spatial)
        return len(ax[0]) * len(ax[1]) * len(ax[2])


@lru_cache(maxsize=256)
def _half_axes(nx, ny, nz, k_max):
    kx, ky, kz = k_max
    ax = np.nonzero(np.abs(tensor.signed_freq(nx)) <= kx)[0]
    ay = np.nonzero(np.abs(tensor.signed_freq(ny)) <= ky)[0]
    nzh = nz // 2 + 1
    az = np.arange(min(kz, nzh - 1) + 1)
    if min(len(ax), len(ay), len(az)) == 0:
        raise EmptyMaskError(f"mask {k_max} retains no mode on grid {(nx, ny, nz)}")
    return ax, ay, az


@lru_cache(maxsize=256)
def _full_axis(n, m):
    f = tensor.signed_freq(n)
    keep = np.nonzero(np.abs(f) <= m)[0]
    slots = f[keep] + m
    mirror = f[(-keep) % n] + m
    return keep, slots, mirror


def _mode_weights(spatial, az):
    """Half-spectrum multiplicity (2 interior, 1 on self-stored planes)
    restricted to retained z indices."""
    nz = spatial[2]
    w = np.full(len(az), 2.0)
    w[az == 0] = 1.0
    if nz % 2 == 0:
        w[az == nz // 2] = 1.0
    return w


# ---------------------------------------------------------------------------
# channel-mixing and spectral ops


def pointwise_linear(tape, v: Node, w: Parameter, b: Parameter | None) -> Node:
    """Apply one matrix to every voxel's channel vector, plus bias."""
    d_out, d_in = w.value.shape
    if v.value.shape[0] != d_in:
        raise ChannelMismatchError(f"pointwise_linear: input has {v.value.shape[0]} channels, weight expects {d_in}")
    spatial = _spatial(v)
    vf = v.value.reshape(d_in, -1)
    y = w.value @ vf
    if b is not None:
        y += b.value[:, None]
    out = Node(y.reshape(d_out, *spatial))

    def bwd(g):
        gf = g.reshape(d_out, -1)
        w.add_grad(gf @ vf.T)
        if b is not None:
            b.add_grad(gf.sum(axis=1))
        v.add_grad((w.value.T @ gf).reshape(d_in, *spatial))

    _record(tape, out, bwd)
    return out


def spectral_conv_shared(tape, v: Node, r_re: Parameter, r_im: Parameter, mask: ModeMask) -> Node:
    """Global convolution with one complex channel matrix shared by every
    retained Fourier mode.

    Forward: half-spectrum transform, multiply retained modes by
    R = r_re + i*r_im, zero the rest, inverse transform. The inverse
    enforces conjugate symmetry along z, so the realized full-spectrum
    multiplier is R at stored modes and conj(R) at their z-mirrors; on
    the self-stored kz planes only the Hermitian part of R acts (the DC
    mode sees r_re alone).
    """
    d_out, d_in = r_re.value.shape
    if v.value.shape[0] != d_in:
        raise ChannelMismatchError(f"spectral_conv_shared: input has {v.value.shape[0]} channels, R expects {d_in}")
    spatial = _spatial(v)
    ax, ay, az = mask.half_axes(spatial)
    sub = np.ix_(np.arange(d_in), ax, ay, az)
    spec = tensor.rfftn_raw(v.value)
    sm = spec[sub].reshape(d_in, -1)
    r = r_re.value + 1j * r_im.value
    zm = r @ sm
    z = np.zeros((d_out,) + spec.shape[1:], dtype=spec.dtype)
    out_sub = np.ix_(np.arange(d_out), ax, ay, az)
    z[out_sub] = zm.reshape(d_out, len(ax), len(ay), len(az))
    out = Node(tensor.irfftn_raw(z, spatial))

    n_total = int(np.prod(spatial))
    wz = _mode_weights(spatial, az)

    def bwd(g):
        gspec = tensor.rfftn_raw(g)
        gm = gspec[out_sub].reshape(d_out, len(ax), len(ay), len(az))
        # per-mode multiplicity from the implied conjugate mirrors
        gm_w = (gm * wz).reshape(d_out, -1)
        smf = sm.reshape(d_in, -1)
        c = (gm_w @ smf.conj().T) / n_total
        r_re.add_grad(np.ascontiguousarray(c.real))
        r_im.add_grad(np.ascontiguousarray(c.imag))
        zg = np.zeros((d_in,) + gspec.shape[1:], dtype=gspec.dtype)
        zg[sub] = (r.conj().T @ gm.reshape(d_out, -1)).reshape(d_in, len(ax), len(ay), len(az))
        v.add_grad(tensor.irfftn_raw(zg, spatial))

    _record(tape, out, bwd)
    return out


def spectral_conv_permode(tape, v: Node, r_re: Parameter, r_im: Parameter, mask: ModeMask) -> Node:
    """Global convolution with a distinct complex channel matrix per
    retained Fourier mode.

    Weights live on a grid-independent slot grid indexed by signed
    frequency, (2*k_max+1) slots per axis including both z signs; the
    full-spectrum product is projected back to a real field, so mirrored
    slots act through their Hermitian combination. A grid only exercises
    the slots below its own Nyquist frequency.
    """
    mx, my, mz, d_out, d_in = r_re.value.shape
    if v.value.shape[0] != d_in:
        raise ChannelMismatchError(f"spectral_conv_permode: input has {v.value.shape[0]} channels, R expects {d_in}")
    spatial = _spatial(v)
    (gx, sx, mxr), (gy, sy, myr), (gz, sz, mzr) = mask.full_axes(spatial)
    cdtype = np.complex64 if v.value.dtype == np.float32 else np.complex128
    spec = tensor.fftn_raw(v.value).astype(cdtype, copy=False)
    sm = spec[np.ix_(np.arange(d_in), gx, gy, gz)]
    r = (r_re.value + 1j * r_im.value)[np.ix_(sx, sy, sz)]
    zm = np.einsum("xyzoi,ixyz->oxyz", r, sm)
    z = np.zeros((d_out,) + spec.shape[1:], dtype=spec.dtype)
    z[np.ix_(np.arange(d_out), gx, gy, gz)] = zm
    out = Node(np.real(tensor.ifftn_raw(z)).astype(v.value.dtype, copy=False))

    n_total = int(np.prod(spatial))

    def bwd(g):
        gspec = tensor.fftn_raw(g).astype(cdtype, copy=False)
        gm = gspec[np.ix_(np.arange(d_out), gx, gy, gz)]
        c = np.einsum("oxyz,ixyz->xyzoi", gm, sm.conj()) / n_total
        r_re.grad[np.ix_(sx, sy, sz)] += c.real
        r_im.grad[np.ix_(sx, sy, sz)] += c.imag
        # input gradient: multiplier at mode k is R(-k)^T (transpose, no conj)
        rb = (r_re.value + 1j * r_im.value)[np.ix_(mxr, myr, mzr)]
        zg_m = np.einsum("xyzoi,oxyz->ixyz", rb, gm)
        zg = np.zeros((d_in,) + gspec.shape[1:], dtype=gspec.dtype)
        zg[np.ix_(np.arange(d_in), gx, gy, gz)] = zg_m
        v.add_grad(np.real(tensor.ifftn_raw(zg)).astype(v.value.dtype, copy=False))

    _record(tape, out, bwd)
    return out


# ---------------------------------------------------------------------------
# strided resampling ops


def _pad_to_even(x):
    """Replication-pad odd spatial axes up by one cell."""
    pads = [(0, 0)] + [(0, n % 2) for n in x.shape[1:]]
    if any(p[1] for p in pads):
        return np.pad(x, pads, mode="edge"), pads
    return x, pads


def _fold_pad_grad(g, pads):
    """Adjoint of replication padding: fold the padded slice back onto the
    last real slice."""
    for axis, (_, extra) in enumerate(pads):
        if extra:
            edge = [slice(None)] * g.ndim
            last = [slice(None)] * g.ndim
            edge[axis] = slice(-2, -1)
            last[axis] = slice(-1, None)
            g[tuple(edge)] += g[tuple(last)]
            keep = [slice(None)] * g.ndim
            keep[axis] = slice(0, -1)
            g = g[tuple(keep)]
    return g


def conv3_down(tape, v: Node, k: Parameter, b: Parameter | None) -> Node:
    """Stride-2 convolution with a 2x2x2 kernel: non-overlapping blocks,
    odd axes replication-padded to even first. Output dims are
    ceil(n/2)."""
    d_out, d_in = k.value.shape[:2]
    if v.value.shape[0] != d_in:
        raise ChannelMismatchError(f"conv3_down: input has {v.value.shape[0]} channels, kernel expects {d_in}")
    if min(v.value.shape[1:]) < 2:
        raise DimensionError(f"conv3_down needs every spatial axis >= 2, got {v.value.shape[1:]}")
    x, pads = _pad_to_even(v.value)
    hx, hy, hz = (n // 2 for n in x.shape[1:])
    blocks = x.reshape(d_in, hx, 2, hy, 2, hz, 2)
    col = blocks.transpose(0, 2, 4, 6, 1, 3, 5).reshape(d_in * 8, -1)
    w2 = k.value.reshape(d_out, d_in * 8)
    y = w2 @ col
    if b is not None:
        y += b.value[:, None]
    out = Node(y.reshape(d_out, hx, hy, hz))

    def bwd(g):
        gf = g.reshape(d_out, -1)
        k.add_grad((gf @ col.T).reshape(k.value.shape))
        if b is not None:
            b.add_grad(gf.sum(axis=1))
        gcol = (w2.T @ gf).reshape(d_in, 2, 2, 2, hx, hy, hz)
        gx = gcol.transpose(0, 4, 1, 5, 2, 6, 3).reshape(d_in, 2 * hx, 2 * hy, 2 * hz)
        v.add_grad(np.ascontiguousarray(_fold_pad_grad(gx, pads)))

    _record(tape, out, bwd)
    return out


def tconv3_up(tape, v: Node, k: Parameter, b: Parameter | None, target) -> Node:
    """Transposed stride-2 convolution with a 2x2x2 kernel: each input
    voxel scatters one weighted block. The doubled output is cropped to
    `target`, which must be 2n or 2n-1 per axis."""
    d_in, d_out = k.value.shape[:2]
    if v.value.shape[0] != d_in:
        raise ChannelMismatchError(f"tconv3_up: input has {v.value.shape[0]} channels, kernel expects {d_in}")
    sx, sy, sz = v.value.shape[1:]
    target = tuple(int(t) for t in target)
    for n, t in zip((sx, sy, sz), target):
        if t not in (2 * n, 2 * n - 1):
            raise TargetSizeError(f"tconv3_up target {target} unreachable from {(sx, sy, sz)} (allowed 2n or 2n-1)")
    vf = v.value.reshape(d_in, -1)
    w2 = k.value.reshape(d_in, d_out * 8)
    col = (w2.T @ vf).reshape(d_out, 2, 2, 2, sx, sy, sz)
    full = col.transpose(0, 4, 1, 5, 2, 6, 3).reshape(d_out, 2 * sx, 2 * sy, 2 * sz)
    y = np.ascontiguousarray(full[:, : target[0], : target[1], : target[2]])
    if b is not None:
        y += b.value[:, None, None, None]
    out = Node(y)

    def bwd(g):
        if b is not None:
            b.add_grad(g.sum(axis=(1, 2, 3)))
        gfull = np.zeros((d_out, 2 * sx, 2 * sy, 2 * sz), dtype=g.dtype)
        gfull[:, : target[0], : target[1], : target[2]] = g
        gcol = gfull.reshape(d_out, sx, 2, sy, 2, sz, 2).transpose(0, 2, 4, 6, 1, 3, 5).reshape(d_out * 8, -1)
        k.add_grad((vf @ gcol.T).reshape(k.value.shape))
        v.add_grad((w2 @ gcol).reshape(d_in, sx, sy, sz))

    _record(tape, out, bwd)
    return out


def conv3_same(tape, v: Node, k: Parameter, b: Parameter | None) -> Node:
    """Stride-1 3x3x3 convolution with zero padding (spatial dims kept)."""
    d_out, d_in = k.value.shape[:2]
    if v.value.shape[0] != d_in:
        raise ChannelMismatchError(f"conv3_same: input has {v.value.shape[0]} channels, kernel expects {d_in}")
    nx, ny, nz = v.value.shape[1:]
    x = np.pad(v.value, [(0, 0), (1, 1), (1, 1), (1, 1)])
    win = np.lib.stride_tricks.sliding_window_view(x, (3, 3, 3), axis=(1, 2, 3))
    col = win.transpose(0, 4, 5, 6, 1, 2, 3).reshape(d_in * 27, -1)
    w2 = k.value.reshape(d_out, d_in * 27)
    y = w2 @ col
    if b is not None:
        y += b.value[:, None]
    out = Node(y.reshape(d_out, nx, ny, nz))

    def bwd(g):
        gf = g.reshape(d_out, -1)
        k.add_grad((gf @ col.T).reshape(k.value.shape))
        if b is not None:
            b.add_grad(gf.sum(axis=1))
        gcol = (w2.T @ gf).reshape(d_in, 3, 3, 3, nx, ny, nz)
        gpad = np.zeros_like(x)
        for a in range(3):
            for c in range(3):
                for d in range(3):
                    gpad[:, a : a + nx, c : c + ny, d : d + nz] += gcol[:, a, c, d]
        v.add_grad(np.ascontiguousarray(gpad[:, 1 : nx + 1, 1 : ny + 1, 1 : nz + 1]))

    _record(tape, out, bwd)
    return out


def avg_pool_down2(tape, v: Node) -> Node:
    """Fixed 2x2x2 mean pooling (the non-learnable downsampling path);
    odd axes are replication-padded first."""
    if min(v.value.shape[1:]) < 2:
        raise DimensionError(f"avg_pool_down2 needs every spatial axis >= 2, got {v.value.shape[1:]}")
    c = v.value.shape[0]
    x, pads = _pad_to_even(v.value)
    hx, hy, hz = (n // 2 for n in x.shape[1:])
    out = Node(x.reshape(c, hx, 2, hy, 2, hz, 2).mean(axis=(2, 4, 6)))

    def bwd(g):
        gx = np.repeat(np.repeat(np.repeat(g, 2, axis=1), 2, axis=2), 2, axis=3) / 8.0
        v.add_grad(np.ascontiguousarray(_fold_pad_grad(gx, pads)))

    _record(tape, out, bwd)
    return out


def nearest_up2(tape, v: Node, target) -> Node:
    """Fixed nearest-neighbor 2x upsampling cropped to `target` (2n or
    2n-1 per axis); the non-learnable upsampling path."""
    sx, sy, sz = v.value.shape[1:]
    target = tuple(int(t) for t in target)
    for n, t in zip((sx, sy, sz), target):
        if t not in (2 * n, 2 * n - 1):
            raise TargetSizeError(f"nearest_up2 target {target} unreachable from {(sx, sy, sz)}")
    big = np.repeat(np.repeat(np.repeat(v.value, 2, axis=1), 2, axis=2), 2, axis=3)
    out = Node(np.ascontiguousarray(big[:, : target[0], : target[1], : target[2]]))

    def bwd(g):
        gfull = np.zeros((v.value.shape[0], 2 * sx, 2 * sy, 2 * sz), dtype=g.dtype)
        gfull[:, : target[0], : target[1], : target[2]] = g
        v.add_grad(gfull.reshape(-1, sx, 2, sy, 2, sz, 2).sum(axis=(2, 4, 6)))

    _record(tape, out, bwd)
    return out


# ---------------------------------------------------------------------------
# normalization, activation, combination


def layer_norm(tape, v: Node, gamma: Parameter, beta: Parameter) -> Node:
    """Standardize over all channels and voxels jointly (one statistic
    pair per sample), then apply a per-channel affine."""
    if v.value.size <= 1:
        raise ShapeMismatchError("layer_norm needs more than one element")
    if gamma.value.shape[0] != v.value.shape[0]:
        raise ChannelMismatchError("layer_norm affine does not match channel count")
    x = v.value
    n = x.size
    s1 = float(x.sum(dtype=np.float64))
    s2 = float(np.einsum("cxyz,cxyz->", x, x, dtype=np.float64))
    mu = s1 / n
    var = max(s2 / n - mu * mu, 0.0)
    inv = np.asarray(1.0 / np.sqrt(var + LN_EPS), dtype=x.dtype)
    xhat = (x - np.asarray(mu, dtype=x.dtype)) * inv
    out_val = xhat * gamma.value[:, None, None, None]
    out_val += beta.value[:, None, None, None]
    out = Node(out_val)

    def bwd(g):
        gamma.add_grad((g * xhat).sum(axis=(1, 2, 3)))
        beta.add_grad(g.sum(axis=(1, 2, 3)))
        gh = g * gamma.value[:, None, None, None]
        v.add_grad((gh - gh.mean() - xhat * (gh * xhat).mean()) * inv)

    _record(tape, out, bwd)
    return out


def selu(tape, v: Node) -> Node:
    """Scaled exponential linear unit with the standard self-normalizing
    constants."""
    x = v.value
    neg = x <= 0
    ex_neg = np.exp(x[neg])  # exponentials only where the negative branch applies
    out_val = x * np.asarray(SELU_LAMBDA, dtype=x.dtype)
    out_val[neg] = (SELU_LAMBDA * SELU_ALPHA) * (ex_neg - 1.0)
    out = Node(out_val)

    def bwd(g):
        gv = g * np.asarray(SELU_LAMBDA, dtype=x.dtype)
        gv[neg] = g[neg] * ((SELU_LAMBDA * SELU_ALPHA) * ex_neg)
        v.add_grad(gv)

    _record(tape, out, bwd)
    return out


def softmax_channels(tape, v: Node) -> Node:
    """Per-voxel softmax over the channel axis, max-subtracted for
    stability; scores are in (0, 1) and sum to 1 at every voxel."""
    if v.value.shape[0] < 2:
        raise ShapeMismatchError("softmax_channels needs at least 2 channels")
    x = v.value
    s = np.exp(x - x.max(axis=0, keepdims=True))
    s /= s.sum(axis=0, keepdims=True)
    out = Node(s)

    def bwd(g):
        v.add_grad(s * (g - (g * s).sum(axis=0, keepdims=True)))

    _record(tape, out, bwd)
    return out


def residual_add(tape, a: Node, b: Node) -> Node:
    """Elementwise sum of identically shaped fields."""
    if a.value.shape != b.value.shape:
        raise ShapeMismatchError(f"residual_add shapes differ: {a.value.shape} vs {b.value.shape}")
    out = Node(a.value + b.value)

    def bwd(g):
        a.add_grad(g)
        b.add_grad(g)

    _record(tape, out, bwd)
    return out


# ---------------------------------------------------------------------------
# elementwise / reduction plumbing with reverse-mode counterparts

add = residual_add


def mul(tape, a: Node, b: Node) -> Node:
    if a.value.shape != b.value.shape:
        raise ShapeMismatchError(f"mul shapes differ: {a.value.shape} vs {b.value.shape}")
    out = Node(a.value * b.value)

    def bwd(g):
        a.add_grad(g * b.value)
        b.add_grad(g * a.value)

    _record(tape, out, bwd)
    return out


def scale(tape, v: Node, c: float) -> Node:
    out = Node(v.value * c)
    _record(tape, out, lambda g: v.add_grad(g * c))
    return out


def sum_all(tape, v: Node) -> Node:
    out = Node(np.asarray(v.value.sum()))
    _record(tape, out, lambda g: v.add_grad(np.full(v.value.shape, g, dtype=v.value.dtype)))
    return out


def mean_all(tape, v: Node) -> Node:
    n = v.value.size
    out = Node(np.asarray(v.value.mean()))
    _record(tape, out, lambda g: v.add_grad(np.full(v.value.shape, g / n, dtype=v.value.dtype)))
    return out


def max_all(tape, v: Node) -> Node:
    """Maximum over all elements; the gradient routes to the first
    maximizing position."""
    idx = np.unravel_index(np.argmax(v.value), v.value.shape)
    out = Node(np.asarray(v.value[idx]))

    def bwd(g):
        gv = np.zeros_like(v.value)
        gv[idx] = g
        v.add_grad(gv)

    _record(tape, out, bwd)
    return out


def apply_channel_matrix(tape, v: Node, w: Parameter) -> Node:
    """Channel-matrix application without bias."""
    return pointwise_linear(tape, v, w, None)


# ---------------------------------------------------------------------------
# finite-difference gradient checking


@dataclass
class GradCheckReport:
    name: str
    tolerance: float
    max_rel_error: float
    per_input: dict

    @property
    def passed(self) -> bool:
        return self.max_rel_error <= self.tolerance

    def __str__(self):
        verdict = "ok" if self.passed else "FAIL"
        worst = max(self.per_input, key=self.per_input.get) if self.per_input else "-"
        return f"{self.name}: max rel err {self.max_rel_error:.3e} (tol {self.tolerance:.0e}, worst: {worst}) {verdict}"


def grad_check(name, fn, inputs: dict, tolerance=1e-5, h=1e-5, seed=0) -> GradCheckReport:
    """Compare analytic gradients of a scalar-ized op against central
    finite differences, coordinate by coordinate.

    `fn(tape, **params)` must return a Node; all entries of `inputs` are
    wrapped as Parameters (so both parameter and input gradients are
    checked). The output is contracted with a fixed random projection to
    obtain a scalar. f64 inputs only.
    """
    params = {key: Parameter(key, np.asarray(val, dtype=np.float64)) for key, val in inputs.items()}
    rng = np.random.default_rng(seed)

    out0 = fn(None, **params).value
    proj = rng.standard_normal(out0.shape)

    def scalar_loss():
        return float(np.sum(fn(None, **params).value * proj))

    tape = Tape()
    out = fn(tape, **params)
    tape.backward((out, proj))

    per_input = {}
    for key, p in params.items():
        flat = p.value.reshape(-1)
        num = np.zeros_like(flat)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            up = scalar_loss()
            flat[i] = orig - h
            dn = scalar_loss()
            flat[i] = orig
            num[i] = (up - dn) / (2 * h)
        ana = p.grad.reshape(-1)
        denom = max(float(np.abs(num).max()), float(np.abs(ana).max()), 1e-8)
        per_input[key] = float(np.abs(ana - num).max()) / denom
    worst = max(per_input.values()) if per_input else 0.0
    return GradCheckReport(name=name, tolerance=tolerance, max_rel_error=worst, per_input=per_input)
