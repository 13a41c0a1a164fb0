"""Dense field/spectrum arrays and the 3D real-input FFT.

Conventions fixed here and relied on everywhere else:

* A Field is a numpy array of shape (channels, nx, ny, nz), real dtype
  (float64 by default, float32 selectable), C-contiguous row-major with
  z fastest.
* A Spectrum is the half-spectrum of a Field: complex array of shape
  (channels, nx, ny, nz//2 + 1).
* The forward transform carries the full 1/(nx*ny*nz) factor, so mode
  amplitudes of a bandlimited signal are invariant under grid refinement.
  The (0,0,0) mode of each channel therefore equals that channel's
  spatial mean.
"""

from __future__ import annotations

import numpy as np
import scipy.fft as _fft

from .errors import DimensionError, ShapeMismatchError

SPATIAL_AXES = (1, 2, 3)

REAL_DTYPES = (np.float32, np.float64)

# pocketfft computes every 1-D line transform independently, so splitting
# the batch across workers is bitwise identical to the sequential path
_FFT_WORKERS = 1


def set_fft_workers(n: int) -> None:
    """Number of threads for batched FFT lines (results are bitwise
    independent of this setting)."""
    global _FFT_WORKERS
    _FFT_WORKERS = max(1, int(n))


def as_field(a, dtype=None) -> np.ndarray:
    """Validate and return `a` as a Field array.

    Raises ShapeMismatchError unless `a` is 4-dimensional with a real
    floating dtype (after optional conversion).
    """
    a = np.asarray(a, dtype=dtype)
    if a.ndim != 4:
        raise ShapeMismatchError(f"a Field has shape (channels, nx, ny, nz), got {a.shape}")
    if a.dtype not in REAL_DTYPES:
        a = a.astype(np.float64)
    return np.ascontiguousarray(a)


def check_finite(a, what="array") -> None:
    if not np.all(np.isfinite(a)):
        from .errors import NumericalError

        raise NumericalError(f"{what} contains non-finite values")


def spectrum_shape(field_shape) -> tuple:
    c, nx, ny, nz = field_shape
    return (c, nx, ny, nz // 2 + 1)


def fft3(field: np.ndarray) -> np.ndarray:
    """Per-channel 3D DFT of a real Field with 1/N forward scaling.

    Returns the half-spectrum along z (conjugate symmetry of real input).
    Raises DimensionError if any spatial axis is shorter than 2.
    """
    field = as_field(field)
    _, nx, ny, nz = field.shape
    if min(nx, ny, nz) < 2:
        raise DimensionError(f"fft3 needs every spatial axis >= 2, got {field.shape[1:]}")
    return _fft.rfftn(field, axes=SPATIAL_AXES, workers=_FFT_WORKERS) / (nx * ny * nz)


def ifft3(spec: np.ndarray, nz: int) -> np.ndarray:
    """Inverse of fft3; `nz` disambiguates the even/odd last axis.

    Raises ShapeMismatchError if the spectrum's half axis is inconsistent
    with the requested nz.
    """
    spec = np.asarray(spec)
    if spec.ndim != 4:
        raise ShapeMismatchError(f"a Spectrum has shape (channels, nx, ny, nz//2+1), got {spec.shape}")
    c, nx, ny, nzh = spec.shape
    if nzh != nz // 2 + 1:
        raise ShapeMismatchError(f"spectrum half axis {nzh} inconsistent with nz={nz} (want {nz // 2 + 1})")
    n = nx * ny * nz
    return _fft.irfftn(spec * n, s=(nx, ny, nz), axes=SPATIAL_AXES, workers=_FFT_WORKERS)


def rfftn_raw(field: np.ndarray) -> np.ndarray:
    """Unscaled half-spectrum transform (internal plumbing for ops)."""
    return _fft.rfftn(field, axes=SPATIAL_AXES, workers=_FFT_WORKERS)


def irfftn_raw(spec: np.ndarray, spatial) -> np.ndarray:
    """Unscaled-inverse partner of rfftn_raw (includes the 1/N of irfft)."""
    return _fft.irfftn(spec, s=tuple(spatial), axes=SPATIAL_AXES, workers=_FFT_WORKERS)


def fftn_raw(field: np.ndarray) -> np.ndarray:
    """Unscaled full complex transform (per-mode spectral weights)."""
    return _fft.fftn(field, axes=SPATIAL_AXES, workers=_FFT_WORKERS)


def ifftn_raw(spec: np.ndarray) -> np.ndarray:
    """Inverse partner of fftn_raw (includes the 1/N of ifft)."""
    return _fft.ifftn(spec, axes=SPATIAL_AXES, workers=_FFT_WORKERS)


def signed_freq(n: int) -> np.ndarray:
    """Signed integer frequency of each DFT index along an axis of size n.

    Index k maps to k for k <= n//2 and to k - n beyond, so the magnitude
    equals min(k, n - k).
    """
    k = np.arange(n)
    return np.where(k <= n // 2, k, k - n)


def parseval_weights(nx: int, ny: int, nz: int) -> np.ndarray:
    """Multiplicity of each stored half-spectrum mode in the full spectrum.

    2 for z-interior modes (their conjugate mirror is implied), 1 for the
    self-stored kz = 0 plane and, for even nz, the kz = nz/2 plane. With
    the 1/N forward scaling, sum_x f(x)^2 = N * sum_k w_k |F(k)|^2.
    """
    nzh = nz // 2 + 1
    w = np.full(nzh, 2.0)
    w[0] = 1.0
    if nz % 2 == 0:
        w[-1] = 1.0
    return np.broadcast_to(w, (nx, ny, nzh))


def sample_cosine(shape, freq, amplitude=1.0, phase=0.0, dtype=np.float64) -> np.ndarray:
    """Sample amplitude*cos(2*pi*(f.x/nx + ...) + phase) on an integer grid.

    The same (freq, amplitude, phase) sampled at two grid sizes gives two
    discretizations of one underlying function; this is the bandlimited
    test signal used by the resolution-consistency properties.
    """
    nx, ny, nz = shape
    fx, fy, fz = freq
    x = np.arange(nx)[:, None, None] / nx
    y = np.arange(ny)[None, :, None] / ny
    z = np.arange(nz)[None, None, :] / nz
    return (amplitude * np.cos(2 * np.pi * (fx * x + fy * y + fz * z) + phase)).astype(dtype)
