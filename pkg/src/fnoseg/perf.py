"""Process-level performance knobs for the training hot path.

The training step allocates many short-lived multi-megabyte arrays; with
glibc's default mmap threshold each becomes a fresh zero-filled mapping,
roughly doubling memory traffic. Raising the threshold keeps those
buffers on the heap free-list. Numerical results are unaffected.
"""

from __future__ import annotations

import ctypes

_M_MMAP_THRESHOLD = -3
_M_TRIM_THRESHOLD = -1

_tuned = False


def tune_allocator() -> bool:
    """Idempotently raise glibc's mmap/trim thresholds; returns whether
    tuning took effect (False on non-glibc platforms)."""
    global _tuned
    if _tuned:
        return True
    try:
        libc = ctypes.CDLL("libc.so.6", use_errno=True)
        ok = libc.mallopt(_M_MMAP_THRESHOLD, 1 << 30) == 1
        ok = libc.mallopt(_M_TRIM_THRESHOLD, 1 << 30) == 1 and ok
    except OSError:
        return False
    _tuned = ok
    return ok
