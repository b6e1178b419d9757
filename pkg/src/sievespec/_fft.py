"""FFT entry points for the package.

scipy's pocketfft is used for its batched 2-D paths; results are identical
to numpy's within roundoff and bit-stable for a fixed worker count.  The
worker count raises thread parallelism across the band/frame batch axis and
never changes outputs.
"""

from __future__ import annotations

import scipy.fft as _sfft

_workers = 1


def set_workers(n: int) -> None:
    global _workers
    if n < 1:
        raise ValueError("worker count must be at least 1")
    _workers = int(n)


def get_workers() -> int:
    return _workers


def fft2(a):
    return _sfft.fft2(a, axes=(-2, -1), workers=_workers)


def ifft2(a):
    return _sfft.ifft2(a, axes=(-2, -1), workers=_workers)


def rfft2(a):
    """Half-plane spectrum of a real array (last axis holds n//2 + 1 bins)."""
    return _sfft.rfft2(a, axes=(-2, -1), workers=_workers)


def irfft2(a, n: int):
    """Inverse of :func:`rfft2` back to an (n, n) real grid."""
    return _sfft.irfft2(a, s=(n, n), axes=(-2, -1), workers=_workers)
