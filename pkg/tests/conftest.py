"""Shared oracles and fixtures.

The oracles here are deliberately independent of the library's fast paths:
Bessel values come from a Decimal power series, convolutions from explicit
spatial-domain gathers, and linear solves from dense matrices assembled
column by column through the public forward operator.
"""

import warnings
from decimal import Decimal, getcontext

import numpy as np
import pytest

from sievespec.forward import apply_forward, bank_from_kernels


def j1_series(x: float, terms: int = 140, prec: int = 60) -> float:
    """First-order Bessel function from its power series in Decimal arithmetic."""
    getcontext().prec = prec
    xd = Decimal(repr(float(x)))
    half = xd / 2
    q = half * half
    term = half
    acc = term
    for m in range(terms):
        term = term * q / ((m + 1) * (m + 2))
        acc = acc - term if m % 2 == 0 else acc + term
    return float(acc)


def brute_circular_conv(x: np.ndarray, kernel_origin: np.ndarray) -> np.ndarray:
    """Spatial-domain circular convolution via an explicit index gather."""
    n = x.shape[0]
    a = np.arange(n)
    am, bm = np.meshgrid(a, a, indexing="ij")
    big = kernel_origin[
        (a[:, None, None, None] - am[None, None]) % n,
        (a[None, :, None, None] - bm[None, None]) % n,
    ]
    return np.einsum("mnab,ab->mn", big, x)


def dense_forward_matrix(bank) -> np.ndarray:
    """Dense (K N^2, P N^2) matrix assembled through apply_forward."""
    k, p, n = bank.num_frames, bank.num_bands, bank.grid_size
    mat = np.zeros((k * n * n, p * n * n))
    impulse = np.zeros((p, n, n))
    for band in range(p):
        for r in range(n):
            for c in range(n):
                impulse[band, r, c] = 1.0
                mat[:, band * n * n + r * n + c] = apply_forward(bank, impulse).ravel()
                impulse[band, r, c] = 0.0
    return mat


def random_bank(rng, num_frames, num_bands, grid_size, pitch=1e-6, smooth=False):
    """Synthetic PSF bank from random nonnegative kernels."""
    if smooth:
        ax = np.arange(grid_size) - grid_size // 2
        yy, xx = np.meshgrid(ax, ax, indexing="ij")
        kernels = np.stack(
            [
                np.stack(
                    [
                        np.exp(
                            -((yy - rng.uniform(-1, 1)) ** 2 + (xx - rng.uniform(-1, 1)) ** 2)
                            / (2 * rng.uniform(0.8, 2.5) ** 2)
                        )
                        for _ in range(num_bands)
                    ]
                )
                for _ in range(num_frames)
            ]
        )
    else:
        kernels = rng.random((num_frames, num_bands, grid_size, grid_size))
    wavelengths = [float(w) for w in np.sort(rng.uniform(1e-9, 5e-9, num_bands))]
    return bank_from_kernels(kernels, wavelengths, pitch)


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)


@pytest.fixture(autouse=True)
def _quiet_chirp_warnings():
    # Reference-geometry banks at desk-scale grids legitimately trigger the
    # chirp-undersampling warning; tests that care assert on it explicitly.
    with warnings.catch_warnings():
        warnings.filterwarnings("ignore", message="defocus chirp undersampled")
        yield
