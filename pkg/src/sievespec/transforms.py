"""Orthonormal 2-D Haar wavelet transform (multi-level, square grids)."""

from __future__ import annotations

import numpy as np

from .errors import DomainError

_SQRT2 = np.sqrt(2.0)


def _haar_level_forward(x: np.ndarray) -> np.ndarray:
    a = (x[0::2, :] + x[1::2, :]) / _SQRT2
    d = (x[0::2, :] - x[1::2, :]) / _SQRT2
    y = np.concatenate([a, d], axis=0)
    a = (y[:, 0::2] + y[:, 1::2]) / _SQRT2
    d = (y[:, 0::2] - y[:, 1::2]) / _SQRT2
    return np.concatenate([a, d], axis=1)


def _haar_level_inverse(y: np.ndarray) -> np.ndarray:
    h = y.shape[1] // 2
    a, d = y[:, :h], y[:, h:]
    x = np.empty_like(y)
    x[:, 0::2] = (a + d) / _SQRT2
    x[:, 1::2] = (a - d) / _SQRT2
    h = y.shape[0] // 2
    a, d = x[:h, :], x[h:, :]
    out = np.empty_like(x)
    out[0::2, :] = (a + d) / _SQRT2
    out[1::2, :] = (a - d) / _SQRT2
    return out


def _check_levels(n: int, levels: int):
    if levels < 1:
        raise DomainError("levels must be at least 1")
    if n % (1 << levels) != 0:
        raise DomainError(f"grid size {n} is not divisible by 2^{levels}")


def haar2_forward(image: np.ndarray, levels: int = 1) -> np.ndarray:
    image = np.asarray(image, dtype=np.float64)
    if image.ndim != 2 or image.shape[0] != image.shape[1]:
        raise DomainError("haar2 expects a square 2-D array")
    _check_levels(image.shape[0], levels)
    out = image.copy()
    size = image.shape[0]
    for _ in range(levels):
        out[:size, :size] = _haar_level_forward(out[:size, :size])
        size //= 2
    return out


def haar2_inverse(coeffs: np.ndarray, levels: int = 1) -> np.ndarray:
    coeffs = np.asarray(coeffs, dtype=np.float64)
    if coeffs.ndim != 2 or coeffs.shape[0] != coeffs.shape[1]:
        raise DomainError("haar2 expects a square 2-D array")
    _check_levels(coeffs.shape[0], levels)
    out = coeffs.copy()
    size = coeffs.shape[0] >> (levels - 1)
    for _ in range(levels):
        out[:size, :size] = _haar_level_inverse(out[:size, :size])
        size *= 2
    return out
