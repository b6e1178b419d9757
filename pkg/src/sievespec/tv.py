"""Isotropic total variation: value, and the dual-projection denoiser.

The denoiser solves min_u TV(u) + (1/(2*theta)) ||u - z||^2 by iterating a
projected fixed point on the dual field p (one 2-vector per pixel):

    p <- (p + tau * grad(div(p) - z/theta)) / (1 + tau * |grad(...)|)

with forward-difference gradients, Neumann boundaries, and step tau < 1/4.
"""

from __future__ import annotations

import numpy as np

from .errors import DomainError


def grad2(u: np.ndarray) -> np.ndarray:
    """Forward differences along both axes; zero on the trailing edge."""
    g = np.zeros((2,) + u.shape)
    g[0, :-1, :] = u[1:, :] - u[:-1, :]
    g[1, :, :-1] = u[:, 1:] - u[:, :-1]
    return g


def div2(p: np.ndarray) -> np.ndarray:
    """Divergence, the negative adjoint of :func:`grad2`."""
    out = np.zeros(p.shape[1:])
    out[:-1, :] += p[0, :-1, :]
    out[1:, :] -= p[0, :-1, :]
    out[:, :-1] += p[1, :, :-1]
    out[:, 1:] -= p[1, :, :-1]
    return out


def tv_value(u: np.ndarray) -> float:
    g = grad2(u)
    return float(np.sqrt(g[0] ** 2 + g[1] ** 2).sum())


def tv_denoise(
    z: np.ndarray,
    weight: float,
    iters: int = 20,
    step: float = 0.249,
    dual_init: np.ndarray | None = None,
):
    """Approximate prox of weight * TV at z; returns (image, dual_field).

    ``weight`` is theta above (the prox of TV/mu uses weight = 1/mu).  The
    returned dual field warm-starts subsequent calls.
    """
    if not (weight > 0):
        raise DomainError("weight must be positive")
    if iters < 1:
        raise DomainError("iters must be at least 1")
    if not (0 < step < 0.25 + 1e-12):
        raise DomainError("step must lie in (0, 0.25]")
    z = np.asarray(z, dtype=np.float64)
    p = np.zeros((2,) + z.shape) if dual_init is None else dual_init.copy()
    zw = z / weight
    # Hand-rolled loop body with reused buffers; the elementwise updates are
    # memory bound, so temporaries dominate the cost at large grids.
    w = np.empty_like(z)
    g = np.empty((2,) + z.shape)
    denom = np.empty_like(z)
    for _ in range(iters):
        _div2_into(p, w)
        w -= zw
        _grad2_into(w, g)
        np.hypot(g[0], g[1], out=denom)
        denom *= step
        denom += 1.0
        g *= step
        p += g
        p /= denom
    return z - weight * div2(p), p


def _grad2_into(u: np.ndarray, out: np.ndarray) -> None:
    np.subtract(u[1:, :], u[:-1, :], out=out[0, :-1, :])
    out[0, -1, :] = 0.0
    np.subtract(u[:, 1:], u[:, :-1], out=out[1, :, :-1])
    out[1, :, -1] = 0.0


def _div2_into(p: np.ndarray, out: np.ndarray) -> None:
    out[:] = 0.0
    out[:-1, :] += p[0, :-1, :]
    out[1:, :] -= p[0, :-1, :]
    out[:, :-1] += p[1, :, :-1]
    out[:, 1:] -= p[1, :, :-1]
