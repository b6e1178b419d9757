"""Half-quadratic-splitting reconstruction with a pluggable denoiser.

Alternates z = D(x) with the closed-form minimizer of
||y - Hx||^2 + nu ||x - z||^2 for a fixed number of iterations, reusing the
same denoiser every round (the unrolled, weight-shared schedule).
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from . import _fft, tv
from .cube_io import MeasurementSet, SpectralCube
from .errors import DomainError, SolverError
from .forward import PsfBank, apply_forward
from .recon_admm import (
    SigmaInverse,
    TraceRow,
    _scaled_adjoint_start,
    precompute_sigma_inverse,
    prox_soft,
)
from .transforms import haar2_forward, haar2_inverse

DENOISER_KINDS = ("identity", "tv_chambolle", "soft_threshold_haar", "external_table")


@dataclass(frozen=True)
class DenoiserHandle:
    """A deterministic cube-to-cube mapping applied band by band.

    kinds:
      identity             pass-through (data-consistency fixed point probe)
      tv_chambolle         TV denoiser with the given strength
      soft_threshold_haar  soft threshold in the orthonormal Haar domain
      external_table       precomputed input -> output pairs for tiny grids
    """

    kind: str = "tv_chambolle"
    strength: float = 0.05
    threshold: float = 0.01
    haar_levels: int = 3
    chambolle_iters: int = 20
    chambolle_step: float = 0.249
    table: tuple = field(default_factory=tuple)  # ((input, output), ...)

    def __post_init__(self):
        if self.kind not in DENOISER_KINDS:
            raise DomainError(
                f"unknown denoiser kind {self.kind!r}; expected one of {DENOISER_KINDS}"
            )
        if self.kind == "tv_chambolle" and not (self.strength > 0):
            raise DomainError("tv_chambolle strength must be positive")
        if self.kind == "soft_threshold_haar" and self.threshold < 0:
            raise DomainError("threshold must be nonnegative")


def make_denoiser(handle: DenoiserHandle):
    """Materialize the handle as a callable on (P, N, N) arrays."""
    if handle.kind == "identity":
        return lambda x: x.copy()
    if handle.kind == "tv_chambolle":

        def _tv(x):
            out = np.empty_like(x)
            for b in range(x.shape[0]):
                out[b], _ = tv.tv_denoise(
                    x[b],
                    weight=handle.strength,
                    iters=handle.chambolle_iters,
                    step=handle.chambolle_step,
                )
            return out

        return _tv
    if handle.kind == "soft_threshold_haar":

        def _haar(x):
            out = np.empty_like(x)
            for b in range(x.shape[0]):
                coeffs = haar2_forward(x[b], handle.haar_levels)
                out[b] = haar2_inverse(prox_soft(coeffs, handle.threshold), handle.haar_levels)
            return out

        return _haar

    def _table(x):
        for key, value in handle.table:
            if np.asarray(key).shape == x.shape and np.allclose(key, x, rtol=0, atol=1e-12):
                return np.asarray(value, dtype=np.float64).copy()
        raise DomainError("input not present in the external denoiser table")

    return _table


@dataclass(frozen=True)
class HqsConfig:
    nu: float = 0.5
    iterations: int = 20
    denoiser: DenoiserHandle = field(default_factory=DenoiserHandle)

    def __post_init__(self):
        if not (self.nu > 0):
            raise DomainError("nu must be positive")
        if self.iterations < 1:
            raise DomainError("iterations must be at least 1")


def data_consistency_update(
    sigma_inv: SigmaInverse, bank: PsfBank, y: np.ndarray, z: np.ndarray
) -> np.ndarray:
    """Exact minimizer of ||y - Hx||^2 + nu ||x - z||^2.

    ``sigma_inv`` must have been precomputed with shift = nu.
    """
    n = bank.grid_size
    y = np.asarray(y, dtype=np.float64)
    z = np.asarray(z, dtype=np.float64)
    if y.shape != (bank.num_frames, n, n):
        raise DomainError("measurement shape does not match the bank")
    if z.shape != (bank.num_bands, n, n):
        raise DomainError("cube shape does not match the bank")
    nu = sigma_inv.shift
    rhs = np.einsum("kpij,kij->pij", bank._half_spectra.conj(), _fft.rfft2(y))
    rhs += nu * _fft.rfft2(z)
    sol = np.einsum("pqij,qij->pij", sigma_inv._half_blocks, rhs)
    return _fft.irfft2(sol, n)


@dataclass
class HqsResult:
    cube: SpectralCube
    raw_bands: np.ndarray
    trace: list
    iterations: int


def hqs_reconstruct(
    measurements: MeasurementSet, bank: PsfBank, config: HqsConfig | None = None
) -> HqsResult:
    """Run the fixed-length denoise / data-consistency alternation."""
    config = config or HqsConfig()
    y = measurements.frames
    n = bank.grid_size
    if y.shape != (bank.num_frames, n, n):
        raise DomainError(
            f"measurement shape {y.shape} does not match bank ({bank.num_frames}, {n}, {n})"
        )
    denoise = make_denoiser(config.denoiser)
    sigma_inv = precompute_sigma_inverse(bank, shift=config.nu)
    x = _scaled_adjoint_start(bank, y)
    trace: list[TraceRow] = []
    start = time.perf_counter()
    for it in range(1, config.iterations + 1):
        z = denoise(x)
        x_new = data_consistency_update(sigma_inv, bank, y, z)
        if not np.all(np.isfinite(x_new)):
            raise SolverError("solver diverged: non-finite iterate", iteration=it)
        misfit = float(np.linalg.norm(y - apply_forward(bank, x_new)))
        step_change = float(np.linalg.norm(x_new - x))
        trace.append(TraceRow(it, misfit, step_change, 0.0,
                              (time.perf_counter() - start) * 1e3))
        x = x_new
    clamped = np.maximum(x, 0.0)
    cube = SpectralCube(clamped, bank.wavelengths_m, bank.pixel_pitch_m)
    return HqsResult(cube=cube, raw_bands=x, trace=trace, iterations=config.iterations)
