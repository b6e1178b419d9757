"""Matrix-free forward operator, adjoint, noise synthesis, and PSF banks.

Each detector frame is the sum over bands of circular convolutions with the
per-(frame, band) PSFs.  All products are evaluated in the frequency domain,
where every convolution block is diagonal.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import _fft
from .cube_io import MeasurementSet, SpectralCube
from .errors import DomainError
from .optics import (
    AcquisitionGeometry,
    DiffractiveLensSpec,
    PsfGrid,
    focal_length,
    psf_approx,
    psf_exact,
    ApertureModel,
    refocus_diameter,
)


@dataclass(frozen=True)
class PsfBank:
    """K x P sampled PSFs and their 2-D spectra, defining t = Hx.

    ``spectra[k, p]`` is the 2-D DFT of the origin-anchored PSF samples
    (grid centre moved to index (0, 0)), so multiplying a band spectrum by
    it performs the centred circular convolution.
    """

    psfs: tuple  # K tuples of P PsfGrid
    spectra: np.ndarray  # (K, P, N, N) complex128
    wavelengths_m: tuple
    pixel_pitch_m: float
    geometries: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "psfs", tuple(tuple(row) for row in self.psfs))
        object.__setattr__(self, "geometries", tuple(self.geometries))
        object.__setattr__(self, "wavelengths_m", tuple(float(w) for w in self.wavelengths_m))
        k, p = self.num_frames, self.num_bands
        if k < 1 or p < 1:
            raise DomainError("bank needs at least one frame and one band")
        if any(len(row) != p for row in self.psfs):
            raise DomainError("ragged PSF table")
        if self.spectra.shape != (k, p, self.grid_size, self.grid_size):
            raise DomainError("spectra shape does not match the PSF table")
        if len(self.wavelengths_m) != p:
            raise DomainError("one wavelength per band is required")
        if self.geometries and len(self.geometries) != k:
            raise DomainError("one geometry per frame is required")
        # PSFs are real, so their spectra are Hermitian symmetric; operator
        # products run on the cached half plane to halve memory traffic.
        half = np.ascontiguousarray(self.spectra[..., : self.grid_size // 2 + 1])
        object.__setattr__(self, "_half_spectra", half)

    @property
    def num_frames(self) -> int:
        return len(self.psfs)

    @property
    def num_bands(self) -> int:
        return len(self.psfs[0])

    @property
    def grid_size(self) -> int:
        return self.psfs[0][0].grid_size

    def spectra_consistent(self, tol: float = 1e-12) -> bool:
        """Re-derive the spectra from the PSF samples and compare."""
        for k, row in enumerate(self.psfs):
            for p, psf in enumerate(row):
                ref = _fft.fft2(psf.kernel_origin())
                if not np.allclose(ref, self.spectra[k, p], rtol=0, atol=tol * np.abs(ref).max()):
                    return False
        return True


def bank_from_psfs(psf_table, wavelengths_m, geometries=()) -> PsfBank:
    """Assemble a bank from a K x P table of PsfGrid, caching the spectra."""
    psf_table = [list(row) for row in psf_table]
    if not psf_table or not psf_table[0]:
        raise DomainError("empty PSF table")
    n = psf_table[0][0].grid_size
    pitch = psf_table[0][0].pixel_pitch_m
    for row in psf_table:
        for g in row:
            if g.grid_size != n or g.pixel_pitch_m != pitch:
                raise DomainError("all PSF grids must share size and pitch")
    spectra = np.stack(
        [np.stack([_fft.fft2(g.kernel_origin()) for g in row]) for row in psf_table]
    )
    return PsfBank(
        psfs=psf_table,
        spectra=spectra,
        wavelengths_m=wavelengths_m,
        pixel_pitch_m=pitch,
        geometries=geometries,
    )


def bank_from_kernels(kernels, wavelengths_m, pixel_pitch_m, geometries=()) -> PsfBank:
    """Bank from raw (K, P, N, N) nonnegative kernels, centred at N/2.

    Kernels are normalized to unit sum.  Useful for synthetic operators in
    tests and demos.
    """
    kernels = np.asarray(kernels, dtype=np.float64)
    if kernels.ndim != 4:
        raise DomainError("kernels must have shape (K, P, N, N)")
    if kernels.min() < 0:
        raise DomainError("kernels must be nonnegative")
    table = []
    for k in range(kernels.shape[0]):
        row = []
        for p in range(kernels.shape[1]):
            total = kernels[k, p].sum()
            if total <= 0:
                raise DomainError("each kernel needs positive total energy")
            row.append(
                PsfGrid(
                    samples=kernels[k, p] / total,
                    pixel_pitch_m=pixel_pitch_m,
                    wavelength_m=wavelengths_m[p],
                    support_radius_px=kernels.shape[2] // 2,
                )
            )
        table.append(row)
    return bank_from_psfs(table, wavelengths_m, geometries)


# ---------------------------------------------------------------------------
# Scenario builders
# ---------------------------------------------------------------------------


def md_geometries(
    lens: DiffractiveLensSpec,
    wavelengths_m,
    planes_m=None,
    object_distance_m: float = math.inf,
):
    """Moving-detector setting: one lens, one plane per wavelength.

    Default planes are the first-order focal planes of the wavelengths.
    """
    if planes_m is None:
        planes_m = [focal_length(lens, w) for w in wavelengths_m]
    return [AcquisitionGeometry(object_distance_m, d, lens) for d in planes_m]


def fd_geometries(
    lens: DiffractiveLensSpec,
    wavelengths_m,
    fixed_plane_m: float | None = None,
    object_distance_m: float = math.inf,
):
    """Fixed-detector setting: one plane, one re-focused lens per wavelength.

    The default plane is the focal plane of the middle wavelength; each
    lens keeps the hole width and adjusts the outer diameter so its
    wavelength focuses on the shared plane.
    """
    wavelengths_m = list(wavelengths_m)
    if fixed_plane_m is None:
        fixed_plane_m = focal_length(lens, wavelengths_m[(len(wavelengths_m) - 1) // 2])
    geoms = []
    for i, w in enumerate(wavelengths_m):
        d_new = refocus_diameter(lens, w, fixed_plane_m)
        lens_k = DiffractiveLensSpec(
            outer_diameter_m=d_new,
            smallest_hole_m=lens.smallest_hole_m,
            label=f"{lens.label}-fd{i}",
        )
        geoms.append(AcquisitionGeometry(object_distance_m, fixed_plane_m, lens_k))
    return geoms


def build_bank(
    scenario,
    wavelengths_m,
    grid_size: int,
    pixel_pitch_m: float,
    model: str = "approx",
    aperture: ApertureModel | None = None,
) -> PsfBank:
    """Compute the K x P PSF bank for a list of acquisition geometries."""
    wavelengths_m = [float(w) for w in wavelengths_m]
    if any(b <= a for a, b in zip(wavelengths_m, wavelengths_m[1:])):
        raise DomainError("wavelengths must be strictly increasing")
    table = []
    for geom in scenario:
        row = []
        for w in wavelengths_m:
            if model == "approx":
                row.append(psf_approx(geom, w, grid_size, pixel_pitch_m))
            elif model == "exact":
                ap = aperture or ApertureModel.filled_circle(geom.lens.outer_diameter_m)
                row.append(psf_exact(geom, w, ap, grid_size, pixel_pitch_m))
            else:
                raise DomainError(f"unknown PSF model {model!r}")
        table.append(row)
    return bank_from_psfs(table, wavelengths_m, geometries=tuple(scenario))


# ---------------------------------------------------------------------------
# Operator application
# ---------------------------------------------------------------------------


def _check_cube_shape(bank: PsfBank, cube_bands: np.ndarray):
    n = bank.grid_size
    if cube_bands.shape != (bank.num_bands, n, n):
        raise DomainError(
            f"cube shape {cube_bands.shape} does not match bank "
            f"({bank.num_bands}, {n}, {n})"
        )


def apply_forward(bank: PsfBank, cube) -> np.ndarray:
    """Noiseless frames t_k = sum_p circular_conv(x_p, g_kp), shape (K, N, N)."""
    bands = cube.bands if isinstance(cube, SpectralCube) else np.asarray(cube, dtype=np.float64)
    _check_cube_shape(bank, bands)
    x_hat = _fft.rfft2(bands)  # (P, N, N//2 + 1)
    t_hat = np.einsum("kpij,pij->kij", bank._half_spectra, x_hat)
    return _fft.irfft2(t_hat, bank.grid_size)


def apply_adjoint(bank: PsfBank, frames: np.ndarray) -> np.ndarray:
    """Adjoint bands sum_k circular_corr(y_k, g_kp), shape (P, N, N)."""
    frames = np.asarray(frames, dtype=np.float64)
    n = bank.grid_size
    if frames.shape != (bank.num_frames, n, n):
        raise DomainError(
            f"frames shape {frames.shape} does not match bank "
            f"({bank.num_frames}, {n}, {n})"
        )
    y_hat = _fft.rfft2(frames)
    x_hat = np.einsum("kpij,kij->pij", bank._half_spectra.conj(), y_hat)
    return _fft.irfft2(x_hat, n)


@dataclass(frozen=True)
class NoiseSpec:
    """White Gaussian noise at a target SNR, reproducible from the seed.

    ``per_frame`` scales each frame's sigma from that frame's own variance;
    otherwise one pooled variance sets a common sigma.
    """

    snr_db: float
    seed: int = 0
    per_frame: bool = True


def _frame_rng(seed: int, frame_index: int) -> np.random.Generator:
    # Philox is counter based: (seed, frame) keys give a fixed per-frame
    # stream regardless of how many frames precede it.
    key = (int(seed) + frame_index * 0x9E3779B97F4A7C15) % (1 << 64)
    return np.random.Generator(np.random.Philox(key=key))


def add_noise(frames: np.ndarray, spec: NoiseSpec, geometry=(), pixel_pitch_m: float = 0.0) -> MeasurementSet:
    """Add white Gaussian noise so 10*log10(var(t)/sigma^2) equals ``snr_db``."""
    frames = np.asarray(frames, dtype=np.float64)
    if frames.ndim != 3 or frames.shape[0] < 1:
        raise DomainError("frames must have shape (K, N, N) with K >= 1")
    k = frames.shape[0]
    if math.isinf(spec.snr_db):
        return MeasurementSet(
            frames=frames.copy(),
            geometry=geometry,
            noise_sigma=(0.0,) * k,
            pixel_pitch_m=pixel_pitch_m,
            snr_db=spec.snr_db,
            seed=spec.seed,
        )
    variances = frames.var(axis=(1, 2))
    if spec.per_frame:
        if np.any(variances == 0):
            raise DomainError("zero-variance frame: finite SNR is unattainable")
        sigmas = np.sqrt(variances) * 10.0 ** (-spec.snr_db / 20.0)
    else:
        pooled = float(frames.var())
        if pooled == 0:
            raise DomainError("zero-variance frames: finite SNR is unattainable")
        sigmas = np.full(k, math.sqrt(pooled) * 10.0 ** (-spec.snr_db / 20.0))
    noisy = np.empty_like(frames)
    for i in range(k):
        rng = _frame_rng(spec.seed, i)
        noisy[i] = frames[i] + sigmas[i] * rng.standard_normal(frames.shape[1:])
    return MeasurementSet(
        frames=noisy,
        geometry=geometry,
        noise_sigma=tuple(float(s) for s in sigmas),
        pixel_pitch_m=pixel_pitch_m,
        snr_db=spec.snr_db,
        seed=spec.seed,
    )


def simulate_measurements(bank: PsfBank, cube: SpectralCube, spec: NoiseSpec) -> MeasurementSet:
    """Forward-project a cube through the bank and add noise."""
    clean = apply_forward(bank, cube)
    return add_noise(clean, spec, geometry=bank.geometries, pixel_pitch_m=bank.pixel_pitch_m)
