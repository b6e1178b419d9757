"""Resolution and robustness analyses: conditioning of point-target
submatrices, two-point resolvability experiments, detector-misplacement
Monte Carlo, and measurement-setting comparisons."""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .cube_io import (
    PointSceneSpec,
    SpectralCube,
    cube_metrics,
    grid_point_layout,
    make_phantom_cube,
    make_point_scene,
    snap_to_pixel,
)
from .errors import DomainError
from .forward import (
    NoiseSpec,
    PsfBank,
    apply_forward,
    build_bank,
    md_geometries,
    fd_geometries,
    simulate_measurements,
)
from .optics import AcquisitionGeometry, DiffractiveLensSpec
from .recon_admm import ReconConfig, admm_reconstruct
from .recon_hqs import HqsConfig, hqs_reconstruct

DENSE_SVD_COLUMN_BUDGET = 4096


# ---------------------------------------------------------------------------
# Conditioning
# ---------------------------------------------------------------------------


def submatrix_conditioning(bank: PsfBank, point_locations) -> float:
    """Condition number of the forward columns hit by the given voxels.

    ``point_locations`` is a list of (band, row, col).  Columns are built
    matrix-free by forward-projecting unit impulses; the value is
    sigma_max / sigma_min of the dense column stack (inf when rank
    deficient).
    """
    locations = [(int(b), int(r), int(c)) for b, r, c in point_locations]
    if len(set(locations)) != len(locations):
        raise DomainError("point locations must be distinct")
    if not locations:
        raise DomainError("at least one point location is required")
    if len(locations) > DENSE_SVD_COLUMN_BUDGET:
        raise DomainError(f"more than {DENSE_SVD_COLUMN_BUDGET} columns requested")
    n = bank.grid_size
    cols = np.empty((bank.num_frames * n * n, len(locations)))
    impulse = np.zeros((bank.num_bands, n, n))
    for j, (b, r, c) in enumerate(locations):
        if not (0 <= b < bank.num_bands and 0 <= r < n and 0 <= c < n):
            raise DomainError(f"location {(b, r, c)} outside the cube")
        impulse[b, r, c] = 1.0
        cols[:, j] = apply_forward(bank, impulse).ravel()
        impulse[b, r, c] = 0.0
    svals = np.linalg.svd(cols, compute_uv=False)
    # Numerically rank deficient (e.g. coincident columns) reports infinity.
    rank_tol = svals[0] * max(cols.shape) * np.finfo(float).eps
    if svals[-1] <= max(rank_tol, 1e-300):
        return math.inf
    return float(svals[0] / svals[-1])


@dataclass(frozen=True)
class ConditioningReport:
    """Condition numbers on a (band, source count, spacing) grid."""

    rows: tuple  # of (band, count, spacing_um, condition_number)
    grid_size: int
    pixel_pitch_m: float

    def condition(self, band: int, count: int, spacing_um: float) -> float:
        for b, c, s, k in self.rows:
            if b == band and c == count and abs(s - spacing_um) < 1e-9:
                return k
        raise KeyError((band, count, spacing_um))


def conditioning_sweep(bank: PsfBank, bands, counts, spacings_um) -> ConditioningReport:
    """Sweep source count and spacing per band, point grids centred in the field."""
    pitch_um = bank.pixel_pitch_m * 1e6
    field_um = bank.grid_size * pitch_um
    rows = []
    for band in bands:
        for count in counts:
            for spacing in spacings_um:
                if spacing < pitch_um * (1.0 - 1e-9):
                    raise DomainError(
                        f"spacing {spacing} um is below the pixel pitch "
                        f"{pitch_um} um; sources would coincide"
                    )
                layout = grid_point_layout(count, spacing, band, field_um)
                locations = [
                    (p.band, snap_to_pixel(p.row_um, pitch_um), snap_to_pixel(p.col_um, pitch_um))
                    for p in layout
                ]
                rows.append(
                    (band, count, float(spacing), submatrix_conditioning(bank, locations))
                )
    return ConditioningReport(tuple(rows), bank.grid_size, bank.pixel_pitch_m)


# ---------------------------------------------------------------------------
# Point-target resolution
# ---------------------------------------------------------------------------

# A pair counts as resolved when the profile between the two recovered peaks
# dips below this fraction of the smaller peak (Rayleigh-style criterion).
RESOLVE_DIP_FRACTION = 0.8


def _bilinear(img: np.ndarray, r: float, c: float) -> float:
    r0, c0 = int(math.floor(r)), int(math.floor(c))
    r1, c1 = min(r0 + 1, img.shape[0] - 1), min(c0 + 1, img.shape[1] - 1)
    fr, fc = r - r0, c - c0
    return float(
        img[r0, c0] * (1 - fr) * (1 - fc)
        + img[r1, c0] * fr * (1 - fc)
        + img[r0, c1] * (1 - fr) * fc
        + img[r1, c1] * fr * fc
    )


def _pair_dip(band_img: np.ndarray, a, b) -> tuple:
    """(peak_a, peak_b, dip): peaks from 3x3 neighborhoods, dip at the midpoint."""
    n = band_img.shape[0]

    def peak(p):
        r, c = p
        rs = slice(max(r - 1, 0), min(r + 2, n))
        cs = slice(max(c - 1, 0), min(c + 2, n))
        return float(band_img[rs, cs].max())

    pa, pb = peak(a), peak(b)
    dip = _bilinear(band_img, (a[0] + b[0]) / 2.0, (a[1] + b[1]) / 2.0)
    return pa, pb, dip


@dataclass(frozen=True)
class PairResolution:
    band: int
    point_a: tuple
    point_b: tuple
    peak_a: float
    peak_b: float
    dip: float

    @property
    def resolved(self) -> bool:
        return self.dip < RESOLVE_DIP_FRACTION * min(self.peak_a, self.peak_b)


@dataclass(frozen=True)
class ResolutionResult:
    cube: SpectralCube
    pairs: tuple  # of PairResolution

    @property
    def all_resolved(self) -> bool:
        return all(p.resolved for p in self.pairs)

    @property
    def any_resolved(self) -> bool:
        return any(p.resolved for p in self.pairs)


def _nearest_pairs(points):
    """Index pairs at the minimal mutual distance within each band."""
    out = []
    by_band = {}
    for p in points:
        by_band.setdefault(p.band, []).append(p)
    for band, pts in sorted(by_band.items()):
        if len(pts) < 2:
            continue
        dists = [
            (math.hypot(a.row_um - b.row_um, a.col_um - b.col_um), i, j)
            for i, a in enumerate(pts)
            for j, b in enumerate(pts)
            if i < j
        ]
        dmin = min(d for d, _, _ in dists)
        for d, i, j in dists:
            if d <= dmin * 1.0001:
                out.append((band, pts[i], pts[j]))
    return out


def resolution_experiment(
    scene_spec: PointSceneSpec,
    bank: PsfBank,
    snr_db: float,
    recon: str = "admm",
    recon_config=None,
    seed: int = 0,
) -> ResolutionResult:
    """Simulate, reconstruct, and score per-pair resolvability.

    A pair of like-band sources is resolved when the reconstructed profile
    between them dips below 0.8x the smaller recovered peak.
    """
    scene = make_point_scene(
        scene_spec, bank.num_bands, bank.grid_size, wavelengths_m=bank.wavelengths_m
    )
    measurements = simulate_measurements(bank, scene, NoiseSpec(snr_db, seed=seed))
    if recon == "admm":
        config = recon_config or ReconConfig(mu=200.0, max_iters=600)
        cube = admm_reconstruct(measurements, bank, config).cube
    elif recon == "hqs":
        config = recon_config or HqsConfig()
        cube = hqs_reconstruct(measurements, bank, config).cube
    else:
        raise DomainError(f"unknown reconstruction method {recon!r}")
    pitch_um = bank.pixel_pitch_m * 1e6
    pairs = []
    for band, a, b in _nearest_pairs(scene_spec.points):
        pa = (snap_to_pixel(a.row_um, pitch_um), snap_to_pixel(a.col_um, pitch_um))
        pb = (snap_to_pixel(b.row_um, pitch_um), snap_to_pixel(b.col_um, pitch_um))
        peak_a, peak_b, dip = _pair_dip(cube.bands[band], pa, pb)
        pairs.append(PairResolution(band, pa, pb, peak_a, peak_b, dip))
    return ResolutionResult(cube=cube, pairs=tuple(pairs))


def standard_point_layout(spacing_um: float, field_um: float):
    """2, 4, and 16 sources in bands 0, 1, 2 on centred grids."""
    return (
        grid_point_layout(2, spacing_um, 0, field_um)
        + grid_point_layout(4, spacing_um, 1, field_um)
        + grid_point_layout(16, spacing_um, 2, field_um)
    )


# ---------------------------------------------------------------------------
# Misplacement sensitivity
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SensitivityRow:
    dmax_m: float
    mean_psnr_db: float
    std_psnr_db: float
    mean_ssim: float
    std_ssim: float


@dataclass(frozen=True)
class SensitivityReport:
    rows: tuple  # of SensitivityRow
    trials: int
    seed: int
    snr_db: float


def misplacement_sensitivity(
    bank_nominal: PsfBank,
    scene: SpectralCube,
    snr_db: float,
    dmax_grid_m,
    trials: int,
    seed: int = 0,
    recon_config: ReconConfig | None = None,
    psf_model: str = "approx",
) -> SensitivityReport:
    """Monte Carlo over detector placement errors in the moving-detector setting.

    Each trial perturbs every measurement distance by Delta d ~ U[-dmax, dmax],
    simulates measurements with the perturbed system, and reconstructs with
    the nominal bank.  One noise realization is shared by every cell of the
    report, so trials differ only through the placement draw (and the
    dmax = 0 column has exactly zero spread).
    """
    if trials < 1:
        raise DomainError("at least one trial is required")
    geoms = bank_nominal.geometries
    if not geoms:
        raise DomainError("the nominal bank must carry its acquisition geometry")
    lens0 = geoms[0].lens
    if any(g.lens != lens0 for g in geoms):
        raise DomainError("misplacement analysis expects the moving-detector setting")
    config = recon_config or ReconConfig(max_iters=300)
    n = bank_nominal.grid_size
    noise_seed = int(np.random.SeedSequence([seed, 2]).generate_state(1, np.uint64)[0])
    rows = []
    for gi, dmax in enumerate(dmax_grid_m):
        if dmax < 0:
            raise DomainError("dmax must be nonnegative")
        psnrs, ssims = [], []
        for trial in range(trials):
            offset_rng = np.random.default_rng(np.random.SeedSequence([seed, 1, gi, trial]))
            if dmax == 0:
                bank_true = bank_nominal
            else:
                offsets = offset_rng.uniform(-dmax, dmax, size=len(geoms))
                perturbed = [
                    AcquisitionGeometry(
                        g.object_distance_m, g.measurement_distance_m + off, g.lens
                    )
                    for g, off in zip(geoms, offsets)
                ]
                bank_true = build_bank(
                    perturbed,
                    bank_nominal.wavelengths_m,
                    n,
                    bank_nominal.pixel_pitch_m,
                    model=psf_model,
                )
            measurements = simulate_measurements(
                bank_true, scene, NoiseSpec(snr_db, seed=noise_seed)
            )
            # Reconstruct believing the nominal placement.
            measurements = replace(measurements, geometry=bank_nominal.geometries)
            recon = admm_reconstruct(measurements, bank_nominal, config)
            metrics = cube_metrics(scene, recon.cube)
            psnrs.append(metrics["psnr_db"])
            ssims.append(metrics["ssim"])
        rows.append(
            SensitivityRow(
                dmax_m=float(dmax),
                mean_psnr_db=float(np.mean(psnrs)),
                std_psnr_db=float(np.std(psnrs)),
                mean_ssim=float(np.mean(ssims)),
                std_ssim=float(np.std(ssims)),
            )
        )
    return SensitivityReport(tuple(rows), trials=trials, seed=seed, snr_db=snr_db)


# ---------------------------------------------------------------------------
# Measurement-setting comparison
# ---------------------------------------------------------------------------


def setting_comparison(
    lens: DiffractiveLensSpec,
    wavelength_pool_m,
    kp_list,
    snr_list,
    grid_size: int,
    pixel_pitch_m: float,
    settings=("MD", "FD"),
    recon_config: ReconConfig | None = None,
    seed: int = 0,
    scene_fn=None,
):
    """Reconstruction quality across MD/FD settings and K = P sizes.

    For K = P, the last P wavelengths of the pool are observed.  The same
    phantom and the same noise seed are used for both settings at a given
    (K=P, SNR) cell, so the settings differ only through their PSFs.
    Returns rows of (setting, K, P, snr_db, psnr_db, ssim).
    """
    pool = [float(w) for w in wavelength_pool_m]
    config = recon_config or ReconConfig(max_iters=300)
    if scene_fn is None:
        scene_fn = lambda wl: make_phantom_cube(wl, grid_size, pixel_pitch_m, seed=seed)
    rows = []
    for kp in kp_list:
        if not (1 <= kp <= len(pool)):
            raise DomainError(f"K=P={kp} exceeds the wavelength pool")
        wavelengths = pool[len(pool) - kp :]
        scene = scene_fn(wavelengths)
        for snr_db in snr_list:
            noise_seed = int(
                np.random.SeedSequence([seed, kp, int(round(snr_db * 1000))]).generate_state(
                    1, np.uint64
                )[0]
            )
            for setting in settings:
                if setting == "MD":
                    geoms = md_geometries(lens, wavelengths)
                elif setting == "FD":
                    geoms = fd_geometries(lens, wavelengths)
                else:
                    raise DomainError(f"unknown setting {setting!r}")
                bank = build_bank(geoms, wavelengths, grid_size, pixel_pitch_m)
                measurements = simulate_measurements(
                    bank, scene, NoiseSpec(snr_db, seed=noise_seed)
                )
                recon = admm_reconstruct(measurements, bank, config)
                metrics = cube_metrics(scene, recon.cube)
                rows.append(
                    {
                        "setting": setting,
                        "K": kp,
                        "P": kp,
                        "snr_db": float(snr_db),
                        "psnr_db": metrics["psnr_db"],
                        "ssim": metrics["ssim"],
                    }
                )
    return rows
