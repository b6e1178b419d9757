"""Spectral cubes, measurement sets, file containers, scenes, and metrics.

The binary container is a little-endian stream:

    offset 0   magic         9 bytes  b"SIFTCUBE1"
    offset 9   role          16 bytes ASCII, NUL padded ("cube", "measurements", "psf")
    offset 25  slice count   uint32
    offset 29  grid size N   uint32
    offset 33  pixel pitch   float64 (m)
    offset 41  slice meta    float64 per slice (wavelength, or distance for
                             measurement sets)
    then       payload       slices x N x N float64, slice-major, row-major

Round trips are bit exact.
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass

import numpy as np

from .errors import DomainError, FormatError
from .optics import AcquisitionGeometry, DiffractiveLensSpec

MAGIC = b"SIFTCUBE1"
_ROLE_BYTES = 16
_HEADER_FMT = "<II d"


@dataclass(frozen=True)
class SpectralCube:
    """P nonnegative band images sharing one grid, with wavelength metadata."""

    bands: np.ndarray  # (P, N, N) float64
    wavelengths_m: tuple
    pixel_pitch_m: float

    def __post_init__(self):
        bands = np.ascontiguousarray(np.asarray(self.bands, dtype=np.float64))
        object.__setattr__(self, "bands", bands)
        object.__setattr__(self, "wavelengths_m", tuple(float(w) for w in self.wavelengths_m))
        if bands.ndim != 3 or bands.shape[1] != bands.shape[2]:
            raise DomainError("bands must have shape (P, N, N)")
        if bands.shape[0] < 1:
            raise DomainError("a cube needs at least one band")
        if len(self.wavelengths_m) != bands.shape[0]:
            raise DomainError("one wavelength per band is required")
        if any(b <= a for a, b in zip(self.wavelengths_m, self.wavelengths_m[1:])):
            raise DomainError("wavelengths must be strictly increasing")
        if bands.min() < 0:
            raise DomainError("band intensities must be nonnegative")
        if not (self.pixel_pitch_m > 0):
            raise DomainError("pixel_pitch_m must be positive")

    @property
    def num_bands(self) -> int:
        return self.bands.shape[0]

    @property
    def grid_size(self) -> int:
        return self.bands.shape[1]


@dataclass(frozen=True)
class MeasurementSet:
    """K detector frames with their acquisition geometry and noise levels."""

    frames: np.ndarray  # (K, N, N) float64
    geometry: tuple  # K AcquisitionGeometry (may be empty for synthetic banks)
    noise_sigma: tuple
    pixel_pitch_m: float
    snr_db: float | None = None
    seed: int | None = None

    def __post_init__(self):
        frames = np.ascontiguousarray(np.asarray(self.frames, dtype=np.float64))
        object.__setattr__(self, "frames", frames)
        object.__setattr__(self, "geometry", tuple(self.geometry))
        object.__setattr__(self, "noise_sigma", tuple(float(s) for s in self.noise_sigma))
        if frames.ndim != 3 or frames.shape[1] != frames.shape[2]:
            raise DomainError("frames must have shape (K, N, N)")
        if frames.shape[0] < 1:
            raise DomainError("a measurement set needs at least one frame")
        if len(self.noise_sigma) != frames.shape[0]:
            raise DomainError("one noise sigma per frame is required")
        if any(s < 0 for s in self.noise_sigma):
            raise DomainError("noise sigmas must be nonnegative")
        if self.geometry and len(self.geometry) != frames.shape[0]:
            raise DomainError("one geometry per frame is required")

    @property
    def num_frames(self) -> int:
        return self.frames.shape[0]

    @property
    def grid_size(self) -> int:
        return self.frames.shape[1]


# ---------------------------------------------------------------------------
# Synthetic scenes
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PointSource:
    band: int
    row_um: float
    col_um: float
    size_um: float = 1.0
    amplitude: float = 1.0


@dataclass(frozen=True)
class PointSceneSpec:
    """Point targets on a square grid of the given pitch (micrometers)."""

    points: tuple
    pixel_pitch_um: float

    def __post_init__(self):
        object.__setattr__(self, "points", tuple(self.points))
        if not (self.pixel_pitch_um > 0):
            raise DomainError("pixel_pitch_um must be positive")
        for p in self.points:
            if p.size_um < self.pixel_pitch_um:
                raise DomainError("source size must cover at least one pixel")


def snap_to_pixel(value_um: float, pitch_um: float) -> int:
    """Half-up rounding of a position to the pixel grid.

    Round-half-to-even would collapse the half-integer positions produced by
    centring an even number of sources.
    """
    return int(math.floor(value_um / pitch_um + 0.5))


def make_point_scene(
    spec: PointSceneSpec, num_bands: int, grid_size: int, wavelengths_m=None
) -> SpectralCube:
    """Cube that is zero except for the blocks named in ``spec``.

    Positions are the top-left corner of each block, in micrometers from the
    grid origin.
    """
    if wavelengths_m is None:
        wavelengths_m = tuple((i + 1) * 1e-9 for i in range(num_bands))
    pitch = spec.pixel_pitch_um
    bands = np.zeros((num_bands, grid_size, grid_size))
    for p in spec.points:
        if not (0 <= p.band < num_bands):
            raise DomainError(f"band index {p.band} outside [0, {num_bands})")
        r0 = snap_to_pixel(p.row_um, pitch)
        c0 = snap_to_pixel(p.col_um, pitch)
        size = max(1, int(round(p.size_um / pitch)))
        if r0 < 0 or c0 < 0 or r0 + size > grid_size or c0 + size > grid_size:
            raise DomainError(
                f"point at ({p.row_um}, {p.col_um}) um does not fit the field"
            )
        bands[p.band, r0 : r0 + size, c0 : c0 + size] = p.amplitude
    return SpectralCube(bands, wavelengths_m, pixel_pitch_m=pitch * 1e-6)


def grid_point_layout(
    count: int, spacing_um: float, band: int, field_um: float, size_um: float = 1.0
):
    """Point sources on a centred square grid (a centred pair for count 2)."""
    if count == 2:
        rows, cols = 1, 2
    else:
        side = int(round(math.sqrt(count)))
        if side * side != count:
            raise DomainError("count must be 2 or a perfect square")
        rows = cols = side
    r0 = field_um / 2.0 - (rows - 1) * spacing_um / 2.0
    c0 = field_um / 2.0 - (cols - 1) * spacing_um / 2.0
    return [
        PointSource(band, r0 + i * spacing_um, c0 + j * spacing_um, size_um)
        for i in range(rows)
        for j in range(cols)
    ]


def make_phantom_cube(
    wavelengths_m, grid_size: int, pixel_pitch_m: float, seed: int = 0
) -> SpectralCube:
    """Deterministic smooth nonnegative phantom, one blob field per band.

    Bands are normalized to [0, 1] and tapered to zero near the frame edge so
    the circular forward model does not wrap scene content.
    """
    wavelengths_m = tuple(float(w) for w in wavelengths_m)
    n = grid_size
    ax = np.arange(n)
    yy, xx = np.meshgrid(ax, ax, indexing="ij")
    t = np.minimum(ax, n - 1 - ax) / (0.15 * n)
    taper1d = np.clip(t, 0.0, 1.0)
    taper1d = 0.5 - 0.5 * np.cos(np.pi * taper1d)
    taper = taper1d[:, None] * taper1d[None, :]
    bands = []
    for b, _ in enumerate(wavelengths_m):
        rng = np.random.default_rng(np.random.SeedSequence([seed, b]))
        img = np.zeros((n, n))
        for _ in range(12):
            cy, cx = rng.uniform(0.2 * n, 0.8 * n, size=2)
            sig = rng.uniform(0.05 * n, 0.09 * n)
            amp = rng.uniform(0.5, 1.0)
            img += amp * np.exp(-((yy - cy) ** 2 + (xx - cx) ** 2) / (2 * sig**2))
        img *= taper
        img -= img.min()
        peak = img.max()
        if peak > 0:
            img /= peak
        bands.append(img)
    return SpectralCube(np.stack(bands), wavelengths_m, pixel_pitch_m)


def support_margin_ok(cube: SpectralCube, kernel_support_px: int, tol: float = 0.0) -> bool:
    """True when every band vanishes on the last ``kernel_support_px - 1`` rows/cols.

    Under that condition the circular forward model coincides with linear
    convolution.
    """
    m = kernel_support_px
    if m <= 1:
        return True
    edge = max(0, m - 1)
    level = tol * max(cube.bands.max(), 1e-300)
    tail_rows = cube.bands[:, cube.grid_size - edge :, :]
    tail_cols = cube.bands[:, :, cube.grid_size - edge :]
    return bool((np.abs(tail_rows) <= level).all() and (np.abs(tail_cols) <= level).all())


# ---------------------------------------------------------------------------
# Binary container
# ---------------------------------------------------------------------------


def _write_container(path, role: str, slices: np.ndarray, pixel_pitch_m: float, slice_meta):
    slices = np.ascontiguousarray(np.asarray(slices, dtype="<f8"))
    if slices.ndim != 3 or slices.shape[1] != slices.shape[2]:
        raise DomainError("container payload must have shape (count, N, N)")
    role_b = role.encode("ascii")
    if len(role_b) > _ROLE_BYTES:
        raise DomainError(f"role {role!r} longer than {_ROLE_BYTES} bytes")
    meta = np.ascontiguousarray(np.asarray(slice_meta, dtype="<f8"))
    if meta.shape != (slices.shape[0],):
        raise DomainError("one metadata value per slice is required")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(role_b.ljust(_ROLE_BYTES, b"\0"))
        fh.write(struct.pack(_HEADER_FMT, slices.shape[0], slices.shape[1], pixel_pitch_m))
        fh.write(meta.tobytes())
        fh.write(slices.tobytes())


def _read_container(path):
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < len(MAGIC):
        raise FormatError("file too short for magic", byte_offset=len(blob))
    if blob[: len(MAGIC)] != MAGIC:
        raise FormatError(f"bad magic {blob[:len(MAGIC)]!r}, expected {MAGIC!r}", byte_offset=0)
    off = len(MAGIC)
    if len(blob) < off + _ROLE_BYTES:
        raise FormatError("truncated role field", byte_offset=len(blob))
    role = blob[off : off + _ROLE_BYTES].rstrip(b"\0").decode("ascii", "replace")
    off += _ROLE_BYTES
    head_size = struct.calcsize(_HEADER_FMT)
    if len(blob) < off + head_size:
        raise FormatError("truncated header", byte_offset=len(blob))
    count, n, pitch = struct.unpack_from(_HEADER_FMT, blob, off)
    off += head_size
    if count < 1 or n < 1:
        raise FormatError(f"invalid dimensions count={count} N={n}", byte_offset=off - head_size)
    meta_bytes = 8 * count
    if len(blob) < off + meta_bytes:
        raise FormatError("truncated slice metadata", byte_offset=len(blob))
    meta = np.frombuffer(blob, dtype="<f8", count=count, offset=off)
    off += meta_bytes
    payload_bytes = 8 * count * n * n
    if len(blob) < off + payload_bytes:
        raise FormatError("truncated payload", byte_offset=len(blob))
    if len(blob) > off + payload_bytes:
        raise FormatError("trailing data after payload", byte_offset=off + payload_bytes)
    slices = np.frombuffer(blob, dtype="<f8", count=count * n * n, offset=off)
    slices = slices.reshape(count, n, n).copy()
    return role, slices, float(pitch), meta.copy()


def write_cube(cube: SpectralCube, path) -> None:
    _write_container(path, "cube", cube.bands, cube.pixel_pitch_m, cube.wavelengths_m)


def read_cube(path) -> SpectralCube:
    role, slices, pitch, meta = _read_container(path)
    if role != "cube":
        raise FormatError(f"expected role 'cube', found {role!r}", byte_offset=len(MAGIC))
    return SpectralCube(slices, tuple(meta), pitch)


def _geometry_to_json(geom: AcquisitionGeometry) -> dict:
    ds = geom.object_distance_m
    return {
        "object_distance_m": "infinity" if math.isinf(ds) else ds,
        "measurement_distance_m": geom.measurement_distance_m,
        "lens": {
            "outer_diameter_m": geom.lens.outer_diameter_m,
            "smallest_hole_m": geom.lens.smallest_hole_m,
            "label": geom.lens.label,
        },
    }


def _geometry_from_json(obj: dict) -> AcquisitionGeometry:
    lens = DiffractiveLensSpec(
        outer_diameter_m=obj["lens"]["outer_diameter_m"],
        smallest_hole_m=obj["lens"]["smallest_hole_m"],
        label=obj["lens"].get("label", "lens"),
    )
    ds = obj["object_distance_m"]
    ds = math.inf if ds == "infinity" else float(ds)
    return AcquisitionGeometry(ds, float(obj["measurement_distance_m"]), lens)


def measurement_sidecar_path(path) -> str:
    return str(path) + ".json"


def write_measurements(mset: MeasurementSet, path) -> None:
    """Binary container (role "measurements") plus a JSON sidecar."""
    distances = [g.measurement_distance_m for g in mset.geometry] or [0.0] * mset.num_frames
    _write_container(path, "measurements", mset.frames, mset.pixel_pitch_m, distances)
    sidecar = {
        "geometries": [_geometry_to_json(g) for g in mset.geometry],
        "noise_sigma": list(mset.noise_sigma),
        "snr_db": "infinity" if mset.snr_db is not None and math.isinf(mset.snr_db) else mset.snr_db,
        "seed": mset.seed,
    }
    with open(measurement_sidecar_path(path), "w", encoding="utf-8") as fh:
        json.dump(sidecar, fh, indent=2, sort_keys=True)
        fh.write("\n")


def read_measurements(path) -> MeasurementSet:
    role, slices, pitch, _meta = _read_container(path)
    if role != "measurements":
        raise FormatError(f"expected role 'measurements', found {role!r}", byte_offset=len(MAGIC))
    with open(measurement_sidecar_path(path), "r", encoding="utf-8") as fh:
        sidecar = json.load(fh)
    snr = sidecar.get("snr_db")
    if snr == "infinity":
        snr = math.inf
    return MeasurementSet(
        frames=slices,
        geometry=tuple(_geometry_from_json(g) for g in sidecar["geometries"]),
        noise_sigma=tuple(sidecar["noise_sigma"]),
        pixel_pitch_m=pitch,
        snr_db=snr,
        seed=sidecar.get("seed"),
    )


def write_psf_stack(psf_samples, wavelengths_m, pixel_pitch_m: float, path) -> None:
    """PSF slices in a container with role "psf"; metadata holds wavelengths."""
    _write_container(path, "psf", np.asarray(psf_samples), pixel_pitch_m, wavelengths_m)


def read_psf_stack(path):
    role, slices, pitch, meta = _read_container(path)
    if role != "psf":
        raise FormatError(f"expected role 'psf', found {role!r}", byte_offset=len(MAGIC))
    return slices, tuple(meta), pitch


# ---------------------------------------------------------------------------
# Previews and tables
# ---------------------------------------------------------------------------


def write_pgm(image: np.ndarray, path) -> None:
    """16-bit PGM preview with a per-image min-max stretch (inspection only)."""
    img = np.asarray(image, dtype=np.float64)
    if img.ndim != 2:
        raise DomainError("PGM preview expects a 2-D image")
    lo, hi = float(img.min()), float(img.max())
    if hi > lo:
        scaled = np.round((img - lo) / (hi - lo) * 65535.0)
    else:
        scaled = np.zeros_like(img)
    data = scaled.astype(">u2")
    with open(path, "wb") as fh:
        fh.write(f"P5\n{img.shape[1]} {img.shape[0]}\n65535\n".encode("ascii"))
        fh.write(data.tobytes())


def format_csv_value(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        v = float(value)
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        return f"{v:.12g}"
    return str(value)


def write_csv(path, header, rows) -> None:
    """UTF-8 CSV with a header row; floats rendered with %.12g."""
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(format_csv_value(v) for v in row) + "\n")


# ---------------------------------------------------------------------------
# Metrics
# ---------------------------------------------------------------------------


def psnr(reference: np.ndarray, estimate: np.ndarray) -> float:
    """Peak signal-to-noise ratio in dB; peak is the reference maximum.

    Returns ``math.inf`` when the estimate matches the reference exactly.
    """
    ref = np.asarray(reference, dtype=np.float64)
    est = np.asarray(estimate, dtype=np.float64)
    if ref.shape != est.shape:
        raise DomainError(f"shape mismatch {ref.shape} vs {est.shape}")
    peak = float(ref.max())
    if peak <= 0:
        raise DomainError("reference peak must be positive")
    mse = float(np.mean((ref - est) ** 2))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(peak * peak / mse)


_SSIM_WINDOW = 11
_SSIM_SIGMA = 1.5


def _gaussian_window(size: int = _SSIM_WINDOW, sigma: float = _SSIM_SIGMA) -> np.ndarray:
    x = np.arange(size) - (size - 1) / 2.0
    g = np.exp(-(x**2) / (2.0 * sigma**2))
    return g / g.sum()


def _filter_valid(img: np.ndarray, window: np.ndarray) -> np.ndarray:
    """Separable valid-mode correlation with a symmetric 1-D window."""
    k = window.size
    out = np.zeros((img.shape[0] - k + 1, img.shape[1]))
    for j, w in enumerate(window):
        out += w * img[j : j + out.shape[0], :]
    out2 = np.zeros((out.shape[0], img.shape[1] - k + 1))
    for j, w in enumerate(window):
        out2 += w * out[:, j : j + out2.shape[1]]
    return out2


def ssim(reference: np.ndarray, estimate: np.ndarray) -> float:
    """Structural similarity with an 11x11 Gaussian window (sigma 1.5).

    Constants C1 = (0.01 peak)^2 and C2 = (0.03 peak)^2 with peak taken from
    the reference; the mean runs over valid window positions only.
    """
    ref = np.asarray(reference, dtype=np.float64)
    est = np.asarray(estimate, dtype=np.float64)
    if ref.shape != est.shape:
        raise DomainError(f"shape mismatch {ref.shape} vs {est.shape}")
    if ref.ndim != 2:
        raise DomainError("ssim expects 2-D images; use cube_metrics for cubes")
    if ref.shape[0] < _SSIM_WINDOW or ref.shape[1] < _SSIM_WINDOW:
        raise DomainError(f"images must be at least {_SSIM_WINDOW} pixels on a side")
    if float(ref.max()) == float(ref.min()):
        raise DomainError("reference must not be constant")
    peak = float(ref.max())
    if peak <= 0:
        raise DomainError("reference peak must be positive")
    c1 = (0.01 * peak) ** 2
    c2 = (0.03 * peak) ** 2
    w = _gaussian_window()
    mu_x = _filter_valid(ref, w)
    mu_y = _filter_valid(est, w)
    xx = _filter_valid(ref * ref, w) - mu_x * mu_x
    yy = _filter_valid(est * est, w) - mu_y * mu_y
    xy = _filter_valid(ref * est, w) - mu_x * mu_y
    num = (2.0 * mu_x * mu_y + c1) * (2.0 * xy + c2)
    den = (mu_x**2 + mu_y**2 + c1) * (xx + yy + c2)
    return float(np.mean(num / den))


def cube_metrics(reference: SpectralCube, estimate: SpectralCube) -> dict:
    """Cube-level and per-band PSNR/SSIM between two cubes.

    ``psnr_db`` is computed over the concatenated cube; the per-band lists
    and their means are reported alongside.
    """
    if reference.bands.shape != estimate.bands.shape:
        raise DomainError("cube shapes differ")
    per_band_psnr = [psnr(r, e) for r, e in zip(reference.bands, estimate.bands)]
    per_band_ssim = [ssim(r, e) for r, e in zip(reference.bands, estimate.bands)]
    return {
        "psnr_db": psnr(reference.bands, estimate.bands),
        "ssim": float(np.mean(per_band_ssim)),
        "per_band_psnr_db": per_band_psnr,
        "per_band_ssim": per_band_ssim,
        "mean_band_psnr_db": float(np.mean(per_band_psnr)),
    }
