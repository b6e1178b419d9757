"""Diffractive-lens optics: focal geometry, jinc, and incoherent PSF models.

A diffractive lens (zone plate or photon sieve) of outer diameter D and
smallest hole / outer zone width w focuses wavelength lambda at the
first-order distance f = D*w/lambda, so every wavelength has its own focal
plane.  PSFs are evaluated on the detector grid by sampling the pupil
transmittance, applying the defocus quadratic phase, and taking a 2-D DFT;
the squared magnitude is the incoherent PSF.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from . import _fft
from .errors import DomainError, SamplingError

# Pitches within this factor of the band-limit pitch are accepted: the
# transfer function vanishes at the cutoff, so marginal sampling (e.g. the
# canonical 2.5 um detector against a plane a few mm off the focal plane)
# aliases only numerically negligible content.
NYQUIST_GRACE = 1.02

# Fraction of PSF energy used to report the support radius.
SUPPORT_ENERGY_FRACTION = 0.9999


@dataclass(frozen=True)
class DiffractiveLensSpec:
    """Geometry of one diffractive lens.

    outer_diameter_m: full aperture diameter D.
    smallest_hole_m: smallest hole diameter, equal to the outer zone width;
        sets the diffraction-limited resolution.
    """

    outer_diameter_m: float
    smallest_hole_m: float
    label: str = "lens"

    def __post_init__(self):
        if not (self.outer_diameter_m > 0):
            raise DomainError("outer_diameter_m must be positive")
        if not (self.smallest_hole_m > 0):
            raise DomainError("smallest_hole_m must be positive")
        if not (self.smallest_hole_m < self.outer_diameter_m):
            raise DomainError("smallest_hole_m must be smaller than outer_diameter_m")


def focal_length(lens: DiffractiveLensSpec, wavelength_m: float) -> float:
    """First-order focal length D*w/lambda for the given wavelength."""
    if not (wavelength_m > 0):
        raise DomainError("wavelength must be positive")
    return lens.outer_diameter_m * lens.smallest_hole_m / wavelength_m


def spectral_bandwidth(lens: DiffractiveLensSpec, wavelength_m: float) -> float:
    """Spectral bandwidth 4*w*lambda/D of the lens near the given wavelength."""
    if not (wavelength_m > 0):
        raise DomainError("wavelength must be positive")
    return 4.0 * lens.smallest_hole_m * wavelength_m / lens.outer_diameter_m


def refocus_diameter(
    lens: DiffractiveLensSpec, target_wavelength_m: float, fixed_plane_m: float
) -> float:
    """Outer diameter that focuses ``target_wavelength_m`` at ``fixed_plane_m``.

    Keeps the smallest hole width; only the diameter changes.  Used for the
    fixed-detector measurement strategy where one plane serves several lens
    designs.
    """
    if not (target_wavelength_m > 0):
        raise DomainError("wavelength must be positive")
    if not (fixed_plane_m > 0):
        raise DomainError("fixed_plane_m must be positive")
    return fixed_plane_m * target_wavelength_m / lens.smallest_hole_m


@dataclass(frozen=True)
class AcquisitionGeometry:
    """One measurement arm: object distance, detector distance, and the lens.

    ``object_distance_m`` may be ``math.inf`` for a source at infinity.
    """

    object_distance_m: float
    measurement_distance_m: float
    lens: DiffractiveLensSpec

    def __post_init__(self):
        if not (self.measurement_distance_m > 0):
            raise DomainError("measurement_distance_m must be positive")
        ds = self.object_distance_m
        if not (ds > 0):  # inf passes
            raise DomainError("object_distance_m must be positive or infinity")

    @property
    def inverse_distance_sum(self) -> float:
        """1/d_s + 1/d_k (zero contribution from an object at infinity)."""
        inv_ds = 0.0 if math.isinf(self.object_distance_m) else 1.0 / self.object_distance_m
        return inv_ds + 1.0 / self.measurement_distance_m

    def defocus(self, wavelength_m: float) -> float:
        """Defocus parameter 1/d_k + 1/d_s - 1/f(lambda); zero at the focal plane."""
        return self.inverse_distance_sum - 1.0 / focal_length(self.lens, wavelength_m)


def geometry_at_focus(
    lens: DiffractiveLensSpec, wavelength_m: float, object_distance_m: float = math.inf
) -> AcquisitionGeometry:
    """Geometry whose detector sits exactly at the focal plane of ``wavelength_m``."""
    inv_ds = 0.0 if math.isinf(object_distance_m) else 1.0 / object_distance_m
    inv_d = 1.0 / focal_length(lens, wavelength_m) - inv_ds
    if inv_d <= 0:
        raise DomainError("object closer than the focal length; no real image plane")
    return AcquisitionGeometry(object_distance_m, 1.0 / inv_d, lens)


# ---------------------------------------------------------------------------
# Bessel J1 and jinc
# ---------------------------------------------------------------------------

_J1_SERIES_CUTOFF = 16.0
_J1_SERIES_TERMS = 48

# Signed Hankel coefficients: P(z) and Q(z)*x polynomials in z = x^-2, built
# from a_k = prod_{j<=k}(4 - (2j-1)^2) / (k! 8^k) with alternating signs.
_J1_ASYM_P = (1.0, 0.1171875, -0.144195556640625, 0.6765925884246826,
              -6.883914268109947)
_J1_ASYM_Q = (0.375, -0.1025390625, 0.2775764465332031, -1.9935317337512666,
              27.248827311268542)


def bessel_j1(x):
    """First-order Bessel function of the first kind, |error| <= 1e-10.

    Power series below 16, five-term Hankel asymptotics beyond.
    """
    x = np.asarray(x, dtype=float)
    scalar = x.ndim == 0
    x = np.atleast_1d(x)
    ax = np.abs(x)
    out = np.empty_like(ax)

    small = ax < _J1_SERIES_CUTOFF
    if np.any(small):
        xs = ax[small]
        q = xs * xs / 4.0
        term = xs / 2.0
        acc = term.copy()
        for m in range(_J1_SERIES_TERMS):
            term = term * q / ((m + 1.0) * (m + 2.0))
            if m % 2 == 0:
                acc -= term
            else:
                acc += term
        out[small] = acc

    if np.any(~small):
        xl = ax[~small]
        z = 1.0 / (xl * xl)
        p = np.zeros_like(xl)
        q = np.zeros_like(xl)
        for k in range(len(_J1_ASYM_P) - 1, -1, -1):
            p = p * z + _J1_ASYM_P[k]
            q = q * z + _J1_ASYM_Q[k]
        q = q / xl
        chi = xl - 0.75 * np.pi
        out[~small] = np.sqrt(2.0 / (np.pi * xl)) * (p * np.cos(chi) - q * np.sin(chi))

    out = np.where(x < 0, -out, out)  # J1 is odd
    return float(out[0]) if scalar else out


def jinc(u, v):
    """Radial jinc: J1(pi*r)/(2*r) with r = hypot(u, v); pi/4 at the origin."""
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    r = np.hypot(u, v)
    scalar = r.ndim == 0
    r = np.atleast_1d(r)
    out = np.full_like(r, np.pi / 4.0)
    nz = r > 0
    out[nz] = bessel_j1(np.pi * r[nz]) / (2.0 * r[nz])
    return float(out[0]) if scalar else out


# ---------------------------------------------------------------------------
# PSF sampling
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PsfGrid:
    """Sampled incoherent PSF: nonnegative, unit sum, peak-centred at N/2."""

    samples: np.ndarray
    pixel_pitch_m: float
    wavelength_m: float
    support_radius_px: int

    @property
    def grid_size(self) -> int:
        return self.samples.shape[0]

    def kernel_origin(self) -> np.ndarray:
        """Samples re-anchored so the grid centre sits at index (0, 0).

        This is the layout whose plain 2-D DFT is the convolution spectrum.
        """
        return np.fft.ifftshift(self.samples)


def max_admissible_pitch(geom: AcquisitionGeometry, wavelength_m: float) -> float:
    """Largest detector pitch representing the PSF band limit: lambda*d/(2D)."""
    return (
        wavelength_m
        * geom.measurement_distance_m
        / (2.0 * geom.lens.outer_diameter_m)
    )


def _check_sampling(geom, wavelength_m, grid_size, pixel_pitch_m, aperture_extent_m=None):
    if not (wavelength_m > 0):
        raise DomainError("wavelength must be positive")
    if grid_size < 2 or grid_size % 2 != 0:
        raise DomainError("grid_size must be even and at least 2")
    if not (pixel_pitch_m > 0):
        raise DomainError("pixel_pitch_m must be positive")
    if aperture_extent_m is None:
        max_pitch = max_admissible_pitch(geom, wavelength_m)
    else:
        max_pitch = (
            wavelength_m * geom.measurement_distance_m / (2.0 * aperture_extent_m)
        )
    if pixel_pitch_m > max_pitch * NYQUIST_GRACE:
        raise SamplingError(pixel_pitch_m, max_pitch)


def _pupil_grid(geom, wavelength_m, grid_size, pixel_pitch_m):
    """Pupil-plane sample coordinates conjugate to the detector grid."""
    n = grid_size
    lam_d = wavelength_m * geom.measurement_distance_m
    pupil_pitch = lam_d / (n * pixel_pitch_m)
    coords = (np.arange(n) - n // 2) * pupil_pitch
    xi, eta = np.meshgrid(coords, coords, indexing="ij")
    return xi, eta, pupil_pitch


def _pupil_to_psf(field: np.ndarray) -> np.ndarray:
    """Centred inverse DFT of a centred pupil field, squared magnitude."""
    amp = np.fft.fftshift(_fft.ifft2(np.fft.ifftshift(field)))
    return np.abs(amp) ** 2


def _finalize_psf(intensity, pixel_pitch_m, wavelength_m) -> PsfGrid:
    total = float(intensity.sum())
    if total <= 0:
        raise DomainError("PSF has zero energy on the sampling grid")
    samples = intensity / total
    return PsfGrid(
        samples=samples,
        pixel_pitch_m=pixel_pitch_m,
        wavelength_m=wavelength_m,
        support_radius_px=_support_radius(samples),
    )


def _support_radius(samples: np.ndarray) -> int:
    """Smallest integer radius around the grid centre holding 99.99% of the energy."""
    n = samples.shape[0]
    c = n // 2
    idx = np.arange(n) - c
    rr = np.hypot(idx[:, None], idx[None, :])
    order = np.argsort(rr, axis=None, kind="stable")
    cum = np.cumsum(samples.ravel()[order])
    pos = np.searchsorted(cum, SUPPORT_ENERGY_FRACTION * cum[-1])
    pos = min(pos, cum.size - 1)
    return int(math.ceil(rr.ravel()[order][pos]))


def _warn_if_chirp_undersampled(defocus, diameter, pupil_pitch, wavelength_m):
    # Quadratic-phase step at the pupil edge must stay below pi per sample.
    if defocus == 0.0:
        return
    limit = wavelength_m / (abs(defocus) * diameter)
    if pupil_pitch > limit:
        warnings.warn(
            "defocus chirp undersampled at the pupil edge "
            f"(pitch {pupil_pitch:.3g} m > {limit:.3g} m); "
            "the defocused PSF will alias",
            RuntimeWarning,
            stacklevel=3,
        )


def psf_approx(
    geom: AcquisitionGeometry,
    wavelength_m: float,
    grid_size: int,
    pixel_pitch_m: float,
) -> PsfGrid:
    """Incoherent PSF of the lens treated as an ideal thin lens in first order.

    In focus this is the Airy-like jinc^2 pattern of a circular pupil of
    diameter D; off focus the pupil carries the quadratic phase implied by
    the defocus parameter.  Output is normalized to unit sum.
    """
    _check_sampling(geom, wavelength_m, grid_size, pixel_pitch_m)
    xi, eta, pupil_pitch = _pupil_grid(geom, wavelength_m, grid_size, pixel_pitch_m)
    d = geom.lens.outer_diameter_m
    rsq = xi * xi + eta * eta
    pupil = (rsq <= (d / 2.0) ** 2).astype(float)
    eps = geom.defocus(wavelength_m)
    _warn_if_chirp_undersampled(eps, d, pupil_pitch, wavelength_m)
    if eps != 0.0:
        field = pupil * np.exp(1j * np.pi * eps / wavelength_m * rsq)
    else:
        field = pupil
    return _finalize_psf(_pupil_to_psf(field), pixel_pitch_m, wavelength_m)


@dataclass(frozen=True)
class ApertureModel:
    """Pupil transmittance: a filled circle or an explicit list of holes.

    The filled circle stands for the lens operating in its first diffraction
    order and therefore carries the focusing phase; a hole list is the raw
    binary transmittance of the physical plate (the holes themselves focus).
    """

    kind: str
    diameter_m: float = 0.0
    holes: tuple = field(default_factory=tuple)  # (center_x, center_y, diameter) in m

    @staticmethod
    def filled_circle(diameter_m: float) -> "ApertureModel":
        if not (diameter_m > 0):
            raise DomainError("aperture diameter must be positive")
        return ApertureModel(kind="filled_circle", diameter_m=diameter_m)

    @staticmethod
    def from_holes(holes) -> "ApertureModel":
        holes = tuple((float(cx), float(cy), float(dm)) for cx, cy, dm in holes)
        if not holes:
            raise DomainError("aperture hole list is empty")
        if any(dm <= 0 for _, _, dm in holes):
            raise DomainError("hole diameters must be positive")
        return ApertureModel(kind="holes", holes=holes)


def psf_exact(
    geom: AcquisitionGeometry,
    wavelength_m: float,
    aperture: ApertureModel,
    grid_size: int,
    pixel_pitch_m: float,
) -> PsfGrid:
    """Incoherent PSF from the sampled aperture transmittance.

    The free-space propagation chirp uses 1/d_s + 1/d_k; for the filled
    circle the first-order lens phase is included, which reduces the net
    quadratic phase to the defocus parameter.  The band-limit pitch check
    uses the aperture's own extent (holes far inside the lens rim produce a
    narrower band than the full pupil).
    """
    if aperture.kind == "filled_circle":
        extent = aperture.diameter_m
    elif aperture.kind == "holes":
        extent = 2.0 * max(math.hypot(cx, cy) + dm / 2.0 for cx, cy, dm in aperture.holes)
    else:
        raise DomainError(f"unknown aperture kind {aperture.kind!r}")
    _check_sampling(geom, wavelength_m, grid_size, pixel_pitch_m, extent)
    xi, eta, pupil_pitch = _pupil_grid(geom, wavelength_m, grid_size, pixel_pitch_m)
    rsq = xi * xi + eta * eta

    if aperture.kind == "filled_circle":
        trans = (rsq <= (aperture.diameter_m / 2.0) ** 2).astype(float)
        f1 = focal_length(geom.lens, wavelength_m)
        quad = geom.inverse_distance_sum - 1.0 / f1
        _warn_if_chirp_undersampled(quad, aperture.diameter_m, pupil_pitch, wavelength_m)
    else:
        trans = np.zeros_like(rsq)
        for cx, cy, dm in aperture.holes:
            trans[(xi - cx) ** 2 + (eta - cy) ** 2 <= (dm / 2.0) ** 2] = 1.0
        quad = geom.inverse_distance_sum
        _warn_if_chirp_undersampled(quad, extent, pupil_pitch, wavelength_m)

    field = trans * np.exp(1j * np.pi * quad / wavelength_m * rsq)
    return _finalize_psf(_pupil_to_psf(field), pixel_pitch_m, wavelength_m)
