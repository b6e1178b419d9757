import math
import warnings

import numpy as np
import pytest

from sievespec.errors import DomainError, SamplingError
from sievespec.optics import (
    AcquisitionGeometry,
    ApertureModel,
    DiffractiveLensSpec,
    bessel_j1,
    focal_length,
    geometry_at_focus,
    jinc,
    max_admissible_pitch,
    psf_approx,
    psf_exact,
    refocus_diameter,
    spectral_bandwidth,
)

from conftest import j1_series

LENS = DiffractiveLensSpec(outer_diameter_m=25e-3, smallest_hole_m=5e-6, label="ps25")
WAVELENGTHS = (33.28e-9, 33.42e-9, 33.54e-9)


class TestLensMath:
    @pytest.mark.parametrize(
        "wavelength, expected",
        [(33.28e-9, 3.756), (33.42e-9, 3.740), (33.54e-9, 3.727)],
    )
    def test_reference_focal_lengths(self, wavelength, expected):
        assert focal_length(LENS, wavelength) == pytest.approx(expected, abs=1e-3)

    def test_focal_length_identity(self):
        lens = DiffractiveLensSpec(1.0, 0.999999)
        assert focal_length(lens, 0.999999) == pytest.approx(1.0, rel=1e-12)

    def test_focal_length_monotone_in_wavelength(self):
        fs = [focal_length(LENS, w) for w in WAVELENGTHS]
        assert fs[0] > fs[1] > fs[2] > 0

    def test_focal_length_rejects_nonpositive_wavelength(self):
        with pytest.raises(DomainError):
            focal_length(LENS, 0.0)
        with pytest.raises(DomainError):
            focal_length(LENS, -1e-9)

    def test_bandwidth_near_33nm(self):
        assert spectral_bandwidth(LENS, 33e-9) == pytest.approx(0.0264e-9, rel=1e-12)

    def test_bandwidth_reduces_to_wavelength(self):
        lens = DiffractiveLensSpec(outer_diameter_m=4e-6 * 4, smallest_hole_m=4e-6)
        assert spectral_bandwidth(lens, 1.7e-9) == pytest.approx(1.7e-9, rel=1e-12)

    def test_bandwidth_direct_evaluation(self):
        # 4 * 5e-6 * 33.42e-9 / 25e-3
        assert spectral_bandwidth(LENS, 33.42e-9) == pytest.approx(2.6736e-11, rel=1e-9)

    def test_fd_diameter_adjustments(self):
        f2 = focal_length(LENS, 33.42e-9)
        d1 = refocus_diameter(LENS, 33.28e-9, f2)
        d3 = refocus_diameter(LENS, 33.54e-9, f2)
        assert (d1 - LENS.outer_diameter_m) == pytest.approx(-104.6e-6, abs=1e-6)
        assert (d3 - LENS.outer_diameter_m) == pytest.approx(+89.9e-6, abs=1e-6)

    def test_refocus_is_identity_at_own_plane(self):
        f2 = focal_length(LENS, 33.42e-9)
        assert refocus_diameter(LENS, 33.42e-9, f2) == pytest.approx(
            LENS.outer_diameter_m, rel=1e-12
        )

    def test_lens_invariants(self):
        with pytest.raises(DomainError):
            DiffractiveLensSpec(0.0, 1e-6)
        with pytest.raises(DomainError):
            DiffractiveLensSpec(1e-3, -1e-6)
        with pytest.raises(DomainError):
            DiffractiveLensSpec(1e-6, 2e-6)


class TestGeometry:
    def test_defocus_zero_at_focal_plane(self):
        geom = geometry_at_focus(LENS, 33.42e-9)
        assert geom.defocus(33.42e-9) == 0.0

    def test_defocus_sign_across_bands(self):
        geom = geometry_at_focus(LENS, WAVELENGTHS[0])
        # longer wavelengths focus closer, so they are past focus here
        assert geom.defocus(WAVELENGTHS[2]) < 0 < geom.defocus(33.0e-9)

    def test_finite_object_distance(self):
        geom = geometry_at_focus(LENS, 33.42e-9, object_distance_m=20.0)
        assert geom.defocus(33.42e-9) == pytest.approx(0.0, abs=1e-18)
        assert geom.measurement_distance_m > focal_length(LENS, 33.42e-9)

    def test_invalid_distances(self):
        with pytest.raises(DomainError):
            AcquisitionGeometry(1.0, -0.5, LENS)
        with pytest.raises(DomainError):
            AcquisitionGeometry(-1.0, 0.5, LENS)
        AcquisitionGeometry(math.inf, 0.5, LENS)  # infinity allowed


class TestBessel:
    def test_matches_series_oracle(self, rng):
        xs = np.concatenate(
            [rng.uniform(0.0, 16.0, 120), rng.uniform(16.0, 45.0, 120), [0.0, 15.999, 16.001]]
        )
        for x in xs:
            assert bessel_j1(float(x)) == pytest.approx(j1_series(x), abs=1e-10)

    def test_odd_symmetry(self, rng):
        for x in rng.uniform(0, 30, 25):
            assert bessel_j1(-float(x)) == -bessel_j1(float(x))

    def test_vectorized(self):
        xs = np.linspace(0, 20, 57)
        vals = bessel_j1(xs)
        assert vals.shape == xs.shape
        assert vals[0] == 0.0


class TestJinc:
    def test_origin_limit(self):
        assert jinc(0.0, 0.0) == pytest.approx(np.pi / 4.0, rel=1e-14)

    def test_first_zero(self):
        # Root of J1 located by bisection on the series oracle, divided by pi.
        lo, hi = 3.8, 3.9
        for _ in range(80):
            mid = 0.5 * (lo + hi)
            if j1_series(mid) > 0:
                lo = mid
            else:
                hi = mid
        root = 0.5 * (lo + hi) / math.pi
        assert root == pytest.approx(1.21967, abs=1e-5)
        assert abs(jinc(root, 0.0)) < 1e-12
        assert jinc(root - 1e-3, 0.0) > 0 > jinc(root + 1e-3, 0.0)

    def test_three_four_five(self):
        expected = j1_series(5.0 * math.pi) / 10.0
        assert jinc(3.0, 4.0) == pytest.approx(expected, abs=1e-10)

    def test_radial(self, rng):
        for _ in range(20):
            u, v = rng.uniform(-3, 3, 2)
            r = math.hypot(u, v)
            assert jinc(u, v) == pytest.approx(jinc(r, 0.0), rel=1e-12, abs=1e-15)


def _quadrature_psf_value(geom, wavelength, u, v, samples=1600):
    """Direct midpoint quadrature of the defocused pupil integral at (u, v)."""
    d_ap = geom.lens.outer_diameter_m
    dist = geom.measurement_distance_m
    eps = geom.defocus(wavelength)
    t = (np.arange(samples) + 0.5) / samples * d_ap - d_ap / 2
    xi, eta = np.meshgrid(t, t, indexing="ij")
    rsq = xi**2 + eta**2
    mask = rsq <= (d_ap / 2) ** 2
    phase = np.exp(
        1j * np.pi * eps / wavelength * rsq + 2j * np.pi * (u * xi + v * eta) / (wavelength * dist)
    )
    return abs((phase * mask).sum()) ** 2


class TestPsfApprox:
    def test_unit_sum_and_nonnegative(self):
        geom = geometry_at_focus(LENS, 33.42e-9)
        for wavelength in WAVELENGTHS:
            psf = psf_approx(geom, wavelength, 128, 2.4e-6)
            assert psf.samples.min() >= 0.0
            assert psf.samples.sum() == pytest.approx(1.0, abs=1e-12)

    def test_in_focus_matches_analytic_airy(self):
        geom = geometry_at_focus(LENS, 33.28e-9)
        n, pitch = 256, 2.5e-6
        psf = psf_approx(geom, 33.28e-9, n, pitch)
        assert np.unravel_index(psf.samples.argmax(), psf.samples.shape) == (n // 2, n // 2)
        coords = (np.arange(n) - n // 2) * pitch
        uu, vv = np.meshgrid(coords, coords, indexing="ij")
        scale = LENS.outer_diameter_m / (33.28e-9 * geom.measurement_distance_m)
        analytic = jinc(scale * uu, scale * vv) ** 2
        analytic /= analytic.sum()
        rel_rms = np.linalg.norm(psf.samples - analytic) / np.linalg.norm(analytic)
        assert rel_rms < 0.01

    def test_defocus_spreads_energy(self):
        # Band 1 observed at the band-3 focal plane: less energy near the
        # axis and a wider core than the focused pattern.
        n, pitch = 256, 2.5e-6
        focused = psf_approx(geometry_at_focus(LENS, 33.28e-9), 33.28e-9, n, pitch)
        off_plane = AcquisitionGeometry(math.inf, focal_length(LENS, 33.54e-9), LENS)
        defocused = psf_approx(off_plane, 33.28e-9, n, pitch)
        coords = (np.arange(n) - n // 2) * pitch
        uu, vv = np.meshgrid(coords, coords, indexing="ij")
        disk = np.hypot(uu, vv) <= 5e-6
        assert defocused.samples[disk].sum() < focused.samples[disk].sum()

        def fwhm(img):
            row = img[n // 2]
            above = np.where(row >= row.max() / 2)[0]
            return above.max() - above.min() + 1

        assert fwhm(defocused.samples) > fwhm(focused.samples)

    def test_band_limit(self):
        # DFT energy beyond twice the OTF support radius is negligible.
        geom = geometry_at_focus(LENS, 33.28e-9)
        n, pitch = 128, 1e-6
        for wavelength in (33.28e-9, 33.42e-9):
            psf = psf_approx(geom, wavelength, n, pitch)
            spectrum = np.fft.fft2(psf.kernel_origin())
            freqs = np.fft.fftfreq(n, d=pitch)
            fu, fv = np.meshgrid(freqs, freqs, indexing="ij")
            radius = np.hypot(fu, fv)
            limit = 2 * LENS.outer_diameter_m / (wavelength * geom.measurement_distance_m)
            outside = radius > limit
            assert outside.any()
            energy = np.abs(spectrum) ** 2
            assert energy[outside].sum() < 1e-6 * energy.sum()
            assert np.abs(spectrum)[outside].max() < 1e-6 * np.abs(spectrum).max()

    def test_focal_sweep_peaks_at_focus(self):
        wavelength = 33.42e-9
        f = focal_length(LENS, wavelength)
        offsets = [-0.02, -0.01, 0.0, 0.01, 0.02]
        peaks = [
            psf_approx(
                AcquisitionGeometry(math.inf, f + off, LENS), wavelength, 128, 2.4e-6
            ).samples.max()
            for off in offsets
        ]
        assert int(np.argmax(peaks)) == offsets.index(0.0)

    def test_nyquist_precondition(self):
        geom = geometry_at_focus(LENS, 33.28e-9)
        with pytest.raises(SamplingError) as err:
            psf_approx(geom, 33.28e-9, 64, 6e-6)
        limit = max_admissible_pitch(geom, 33.28e-9)
        assert f"{limit:.6g}" in str(err.value)
        assert err.value.max_pitch_m == pytest.approx(limit)

    def test_grid_size_must_be_even(self):
        geom = geometry_at_focus(LENS, 33.28e-9)
        with pytest.raises(DomainError):
            psf_approx(geom, 33.28e-9, 65, 2e-6)

    @pytest.mark.parametrize("case", ["focused", "defocused"])
    def test_matches_direct_quadrature(self, case, rng):
        # Five off-axis samples checked against a fine quadrature of the
        # pupil integral, normalized by the on-axis value.
        geom = AcquisitionGeometry(math.inf, focal_length(LENS, 33.42e-9), LENS)
        wavelength = 33.42e-9 if case == "focused" else 33.28e-9
        n, pitch = 256, 2.5e-6
        psf = psf_approx(geom, wavelength, n, pitch).samples
        centre = _quadrature_psf_value(geom, wavelength, 0.0, 0.0)
        offsets = rng.integers(-8, 9, size=(5, 2))
        for dr, dc in offsets:
            u, v = dr * pitch, dc * pitch
            ours = psf[n // 2 + dr, n // 2 + dc] / psf[n // 2, n // 2]
            reference = _quadrature_psf_value(geom, wavelength, u, v) / centre
            assert ours == pytest.approx(reference, abs=0.02)


class TestPsfExact:
    def test_filled_circle_matches_approx(self):
        geom = AcquisitionGeometry(math.inf, focal_length(LENS, 33.42e-9), LENS)
        for wavelength in (33.42e-9, 33.28e-9):  # in focus and defocused
            exact = psf_exact(
                geom, wavelength, ApertureModel.filled_circle(LENS.outer_diameter_m), 128, 2.4e-6
            )
            approx = psf_approx(geom, wavelength, 128, 2.4e-6)
            rel_rms = np.linalg.norm(exact.samples - approx.samples) / np.linalg.norm(
                approx.samples
            )
            assert rel_rms < 0.01

    def test_single_pinhole_is_scaled_airy(self):
        toy = DiffractiveLensSpec(2e-3, 10e-6, "toy")
        geom = AcquisitionGeometry(math.inf, 0.1, toy)
        n, pitch = 128, 2e-5
        psf = psf_exact(geom, 500e-9, ApertureModel.from_holes([(0.0, 0.0, 100e-6)]), n, pitch)
        coords = (np.arange(n) - n // 2) * pitch
        uu, vv = np.meshgrid(coords, coords, indexing="ij")
        scale = 100e-6 / (500e-9 * 0.1)
        analytic = jinc(scale * uu, scale * vv) ** 2
        analytic /= analytic.sum()
        rel_rms = np.linalg.norm(psf.samples - analytic) / np.linalg.norm(analytic)
        assert rel_rms < 0.1

    def test_symmetric_holes_give_symmetric_psf(self):
        toy = DiffractiveLensSpec(2e-3, 10e-6, "toy")
        geom = AcquisitionGeometry(math.inf, 0.1, toy)
        aperture = ApertureModel.from_holes(
            [(300e-6, 100e-6, 80e-6), (-300e-6, -100e-6, 80e-6)]
        )
        psf = psf_exact(geom, 500e-9, aperture, 128, 2e-5).samples
        rotated = np.roll(psf[::-1, ::-1], (1, 1), axis=(0, 1))
        assert np.allclose(psf, rotated, atol=1e-15)

    def test_empty_hole_list_rejected(self):
        with pytest.raises(DomainError):
            ApertureModel.from_holes([])

    def test_chirp_undersampling_warns(self):
        # Deliberately coarse pupil sampling for a strong defocus.
        geom = AcquisitionGeometry(math.inf, focal_length(LENS, 33.54e-9), LENS)
        with warnings.catch_warnings():
            warnings.simplefilter("error")
            with pytest.raises(RuntimeWarning):
                psf_approx(geom, 33.28e-9, 64, 1e-6)


class TestSupportRadius:
    def test_reported_radius_contains_energy(self):
        geom = geometry_at_focus(LENS, 33.42e-9)
        psf = psf_approx(geom, 33.42e-9, 128, 2.4e-6)
        n = psf.grid_size
        idx = np.arange(n) - n // 2
        rr = np.hypot(idx[:, None], idx[None, :])
        inside = psf.samples[rr <= psf.support_radius_px].sum()
        assert inside >= 0.9999
        if psf.support_radius_px > 1:
            assert psf.samples[rr <= psf.support_radius_px - 1].sum() < 0.9999
