"""Tests for spectrum recentering, symmetric masking and log normalization."""

import numpy as np
import pytest

from src.exceptions import SpectrumError
from src.models import ComplexImage, LogImage, ReflectivityImage, RngStream, SpectrumProfile, TransferFunctionSpec
from src.speckle_sim import simulate_slc
from src.spectrum_prep import (
    apply_symmetric_mask,
    compute_normalization,
    compute_profiles,
    decimate2,
    demodulate,
    estimate_shifts,
    estimate_spectrum_shift,
    log_denormalize,
    log_normalize,
    prepare_image,
    prepare_patch,
    recenter_patch,
    symmetric_mask,
    symmetric_mask_support,
)

SIDE = 64


def _bump(side: int, half: int) -> np.ndarray:
    k = np.fft.fftfreq(side, 1.0 / side)
    return np.where(np.abs(k) < half, 0.5 + 0.5 * np.cos(np.pi * k / half), 0.0)


def band_patch(delta_az: int = 0, delta_rg: int = 0, side: int = SIDE, half: int = 8) -> ComplexImage:
    """Noise-free patch whose spectrum is a centered Hann bump moved by (delta_az, delta_rg) bins."""
    w = _bump(side, half)
    base = np.fft.ifft2(np.outer(w, w)) * side * side / 10
    rows, cols = np.mgrid[0:side, 0:side]
    carrier = np.exp(2j * np.pi * (delta_az * rows + delta_rg * cols) / side)
    return ComplexImage.from_complex(base * carrier)


def _mirror(side: int) -> np.ndarray:
    return np.mod(-np.arange(side), side)


class TestComputeProfiles:
    """Tests for compute_profiles."""

    def test__pure_modulation__is_a_spike(self) -> None:
        rows = np.arange(SIDE)[:, None] * np.ones((1, SIDE))
        patch = ComplexImage.from_complex(np.exp(2j * np.pi * 5 * rows / SIDE))

        azimuth, range_ = compute_profiles(patch)

        assert int(np.argmax(azimuth.values)) == 5
        assert azimuth.values[5] == pytest.approx(SIDE, rel=1e-4)
        assert int(np.argmax(range_.values)) == 0

    def test__global_phase__leaves_profiles_unchanged(self) -> None:
        patch = band_patch(3, -2)
        rotated = ComplexImage.from_complex(patch.to_complex() * np.exp(1j * 1.3))
        for before, after in zip(compute_profiles(patch), compute_profiles(rotated)):
            np.testing.assert_allclose(after.values, before.values, rtol=1e-4, atol=1e-4 * before.values.max())

    def test__white_speckle__is_flat_on_average(self) -> None:
        ones = ReflectivityImage(values=np.ones((SIDE, SIDE)))
        total = np.zeros(SIDE)
        for trial in range(100):
            slc = simulate_slc(ones, TransferFunctionSpec.identity(), RngStream(seed=11, stream_id=trial))
            total += compute_profiles(slc)[0].values
        mean = total / 100
        assert np.all(np.abs(mean / mean.mean() - 1.0) < 0.1)

    @pytest.mark.parametrize("shape", [(63, 63), (64, 32)])
    def test__bad_shape__raises(self, shape: tuple[int, int]) -> None:
        with pytest.raises(SpectrumError):
            compute_profiles(ComplexImage(re=np.ones(shape), im=np.zeros(shape)))


class TestEstimateSpectrumShift:
    """Tests for estimate_spectrum_shift."""

    def test__symmetric_profile__returns_zero(self) -> None:
        profile = SpectrumProfile(axis="azimuth", values=_bump(SIDE, 8))
        assert estimate_spectrum_shift(profile) == 0

    def test__constant_profile__returns_zero(self) -> None:
        assert estimate_spectrum_shift(SpectrumProfile(axis="range", values=np.ones(SIDE))) == 0

    @pytest.mark.parametrize("delta", range(-16, 17))
    def test__modulated_patch__recovers_every_shift(self, delta: int) -> None:
        assert estimate_shifts(band_patch(delta, -delta)) == (delta, -delta)

    def test__known_shift__matches_exhaustive_search(self) -> None:
        profile = compute_profiles(band_patch(5, 0))[0].values
        reversed_ = profile[_mirror(SIDE)]
        scores = {d: float(np.dot(np.roll(reversed_, 2 * d), profile)) for d in range(-SIDE // 4, SIDE // 4)}
        assert max(scores, key=scores.__getitem__) == 5
        assert estimate_spectrum_shift(SpectrumProfile(axis="azimuth", values=profile)) == 5

    @pytest.mark.parametrize("delta", [-20, 20, 24])
    def test__half_band_alias__is_resolved_by_profile_mass(self, delta: int) -> None:
        # delta and delta ± N/2 score the same; the smaller-|δ| alias must not win.
        profile = SpectrumProfile(axis="range", values=np.roll(_bump(SIDE, 6), delta))
        assert estimate_spectrum_shift(profile) == delta


class TestRecenterPatch:
    """Tests for recenter_patch."""

    def test__recovered_shift__recenters_to_zero(self) -> None:
        patch = band_patch(7, -3)
        assert estimate_shifts(patch) == (7, -3)
        assert estimate_shifts(recenter_patch(patch)) == (0, 0)

    def test__centered_patch__is_unchanged(self) -> None:
        patch = band_patch()
        out = recenter_patch(patch)
        np.testing.assert_allclose(out.to_complex(), patch.to_complex(), atol=1e-5)

    def test__demodulation__is_an_isometry(self) -> None:
        patch = band_patch(4, 9)
        out = demodulate(patch, 4, 9)
        norm_in = np.linalg.norm(patch.to_complex())
        assert np.linalg.norm(out.to_complex()) == pytest.approx(norm_in, rel=1e-5)

    def test__global_phase__is_carried_through(self) -> None:
        patch = band_patch(2, 1)
        phase = np.exp(1j * 0.4)
        rotated = ComplexImage.from_complex(patch.to_complex() * phase)
        np.testing.assert_allclose(
            recenter_patch(rotated).to_complex(), recenter_patch(patch).to_complex() * phase, atol=1e-4
        )


class TestSymmetricMask:
    """Tests for the symmetric spectral mask."""

    def test__support__is_even_symmetric(self) -> None:
        support = symmetric_mask_support(band_patch(5, -2))
        mirror = _mirror(SIDE)
        np.testing.assert_array_equal(support, support[np.ix_(mirror, mirror)])

    def test__output_spectrum__vanishes_outside_support(self) -> None:
        patch = band_patch(5, -2)
        support = symmetric_mask_support(patch)
        spectrum = np.fft.fft2(symmetric_mask(patch).to_complex())
        peak = np.abs(spectrum).max()
        assert np.abs(spectrum[~support]).max() < 1e-5 * peak

    def test__full_band__is_all_pass(self) -> None:
        impulse = np.zeros((SIDE, SIDE), dtype=np.complex128)
        impulse[3, 7] = 2.0 - 1.0j
        patch = ComplexImage.from_complex(impulse)
        masked, fraction = apply_symmetric_mask(patch)
        assert fraction == 1.0
        np.testing.assert_allclose(masked.to_complex(), impulse, atol=1e-6)

    def test__one_sided_band__keeps_zero_row_only(self) -> None:
        k = np.fft.fftfreq(SIDE, 1.0 / SIDE)
        w_az = ((k >= 0) & (k < SIDE // 2)).astype(float)
        patch = ComplexImage.from_complex(np.fft.ifft2(np.outer(w_az, np.ones(SIDE))) * 100)

        support = symmetric_mask_support(patch)

        assert support[0].all()
        assert not support[1:].any()

    def test__zero_patch__raises(self) -> None:
        with pytest.raises(SpectrumError, match="empty"):
            apply_symmetric_mask(ComplexImage(re=np.zeros((8, 8)), im=np.zeros((8, 8))))


class TestPreparePatch:
    """Tests for prepare_patch and prepare_image."""

    def test__report__carries_shifts_and_fraction(self) -> None:
        _, report = prepare_patch(band_patch(7, -3))
        assert (report.delta_az, report.delta_rg) == (7, -3)
        # Hann bins with |k| <= 6 exceed 5% of the peak.
        assert report.mask_fraction == pytest.approx(13 * 13 / SIDE**2)

    def test__image__is_processed_per_patch(self) -> None:
        tiles = np.block(
            [
                [band_patch(1, 2).to_complex(), band_patch(-4, 0).to_complex()],
                [band_patch(0, 0).to_complex(), band_patch(6, -6).to_complex()],
            ]
        )
        out, reports = prepare_image(ComplexImage.from_complex(tiles), SIDE)
        assert out.shape == (2 * SIDE, 2 * SIDE)
        assert [(r.delta_az, r.delta_rg) for r in reports] == [(1, 2), (-4, 0), (0, 0), (6, -6)]

    def test__odd_patch_size__raises(self) -> None:
        with pytest.raises(SpectrumError):
            prepare_image(band_patch(), 63)

    def test__patch_larger_than_image__raises(self) -> None:
        with pytest.raises(SpectrumError):
            prepare_image(band_patch(), 128)


class TestLogNormalization:
    """Tests for log_normalize and log_denormalize."""

    def test__endpoints__map_to_unit_interval(self) -> None:
        image = log_normalize(np.array([[np.exp(2.0), np.exp(5.0)]]), (2.0, 5.0))
        np.testing.assert_allclose(image.values, [[0.0, 1.0]], atol=1e-6)

    def test__round_trip__is_identity(self) -> None:
        x = RngStream(seed=6).generator().uniform(1e-3, 1e3, size=(16, 16))
        np.testing.assert_allclose(log_denormalize(log_normalize(x, (-4.0, 9.0))), x, rtol=1e-5)

    def test__below_floor__is_clamped(self) -> None:
        image = log_normalize(np.array([[1e-11, 0.0]]), (-30.0, 0.0))
        expected = (np.log(1e-10) + 30.0) / 30.0
        np.testing.assert_allclose(image.values, [[expected, expected]], rtol=1e-6)

    def test__inverted_norm__raises_value_error(self) -> None:
        with pytest.raises(ValueError):
            log_normalize(np.ones((2, 2)), (1.0, 1.0))

    def test__denormalize__uses_stored_constants(self) -> None:
        image = LogImage(values=np.array([[0.5]]), norm_lo=0.0, norm_hi=2.0)
        assert log_denormalize(image)[0, 0] == pytest.approx(np.e)


class TestComputeNormalization:
    """Tests for compute_normalization."""

    def test__speckle_corpus__orders_percentiles(self) -> None:
        ones = ReflectivityImage(values=np.ones((64, 64)))
        slc = simulate_slc(ones, TransferFunctionSpec.identity(), RngStream(seed=0))
        lo, hi = compute_normalization([slc])
        assert lo < np.log(0.5) < hi

    def test__degenerate_corpus__widens_range(self) -> None:
        img = ComplexImage(re=np.ones((4, 4)), im=np.ones((4, 4)))
        assert compute_normalization([img]) == (0.0, 1.0)

    def test__empty_corpus__raises(self) -> None:
        with pytest.raises(SpectrumError):
            compute_normalization([])


class TestDecimate2:
    """Tests for decimate2."""

    def test__keeps_even_indices(self) -> None:
        z = np.arange(16, dtype=np.float64).reshape(4, 4)
        out = decimate2(ComplexImage(re=z, im=-z))
        np.testing.assert_array_equal(out.re, [[0, 2], [8, 10]])
        np.testing.assert_array_equal(out.im, [[0, -2], [-8, -10]])

    def test__odd_dims__floor(self) -> None:
        assert decimate2(ComplexImage(re=np.ones((5, 7)), im=np.ones((5, 7)))).shape == (2, 3)

    def test__too_small__raises_value_error(self) -> None:
        with pytest.raises(ValueError):
            decimate2(ComplexImage(re=np.ones((1, 4)), im=np.ones((1, 4))))

    def test__half_band_speckle__is_decorrelated(self) -> None:
        half_band = TransferFunctionSpec(kind="separable_apodized", zero_pad_factor=2.0)
        ones = ReflectivityImage(values=np.ones((256, 256)))
        slc = simulate_slc(ones, half_band, RngStream(seed=8))

        def neighbor_corr(img: ComplexImage) -> float:
            re = img.re.astype(np.float64)
            return float(np.corrcoef(re[:, :-1].ravel(), re[:, 1:].ravel())[0, 1])

        assert neighbor_corr(slc) > 0.3
        assert abs(neighbor_corr(decimate2(slc))) < 0.1
