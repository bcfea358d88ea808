"""Tests for despeckling metrics, independence diagnostics and the evaluation harness."""

import numpy as np
import pytest

from src.checkpoint import Checkpoint
from src.evaluation import (
    ENL_CAP,
    PSNR_CAP_DB,
    check_spatial_condition,
    check_spec_spatially,
    check_transfer_independence,
    empirical_independence,
    enl,
    evaluate_checkpoint,
    evaluate_images,
    full_likelihood,
    psnr_amplitude,
    residual_ratio,
    spatial_residual,
)
from src.exceptions import ShapeMismatchError, SingularCovarianceError, TransferFunctionError
from src.losses import part_nll
from src.models import ReflectivityImage, RngStream, TransferFunctionSpec, UNetConfig
from src.speckle_sim import intensity_of, simulate_slc, spatial_parts
from src.unet import build_unet, zero_trunk

HAMMING = TransferFunctionSpec(
    kind="separable_apodized", zero_pad_factor=1.2, window_az="hamming", window_rg="hamming"
)
ONE_SIDED = TransferFunctionSpec(kind="separable_apodized", zero_pad_factor=2.0, freq_shift=(0.25, 0.0))
SPEC_MATRIX = [
    pytest.param(TransferFunctionSpec.identity(), "independent", id="identity"),
    pytest.param(HAMMING, "independent", id="hamming"),
    pytest.param(ONE_SIDED, "dependent", id="one_sided"),
]


def constant_speckle(side: int, r: float = 1.0, seed: int = 0) -> tuple[ReflectivityImage, np.ndarray]:
    scene = ReflectivityImage(values=np.full((side, side), r))
    slc = simulate_slc(scene, TransferFunctionSpec.identity(), RngStream(seed=seed))
    return scene, intensity_of(slc)


class TestPsnrAmplitude:
    """Tests for psnr_amplitude."""

    def test__identical__is_capped(self) -> None:
        ref = np.full((4, 4), 9.0)
        assert psnr_amplitude(ref, ref) == PSNR_CAP_DB

    def test__constant_offset__known_value(self) -> None:
        ref = np.full((4, 4), 100.0**2)
        est = np.full((4, 4), 90.0**2)
        assert psnr_amplitude(ref, est, peak=100.0) == pytest.approx(20.0)

    def test__peak__defaults_to_largest_reference_amplitude(self) -> None:
        ref = np.array([[100.0**2, 50.0**2]])
        est = np.array([[90.0**2, 40.0**2]])
        assert psnr_amplitude(ref, est) == pytest.approx(20.0)

    def test__joint_permutation__leaves_value_unchanged(self) -> None:
        generator = RngStream(seed=3).generator()
        ref = generator.uniform(1.0, 9.0, size=(8, 8))
        est = generator.uniform(1.0, 9.0, size=(8, 8))
        order = generator.permutation(64)
        shuffled = psnr_amplitude(ref.ravel()[order].reshape(8, 8), est.ravel()[order].reshape(8, 8))
        assert shuffled == pytest.approx(psnr_amplitude(ref, est))

    def test__shape_mismatch__raises(self) -> None:
        with pytest.raises(ShapeMismatchError):
            psnr_amplitude(np.ones((2, 2)), np.ones((2, 3)))

    def test__non_positive_peak__raises_value_error(self) -> None:
        with pytest.raises(ValueError):
            psnr_amplitude(np.ones((2, 2)), np.zeros((2, 2)), peak=0.0)


class TestResidualRatio:
    """Tests for residual_ratio."""

    def test__noisy_estimate__gives_unit_ratio(self) -> None:
        _, intensity = constant_speckle(16)
        np.testing.assert_allclose(residual_ratio(intensity, intensity), 1.0)

    def test__half_estimate__doubles_ratio(self) -> None:
        _, intensity = constant_speckle(16)
        assert residual_ratio(intensity, intensity / 2).mean() == pytest.approx(2.0)

    def test__true_reflectivity__leaves_single_look_residual(self) -> None:
        scene, intensity = constant_speckle(320, r=7.0)
        ratio = residual_ratio(intensity, scene)
        assert ratio.mean() == pytest.approx(1.0, abs=0.01)
        assert enl(ratio) == pytest.approx(1.0, abs=0.05)


class TestEnl:
    """Tests for enl."""

    def test__constant_region__is_capped(self) -> None:
        assert enl(np.full((10, 10), 3.0)) == ENL_CAP

    def test__four_looks__gives_four(self) -> None:
        samples = RngStream(seed=2).generator().exponential(size=(4, 100_000)).mean(axis=0)
        assert enl(samples) == pytest.approx(4.0, abs=0.2)

    def test__too_few_pixels__raises_value_error(self) -> None:
        with pytest.raises(ValueError, match="at least"):
            enl(np.ones((9, 9)))


class TestAnalyticIndependence:
    """Tests for check_transfer_independence."""

    @pytest.mark.parametrize("spec,expected", SPEC_MATRIX)
    def test__spec_matrix__verdicts(self, spec: TransferFunctionSpec, expected: str) -> None:
        report = check_transfer_independence(spec)
        assert report.verdict == expected
        assert report.method == "analytic"


class TestEmpiricalIndependence:
    """Tests for empirical_independence."""

    @pytest.mark.parametrize("spec,expected", SPEC_MATRIX)
    def test__agrees_with_analytic_verdict(self, spec: TransferFunctionSpec, expected: str) -> None:
        report = empirical_independence(spec, draws=100_000, seed=1)
        assert report.verdict == expected
        assert report.verdict == check_transfer_independence(spec).verdict

    def test__identity__statistic_is_small(self) -> None:
        assert empirical_independence(TransferFunctionSpec.identity(), seed=2).statistic < 0.01

    def test__hamming__statistic_is_small(self) -> None:
        assert empirical_independence(HAMMING, seed=2).statistic < 0.02

    def test__one_sided__statistic_is_large(self) -> None:
        assert empirical_independence(ONE_SIDED, seed=2).statistic > 0.1

    def test__too_few_draws__raises_value_error(self) -> None:
        with pytest.raises(ValueError, match="10\\^4"):
            empirical_independence(TransferFunctionSpec.identity(), draws=5000)


class TestSpatialCondition:
    """Tests for the spatial-domain independence check."""

    def test__real_system__is_independent(self) -> None:
        m = RngStream(seed=0).generator().normal(size=(9, 9))
        assert check_spatial_condition(m, np.zeros((9, 9))).verdict == "independent"

    def test__shared_basis__is_independent(self) -> None:
        generator = RngStream(seed=1).generator()
        q = generator.normal(size=(12, 12))
        lam, tau = generator.normal(size=(2, 12))
        m, n = q * lam, q * tau

        residual = spatial_residual(m, n, generator.uniform(0.1, 1.0, size=12))

        assert np.max(np.abs(residual)) < 1e-10
        assert check_spatial_condition(m, n).verdict == "independent"

    def test__unrelated_parts__are_dependent(self) -> None:
        generator = RngStream(seed=2).generator()
        m, n = generator.normal(size=(2, 10, 10))
        report = check_spatial_condition(m, n)
        assert report.verdict == "dependent"
        assert report.statistic > 1e-3

    def test__elementary_vector__leaves_column_outer_products(self) -> None:
        generator = RngStream(seed=4).generator()
        m, n = generator.normal(size=(2, 6, 6))
        r = np.zeros(6)
        r[2] = 1.0
        expected = np.outer(m[:, 2], n[:, 2]) - np.outer(n[:, 2], m[:, 2])
        np.testing.assert_allclose(spatial_residual(m, n, r), expected, atol=1e-12)

    @pytest.mark.parametrize("spec,expected", SPEC_MATRIX)
    def test__sampled_systems__match_analytic(self, spec: TransferFunctionSpec, expected: str) -> None:
        assert check_spec_spatially(spec, (8, 8)).verdict == expected

    def test__non_square__raises(self) -> None:
        with pytest.raises(ShapeMismatchError):
            check_spatial_condition(np.ones((3, 4)), np.ones((3, 4)))

    def test__mismatched_parts__raises(self) -> None:
        with pytest.raises(ShapeMismatchError):
            check_spatial_condition(np.ones((3, 3)), np.ones((4, 4)))

    def test__too_many_pixels__raises(self) -> None:
        with pytest.raises(TransferFunctionError):
            check_spatial_condition(np.zeros((257, 257)), np.zeros((257, 257)))


class TestFullLikelihood:
    """Tests for the full-covariance likelihood."""

    def test__unit_example__known_value(self) -> None:
        r = ReflectivityImage(values=np.ones((2, 2)))
        assert full_likelihood(r, np.ones((2, 2)), TransferFunctionSpec.identity()) == pytest.approx(4.0)

    def test__identity__reduces_to_independent_form(self) -> None:
        generator = RngStream(seed=5).generator()
        for _ in range(100):
            r = ReflectivityImage(values=generator.uniform(0.2, 5.0, size=(3, 3)))
            b = generator.normal(size=(3, 3))
            value = full_likelihood(r, b, TransferFunctionSpec.identity())
            assert value == pytest.approx(part_nll(r.values, b), rel=1e-8, abs=1e-8)

    def test__complex_kernel__matches_dense_solve(self) -> None:
        kernel = np.array([[0.0, 0.3j, 0.0], [0.2, 1.0, 0.1j], [0.0, 0.25, 0.0]])
        spec = TransferFunctionSpec.from_kernel(kernel, (8, 8))
        generator = RngStream(seed=6).generator()
        r = ReflectivityImage(values=generator.uniform(0.5, 2.0, size=(8, 8)))
        b = generator.normal(size=(8, 8))
        m, n = spatial_parts(spec, (8, 8))
        assert np.abs(n).max() > 0.01
        weights = r.values.astype(np.float64).ravel()
        covariance = (m * weights) @ m.T + (n * weights) @ n.T
        expected = 0.5 * np.log(weights).sum() + b.ravel() @ np.linalg.solve(covariance, b.ravel())

        assert full_likelihood(r, b, spec) == pytest.approx(expected, rel=1e-6)

    def test__zero_system__raises_singular(self) -> None:
        spec = TransferFunctionSpec.from_grid(np.zeros((2, 2)))
        with pytest.raises(SingularCovarianceError):
            full_likelihood(ReflectivityImage(values=np.ones((2, 2))), np.ones((2, 2)), spec)

    def test__shape_mismatch__raises(self) -> None:
        with pytest.raises(ShapeMismatchError):
            full_likelihood(ReflectivityImage(values=np.ones((2, 2))), np.ones((3, 3)), TransferFunctionSpec())


class TestEvaluateImages:
    """Tests for evaluate_images."""

    def test__perfect_estimate__reports_cap_and_single_look_residual(self) -> None:
        scene = ReflectivityImage(values=np.full((64, 64), 4.0))
        noisy = simulate_slc(scene, TransferFunctionSpec.identity(), RngStream(seed=7))

        report = evaluate_images(scene, noisy, scene, regions=[(0, 0, 32, 32), (32, 32, 32, 32)])

        assert report.psnr_db == PSNR_CAP_DB
        assert report.psnr_sigma == 0.0
        assert report.noisy_psnr_db < 10.0
        assert len(report.enl_regions) == 2
        assert report.residual_stats["mean"] == pytest.approx(1.0, abs=0.05)
        assert report.residual_stats["enl"] == pytest.approx(1.0, abs=0.15)
        assert report.independence is None

    def test__spec__adds_independence_verdicts(self) -> None:
        scene = ReflectivityImage(values=np.full((16, 16), 1.0))
        noisy = simulate_slc(scene, TransferFunctionSpec.identity(), RngStream(seed=8))

        report = evaluate_images(scene, noisy, scene, spec=ONE_SIDED, draws=10_000)

        assert report.independence == {"analytic": "dependent", "empirical": "dependent"}
        assert report.enl_regions == [report.residual_stats["enl"]]


class TestEvaluateCheckpoint:
    """Tests for evaluate_checkpoint."""

    @pytest.fixture
    def identity_checkpoint(self) -> Checkpoint:
        cfg = UNetConfig(levels=1, base_channels=2)
        graph = build_unet(cfg)
        zero_trunk(graph)
        return Checkpoint(unet=cfg, params=dict(graph.params), norm=(-12.0, 12.0))

    @pytest.fixture
    def scenes(self) -> dict[str, ReflectivityImage]:
        ramp = np.tile(np.linspace(10.0, 200.0, 64), (64, 1))
        return {"flat": ReflectivityImage(values=np.full((64, 64), 50.0)), "ramp": ReflectivityImage(values=ramp)}

    def test__rows__follow_scenes(self, identity_checkpoint: Checkpoint, scenes: dict) -> None:
        report = evaluate_checkpoint(identity_checkpoint, scenes, instances=3, tile=64, margin=16)

        assert [row.scene for row in report.scenes] == ["flat", "ramp"]
        assert all(row.instances == 3 for row in report.scenes)
        assert report.psnr_db == pytest.approx(np.mean([row.psnr_db for row in report.scenes]))
        assert report.sigma_kind == "population"

    def test__same_seed__is_reproducible(self, identity_checkpoint: Checkpoint, scenes: dict) -> None:
        a = evaluate_checkpoint(identity_checkpoint, scenes, instances=2, seed=5, tile=64, margin=16)
        b = evaluate_checkpoint(identity_checkpoint, scenes, instances=2, seed=5, tile=64, margin=16)
        assert a == b

    def test__intensity_only__matches_identity_network(self, identity_checkpoint: Checkpoint, scenes: dict) -> None:
        # The identity network halves the intensity whatever the phases are.
        full = evaluate_checkpoint(identity_checkpoint, scenes, instances=2, tile=64, margin=16)
        pseudo = evaluate_checkpoint(
            identity_checkpoint, scenes, instances=2, intensity_only=True, tile=64, margin=16
        )
        assert pseudo.psnr_db == pytest.approx(full.psnr_db, abs=1e-3)
