"""Tests for the residual U-Net."""

import numpy as np
import pytest

from src.autodiff import check_gradients
from src.exceptions import ShapeMismatchError
from src.losses import attach_loss
from src.models import LogImage, RngStream, UNetConfig
from src.unet import PREDICTION, build_unet, parameter_count, predict, predict_array, zero_trunk


class TestParameterCount:
    """Tests for parameter_count."""

    @pytest.mark.parametrize("levels,channels,expected", [(1, 1, 71), (3, 16, 37249)])
    def test__formula__matches_built_graph(self, levels: int, channels: int, expected: int) -> None:
        cfg = UNetConfig(levels=levels, base_channels=channels)
        assert parameter_count(cfg) == expected
        assert build_unet(cfg).parameter_count == expected


class TestBuildUnet:
    """Tests for build_unet."""

    def test__output__keeps_input_shape(self) -> None:
        cfg = UNetConfig(levels=2, base_channels=4)
        net = build_unet(cfg)
        x = RngStream(seed=0).generator().random((2, 1, 16, 12)).astype(np.float32)
        assert predict_array(net, cfg, x).shape == (2, 1, 16, 12)

    def test__same_stream__gives_same_weights(self) -> None:
        cfg = UNetConfig(levels=1, base_channels=2)
        a = build_unet(cfg, RngStream(seed=3))
        b = build_unet(cfg, RngStream(seed=3))
        for name in a.params:
            np.testing.assert_array_equal(a.params[name], b.params[name])

    def test__biases__start_at_zero(self) -> None:
        net = build_unet(UNetConfig(levels=1, base_channels=2), RngStream(seed=1))
        assert all(not np.any(value) for name, value in net.params.items() if name.endswith(".b"))

    def test__zero_trunk__is_identity(self) -> None:
        cfg = UNetConfig(levels=2, base_channels=4)
        net = build_unet(cfg, RngStream(seed=5))
        zero_trunk(net)
        x = RngStream(seed=6).generator().random((1, 1, 8, 8)).astype(np.float32)
        np.testing.assert_array_equal(predict_array(net, cfg, x), x)

    def test__non_residual__outputs_trunk(self) -> None:
        cfg = UNetConfig(levels=1, base_channels=2, residual=False)
        net = build_unet(cfg)
        zero_trunk(net)
        x = np.ones((1, 1, 4, 4), dtype=np.float32)
        assert not np.any(predict_array(net, cfg, x))

    def test__gradients__match_finite_differences(self) -> None:
        cfg = UNetConfig(levels=1, base_channels=2)
        net = build_unet(cfg, RngStream(seed=2))
        attach_loss(net, net.outputs[PREDICTION], (-8.0, 4.0))
        generator = RngStream(seed=4).generator()
        inputs = {"x": generator.random((2, 1, 4, 4)), "target": generator.normal(-1.0, 0.5, size=(2, 1, 4, 4))}

        report = check_gradients(net, inputs, tolerance=1e-2, step=1e-5, max_entries=16)

        assert report.passed, report.max_relative_error


class TestPredict:
    """Tests for predict and side checks."""

    def test__indivisible_side__raises(self) -> None:
        cfg = UNetConfig(levels=3, base_channels=2)
        with pytest.raises(ShapeMismatchError):
            predict_array(build_unet(cfg), cfg, np.zeros((1, 1, 12, 16), dtype=np.float32))

    def test__log_image__keeps_normalization(self) -> None:
        cfg = UNetConfig(levels=1, base_channels=2)
        net = build_unet(cfg)
        zero_trunk(net)
        patch = LogImage(values=np.full((4, 4), 0.25), norm_lo=-3.0, norm_hi=5.0)

        out = predict(net, cfg, patch)

        assert (out.norm_lo, out.norm_hi) == (-3.0, 5.0)
        np.testing.assert_allclose(out.values, 0.25)
