"""Tests for despeckling toolkit exceptions."""

import pytest

from src.exceptions import (
    BadMagicError,
    ConfigError,
    GraphError,
    MerlinError,
    NonFiniteLossError,
    NonFiniteSampleError,
    NotGrayscaleError,
    RasterFormatError,
    ShapeMismatchError,
    SingularCovarianceError,
    SpectrumError,
    TransferFunctionError,
    TruncatedPayloadError,
)


class TestMerlinError:
    """Tests for the base MerlinError."""

    def test__base_error__is_exception(self) -> None:
        error = MerlinError("test message")
        assert isinstance(error, Exception)
        assert str(error) == "test message"


class TestRasterFormatErrors:
    """Tests for container format errors."""

    def test__bad_magic__stores_attributes(self) -> None:
        error = BadMagicError("a.slc", found=b"RFL1", expected=b"SLC1")
        assert error.path == "a.slc"
        assert error.found == b"RFL1"
        assert error.expected == b"SLC1"

    def test__bad_magic__formats_message(self) -> None:
        error = BadMagicError("a.slc", found=b"RFL1", expected=b"SLC1")
        assert str(error) == "Bad magic in 'a.slc': expected b'SLC1', found b'RFL1'"

    def test__truncated_payload__formats_message(self) -> None:
        error = TruncatedPayloadError("b.rfl", expected_bytes=80, found_bytes=12)
        assert str(error) == "Truncated payload in 'b.rfl': expected 80 bytes, found 12"

    def test__non_finite_sample__stores_count(self) -> None:
        assert NonFiniteSampleError("c.slc", count=3).count == 3

    def test__not_grayscale__stores_mode(self) -> None:
        error = NotGrayscaleError("d.png", mode="RGB")
        assert error.mode == "RGB"
        assert "RGB" in str(error)

    @pytest.mark.parametrize(
        "error",
        [
            BadMagicError("x", found=b"", expected=b"SLC1"),
            TruncatedPayloadError("x", expected_bytes=1, found_bytes=0),
            NonFiniteSampleError("x", count=1),
            NotGrayscaleError("x", mode="P"),
        ],
    )
    def test__raster_errors__catchable_as_base(self, error: MerlinError) -> None:
        assert isinstance(error, RasterFormatError)
        with pytest.raises(MerlinError):
            raise error


class TestNumericErrors:
    """Tests for numeric and graph errors."""

    def test__shape_mismatch__formats_message(self) -> None:
        error = ShapeMismatchError("combine_estimates", expected=(4, 4), found=(4, 8))
        assert error.operation == "combine_estimates"
        assert str(error) == "combine_estimates: expected shape (4, 4), found (4, 8)"

    def test__transfer_function__formats_message(self) -> None:
        assert str(TransferFunctionError("band is empty")) == "Invalid transfer function: band is empty"

    def test__spectrum__formats_message(self) -> None:
        assert str(SpectrumError("odd side")) == "Spectrum preprocessing failed: odd side"

    def test__graph__formats_message(self) -> None:
        assert str(GraphError("unknown input 'y'")) == "Graph error: unknown input 'y'"

    def test__non_finite_loss__reports_stats(self) -> None:
        error = NonFiniteLossError(epoch=2, batch=7, stats={"loss": float("nan"), "target_max": 12.5})
        assert error.epoch == 2
        assert error.batch == 7
        assert str(error) == "Non-finite loss at epoch 2, batch 7 (loss=nan, target_max=12.5)"

    def test__singular_covariance__reports_condition(self) -> None:
        error = SingularCovarianceError(condition=1.5e17)
        assert error.condition == 1.5e17
        assert str(error) == "Speckle covariance is singular (condition estimate 1.5e+17)"


class TestConfigError:
    """Tests for ConfigError."""

    def test__config_error__formats_message(self) -> None:
        error = ConfigError("run.json", "unsupported schema_version 2")
        assert error.source == "run.json"
        assert str(error) == "Invalid configuration 'run.json': unsupported schema_version 2"

    def test__config_error__catchable_as_base(self) -> None:
        with pytest.raises(MerlinError):
            raise ConfigError("x", "y")
