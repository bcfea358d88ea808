"""Domain-specific exceptions for the despeckling toolkit."""

from pathlib import Path
from typing import Any


class MerlinError(Exception):
    """Base exception for despeckling toolkit errors."""


# ============================================================================
# Raster containers
# ============================================================================


class RasterFormatError(MerlinError):
    """Base class for malformed raster or tensor containers."""


class BadMagicError(RasterFormatError):
    """Raised when a container does not start with the expected magic bytes."""

    def __init__(self, path: str | Path, found: bytes, expected: bytes) -> None:
        self.path = str(path)
        self.found = found
        self.expected = expected
        super().__init__(f"Bad magic in '{self.path}': expected {expected!r}, found {found!r}")


class TruncatedPayloadError(RasterFormatError):
    """Raised when a container holds fewer bytes than its header announces."""

    def __init__(self, path: str | Path, expected_bytes: int, found_bytes: int) -> None:
        self.path = str(path)
        self.expected_bytes = expected_bytes
        self.found_bytes = found_bytes
        super().__init__(f"Truncated payload in '{self.path}': expected {expected_bytes} bytes, found {found_bytes}")


class NonFiniteSampleError(RasterFormatError):
    """Raised when a container stores NaN or infinite samples."""

    def __init__(self, path: str | Path, count: int) -> None:
        self.path = str(path)
        self.count = count
        super().__init__(f"'{self.path}' contains {count} non-finite samples")


class NotGrayscaleError(RasterFormatError):
    """Raised when a ground-truth image is not 8-bit grayscale."""

    def __init__(self, path: str | Path, mode: str) -> None:
        self.path = str(path)
        self.mode = mode
        super().__init__(f"'{self.path}' is not an 8-bit grayscale image (mode {mode})")


# ============================================================================
# Numerics
# ============================================================================


class ShapeMismatchError(MerlinError):
    """Raised when two grids or tensors that must agree in shape do not."""

    def __init__(self, operation: str, expected: Any, found: Any) -> None:
        self.operation = operation
        self.expected = expected
        self.found = found
        super().__init__(f"{operation}: expected shape {expected}, found {found}")


class TransferFunctionError(MerlinError):
    """Raised when a SAR transfer function cannot be used as requested."""

    def __init__(self, reason: str) -> None:
        self.reason = reason
        super().__init__(f"Invalid transfer function: {reason}")


class SpectrumError(MerlinError):
    """Raised when spectrum preprocessing cannot be applied to a patch."""

    def __init__(self, reason: str) -> None:
        self.reason = reason
        super().__init__(f"Spectrum preprocessing failed: {reason}")


class GraphError(MerlinError):
    """Raised on misuse of a computation graph."""

    def __init__(self, reason: str) -> None:
        self.reason = reason
        super().__init__(f"Graph error: {reason}")


class NonFiniteLossError(MerlinError):
    """Raised when training produces a NaN or infinite loss."""

    def __init__(self, epoch: int, batch: int, stats: dict[str, float]) -> None:
        self.epoch = epoch
        self.batch = batch
        self.stats = stats
        details = ", ".join(f"{key}={value:.4g}" for key, value in stats.items())
        super().__init__(f"Non-finite loss at epoch {epoch}, batch {batch} ({details})")


class SingularCovarianceError(MerlinError):
    """Raised when the full speckle covariance cannot be factored."""

    def __init__(self, condition: float) -> None:
        self.condition = condition
        super().__init__(f"Speckle covariance is singular (condition estimate {condition:.3g})")


# ============================================================================
# Configuration
# ============================================================================


class ConfigError(MerlinError):
    """Raised when a configuration file or value is rejected."""

    def __init__(self, source: str, reason: str) -> None:
        self.source = source
        self.reason = reason
        super().__init__(f"Invalid configuration '{source}': {reason}")
