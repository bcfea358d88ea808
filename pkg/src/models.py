"""Pydantic models for SAR images, configurations and reports."""

import sys
from typing import Annotated, Any, Literal

if sys.version_info >= (3, 11):
    from typing import Self
else:
    from typing_extensions import Self

import numpy as np
from annotated_types import Ge, Gt
from numpy.typing import NDArray
from pydantic import BaseModel, ConfigDict, Field, PrivateAttr, field_validator, model_validator

PositiveInt = Annotated[int, Gt(0)]
NonNegativeInt = Annotated[int, Ge(0)]

# pydantic validates fields against the bare ndarray class; dtype and rank are checked by validators.
Float32Grid = np.ndarray

R_FLOOR = 1e-6
X_FLOOR = 1e-10


def _as_grid(value: Any, name: str) -> Float32Grid:
    grid = np.ascontiguousarray(np.asarray(value, dtype=np.float32))
    if grid.ndim != 2:
        raise ValueError(f"{name} must be a 2-D grid, got {grid.ndim} dimensions")
    if grid.shape[0] < 1 or grid.shape[1] < 1:
        raise ValueError(f"{name} must be at least 1x1, got {grid.shape}")
    if not np.all(np.isfinite(grid)):
        raise ValueError(f"{name} contains non-finite values")
    return grid


# ============================================================================
# Images
# ============================================================================


class ComplexImage(BaseModel):
    """A single-look complex image: real part ã and imaginary part b̃ on a row-major grid."""

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    re: Float32Grid = Field(description="Real part, shape (height, width)")
    im: Float32Grid = Field(description="Imaginary part, shape (height, width)")

    @field_validator("re", "im", mode="before")
    @classmethod
    def _check_grid(cls, value: Any) -> Float32Grid:
        return _as_grid(value, "complex image part")

    @model_validator(mode="after")
    def _check_dims(self) -> Self:
        if self.re.shape != self.im.shape:
            raise ValueError(f"re and im shapes differ: {self.re.shape} vs {self.im.shape}")
        return self

    @classmethod
    def from_complex(cls, z: NDArray[Any]) -> "ComplexImage":
        return cls(re=np.real(z), im=np.imag(z))

    def to_complex(self) -> NDArray[np.complex128]:
        return self.re.astype(np.float64) + 1j * self.im.astype(np.float64)

    @property
    def height(self) -> int:
        return int(self.re.shape[0])

    @property
    def width(self) -> int:
        return int(self.re.shape[1])

    @property
    def shape(self) -> tuple[int, int]:
        return (self.height, self.width)


class ReflectivityImage(BaseModel):
    """Strictly positive reflectivity r, or the system-convolved r̃ when `convolved_flag` is set."""

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    values: Float32Grid = Field(description="Reflectivities, shape (height, width)")
    convolved_flag: bool = Field(default=False, description="True when values hold r̃ₖ = Σℓ H²ₖℓ rℓ")

    @field_validator("values", mode="before")
    @classmethod
    def _check_values(cls, value: Any) -> Float32Grid:
        grid = _as_grid(value, "reflectivity")
        if np.any(grid <= 0):
            raise ValueError("reflectivity values must be strictly positive")
        return grid

    @property
    def height(self) -> int:
        return int(self.values.shape[0])

    @property
    def width(self) -> int:
        return int(self.values.shape[1])

    @property
    def shape(self) -> tuple[int, int]:
        return (self.height, self.width)


class LogImage(BaseModel):
    """Log-domain image normalized as (log x − m)/(M − m)."""

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    values: Float32Grid = Field(description="Normalized log values")
    norm_lo: float = Field(description="Lower normalization constant m")
    norm_hi: float = Field(description="Upper normalization constant M")

    @field_validator("values", mode="before")
    @classmethod
    def _check_values(cls, value: Any) -> Float32Grid:
        return _as_grid(value, "log image")

    @model_validator(mode="after")
    def _check_norm(self) -> Self:
        if not self.norm_hi > self.norm_lo:
            raise ValueError(f"norm_hi ({self.norm_hi}) must exceed norm_lo ({self.norm_lo})")
        return self

    @property
    def shape(self) -> tuple[int, int]:
        return (int(self.values.shape[0]), int(self.values.shape[1]))

    def denormalized_log(self) -> NDArray[np.float64]:
        """Return log x, undoing the affine normalization."""
        return self.values.astype(np.float64) * (self.norm_hi - self.norm_lo) + self.norm_lo


class SpectrumProfile(BaseModel):
    """Averaged Fourier magnitude of a patch along one axis."""

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    axis: Literal["azimuth", "range"]
    values: np.ndarray

    @field_validator("values", mode="before")
    @classmethod
    def _check_values(cls, value: Any) -> NDArray[np.float64]:
        profile = np.asarray(value, dtype=np.float64)
        if profile.ndim != 1 or profile.size < 2:
            raise ValueError("profile must be 1-D with at least 2 bins")
        if np.any(profile < 0):
            raise ValueError("profile values must be nonnegative")
        return profile


# ============================================================================
# Tensor containers
# ============================================================================


class TensorEntry(BaseModel):
    """A named dense float32 tensor."""

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    name: str = Field(min_length=1, max_length=65535)
    data: np.ndarray

    @field_validator("data", mode="before")
    @classmethod
    def _check_data(cls, value: Any) -> NDArray[np.float32]:
        data = np.ascontiguousarray(np.asarray(value, dtype=np.float32))
        if data.ndim == 0:
            data = data.reshape(1)
        if any(dim < 1 for dim in data.shape):
            raise ValueError(f"tensor dims must be positive, got {data.shape}")
        if data.ndim > 255:
            raise ValueError("tensor rank exceeds 255")
        return data

    @property
    def dims(self) -> tuple[int, ...]:
        return tuple(int(d) for d in self.data.shape)


class TensorContainer(BaseModel):
    """Ordered collection of uniquely named tensors."""

    model_config = ConfigDict(arbitrary_types_allowed=True)

    entries: list[TensorEntry] = Field(default_factory=list)

    @model_validator(mode="after")
    def _check_unique(self) -> Self:
        names = [entry.name for entry in self.entries]
        if len(names) != len(set(names)):
            raise ValueError("tensor names must be unique")
        return self

    @classmethod
    def from_dict(cls, tensors: dict[str, NDArray[Any]]) -> "TensorContainer":
        return cls(entries=[TensorEntry(name=name, data=data) for name, data in tensors.items()])

    def to_dict(self) -> dict[str, NDArray[np.float32]]:
        return {entry.name: entry.data for entry in self.entries}


# ============================================================================
# Randomness
# ============================================================================


class RngStream(BaseModel):
    """A reproducible random stream keyed by (seed, stream_id)."""

    model_config = ConfigDict(frozen=True)

    seed: NonNegativeInt = Field(description="64-bit base seed", examples=[7])
    stream_id: NonNegativeInt = Field(default=0, description="64-bit stream selector", examples=[0])

    def generator(self) -> np.random.Generator:
        """Counter-based Philox generator, identical on every platform for the same key."""
        sequence = np.random.SeedSequence(self.seed, spawn_key=(self.stream_id,))
        return np.random.Generator(np.random.Philox(sequence))

    def child(self, index: int) -> "RngStream":
        """Derive an independent stream, e.g. one per worker or per Monte-Carlo draw."""
        return RngStream(seed=self.seed, stream_id=(self.stream_id * 1_000_003 + index + 1) % 2**63)


# ============================================================================
# SAR transfer function
# ============================================================================

WindowName = Literal["rectangular", "hamming", "hann"]


class TransferFunctionSpec(BaseModel):
    """Parametric description of the SAR system H.

    The sampled frequency response h̄ is materialized on demand for a target
    image shape by `src.speckle_sim.transfer_response`.
    """

    model_config = ConfigDict(extra="forbid")

    kind: Literal["identity", "separable_apodized", "explicit_frequency_grid"] = Field(
        default="identity", examples=["separable_apodized"]
    )
    zero_pad_factor: float = Field(
        default=1.0,
        ge=1.0,
        description="Band occupancy is 1/zero_pad_factor of each axis",
        examples=[1.2],
    )
    window_az: WindowName = Field(default="rectangular", description="Apodization window along azimuth (rows)")
    window_rg: WindowName = Field(default="rectangular", description="Apodization window along range (columns)")
    freq_shift: tuple[float, float] = Field(
        default=(0.0, 0.0),
        description="Spectrum center in cycles/sample (azimuth, range)",
        examples=[(0.25, 0.0)],
    )
    grid_file: str | None = Field(
        default=None,
        description="TensorContainer holding 're' and 'im' entries of an explicit response",
    )

    _grid: NDArray[np.complex128] | None = PrivateAttr(default=None)

    @model_validator(mode="after")
    def _check_kind(self) -> Self:
        if self.kind == "identity":
            if (
                self.zero_pad_factor != 1.0
                or self.window_az != "rectangular"
                or self.window_rg != "rectangular"
                or tuple(self.freq_shift) != (0.0, 0.0)
            ):
                raise ValueError("identity kind requires zero_pad_factor=1, rectangular windows and zero freq_shift")
        return self

    @classmethod
    def identity(cls) -> "TransferFunctionSpec":
        return cls(kind="identity")

    @classmethod
    def from_grid(cls, grid: NDArray[Any]) -> "TransferFunctionSpec":
        """Wrap an explicit complex frequency response."""
        spec = cls(kind="explicit_frequency_grid")
        spec._grid = np.asarray(grid, dtype=np.complex128)
        return spec

    @classmethod
    def from_kernel(cls, kernel: NDArray[Any], shape: tuple[int, int]) -> "TransferFunctionSpec":
        """Build an explicit response from a small spatial kernel centered on its middle tap."""
        kernel = np.asarray(kernel, dtype=np.complex128)
        padded = np.zeros(shape, dtype=np.complex128)
        kh, kw = kernel.shape
        padded[:kh, :kw] = kernel
        padded = np.roll(padded, shift=(-(kh // 2), -(kw // 2)), axis=(0, 1))
        return cls.from_grid(np.fft.fft2(padded))

    @property
    def explicit_grid(self) -> NDArray[np.complex128] | None:
        return self._grid

    def attach_grid(self, grid: NDArray[Any]) -> None:
        self._grid = np.asarray(grid, dtype=np.complex128)


# ============================================================================
# Network & training configuration
# ============================================================================


class UNetConfig(BaseModel):
    """Residual U-Net topology."""

    model_config = ConfigDict(extra="forbid")

    levels: PositiveInt = Field(default=3, description="Encoder/decoder scales", examples=[3])
    base_channels: PositiveInt = Field(default=16, description="Feature channels at every level", examples=[16])
    leaky_slope: float = Field(default=0.1, ge=0.0, lt=1.0, description="Negative slope of leaky ReLU")
    residual: bool = Field(default=True, description="Output input − trunk(input) when true")

    @property
    def side_multiple(self) -> int:
        return int(2**self.levels)


LrStage = tuple[NonNegativeInt, Annotated[float, Gt(0)]]

# Epoch at which the learning rate drops to 1e-4 and gradient clipping norm, per imaging modality.
MODALITY_PRESETS: dict[str, tuple[int, float]] = {
    "synthetic": (6, 1.0),
    "tsx_stripmap": (4, 1.0),
    "tsx_spotlight": (4, 0.5),
    "sethi": (3, 1.0),
}


class TrainConfig(BaseModel):
    """Training hyperparameters."""

    model_config = ConfigDict(extra="forbid")

    patch_size: PositiveInt = Field(default=256, examples=[64])
    batch_size: PositiveInt = Field(default=12, examples=[12])
    epochs: NonNegativeInt = Field(default=30, examples=[30])
    lr_schedule: list[LrStage] = Field(
        default_factory=lambda: [(0, 1e-3), (6, 1e-4), (20, 1e-5)],
        min_length=1,
        description="(start_epoch, learning rate) stages",
    )
    grad_norm_clip: float = Field(default=1.0, gt=0.0, description="Global gradient norm ceiling")
    stride: PositiveInt | None = Field(default=None, description="Patch stride; defaults to patch_size // 2")
    seed: NonNegativeInt = Field(default=0)
    recenter: bool = Field(default=False, description="Recenter and symmetrically mask each patch spectrum")

    @field_validator("lr_schedule")
    @classmethod
    def _check_schedule(cls, stages: list[LrStage]) -> list[LrStage]:
        epochs = [start for start, _ in stages]
        if epochs[0] != 0:
            raise ValueError("lr_schedule must start at epoch 0")
        if any(later <= earlier for earlier, later in zip(epochs, epochs[1:])):
            raise ValueError("lr_schedule epochs must be strictly increasing")
        return stages

    @property
    def effective_stride(self) -> int:
        return self.stride if self.stride is not None else max(1, self.patch_size // 2)

    def lr_at(self, epoch: int) -> float:
        """Learning rate in effect during `epoch`."""
        lr = self.lr_schedule[0][1]
        for start, stage_lr in self.lr_schedule:
            if epoch >= start:
                lr = stage_lr
        return float(lr)

    @classmethod
    def preset(cls, name: str, **overrides: Any) -> "TrainConfig":
        """Published hyperparameters for one imaging modality."""
        if name not in MODALITY_PRESETS:
            raise ValueError(f"unknown preset '{name}', expected one of {sorted(MODALITY_PRESETS)}")
        k1, clip = MODALITY_PRESETS[name]
        values: dict[str, Any] = {
            "patch_size": 256,
            "batch_size": 12,
            "epochs": 30,
            "lr_schedule": [(0, 1e-3), (k1, 1e-4), (20, 1e-5)],
            "grad_norm_clip": clip,
        }
        values.update(overrides)
        return cls(**values)

    @classmethod
    def desk(cls, **overrides: Any) -> "TrainConfig":
        """Desk-scale defaults: 64-px patches at half-patch stride."""
        values: dict[str, Any] = {"patch_size": 64, "stride": 32}
        values.update(overrides)
        return cls(**values)


class RunConfig(BaseModel):
    """A versioned training run configuration file."""

    model_config = ConfigDict(extra="forbid")

    schema_version: Literal[1] = 1
    unet: UNetConfig = Field(default_factory=UNetConfig)
    train: TrainConfig = Field(default_factory=TrainConfig.desk)
    normalization: tuple[float, float] | None = Field(
        default=None, description="Frozen (m, M); computed from the corpus when absent"
    )

    @model_validator(mode="after")
    def _check_patch(self) -> Self:
        if self.train.patch_size % self.unet.side_multiple:
            raise ValueError(
                f"patch_size {self.train.patch_size} is not divisible by 2^levels = {self.unet.side_multiple}"
            )
        if self.normalization is not None and not self.normalization[1] > self.normalization[0]:
            raise ValueError("normalization must satisfy M > m")
        return self


# ============================================================================
# Reports
# ============================================================================


class PrepReport(BaseModel):
    """Outcome of spectrum recentering and symmetric masking for one patch."""

    delta_az: int = Field(description="Estimated azimuth spectrum shift in bins", examples=[7])
    delta_rg: int = Field(description="Estimated range spectrum shift in bins", examples=[-3])
    mask_fraction: float = Field(ge=0.0, le=1.0, description="Fraction of frequencies kept by the mask")


class GradientCheckReport(BaseModel):
    """Finite-difference gradient check."""

    tolerance: float
    max_relative_error: dict[str, float] = Field(default_factory=dict)
    passed: bool


class IndependenceReport(BaseModel):
    """Verdict on whether real and imaginary parts come out independent."""

    verdict: Literal["independent", "dependent"]
    statistic: float = Field(description="Largest violation found by the test")
    method: Literal["analytic", "spatial", "empirical"]


class SceneEvalRow(BaseModel):
    """PSNR over repeated noisy instances of one scene; σ is the population standard deviation."""

    scene: str
    instances: PositiveInt
    noisy_psnr_db: float
    noisy_psnr_sigma: float
    psnr_db: float
    psnr_sigma: float
    residual_enl: float


class EvalReport(BaseModel):
    """Evaluation report emitted by the `eval` subcommand."""

    psnr_db: float
    psnr_sigma: float
    noisy_psnr_db: float
    noisy_psnr_sigma: float
    sigma_kind: Literal["population"] = "population"
    enl_regions: list[float] = Field(default_factory=list)
    residual_stats: dict[str, float] = Field(default_factory=dict)
    independence: dict[str, str] | None = None
    scenes: list[SceneEvalRow] = Field(default_factory=list)
