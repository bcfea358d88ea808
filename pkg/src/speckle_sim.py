"""Fully developed speckle simulation under a linear SAR transfer function.

The transfer function H acts by pointwise multiplication in the 2-D DFT
domain (periodic boundaries). Its sampled response h̄ is normalized to unit
mean power so that a constant reflectivity keeps its level through H.
"""

from typing import Any

import numpy as np
from numpy.typing import NDArray

from src.exceptions import ShapeMismatchError, TransferFunctionError
from src.logging import get_logger
from src.models import ComplexImage, ReflectivityImage, RngStream, TransferFunctionSpec, WindowName

log = get_logger("src.speckle_sim")

MAX_SPATIAL_PIXELS = 256
SUPPORT_EPS = 1e-12


# ============================================================================
# Transfer function materialization
# ============================================================================


def _window(name: WindowName, u: NDArray[np.float64]) -> NDArray[np.float64]:
    """Apodization window on normalized in-band frequency u ∈ [−½, ½]."""
    if name == "hamming":
        return 0.54 + 0.46 * np.cos(2 * np.pi * u)
    if name == "hann":
        return 0.5 + 0.5 * np.cos(2 * np.pi * u)
    return np.ones_like(u)


def axis_response(length: int, pad: float, window: WindowName, shift: float) -> NDArray[np.float64]:
    """1-D band response of `length` DFT bins, centered on `shift` cycles/sample."""
    freqs = np.fft.fftfreq(length)
    offset = np.mod(freqs - shift + 0.5, 1.0) - 0.5
    half_band = 0.5 / pad
    inside = np.abs(offset) <= half_band + SUPPORT_EPS
    return np.where(inside, _window(window, offset * pad), 0.0)


def transfer_response(spec: TransferFunctionSpec, shape: tuple[int, int]) -> NDArray[np.complex128]:
    """Materialize h̄ on the DFT grid of an image with the given (height, width)."""
    if spec.kind == "identity":
        return np.ones(shape, dtype=np.complex128)

    if spec.kind == "explicit_frequency_grid":
        grid = spec.explicit_grid
        if grid is None:
            raise TransferFunctionError("explicit_frequency_grid has no grid attached")
        if grid.shape != tuple(shape):
            raise ShapeMismatchError("transfer_response", expected=tuple(shape), found=grid.shape)
        return grid.copy()

    height, width = shape
    h_az = axis_response(height, spec.zero_pad_factor, spec.window_az, spec.freq_shift[0])
    h_rg = axis_response(width, spec.zero_pad_factor, spec.window_rg, spec.freq_shift[1])
    response = np.outer(h_az, h_rg).astype(np.complex128)
    power = float(np.mean(np.abs(response) ** 2))
    if power <= 0:
        raise TransferFunctionError(f"band is empty on a {height}x{width} grid")
    return response / np.sqrt(power)


def spatial_parts(
    spec: TransferFunctionSpec, shape: tuple[int, int]
) -> tuple[NDArray[np.float64], NDArray[np.float64]]:
    """Real and imaginary parts (M, N) of H as dense K×K matrices over row-major pixels."""
    height, width = shape
    pixels = height * width
    if pixels > MAX_SPATIAL_PIXELS:
        raise TransferFunctionError(f"spatial parts need K ≤ {MAX_SPATIAL_PIXELS} pixels, got {pixels}")
    response = transfer_response(spec, shape)
    operator = np.empty((pixels, pixels), dtype=np.complex128)
    for column in range(pixels):
        impulse = np.zeros(pixels, dtype=np.complex128)
        impulse[column] = 1.0
        operator[:, column] = np.fft.ifft2(response * np.fft.fft2(impulse.reshape(shape))).ravel()
    return operator.real.copy(), operator.imag.copy()


def is_even_response(response: NDArray[np.complex128], tol: float = 1e-6) -> tuple[bool, float]:
    """Evenness test on a sampled response.

    Independent parts require |h̄(ν)| = |h̄(−ν)| everywhere and a constant
    arg(h̄(ν)·h̄(−ν)) over the support. Returns the verdict and the largest
    violation, relative to max |h̄|.
    """
    mirrored = np.roll(np.flip(response, axis=(0, 1)), shift=(1, 1), axis=(0, 1))
    peak = float(np.max(np.abs(response)))
    if peak == 0:
        return False, float("inf")
    magnitude_gap = float(np.max(np.abs(np.abs(response) - np.abs(mirrored)))) / peak

    product = response * mirrored
    support = np.abs(product) > (tol * peak) ** 2
    phase_gap = 0.0
    if np.any(support):
        phasors = product[support] / np.abs(product[support])
        reference = phasors[0]
        # Distance on the unit circle, so a constant phase near ±π does not wrap.
        phase_gap = float(np.max(np.abs(np.angle(phasors / reference))))
    statistic = max(magnitude_gap, phase_gap)
    return statistic <= tol, statistic


# ============================================================================
# Speckle & SLC simulation
# ============================================================================


def _box_muller(generator: np.random.Generator, shape: tuple[int, int]) -> tuple[NDArray[Any], NDArray[Any]]:
    u1 = 1.0 - generator.random(shape)
    u2 = generator.random(shape)
    radius = np.sqrt(-np.log(u1))
    angle = 2 * np.pi * u2
    return radius * np.cos(angle), radius * np.sin(angle)


def speckle_field(shape: tuple[int, int], rng: RngStream) -> NDArray[np.complex128]:
    """Unit-power circular complex Gaussian field, p(s) = π⁻¹ exp(−|s|²)."""
    re, im = _box_muller(rng.generator(), shape)
    return re + 1j * im


def sample_speckle_field(w: int, h: int, rng: RngStream) -> ComplexImage:
    if w < 1 or h < 1:
        raise ValueError(f"speckle field dims must be positive, got {w}x{h}")
    return ComplexImage.from_complex(speckle_field((h, w), rng))


def apply_response(z: NDArray[Any], response: NDArray[np.complex128]) -> NDArray[np.complex128]:
    if z.shape != response.shape:
        raise ShapeMismatchError("apply_transfer_function", expected=response.shape, found=z.shape)
    return np.fft.ifft2(np.fft.fft2(z) * response)


def apply_transfer_function(z: ComplexImage, spec: TransferFunctionSpec) -> ComplexImage:
    """z̃ = H z, computed by DFT-domain multiplication."""
    if spec.kind == "identity":
        return ComplexImage(re=z.re.copy(), im=z.im.copy())
    response = transfer_response(spec, z.shape)
    return ComplexImage.from_complex(apply_response(z.to_complex(), response))


def simulate_complex(
    reflectivity: NDArray[Any], spec: TransferFunctionSpec, rng: RngStream
) -> NDArray[np.complex128]:
    """z̃ = H(s ⊙ √r) in float64."""
    shape = (int(reflectivity.shape[0]), int(reflectivity.shape[1]))
    field = speckle_field(shape, rng) * np.sqrt(np.asarray(reflectivity, dtype=np.float64))
    if spec.kind == "identity":
        return field
    return apply_response(field, transfer_response(spec, shape))


def simulate_slc(r: ReflectivityImage, spec: TransferFunctionSpec, rng: RngStream) -> ComplexImage:
    if r.convolved_flag:
        raise TransferFunctionError("simulate_slc expects the scene reflectivity r, not the convolved r̃")
    slc = ComplexImage.from_complex(simulate_complex(r.values, spec, rng))
    log.debug("speckle_sim.simulated", height=r.height, width=r.width, kind=spec.kind, stream_id=rng.stream_id)
    return slc


def intensity_of(z: ComplexImage) -> NDArray[np.float64]:
    """Iₖ = ãₖ² + b̃ₖ²."""
    re = z.re.astype(np.float64)
    im = z.im.astype(np.float64)
    return re * re + im * im


def effective_reflectivity(r: ReflectivityImage, spec: TransferFunctionSpec) -> ReflectivityImage:
    """r̃ₖ = Σℓ |Hₖℓ|² rℓ, the per-pixel variance of z̃ (twice that of each part)."""
    if spec.kind == "identity":
        return ReflectivityImage(values=r.values.copy(), convolved_flag=True)
    response = transfer_response(spec, r.shape)
    even, statistic = is_even_response(response)
    if not even:
        raise TransferFunctionError(f"response fails the evenness test (violation {statistic:.3g})")
    power_kernel = np.abs(np.fft.ifft2(response)) ** 2
    convolved = np.real(np.fft.ifft2(np.fft.fft2(r.values.astype(np.float64)) * np.fft.fft2(power_kernel)))
    # Circular convolution of positive values with a nonnegative kernel; clip FFT round-off only.
    floor = float(np.min(r.values)) * float(np.sum(power_kernel)) * 1e-6
    return ReflectivityImage(values=np.maximum(convolved, floor), convolved_flag=True)


def pseudo_slc_from_intensity(intensity: NDArray[Any], rng: RngStream) -> ComplexImage:
    """Complex image √I·exp(jφ) with φ ~ Uniform[−π, π)."""
    grid = np.asarray(intensity, dtype=np.float64)
    if np.any(grid < 0):
        raise ValueError("intensity must be nonnegative")
    phase = rng.generator().random(grid.shape) * 2 * np.pi - np.pi
    amplitude = np.sqrt(grid)
    return ComplexImage(re=amplitude * np.cos(phase), im=amplitude * np.sin(phase))
