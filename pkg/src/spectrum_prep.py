"""Per-patch spectrum recentering, symmetric spectral masking and log-domain normalization.

Axis 0 (rows) is azimuth, axis 1 (columns) is range.
"""

from collections.abc import Iterable
from typing import Any

import numpy as np
from numpy.typing import NDArray

from src.exceptions import SpectrumError
from src.logging import get_logger
from src.models import X_FLOOR, ComplexImage, LogImage, PrepReport, SpectrumProfile

log = get_logger("src.spectrum_prep")

BAND_THRESHOLD = 0.05
TIE_TOLERANCE = 1e-9
NORM_PERCENTILES = (1.0, 99.9)


def _check_square_even(patch: ComplexImage) -> int:
    height, width = patch.shape
    if height != width:
        raise SpectrumError(f"patch must be square, got {height}x{width}")
    if height % 2:
        raise SpectrumError(f"patch side must be even, got {height}")
    return height


# ============================================================================
# Shift estimation & recentering
# ============================================================================


def compute_profiles(patch: ComplexImage) -> tuple[SpectrumProfile, SpectrumProfile]:
    """Average |DFT| of the patch along range (azimuth profile) and along azimuth (range profile)."""
    _check_square_even(patch)
    magnitude = np.abs(np.fft.fft2(patch.to_complex()))
    azimuth = SpectrumProfile(axis="azimuth", values=magnitude.mean(axis=1))
    range_ = SpectrumProfile(axis="range", values=magnitude.mean(axis=0))
    return azimuth, range_


def estimate_spectrum_shift(profile: SpectrumProfile) -> int:
    """Integer bin offset δ̂ that best re-symmetrizes the profile.

    The correlation of p with its circular reversal peaks at lag 2δ; δ and δ ± N/2 share that lag,
    so ties are first settled by the profile mass within a quarter band of the candidate. That step
    runs before the smallest-|δ| rule, which is followed by preferring the negative δ.
    """
    p = profile.values
    length = p.size
    # [p ⋆ S{p}](n) = Σₘ p[m] p[(n − m) mod N], the circular self-convolution.
    correlation = np.real(np.fft.ifft(np.fft.fft(p) ** 2))

    candidates = np.arange(-(length // 2), length - length // 2)
    scores = correlation[np.mod(2 * candidates, length)]
    best = float(scores.max())
    scale = max(abs(best), float(np.finfo(np.float64).tiny))
    tied = candidates[scores >= best - TIE_TOLERANCE * scale]
    if tied.size == 1:
        return int(tied[0])

    bins = np.arange(length)
    masses = []
    for delta in tied:
        distance = np.abs(np.mod(bins - delta + length // 2, length) - length // 2)
        masses.append(float(p[distance < length / 4].sum()))
    masses_arr = np.asarray(masses)
    top = masses_arr.max()
    near = tied[masses_arr >= top - TIE_TOLERANCE * max(abs(top), 1.0)]
    return int(min(near, key=lambda delta: (abs(int(delta)), int(delta))))


def demodulate(patch: ComplexImage, delta_az: int, delta_rg: int) -> ComplexImage:
    side = patch.height
    rows = np.arange(side)[:, None]
    cols = np.arange(side)[None, :]
    carrier = np.exp(-2j * np.pi * (delta_az * rows + delta_rg * cols) / side)
    return ComplexImage.from_complex(patch.to_complex() * carrier)


def estimate_shifts(patch: ComplexImage) -> tuple[int, int]:
    azimuth, range_ = compute_profiles(patch)
    return estimate_spectrum_shift(azimuth), estimate_spectrum_shift(range_)


def recenter_patch(patch: ComplexImage) -> ComplexImage:
    """Remove the estimated spectral offset on both axes."""
    delta_az, delta_rg = estimate_shifts(patch)
    return demodulate(patch, delta_az, delta_rg)


# ============================================================================
# Symmetric masking
# ============================================================================


def _band_support(profile: NDArray[np.float64]) -> NDArray[np.bool_]:
    peak = float(profile.max())
    if peak <= 0:
        return np.zeros(profile.shape, dtype=bool)
    inside = profile > BAND_THRESHOLD * peak
    mirrored = inside[np.mod(-np.arange(profile.size), profile.size)]
    return inside & mirrored


def symmetric_mask_support(patch: ComplexImage) -> NDArray[np.bool_]:
    """Separable frequency mask kept where ν and −ν both lie in the detected band, per axis."""
    azimuth, range_ = compute_profiles(patch)
    return np.outer(_band_support(azimuth.values), _band_support(range_.values))


def apply_symmetric_mask(patch: ComplexImage) -> tuple[ComplexImage, float]:
    """Cut frequencies outside the symmetric mask; also returns the kept fraction."""
    support = symmetric_mask_support(patch)
    if not support.any():
        raise SpectrumError("symmetric mask is empty")
    spectrum = np.fft.fft2(patch.to_complex())
    masked = np.fft.ifft2(np.where(support, spectrum, 0.0))
    return ComplexImage.from_complex(masked), float(support.mean())


def symmetric_mask(patch: ComplexImage) -> ComplexImage:
    masked, _ = apply_symmetric_mask(patch)
    return masked


def prepare_patch(patch: ComplexImage) -> tuple[ComplexImage, PrepReport]:
    """Recenter then mask one patch, reporting the shifts and the kept fraction."""
    delta_az, delta_rg = estimate_shifts(patch)
    recentered = demodulate(patch, delta_az, delta_rg)
    masked, fraction = apply_symmetric_mask(recentered)
    report = PrepReport(delta_az=delta_az, delta_rg=delta_rg, mask_fraction=fraction)
    log.debug("spectrum_prep.patch_prepared", **report.model_dump())
    return masked, report


def prepare_image(img: ComplexImage, patch_size: int) -> tuple[ComplexImage, list[PrepReport]]:
    """Apply `prepare_patch` to every non-overlapping patch; a ragged border is left untouched."""
    if patch_size % 2:
        raise SpectrumError(f"patch side must be even, got {patch_size}")
    if img.height < patch_size or img.width < patch_size:
        raise SpectrumError(f"image {img.height}x{img.width} is smaller than patch {patch_size}")
    out = img.to_complex()
    reports = []
    for top in range(0, img.height - patch_size + 1, patch_size):
        for left in range(0, img.width - patch_size + 1, patch_size):
            window = out[top : top + patch_size, left : left + patch_size]
            prepared, report = prepare_patch(ComplexImage.from_complex(window))
            out[top : top + patch_size, left : left + patch_size] = prepared.to_complex()
            reports.append(report)
    return ComplexImage.from_complex(out), reports


# ============================================================================
# Log-domain normalization & decimation
# ============================================================================


def log_normalize(x: NDArray[Any], norm: tuple[float, float]) -> LogImage:
    """č = (log max(x, x_floor) − m)/(M − m)."""
    lo, hi = float(norm[0]), float(norm[1])
    if not hi > lo:
        raise ValueError(f"normalization requires M > m, got ({lo}, {hi})")
    logs = np.log(np.maximum(np.asarray(x, dtype=np.float64), X_FLOOR))
    return LogImage(values=(logs - lo) / (hi - lo), norm_lo=lo, norm_hi=hi)


def log_denormalize(image: LogImage) -> NDArray[np.float64]:
    return np.exp(image.denormalized_log())


def compute_normalization(images: Iterable[ComplexImage]) -> tuple[float, float]:
    """(m, M): 1st and 99.9th percentiles of log(part²) over both parts of a corpus."""
    logs = []
    for img in images:
        for part in (img.re, img.im):
            squared = part.astype(np.float64) ** 2
            logs.append(np.log(np.maximum(squared, X_FLOOR)).ravel())
    if not logs:
        raise SpectrumError("cannot compute normalization of an empty corpus")
    pooled = np.concatenate(logs)
    lo, hi = (float(v) for v in np.percentile(pooled, NORM_PERCENTILES))
    if not hi > lo:
        hi = lo + 1.0
    log.info("spectrum_prep.normalization_computed", norm_lo=lo, norm_hi=hi, samples=pooled.size)
    return lo, hi


def decimate2(img: ComplexImage) -> ComplexImage:
    """Keep samples at even row and column indices."""
    if img.height < 2 or img.width < 2:
        raise ValueError(f"decimate2 needs at least 2x2, got {img.height}x{img.width}")
    rows = (img.height // 2) * 2
    cols = (img.width // 2) * 2
    return ComplexImage(re=img.re[:rows:2, :cols:2], im=img.im[:rows:2, :cols:2])
