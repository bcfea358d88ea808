"""Despeckling metrics, real/imaginary independence diagnostics and the full-covariance likelihood oracle."""

from collections.abc import Mapping, Sequence
from typing import Any

import numpy as np
from numpy.typing import NDArray
from scipy import linalg

from src.checkpoint import Checkpoint
from src.despeckle import DEFAULT_MARGIN, DEFAULT_TILE, despeckle_image, despeckle_intensity
from src.exceptions import ShapeMismatchError, SingularCovarianceError, TransferFunctionError
from src.logging import get_logger
from src.models import (
    ComplexImage,
    EvalReport,
    IndependenceReport,
    ReflectivityImage,
    RngStream,
    SceneEvalRow,
    TransferFunctionSpec,
)
from src.speckle_sim import (
    MAX_SPATIAL_PIXELS,
    effective_reflectivity,
    intensity_of,
    is_even_response,
    simulate_complex,
    simulate_slc,
    spatial_parts,
    transfer_response,
)

log = get_logger("src.evaluation")

PSNR_CAP_DB = 99.0
ENL_CAP = 1e6
MIN_ENL_PIXELS = 100
ANALYTIC_TOL = 1e-6
SPATIAL_TOL = 1e-6
EMPIRICAL_THRESHOLD = 0.05
EMPIRICAL_SHAPE = (64, 64)
NEIGHBOR_OFFSETS = ((0, 0), (0, 1), (0, -1), (1, 0), (-1, 0))

Grid = NDArray[Any]


def _values(image: ReflectivityImage | Grid) -> NDArray[np.float64]:
    if isinstance(image, ReflectivityImage):
        return image.values.astype(np.float64)
    return np.asarray(image, dtype=np.float64)


# ============================================================================
# Quality metrics
# ============================================================================


def psnr_amplitude(ref: ReflectivityImage | Grid, est: ReflectivityImage | Grid, peak: float | None = None) -> float:
    """10·log10(peak² / MSE) on amplitudes √r; peak defaults to the largest reference amplitude."""
    ref_amp = np.sqrt(_values(ref))
    est_amp = np.sqrt(np.maximum(_values(est), 0.0))
    if ref_amp.shape != est_amp.shape:
        raise ShapeMismatchError("psnr_amplitude", expected=ref_amp.shape, found=est_amp.shape)
    peak = float(ref_amp.max()) if peak is None else float(peak)
    if peak <= 0:
        raise ValueError(f"peak must be positive, got {peak}")
    mse = float(np.mean((ref_amp - est_amp) ** 2))
    if mse == 0:
        return PSNR_CAP_DB
    return min(PSNR_CAP_DB, 10.0 * np.log10(peak * peak / mse))


def residual_ratio(noisy_intensity: Grid, est: ReflectivityImage | Grid) -> NDArray[np.float64]:
    """Noisy intensity over the despeckled estimate, pixel by pixel."""
    noisy = np.asarray(noisy_intensity, dtype=np.float64)
    estimate = _values(est)
    if noisy.shape != estimate.shape:
        raise ShapeMismatchError("residual_ratio", expected=noisy.shape, found=estimate.shape)
    return noisy / estimate


def enl(region: Grid) -> float:
    """Equivalent number of looks mean²/variance, capped at 1e6."""
    values = np.asarray(region, dtype=np.float64).ravel()
    if values.size < MIN_ENL_PIXELS:
        raise ValueError(f"ENL needs at least {MIN_ENL_PIXELS} pixels, got {values.size}")
    variance = float(values.var())
    if variance == 0:
        return ENL_CAP
    return min(ENL_CAP, float(values.mean()) ** 2 / variance)


# ============================================================================
# Independence diagnostics
# ============================================================================


def check_transfer_independence(
    spec: TransferFunctionSpec, tol: float = ANALYTIC_TOL, shape: tuple[int, int] = EMPIRICAL_SHAPE
) -> IndependenceReport:
    """Even-gain and constant-phase-sum test on the sampled response."""
    even, statistic = is_even_response(transfer_response(spec, shape), tol)
    return IndependenceReport(
        verdict="independent" if even else "dependent", statistic=statistic, method="analytic"
    )


def spatial_residual(m: Grid, n: Grid, r: Grid) -> NDArray[np.float64]:
    """M·diag(r)·Nᵀ − N·diag(r)·Mᵀ."""
    return (m * r) @ n.T - (n * r) @ m.T


def check_spatial_condition(
    m: Grid, n: Grid, trials: int = 8, tol: float = SPATIAL_TOL, seed: int = 0
) -> IndependenceReport:
    """Independence iff the residual vanishes for random positive r and for every elementary vector."""
    m = np.asarray(m, dtype=np.float64)
    n = np.asarray(n, dtype=np.float64)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise ShapeMismatchError("check_spatial_condition", expected="square matrix", found=m.shape)
    if n.shape != m.shape:
        raise ShapeMismatchError("check_spatial_condition", expected=m.shape, found=n.shape)
    pixels = m.shape[0]
    if pixels > MAX_SPATIAL_PIXELS:
        raise TransferFunctionError(f"spatial check needs K ≤ {MAX_SPATIAL_PIXELS}, got {pixels}")

    generator = RngStream(seed=seed).generator()
    worst = 0.0
    for _ in range(trials):
        r = generator.uniform(0.1, 1.0, size=pixels)
        worst = max(worst, float(np.max(np.abs(spatial_residual(m, n, r)))))
    # r = eᵢ leaves mᵢnᵢᵀ − nᵢmᵢᵀ for column i.
    for i in range(pixels):
        column_m, column_n = m[:, i], n[:, i]
        residual = np.outer(column_m, column_n) - np.outer(column_n, column_m)
        worst = max(worst, float(np.max(np.abs(residual))))
    return IndependenceReport(
        verdict="independent" if worst < tol else "dependent", statistic=worst, method="spatial"
    )


def check_spec_spatially(
    spec: TransferFunctionSpec, shape: tuple[int, int], trials: int = 8, tol: float = SPATIAL_TOL
) -> IndependenceReport:
    m, n = spatial_parts(spec, shape)
    return check_spatial_condition(m, n, trials=trials, tol=tol)


def _pooled_correlation(re: NDArray[np.float64], im: NDArray[np.float64], offset: tuple[int, int]) -> float:
    shifted = np.roll(im, shift=offset, axis=(1, 2)).ravel()
    a = re.ravel()
    a = a - a.mean()
    b = shifted - shifted.mean()
    return float(np.dot(a, b) / np.sqrt(np.dot(a, a) * np.dot(b, b)))


def empirical_independence(
    spec: TransferFunctionSpec,
    draws: int = 100_000,
    seed: int = 0,
    threshold: float = EMPIRICAL_THRESHOLD,
    shape: tuple[int, int] = EMPIRICAL_SHAPE,
) -> IndependenceReport:
    """Largest |corr(ã, b̃)| over the same pixel and its four neighbors, pooled over simulated speckle."""
    if draws < 10_000:
        raise ValueError(f"empirical independence needs at least 10^4 draws, got {draws}")
    pixels = shape[0] * shape[1]
    count = -(-draws // pixels)
    unit = np.ones(shape)
    fields = np.stack([simulate_complex(unit, spec, RngStream(seed=seed, stream_id=i)) for i in range(count)])
    statistic = max(abs(_pooled_correlation(fields.real, fields.imag, offset)) for offset in NEIGHBOR_OFFSETS)
    verdict = "independent" if statistic < threshold else "dependent"
    log.debug("evaluation.empirical_independence", draws=count * pixels, statistic=statistic, verdict=verdict)
    return IndependenceReport(verdict=verdict, statistic=statistic, method="empirical")


# ============================================================================
# Full-covariance likelihood
# ============================================================================


def full_likelihood(r: ReflectivityImage, part: Grid, spec: TransferFunctionSpec) -> float:
    """Σ ½ log rₖ + b̃ᵀ C⁻¹ b̃ with C = M·diag(r)·Mᵀ + N·diag(r)·Nᵀ (N = 0 for a real H)."""
    shape = r.shape
    b = np.asarray(part, dtype=np.float64)
    if b.shape != shape:
        raise ShapeMismatchError("full_likelihood", expected=shape, found=b.shape)
    m, n = spatial_parts(spec, shape)
    weights = r.values.astype(np.float64).ravel()
    covariance = (m * weights) @ m.T + (n * weights) @ n.T
    try:
        factor = linalg.cho_factor(covariance, lower=True)
    except linalg.LinAlgError as e:
        raise SingularCovarianceError(float(np.linalg.cond(covariance))) from e
    vector = b.ravel()
    quadratic = float(vector @ linalg.cho_solve(factor, vector))
    return float(0.5 * np.sum(np.log(weights)) + quadratic)


# ============================================================================
# Harness
# ============================================================================


def evaluate_images(
    ref: ReflectivityImage,
    noisy: ComplexImage,
    est: ReflectivityImage,
    *,
    peak: float | None = None,
    regions: Sequence[tuple[int, int, int, int]] = (),
    spec: TransferFunctionSpec | None = None,
    draws: int = 100_000,
    seed: int = 0,
) -> EvalReport:
    """Single-instance report. `regions` are (top, left, height, width) boxes for ENL of the residual ratio."""
    intensity = intensity_of(noisy)
    ratio = residual_ratio(intensity, est)
    boxes = list(regions) or [(0, 0, ratio.shape[0], ratio.shape[1])]
    independence = None
    if spec is not None:
        independence = {
            "analytic": check_transfer_independence(spec).verdict,
            "empirical": empirical_independence(spec, draws=draws, seed=seed).verdict,
        }
    return EvalReport(
        psnr_db=psnr_amplitude(ref, est, peak),
        psnr_sigma=0.0,
        noisy_psnr_db=psnr_amplitude(ref, intensity, peak),
        noisy_psnr_sigma=0.0,
        enl_regions=[enl(ratio[top : top + h, left : left + w]) for top, left, h, w in boxes],
        residual_stats={"mean": float(ratio.mean()), "std": float(ratio.std()), "enl": enl(ratio)},
        independence=independence,
    )


def evaluate_checkpoint(
    ckpt: Checkpoint,
    scenes: Mapping[str, ReflectivityImage],
    instances: int = 20,
    seed: int = 0,
    *,
    spec: TransferFunctionSpec | None = None,
    intensity_only: bool = False,
    tile: int = DEFAULT_TILE,
    margin: int = DEFAULT_MARGIN,
    threads: int = 1,
) -> EvalReport:
    """PSNR table over `instances` fresh noisy realizations of each scene.

    Each row reports mean ± population σ for the noisy input and for the
    despeckled output, and the ENL of the pooled residual ratio. With
    `intensity_only` the network sees pseudo-SLCs built from the intensity.
    """
    spec = spec or TransferFunctionSpec.identity()
    rows: list[SceneEvalRow] = []
    for scene_index, (name, scene) in enumerate(scenes.items()):
        reference = scene if spec.kind == "identity" else effective_reflectivity(scene, spec)
        peak = float(np.sqrt(reference.values.max()))
        noisy_scores, scores, ratios = [], [], []
        for instance in range(instances):
            stream = RngStream(seed=seed, stream_id=scene_index * 10_000 + instance)
            slc = simulate_slc(scene, spec, stream)
            intensity = intensity_of(slc)
            if intensity_only:
                estimate = despeckle_intensity(
                    ckpt, intensity, stream.child(0), tile=tile, margin=margin, threads=threads
                )
            else:
                estimate = despeckle_image(ckpt, slc, tile, margin, threads=threads)
            noisy_scores.append(psnr_amplitude(reference, intensity, peak))
            scores.append(psnr_amplitude(reference, estimate, peak))
            ratios.append(residual_ratio(intensity, estimate))
        row = SceneEvalRow(
            scene=name,
            instances=instances,
            noisy_psnr_db=float(np.mean(noisy_scores)),
            noisy_psnr_sigma=float(np.std(noisy_scores)),
            psnr_db=float(np.mean(scores)),
            psnr_sigma=float(np.std(scores)),
            residual_enl=enl(np.concatenate([ratio.ravel() for ratio in ratios])),
        )
        log.info("evaluation.scene.completed", **row.model_dump())
        rows.append(row)

    pooled = np.array([[row.psnr_db, row.psnr_sigma, row.noisy_psnr_db, row.noisy_psnr_sigma] for row in rows])
    means = pooled.mean(axis=0) if rows else np.zeros(4)
    return EvalReport(
        psnr_db=float(means[0]),
        psnr_sigma=float(means[1]),
        noisy_psnr_db=float(means[2]),
        noisy_psnr_sigma=float(means[3]),
        enl_regions=[row.residual_enl for row in rows],
        residual_stats={"mean_enl": float(np.mean([row.residual_enl for row in rows])) if rows else 0.0},
        scenes=rows,
    )
