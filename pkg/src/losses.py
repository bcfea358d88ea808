"""Log-domain likelihood losses, as plain numpy functions and as graph heads.

With ř = log r̃ and b̌ = log|b̃|, the self-supervised loss

    Σₖ ½ řₖ + exp(2 b̌ₖ − řₖ)

is the negative log-likelihood Σₖ ½ log r̃ₖ + b̃ₖ²/r̃ₖ of one part of the
complex image. The supervised baseline uses an intensity target ǐ′:

    Σₖ řₖ + exp(ǐ′ₖ − řₖ)

Graph heads reduce by a per-sample pixel sum followed by the batch mean.
"""

from typing import Any, Literal

import numpy as np
from numpy.typing import NDArray

from src.autodiff import Graph
from src.exceptions import ShapeMismatchError
from src.models import X_FLOOR, LogImage

EXP_CLIP = 30.0
TARGET = "target"
LOSS = "loss"

LossKind = Literal["merlin", "supervised"]

LogLike = LogImage | NDArray[Any]


def _log_values(value: LogLike) -> NDArray[np.float64]:
    if isinstance(value, LogImage):
        return value.denormalized_log()
    return np.asarray(value, dtype=np.float64)


def _pair(prediction: LogLike, target: LogLike, operation: str) -> tuple[NDArray[np.float64], NDArray[np.float64]]:
    r_log, t_log = _log_values(prediction), _log_values(target)
    if r_log.shape != t_log.shape:
        raise ShapeMismatchError(operation, expected=r_log.shape, found=t_log.shape)
    if not (np.all(np.isfinite(r_log)) and np.all(np.isfinite(t_log))):
        raise ValueError(f"{operation}: inputs must be finite")
    return r_log, t_log


# ============================================================================
# Numpy forms
# ============================================================================


def merlin_loss(r_log: LogLike, b_log: LogLike) -> float:
    """Σ ½ř + exp(min(2b̌ − ř, 30)) on denormalized logs."""
    r, b = _pair(r_log, b_log, "merlin_loss")
    return float(np.sum(0.5 * r + np.exp(np.minimum(2.0 * b - r, EXP_CLIP))))


def merlin_loss_gradient(r_log: LogLike, b_log: LogLike) -> NDArray[np.float64]:
    """∂/∂řₖ = ½ − exp(2b̌ₖ − řₖ), zero exponential term where the clamp is active."""
    r, b = _pair(r_log, b_log, "merlin_loss_gradient")
    argument = 2.0 * b - r
    return 0.5 - np.where(argument <= EXP_CLIP, np.exp(np.minimum(argument, EXP_CLIP)), 0.0)


def part_nll(r_tilde: NDArray[Any], part: NDArray[Any]) -> float:
    """Σ ½ log r̃ + b̃²/r̃, the linear-domain form of `merlin_loss`."""
    r = np.asarray(r_tilde, dtype=np.float64)
    b = np.asarray(part, dtype=np.float64)
    if r.shape != b.shape:
        raise ShapeMismatchError("part_nll", expected=r.shape, found=b.shape)
    return float(np.sum(0.5 * np.log(r) + b * b / r))


def supervised_loss(r_log: LogLike, intensity_log: LogLike) -> float:
    """Σ ř + exp(min(ǐ′ − ř, 30)) on denormalized logs."""
    r, i = _pair(r_log, intensity_log, "supervised_loss")
    return float(np.sum(r + np.exp(np.minimum(i - r, EXP_CLIP))))


def part_log(part: NDArray[Any]) -> NDArray[np.float64]:
    """b̌ = log|b̃|, floored like every other log in the pipeline."""
    squared = np.asarray(part, dtype=np.float64) ** 2
    return 0.5 * np.log(np.maximum(squared, X_FLOOR))


def intensity_log(intensity: NDArray[Any]) -> NDArray[np.float64]:
    return np.log(np.maximum(np.asarray(intensity, dtype=np.float64), X_FLOOR))


# ============================================================================
# Graph heads
# ============================================================================


def attach_loss(graph: Graph, prediction: int, norm: tuple[float, float], kind: LossKind = "merlin") -> int:
    """Add input 'target' (denormalized log, shaped like the prediction) and scalar output 'loss'.

    `prediction` is the network's normalized log output; it is denormalized
    in-graph as ř = č·(M − m) + m.
    """
    lo, hi = norm
    target = graph.input(TARGET)
    r_log = graph.apply("add_scalar", graph.apply("multiply_scalar", prediction, value=hi - lo), value=lo)
    if kind == "merlin":
        argument = graph.apply("subtract", graph.apply("multiply_scalar", target, value=2.0), r_log)
        linear = graph.apply("multiply_scalar", r_log, value=0.5)
    else:
        argument = graph.apply("subtract", target, r_log)
        linear = r_log
    pixels = graph.apply("add", linear, graph.apply("exp", argument, clip_max=EXP_CLIP))
    per_sample = graph.apply("reduce_sum", pixels, axes=(1, 2, 3))
    loss = graph.apply("reduce_mean", per_sample)
    graph.mark_output(LOSS, loss)
    return loss
