"""Minimal reverse-mode automatic differentiation over dense (n, c, h, w) tensors.

A Graph is a static, topologically ordered list of nodes. Inputs and
parameters are leaf nodes; every other node applies one kernel from
`KERNELS`. A kernel returns its output together with a `grad_fn` closure
mapping the output gradient to one gradient per input (None for inputs
that are not differentiated, e.g. scalar attributes).
"""

from collections.abc import Callable, Iterable, Mapping, Sequence
from dataclasses import dataclass, field
from typing import Any

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from numpy.typing import NDArray

from src.exceptions import GraphError, ShapeMismatchError
from src.logging import get_logger
from src.models import GradientCheckReport

log = get_logger("src.autodiff")

Array = NDArray[Any]
GradFn = Callable[[Array], tuple[Array | None, ...]]
Kernel = Callable[..., tuple[Array, GradFn]]

KERNELS: dict[str, Kernel] = {}


def register(kind: str) -> Callable[[Kernel], Kernel]:
    def decorator(kernel: Kernel) -> Kernel:
        KERNELS[kind] = kernel
        return kernel

    return decorator


def _same_shape(operation: str, a: Array, b: Array) -> None:
    if a.shape != b.shape:
        raise ShapeMismatchError(operation, expected=a.shape, found=b.shape)


# ============================================================================
# Operator kernels
# ============================================================================


@register("conv2d")
def conv2d(x: Array, weight: Array, bias: Array) -> tuple[Array, GradFn]:
    """Stride-1 convolution with zero padding preserving h×w; weight is (out, in, k, k), k odd."""
    if x.ndim != 4:
        raise ShapeMismatchError("conv2d", expected="(n, c, h, w)", found=x.shape)
    out_ch, in_ch, k, k2 = weight.shape
    if k != k2 or k % 2 == 0:
        raise ShapeMismatchError("conv2d", expected="odd square kernel", found=weight.shape)
    if x.shape[1] != in_ch:
        raise ShapeMismatchError("conv2d", expected=in_ch, found=x.shape[1])
    if bias.shape != (out_ch,):
        raise ShapeMismatchError("conv2d bias", expected=(out_ch,), found=bias.shape)
    pad = k // 2
    padding = ((0, 0), (0, 0), (pad, pad), (pad, pad))

    windows = sliding_window_view(np.pad(x, padding), (k, k), axis=(2, 3))
    out = np.tensordot(windows, weight, axes=([1, 4, 5], [1, 2, 3])).transpose(0, 3, 1, 2)
    out = out + bias[None, :, None, None]

    def grad_fn(grad: Array) -> tuple[Array, Array, Array]:
        d_bias = grad.sum(axis=(0, 2, 3))
        d_weight = np.tensordot(grad, windows, axes=([0, 2, 3], [0, 2, 3]))
        grad_windows = sliding_window_view(np.pad(grad, padding), (k, k), axis=(2, 3))
        flipped = weight[:, :, ::-1, ::-1]
        d_x = np.tensordot(grad_windows, flipped, axes=([1, 4, 5], [0, 2, 3])).transpose(0, 3, 1, 2)
        return d_x, d_weight, d_bias

    return np.ascontiguousarray(out), grad_fn


@register("leaky_relu")
def leaky_relu(x: Array, slope: float) -> tuple[Array, GradFn]:
    positive = x > 0
    out = np.where(positive, x, slope * x)

    def grad_fn(grad: Array) -> tuple[Array]:
        return (np.where(positive, grad, slope * grad),)

    return out, grad_fn


@register("maxpool2")
def maxpool2(x: Array) -> tuple[Array, GradFn]:
    n, c, h, w = x.shape
    if h % 2 or w % 2:
        raise ShapeMismatchError("maxpool2", expected="even h and w", found=x.shape)
    blocks = x.reshape(n, c, h // 2, 2, w // 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, h // 2, w // 2, 4)
    # First maximum wins on ties.
    winner = blocks.argmax(axis=-1)[..., None]
    out = np.take_along_axis(blocks, winner, axis=-1)[..., 0]

    def grad_fn(grad: Array) -> tuple[Array]:
        routed = np.zeros_like(blocks)
        np.put_along_axis(routed, winner, grad[..., None], axis=-1)
        d_x = routed.reshape(n, c, h // 2, w // 2, 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, h, w)
        return (d_x,)

    return out, grad_fn


@register("upsample2_nearest")
def upsample2_nearest(x: Array) -> tuple[Array, GradFn]:
    n, c, h, w = x.shape
    out = x.repeat(2, axis=2).repeat(2, axis=3)

    def grad_fn(grad: Array) -> tuple[Array]:
        return (grad.reshape(n, c, h, 2, w, 2).sum(axis=(3, 5)),)

    return out, grad_fn


@register("channel_concat")
def channel_concat(a: Array, b: Array) -> tuple[Array, GradFn]:
    if a.shape[0] != b.shape[0] or a.shape[2:] != b.shape[2:]:
        raise ShapeMismatchError("channel_concat", expected=a.shape, found=b.shape)
    split = a.shape[1]

    def grad_fn(grad: Array) -> tuple[Array, Array]:
        return grad[:, :split], grad[:, split:]

    return np.concatenate([a, b], axis=1), grad_fn


@register("add")
def add(a: Array, b: Array) -> tuple[Array, GradFn]:
    _same_shape("add", a, b)

    def grad_fn(grad: Array) -> tuple[Array, Array]:
        return grad, grad

    return a + b, grad_fn


@register("subtract")
def subtract(a: Array, b: Array) -> tuple[Array, GradFn]:
    _same_shape("subtract", a, b)

    def grad_fn(grad: Array) -> tuple[Array, Array]:
        return grad, -grad

    return a - b, grad_fn


@register("multiply_scalar")
def multiply_scalar(x: Array, value: float) -> tuple[Array, GradFn]:
    def grad_fn(grad: Array) -> tuple[Array]:
        return (grad * value,)

    return x * value, grad_fn


@register("add_scalar")
def add_scalar(x: Array, value: float) -> tuple[Array, GradFn]:
    def grad_fn(grad: Array) -> tuple[Array]:
        return (grad,)

    return x + value, grad_fn


@register("exp")
def exp(x: Array, clip_max: float | None = None) -> tuple[Array, GradFn]:
    """exp(min(x, clip_max)); the gradient is zero where the clamp is active."""
    clamped = x if clip_max is None else np.minimum(x, clip_max)
    out = np.exp(clamped)

    def grad_fn(grad: Array) -> tuple[Array]:
        if clip_max is None:
            return (grad * out,)
        return (np.where(x <= clip_max, grad * out, 0.0).astype(x.dtype),)

    return out, grad_fn


@register("log")
def log_(x: Array) -> tuple[Array, GradFn]:
    def grad_fn(grad: Array) -> tuple[Array]:
        return (grad / x,)

    return np.log(x), grad_fn


def _reduce(x: Array, axes: Sequence[int] | None, mean: bool) -> tuple[Array, GradFn]:
    axis = None if axes is None else tuple(axes)
    out = np.asarray(x.sum(axis=axis))
    count = x.size if axis is None else int(np.prod([x.shape[a] for a in axis]))
    if mean:
        out = out / count

    def grad_fn(grad: Array) -> tuple[Array]:
        g = np.asarray(grad)
        if axis is not None:
            g = np.expand_dims(g, axis)
        g = np.broadcast_to(g, x.shape)
        return ((g / count if mean else g).astype(x.dtype),)

    return np.asarray(out, dtype=x.dtype), grad_fn


@register("reduce_sum")
def reduce_sum(x: Array, axes: Sequence[int] | None = None) -> tuple[Array, GradFn]:
    return _reduce(x, axes, mean=False)


@register("reduce_mean")
def reduce_mean(x: Array, axes: Sequence[int] | None = None) -> tuple[Array, GradFn]:
    return _reduce(x, axes, mean=True)


# ============================================================================
# Graph
# ============================================================================


@dataclass(frozen=True)
class Node:
    kind: str
    inputs: tuple[int, ...] = ()
    attrs: Mapping[str, Any] = field(default_factory=dict)
    name: str | None = None


@dataclass
class _Trace:
    values: dict[int, Array]
    grad_fns: dict[int, GradFn]


class Graph:
    """Static computation graph with named inputs, parameters and outputs."""

    def __init__(self, dtype: type[np.floating[Any]] = np.float32) -> None:
        self.dtype = np.dtype(dtype)
        self.nodes: list[Node] = []
        self.params: dict[str, Array] = {}
        self.grads: dict[str, Array] = {}
        self.outputs: dict[str, int] = {}
        self._inputs: dict[str, int] = {}
        self._param_nodes: dict[str, int] = {}
        self._trace: _Trace | None = None

    # --- construction -------------------------------------------------------

    def _append(self, node: Node) -> int:
        self.nodes.append(node)
        return len(self.nodes) - 1

    def input(self, name: str) -> int:
        if name in self._inputs:
            raise GraphError(f"duplicate input '{name}'")
        self._inputs[name] = self._append(Node(kind="input", name=name))
        return self._inputs[name]

    def parameter(self, name: str, value: Array) -> int:
        if name in self.params:
            raise GraphError(f"duplicate parameter '{name}'")
        self.params[name] = np.array(value, dtype=self.dtype)
        self._param_nodes[name] = self._append(Node(kind="parameter", name=name))
        return self._param_nodes[name]

    def apply(self, kind: str, *inputs: int, **attrs: Any) -> int:
        if kind not in KERNELS:
            raise GraphError(f"unknown operator '{kind}'")
        for ref in inputs:
            if not 0 <= ref < len(self.nodes):
                raise GraphError(f"operator '{kind}' refers to unknown node {ref}")
        return self._append(Node(kind=kind, inputs=tuple(inputs), attrs=dict(attrs)))

    def mark_output(self, name: str, node: int) -> None:
        self.outputs[name] = node

    @property
    def parameter_count(self) -> int:
        return int(sum(value.size for value in self.params.values()))

    def clone(self, dtype: type[np.floating[Any]] | None = None) -> "Graph":
        """Copy sharing the node list, with private parameter arrays and no activation cache."""
        twin = Graph(dtype or self.dtype.type)
        twin.nodes = self.nodes
        twin.outputs = dict(self.outputs)
        twin._inputs = dict(self._inputs)
        twin._param_nodes = dict(self._param_nodes)
        twin.params = {name: value.astype(twin.dtype, copy=True) for name, value in self.params.items()}
        return twin

    def load_parameters(self, values: Mapping[str, Array]) -> None:
        missing = set(self.params) - set(values)
        if missing:
            raise GraphError(f"missing parameters: {sorted(missing)}")
        for name, current in self.params.items():
            incoming = np.asarray(values[name])
            if incoming.shape != current.shape:
                raise ShapeMismatchError(f"parameter '{name}'", expected=current.shape, found=incoming.shape)
            self.params[name] = incoming.astype(self.dtype, copy=True)

    # --- evaluation ---------------------------------------------------------

    def _required(self, targets: Iterable[int]) -> set[int]:
        needed: set[int] = set()
        stack = list(targets)
        while stack:
            ref = stack.pop()
            if ref in needed:
                continue
            needed.add(ref)
            stack.extend(self.nodes[ref].inputs)
        return needed

    def forward(
        self,
        inputs: Mapping[str, Array],
        outputs: Sequence[str] | None = None,
        retain: bool = True,
    ) -> dict[str, Array]:
        """Evaluate the requested outputs (all by default).

        With `retain=False` nothing is cached on the graph, so concurrent
        calls sharing the parameters are safe.
        """
        unknown = set(inputs) - set(self._inputs)
        if unknown:
            raise GraphError(f"unknown input names: {sorted(unknown)}")
        names = list(outputs) if outputs is not None else list(self.outputs)
        for name in names:
            if name not in self.outputs:
                raise GraphError(f"unknown output '{name}'")
        needed = self._required(self.outputs[name] for name in names)

        values: dict[int, Array] = {}
        grad_fns: dict[int, GradFn] = {}
        for ref, node in enumerate(self.nodes):
            if ref not in needed:
                continue
            if node.kind == "input":
                assert node.name is not None
                if node.name not in inputs:
                    raise GraphError(f"missing input '{node.name}'")
                values[ref] = np.asarray(inputs[node.name], dtype=self.dtype)
            elif node.kind == "parameter":
                assert node.name is not None
                values[ref] = self.params[node.name]
            else:
                out, grad_fn = KERNELS[node.kind](*(values[i] for i in node.inputs), **node.attrs)
                values[ref] = np.asarray(out, dtype=self.dtype)
                grad_fns[ref] = grad_fn

        if retain:
            self._trace = _Trace(values=values, grad_fns=grad_fns)
        return {name: values[self.outputs[name]] for name in names}

    def backward(self, output: str = "loss") -> dict[str, Array]:
        """Fill `grads` with ∂output/∂parameter for a scalar output of the last retained forward."""
        if self._trace is None:
            raise GraphError("backward called before forward")
        if output not in self.outputs:
            raise GraphError(f"unknown output '{output}'")
        root = self.outputs[output]
        trace = self._trace
        if root not in trace.values:
            raise GraphError(f"output '{output}' was not evaluated by the last forward")
        if trace.values[root].size != 1:
            raise GraphError(f"output '{output}' is not scalar: shape {trace.values[root].shape}")

        self.grads = {}
        pending: dict[int, Array] = {root: np.ones_like(trace.values[root])}
        for ref in range(root, -1, -1):
            grad = pending.pop(ref, None)
            if grad is None:
                continue
            node = self.nodes[ref]
            if node.kind == "parameter":
                assert node.name is not None
                self.grads[node.name] = np.asarray(grad, dtype=self.dtype)
                continue
            if node.kind == "input":
                continue
            for source, contribution in zip(node.inputs, trace.grad_fns[ref](grad)):
                if contribution is None:
                    continue
                pending[source] = pending[source] + contribution if source in pending else contribution

        for name, value in self.params.items():
            if name not in self.grads or self.grads[name].shape != value.shape:
                self.grads[name] = np.zeros_like(value)
        return self.grads


# ============================================================================
# Gradient checking
# ============================================================================


def check_gradients(
    graph: Graph,
    inputs: Mapping[str, Array],
    tolerance: float = 1e-3,
    output: str = "loss",
    step: float = 1e-3,
    max_entries: int = 64,
    seed: int = 0,
) -> GradientCheckReport:
    """Compare backward against central differences in a float64 shadow copy of the graph.

    Per parameter tensor the error is ‖analytic − numeric‖∞ / max(‖analytic‖∞, ‖numeric‖∞)
    over at most `max_entries` sampled entries.
    """
    shadow = graph.clone(np.float64)
    shadow.forward(inputs, [output])
    analytic = {name: value.copy() for name, value in shadow.backward(output).items()}
    chooser = np.random.default_rng(seed)

    def evaluate() -> float:
        return float(shadow.forward(inputs, [output], retain=False)[output].sum())

    errors: dict[str, float] = {}
    for name, value in shadow.params.items():
        flat = value.reshape(-1)
        count = min(flat.size, max_entries)
        picks = np.arange(flat.size) if count == flat.size else chooser.choice(flat.size, count, replace=False)
        numeric = np.empty(count)
        for slot, index in enumerate(picks):
            original = flat[index]
            flat[index] = original + step
            upper = evaluate()
            flat[index] = original - step
            lower = evaluate()
            flat[index] = original
            numeric[slot] = (upper - lower) / (2 * step)
        reference = analytic[name].reshape(-1)[picks]
        scale = max(float(np.max(np.abs(reference))), float(np.max(np.abs(numeric))), np.finfo(np.float64).tiny)
        errors[name] = float(np.max(np.abs(reference - numeric))) / scale

    passed = all(error < tolerance for error in errors.values())
    log.debug("autodiff.gradients_checked", passed=passed, worst=max(errors.values(), default=0.0))
    return GradientCheckReport(tolerance=tolerance, max_relative_error=errors, passed=passed)


# ============================================================================
# Optimization
# ============================================================================


def global_norm(grads: Mapping[str, Array]) -> float:
    return float(np.sqrt(sum(float(np.sum(np.square(g, dtype=np.float64))) for g in grads.values())))


def clip_global_norm(grads: Mapping[str, Array], c: float) -> tuple[dict[str, Array], float]:
    """Scale all gradients by c/g when their global L2 norm g exceeds c; returns the pre-clip norm."""
    if c <= 0:
        raise ValueError(f"clip norm must be positive, got {c}")
    norm = global_norm(grads)
    if norm <= c:
        return dict(grads), norm
    scale = c / norm
    return {name: (g * scale).astype(g.dtype) for name, g in grads.items()}, norm


@dataclass
class AdamState:
    m: dict[str, Array] = field(default_factory=dict)
    v: dict[str, Array] = field(default_factory=dict)
    t: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def zeros_like(cls, params: Mapping[str, Array]) -> "AdamState":
        return cls(
            m={name: np.zeros_like(value) for name, value in params.items()},
            v={name: np.zeros_like(value) for name, value in params.items()},
        )


def adam_step(params: dict[str, Array], grads: Mapping[str, Array], state: AdamState, lr: float) -> None:
    """Bias-corrected Adam update; rebinds each entry of `params` to its new array."""
    for name, value in params.items():
        grad = grads[name]
        if grad.shape != value.shape:
            raise ShapeMismatchError(f"adam_step '{name}'", expected=value.shape, found=grad.shape)
        if name not in state.m:
            state.m[name] = np.zeros_like(value)
            state.v[name] = np.zeros_like(value)

    state.t += 1
    correction1 = 1.0 - state.beta1**state.t
    correction2 = 1.0 - state.beta2**state.t
    for name, value in params.items():
        grad = grads[name]
        state.m[name] = state.beta1 * state.m[name] + (1.0 - state.beta1) * grad
        state.v[name] = state.beta2 * state.v[name] + (1.0 - state.beta2) * grad * grad
        m_hat = state.m[name] / correction1
        v_hat = state.v[name] / correction2
        params[name] = (value - lr * m_hat / (np.sqrt(v_hat) + state.eps)).astype(value.dtype)
