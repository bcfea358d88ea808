"""Residual U-Net over the autodiff graph.

Every level carries `base_channels` feature maps. The encoder applies two
3×3 conv + leaky ReLU blocks per level with 2×2 max pooling in between;
the decoder upsamples, concatenates the matching skip and applies two more
conv blocks. A 1×1 conv maps back to one channel, and the residual head
returns input − trunk(input).
"""

from typing import Any

import numpy as np
from numpy.typing import NDArray

from src.autodiff import Graph
from src.exceptions import ShapeMismatchError
from src.models import LogImage, RngStream, UNetConfig

INPUT = "x"
PREDICTION = "prediction"
HEAD = "head"


def conv_init(
    generator: np.random.Generator, out_ch: int, in_ch: int, kernel: int, slope: float
) -> tuple[NDArray[np.float32], NDArray[np.float32]]:
    """Variance-scaled normal weights with the gain of a leaky ReLU of the given slope; zero bias."""
    fan_in = in_ch * kernel * kernel
    std = np.sqrt(2.0 / ((1.0 + slope * slope) * fan_in))
    weight = generator.normal(0.0, std, size=(out_ch, in_ch, kernel, kernel)).astype(np.float32)
    return weight, np.zeros(out_ch, dtype=np.float32)


def parameter_count(cfg: UNetConfig) -> int:
    c, levels = cfg.base_channels, cfg.levels
    square = 9 * c * c + c
    return 10 * c + (3 * levels + 1) * square + levels * (18 * c * c + c) + c + 1


def build_unet(cfg: UNetConfig, rng: RngStream | None = None) -> Graph:
    """Graph with input 'x' (n, 1, h, w) and output 'prediction' of the same shape."""
    generator = (rng or RngStream(seed=0)).generator()
    graph = Graph()
    channels, slope = cfg.base_channels, cfg.leaky_slope

    def block(x: int, name: str, in_ch: int) -> int:
        weight, bias = conv_init(generator, channels, in_ch, 3, slope)
        w = graph.parameter(f"{name}.w", weight)
        b = graph.parameter(f"{name}.b", bias)
        return graph.apply("leaky_relu", graph.apply("conv2d", x, w, b), slope=slope)

    source = graph.input(INPUT)
    x = block(block(source, "enc0.conv1", 1), "enc0.conv2", channels)
    skips = [x]
    for level in range(1, cfg.levels):
        x = graph.apply("maxpool2", x)
        x = block(block(x, f"enc{level}.conv1", channels), f"enc{level}.conv2", channels)
        skips.append(x)

    x = graph.apply("maxpool2", x)
    x = block(block(x, "bottleneck.conv1", channels), "bottleneck.conv2", channels)

    for level in reversed(range(cfg.levels)):
        x = graph.apply("channel_concat", graph.apply("upsample2_nearest", x), skips[level])
        x = block(block(x, f"dec{level}.conv1", 2 * channels), f"dec{level}.conv2", channels)

    head_w, head_b = conv_init(generator, 1, channels, 1, slope)
    trunk = graph.apply(
        "conv2d", x, graph.parameter(f"{HEAD}.w", head_w), graph.parameter(f"{HEAD}.b", head_b)
    )
    graph.mark_output(PREDICTION, graph.apply("subtract", source, trunk) if cfg.residual else trunk)
    return graph


def zero_trunk(graph: Graph) -> None:
    """Zero the final 1×1 conv, turning a residual network into the identity map."""
    for name in (f"{HEAD}.w", f"{HEAD}.b"):
        graph.params[name] = np.zeros_like(graph.params[name])


def check_side(cfg: UNetConfig, height: int, width: int) -> None:
    multiple = cfg.side_multiple
    if height % multiple or width % multiple:
        raise ShapeMismatchError("unet input", expected=f"sides divisible by {multiple}", found=(height, width))


def predict_array(net: Graph, cfg: UNetConfig, batch: NDArray[Any]) -> NDArray[np.float32]:
    """Run the network on normalized log patches shaped (n, 1, h, w) without caching activations."""
    check_side(cfg, int(batch.shape[-2]), int(batch.shape[-1]))
    return net.forward({INPUT: batch}, [PREDICTION], retain=False)[PREDICTION]


def predict(net: Graph, cfg: UNetConfig, patch: LogImage) -> LogImage:
    """Normalized log reflectivity ř for one normalized log patch; normalization constants pass through."""
    out = predict_array(net, cfg, patch.values[None, None])
    return LogImage(values=out[0, 0], norm_lo=patch.norm_lo, norm_hi=patch.norm_hi)
