"""Inference: despeckle the real and imaginary parts separately, fuse, and tile large images."""

import math
from concurrent.futures import ThreadPoolExecutor
from typing import Any, Literal

import numpy as np
from numpy.typing import NDArray
from scipy import ndimage

from src.checkpoint import Checkpoint
from src.exceptions import ShapeMismatchError
from src.logging import get_logger
from src.models import X_FLOOR, ComplexImage, ReflectivityImage, RngStream
from src.spectrum_prep import decimate2, log_denormalize, log_normalize, prepare_patch
from src.speckle_sim import pseudo_slc_from_intensity
from src.unet import predict_array

log = get_logger("src.despeckle")

DEFAULT_TILE = 256
DEFAULT_MARGIN = 32
MIN_MARGIN = 16

FusionDomain = Literal["linear", "log"]


def _estimate(ckpt: Checkpoint, squared: NDArray[np.float64]) -> NDArray[np.float64]:
    normalized = log_normalize(squared, ckpt.norm)
    out = predict_array(ckpt.network(), ckpt.unet, normalized.values[None, None])[0, 0]
    estimate = log_denormalize(normalized.model_copy(update={"values": out}))
    return np.maximum(estimate, X_FLOOR)


def despeckle_part(ckpt: Checkpoint, part: NDArray[Any]) -> NDArray[np.float64]:
    """r̃ estimate from one part: exp(denormalize(net(normalize(log part²))))."""
    grid = np.asarray(part, dtype=np.float64)
    return _estimate(ckpt, grid * grid)


def despeckle_component(ckpt: Checkpoint, part: NDArray[Any]) -> ReflectivityImage:
    return ReflectivityImage(values=despeckle_part(ckpt, part), convolved_flag=True)


def _fuse(a: NDArray[np.float64], b: NDArray[np.float64], domain: FusionDomain) -> NDArray[np.float64]:
    return (a + b) / 2 if domain == "linear" else np.sqrt(a * b)


def combine_estimates(
    ra: ReflectivityImage, rb: ReflectivityImage, domain: FusionDomain = "linear"
) -> ReflectivityImage:
    """Average two estimates, arithmetically (linear) or geometrically (log)."""
    if ra.shape != rb.shape:
        raise ShapeMismatchError("combine_estimates", expected=ra.shape, found=rb.shape)
    fused = _fuse(ra.values.astype(np.float64), rb.values.astype(np.float64), domain)
    return ReflectivityImage(values=fused, convolved_flag=ra.convolved_flag and rb.convolved_flag)


def _process_tile(
    ckpt: Checkpoint, tile: NDArray[np.complex128], domain: FusionDomain, recenter: bool
) -> NDArray[np.float64]:
    if recenter:
        prepared, _ = prepare_patch(ComplexImage.from_complex(tile))
        tile = prepared.to_complex()
    if ckpt.provenance.loss_kind == "supervised":
        # The intensity baseline was trained on log I, not on one part.
        return _estimate(ckpt, np.abs(tile) ** 2)
    return _fuse(despeckle_part(ckpt, tile.real), despeckle_part(ckpt, tile.imag), domain)


def _tile_starts(length: int, core: int) -> list[int]:
    return [index * core for index in range(math.ceil(length / core))]


def despeckle_image(
    ckpt: Checkpoint,
    img: ComplexImage,
    tile: int = DEFAULT_TILE,
    margin: int = DEFAULT_MARGIN,
    *,
    threads: int = 1,
    domain: FusionDomain = "linear",
    recenter: bool | None = None,
) -> ReflectivityImage:
    """Despeckle a full image with overlapping tiles whose margins are cropped before stitching.

    An image of exactly one tile goes through the network once; a smaller one
    is padded by reflection to the tile size and cropped back. `recenter`
    defaults to what the checkpoint was trained with.
    """
    multiple = ckpt.unet.side_multiple
    if tile % multiple:
        raise ShapeMismatchError("despeckle_image", expected=f"tile divisible by {multiple}", found=tile)
    if margin < MIN_MARGIN:
        raise ValueError(f"margin must be at least {MIN_MARGIN}, got {margin}")
    if tile <= 2 * margin:
        raise ValueError(f"tile {tile} leaves no core inside a margin of {margin}")
    recenter = ckpt.provenance.recenter if recenter is None else recenter

    z = img.to_complex()
    height, width = img.shape
    if (height, width) == (tile, tile):
        estimate = _process_tile(ckpt, z, domain, recenter)
        return ReflectivityImage(values=estimate, convolved_flag=True)

    if height <= tile and width <= tile:
        padded = np.pad(z, ((0, tile - height), (0, tile - width)), mode="symmetric")
        estimate = _process_tile(ckpt, padded, domain, recenter)[:height, :width]
        return ReflectivityImage(values=estimate, convolved_flag=True)

    core = tile - 2 * margin
    rows, cols = _tile_starts(height, core), _tile_starts(width, core)
    padded = np.pad(
        z,
        ((margin, len(rows) * core + margin - height), (margin, len(cols) * core + margin - width)),
        mode="symmetric",
    )
    origins = [(top, left) for top in rows for left in cols]

    def run(origin: tuple[int, int]) -> NDArray[np.float64]:
        top, left = origin
        window = padded[top : top + tile, left : left + tile]
        return _process_tile(ckpt, window, domain, recenter)[margin : margin + core, margin : margin + core]

    ckpt.network()  # built once, before the workers share it
    with ThreadPoolExecutor(max_workers=max(1, threads), thread_name_prefix="despeckle-tile") as pool:
        centers = list(pool.map(run, origins))

    stitched = np.empty((len(rows) * core, len(cols) * core), dtype=np.float64)
    for (top, left), center in zip(origins, centers):
        stitched[top : top + core, left : left + core] = center
    log.info("despeckle.image.completed", height=height, width=width, tiles=len(origins), threads=threads)
    return ReflectivityImage(values=stitched[:height, :width], convolved_flag=True)


def despeckle_intensity(
    ckpt: Checkpoint,
    intensity: NDArray[Any],
    rng: RngStream,
    *,
    subsample: bool = False,
    tile: int = DEFAULT_TILE,
    margin: int = DEFAULT_MARGIN,
    threads: int = 1,
) -> ReflectivityImage:
    """Despeckle intensity-only data through a pseudo-SLC with uniformly drawn phases.

    With `subsample` the pseudo-SLC is decimated by two before inference and
    the estimate is brought back to full size by bilinear interpolation.
    """
    grid = np.asarray(intensity, dtype=np.float64)
    pseudo = pseudo_slc_from_intensity(grid, rng)
    if not subsample:
        return despeckle_image(ckpt, pseudo, tile, margin, threads=threads)

    small = despeckle_image(ckpt, decimate2(pseudo), tile, margin, threads=threads).values.astype(np.float64)
    factors = (grid.shape[0] / small.shape[0], grid.shape[1] / small.shape[1])
    restored = ndimage.zoom(small, factors, order=1, mode="nearest", grid_mode=True)
    restored = restored[: grid.shape[0], : grid.shape[1]]
    if restored.shape != grid.shape:
        restored = np.pad(
            restored,
            ((0, grid.shape[0] - restored.shape[0]), (0, grid.shape[1] - restored.shape[1])),
            mode="edge",
        )
    return ReflectivityImage(values=np.maximum(restored, X_FLOOR), convolved_flag=True)
