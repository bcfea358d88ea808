"""Self-supervised training from the real/imaginary split, and the supervised intensity baseline."""

import queue
import threading
from collections.abc import Callable, Iterator, Sequence
from pathlib import Path
from time import perf_counter
from typing import Any, NamedTuple

import numpy as np
from numpy.typing import NDArray
from pydantic import ValidationError

from src.autodiff import AdamState, adam_step, clip_global_norm
from src.checkpoint import Checkpoint, Provenance, config_digest, save_checkpoint
from src.events import CheckpointSavedEvent, EpochCompleteEvent, TrainingCompleteEvent, TrainingEvent
from src.exceptions import ConfigError, NonFiniteLossError, ShapeMismatchError
from src.logging import bind_context_vars, get_logger, new_run_id
from src.losses import LOSS, TARGET, LossKind, attach_loss
from src.models import ComplexImage, LogImage, RngStream, RunConfig, TrainConfig, UNetConfig
from src.spectrum_prep import compute_normalization, log_normalize, prepare_patch
from src.speckle_sim import intensity_of
from src.unet import INPUT, PREDICTION, build_unet

log = get_logger("src.training")

PREFETCH_BATCHES = 4
LAST_CHECKPOINT = "last.mrln"
BEST_CHECKPOINT = "best.mrln"
TRAIN_LOG = "train_log.jsonl"

EventCallback = Callable[[TrainingEvent], None]


class PatchPair(NamedTuple):
    """One training example: normalized log network input and normalized log target."""

    input: LogImage
    target: LogImage
    swapped: bool


# ============================================================================
# Patch sampling
# ============================================================================


def patch_origins(height: int, width: int, patch: int, stride: int) -> list[tuple[int, int]]:
    if height < patch or width < patch:
        raise ShapeMismatchError("patch sampling", expected=f"at least {patch}x{patch}", found=(height, width))
    rows = range(0, height - patch + 1, stride)
    cols = range(0, width - patch + 1, stride)
    return [(top, left) for top in rows for left in cols]


def _epoch_plan(
    shapes: Sequence[tuple[int, int]], cfg: TrainConfig, epoch: int
) -> list[tuple[int, int, int, bool]]:
    """Shuffled (image, top, left, swapped) for one epoch; swaps drawn uniformly per patch."""
    origins = [
        (index, top, left)
        for index, (height, width) in enumerate(shapes)
        for top, left in patch_origins(height, width, cfg.patch_size, cfg.effective_stride)
    ]
    generator = RngStream(seed=cfg.seed, stream_id=epoch + 1).generator()
    order = generator.permutation(len(origins))
    swaps = generator.random(len(origins)) < 0.5
    return [(*origins[index], bool(swaps[slot])) for slot, index in enumerate(order)]


def _crop(img: ComplexImage, top: int, left: int, size: int) -> ComplexImage:
    window = (slice(top, top + size), slice(left, left + size))
    return ComplexImage(re=img.re[window], im=img.im[window])


def corpus_patches(
    images: Sequence[ComplexImage], cfg: TrainConfig, epoch: int, norm: tuple[float, float]
) -> Iterator[PatchPair]:
    """Patches of a whole corpus for one epoch: input ǎ with target b̌, or the swap."""
    for index, top, left, swapped in _epoch_plan([img.shape for img in images], cfg, epoch):
        patch = _crop(images[index], top, left, cfg.patch_size)
        if cfg.recenter:
            patch, _ = prepare_patch(patch)
        source, target = (patch.im, patch.re) if swapped else (patch.re, patch.im)
        yield PatchPair(
            input=log_normalize(source.astype(np.float64) ** 2, norm),
            target=log_normalize(target.astype(np.float64) ** 2, norm),
            swapped=swapped,
        )


def sample_patches(
    img: ComplexImage, cfg: TrainConfig, epoch_seed: int, norm: tuple[float, float]
) -> Iterator[PatchPair]:
    return corpus_patches([img], cfg, epoch_seed, norm)


def realization_patches(
    pairs: Sequence[tuple[ComplexImage, ComplexImage]], cfg: TrainConfig, epoch: int, norm: tuple[float, float]
) -> Iterator[PatchPair]:
    """Intensity patches of two independent realizations; `swapped` picks which one is the input."""
    for index, top, left, swapped in _epoch_plan([first.shape for first, _ in pairs], cfg, epoch):
        first, second = (_crop(img, top, left, cfg.patch_size) for img in pairs[index])
        source, target = (second, first) if swapped else (first, second)
        yield PatchPair(
            input=log_normalize(intensity_of(source), norm),
            target=log_normalize(intensity_of(target), norm),
            swapped=swapped,
        )


# ============================================================================
# Batching
# ============================================================================


class Batch(NamedTuple):
    inputs: NDArray[np.float32]
    targets: NDArray[np.float64]


def _to_batch(pairs: list[PatchPair], kind: LossKind) -> Batch:
    inputs = np.stack([pair.input.values for pair in pairs])[:, None]
    targets = np.stack([pair.target.denormalized_log() for pair in pairs])[:, None]
    if kind == "merlin":
        # Target of the self-supervised loss is log|part| = ½ log(part²).
        targets = 0.5 * targets
    return Batch(inputs=inputs.astype(np.float32), targets=targets)


def batches(patches: Iterator[PatchPair], batch_size: int, kind: LossKind) -> Iterator[Batch]:
    pending: list[PatchPair] = []
    for pair in patches:
        pending.append(pair)
        if len(pending) == batch_size:
            yield _to_batch(pending, kind)
            pending = []
    if pending:
        yield _to_batch(pending, kind)


_DONE = object()
PREFETCH_THREAD = "patch-prefetch"
PREFETCH_JOIN_SECONDS = 1.0


def prefetched(source: Iterator[Batch], depth: int = PREFETCH_BATCHES) -> Iterator[Batch]:
    """Build batches on a producer thread ahead of the optimizer through a bounded queue.

    Closing the generator early stops the producer, which is joined before returning.
    """
    buffer: queue.Queue[Any] = queue.Queue(maxsize=depth)
    stop = threading.Event()

    def offer(item: Any) -> bool:
        while not stop.is_set():
            try:
                buffer.put(item, timeout=0.1)
                return True
            except queue.Full:
                continue
        return False

    def produce() -> None:
        try:
            for item in source:
                if not offer(item):
                    return
            offer(_DONE)
        except BaseException as e:  # re-raised on the consumer side
            offer(e)

    worker = threading.Thread(target=produce, name=PREFETCH_THREAD, daemon=True)
    worker.start()
    try:
        while True:
            item = buffer.get()
            if item is _DONE:
                return
            if isinstance(item, BaseException):
                raise item
            yield item
    finally:
        stop.set()
        worker.join(timeout=PREFETCH_JOIN_SECONDS)


# ============================================================================
# Training loop
# ============================================================================


def _validated(unet_cfg: UNetConfig, cfg: TrainConfig) -> None:
    try:
        RunConfig(unet=unet_cfg, train=cfg)
    except ValidationError as e:
        raise ConfigError("train", "; ".join(err["msg"] for err in e.errors())) from e


def _emit(event: TrainingEvent, callback: EventCallback | None, log_path: Path | None) -> None:
    if callback:
        callback(event)
    if log_path is not None and isinstance(event, EpochCompleteEvent):
        with log_path.open("a", encoding="utf-8") as handle:
            handle.write(event.format())


def _batch_stats(loss: float, prediction: NDArray[Any], batch: Batch) -> dict[str, float]:
    finite = prediction[np.isfinite(prediction)]
    return {
        "loss": loss,
        "nonfinite_outputs": float(prediction.size - finite.size),
        "prediction_min": float(finite.min()) if finite.size else float("nan"),
        "prediction_max": float(finite.max()) if finite.size else float("nan"),
        "target_min": float(batch.targets.min()),
        "target_max": float(batch.targets.max()),
    }


def _save(ckpt: Checkpoint, path: Path, role: str, callback: EventCallback | None) -> None:
    save_checkpoint(ckpt, path)
    _emit(CheckpointSavedEvent(data={"path": str(path), "role": role, "epoch": ckpt.provenance.epoch}), callback, None)


def _fit(
    kind: LossKind,
    patch_source: Callable[[int, tuple[float, float]], Iterator[PatchPair]],
    norm: tuple[float, float],
    unet_cfg: UNetConfig,
    cfg: TrainConfig,
    out_dir: str | Path | None,
    event_callback: EventCallback | None,
    threads: int,
    deterministic: bool,
) -> Checkpoint:
    run_id = new_run_id()
    bind_context_vars(context=f"train.{kind}")

    graph = build_unet(unet_cfg, RngStream(seed=cfg.seed, stream_id=0))
    attach_loss(graph, graph.outputs[PREDICTION], norm, kind)
    adam = AdamState.zeros_like(graph.params)
    provenance = Provenance(
        config_sha256=config_digest(
            {
                "unet": unet_cfg.model_dump(mode="json"),
                "train": cfg.model_dump(mode="json"),
                "norm": list(norm),
                "loss": kind,
            }
        ),
        loss_kind=kind,
        recenter=cfg.recenter,
    )

    directory = Path(out_dir) if out_dir is not None else None
    log_path = None
    if directory is not None:
        directory.mkdir(parents=True, exist_ok=True)
        log_path = directory / TRAIN_LOG
        log_path.write_text("", encoding="utf-8")

    log.info(
        "train.started",
        run_id=run_id,
        loss=kind,
        epochs=cfg.epochs,
        batch_size=cfg.batch_size,
        patch_size=cfg.patch_size,
        parameters=graph.parameter_count,
    )
    start = perf_counter()
    step = 0
    best = float("inf")
    latest = Checkpoint.from_graph(graph, unet_cfg, norm, adam, provenance)

    for epoch in range(cfg.epochs):
        lr = cfg.lr_at(epoch)
        stream = batches(patch_source(epoch, norm), cfg.batch_size, kind)
        if threads > 1 and not deterministic:
            stream = prefetched(stream)
        losses: list[float] = []
        for batch_index, batch in enumerate(stream):
            out = graph.forward({INPUT: batch.inputs, TARGET: batch.targets}, [LOSS, PREDICTION])
            loss = float(out[LOSS])
            if not np.isfinite(loss):
                raise NonFiniteLossError(epoch, batch_index, _batch_stats(loss, out[PREDICTION], batch))
            grads, _ = clip_global_norm(graph.backward(LOSS), cfg.grad_norm_clip)
            adam_step(graph.params, grads, adam, lr)
            losses.append(loss)
            step += 1

        mean_loss = float(np.mean(losses)) if losses else float("nan")
        provenance.epoch = epoch
        provenance.step = step
        provenance.loss_history.append(mean_loss)
        provenance.lr_history.append(lr)
        latest = Checkpoint.from_graph(graph, unet_cfg, norm, adam, provenance)
        log.info("train.epoch.completed", epoch=epoch, step=step, lr=lr, loss=mean_loss)
        record = EpochCompleteEvent(data={"epoch": epoch, "step": step, "lr": lr, "loss": mean_loss})
        _emit(record, event_callback, log_path)

        if directory is not None:
            _save(latest, directory / LAST_CHECKPOINT, "last", event_callback)
            if mean_loss < best:
                best = mean_loss
                _save(latest, directory / BEST_CHECKPOINT, "best", event_callback)

    duration_ms = int((perf_counter() - start) * 1000)
    final_loss = provenance.loss_history[-1] if provenance.loss_history else None
    log.info("train.completed", epochs=cfg.epochs, steps=step, final_loss=final_loss, duration_ms=duration_ms)
    _emit(
        TrainingCompleteEvent(
            data={"epochs": cfg.epochs, "steps": step, "final_loss": final_loss, "duration_ms": duration_ms}
        ),
        event_callback,
        None,
    )
    return latest


def train(
    images: Sequence[ComplexImage],
    unet_cfg: UNetConfig,
    cfg: TrainConfig,
    *,
    norm: tuple[float, float] | None = None,
    out_dir: str | Path | None = None,
    event_callback: EventCallback | None = None,
    threads: int = 1,
    deterministic: bool = False,
) -> Checkpoint:
    """Train a residual U-Net on single-look complex images with the self-supervised loss.

    Args:
        images: Training corpus; every image must be at least one patch on each side.
        unet_cfg: Network topology.
        cfg: Training hyperparameters; the patch side must be divisible by 2^levels.
        norm: Frozen (m, M); computed from the corpus when absent.
        out_dir: When set, `last.mrln` and `best.mrln` are written every epoch together with
            the line-delimited JSON log `train_log.jsonl`.
        event_callback: Optional callback receiving training events.
        threads: Worker threads; more than one enables patch prefetching.
        deterministic: Run everything on the calling thread.

    Returns:
        The checkpoint after the last epoch.

    Raises:
        ConfigError: When the configs are inconsistent.
        NonFiniteLossError: When a batch loss is NaN or infinite.
    """
    _validated(unet_cfg, cfg)
    if not images:
        raise ConfigError("train", "training corpus is empty")
    for img in images:
        patch_origins(img.height, img.width, cfg.patch_size, cfg.effective_stride)
    norm = norm or compute_normalization(images)

    def source(epoch: int, frozen: tuple[float, float]) -> Iterator[PatchPair]:
        return corpus_patches(images, cfg, epoch, frozen)

    return _fit("merlin", source, norm, unet_cfg, cfg, out_dir, event_callback, threads, deterministic)


def train_supervised_baseline(
    pairs: Sequence[tuple[ComplexImage, ComplexImage]],
    unet_cfg: UNetConfig,
    cfg: TrainConfig,
    *,
    norm: tuple[float, float] | None = None,
    out_dir: str | Path | None = None,
    event_callback: EventCallback | None = None,
    threads: int = 1,
    deterministic: bool = False,
) -> Checkpoint:
    """Same loop with the intensity loss: input ǐ from one realization, target ǐ′ from an independent one."""
    _validated(unet_cfg, cfg)
    if not pairs:
        raise ConfigError("train", "training corpus is empty")
    for first, second in pairs:
        if first.shape != second.shape:
            raise ShapeMismatchError("train_supervised_baseline", expected=first.shape, found=second.shape)
        patch_origins(first.height, first.width, cfg.patch_size, cfg.effective_stride)
    norm = norm or compute_normalization([img for pair in pairs for img in pair])

    def source(epoch: int, frozen: tuple[float, float]) -> Iterator[PatchPair]:
        return realization_patches(pairs, cfg, epoch, frozen)

    return _fit("supervised", source, norm, unet_cfg, cfg, out_dir, event_callback, threads, deterministic)
