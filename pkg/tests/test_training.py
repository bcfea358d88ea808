"""Tests for patch sampling, batching and the training loops."""

import json
import threading
from pathlib import Path

import numpy as np
import pytest
from pytest import MonkeyPatch

from src.autodiff import KERNELS
from src.events import CheckpointSavedEvent, EpochCompleteEvent, TrainingCompleteEvent, TrainingEvent
from src.exceptions import ConfigError, NonFiniteLossError, ShapeMismatchError
from src.models import ComplexImage, ReflectivityImage, RngStream, TrainConfig, TransferFunctionSpec, UNetConfig
from src.speckle_sim import simulate_slc
from src.training import (
    BEST_CHECKPOINT,
    LAST_CHECKPOINT,
    PREFETCH_THREAD,
    TRAIN_LOG,
    _epoch_plan,
    batches,
    corpus_patches,
    patch_origins,
    prefetched,
    sample_patches,
    train,
    train_supervised_baseline,
)
from src.unet import build_unet

TINY = UNetConfig(levels=1, base_channels=2)


def small_cfg(**overrides: object) -> TrainConfig:
    values: dict[str, object] = {"patch_size": 16, "stride": 16, "batch_size": 4, "epochs": 2, "seed": 0}
    values.update(overrides)
    return TrainConfig.desk(**values)


def speckled(count: int, side: int = 32, seed: int = 0) -> list[ComplexImage]:
    ramp = np.linspace(20.0, 200.0, side)
    scene = ReflectivityImage(values=np.tile(ramp, (side, 1)))
    identity = TransferFunctionSpec.identity()
    return [simulate_slc(scene, identity, RngStream(seed=seed, stream_id=k)) for k in range(count)]


class TestPatchSampling:
    """Tests for patch origins, shuffling and swapping."""

    @pytest.mark.parametrize("side,patch,stride,expected", [(256, 256, 256, 1), (512, 256, 128, 9), (32, 16, 8, 9)])
    def test__origins__tile_at_stride(self, side: int, patch: int, stride: int, expected: int) -> None:
        assert len(patch_origins(side, side, patch, stride)) == expected

    def test__image_smaller_than_patch__raises(self) -> None:
        with pytest.raises(ShapeMismatchError):
            patch_origins(8, 32, 16, 8)

    def test__swap_direction__is_balanced(self) -> None:
        plan = _epoch_plan([(100, 100)], TrainConfig(patch_size=1, stride=1), epoch=0)
        assert len(plan) == 10_000
        assert np.mean([swapped for *_, swapped in plan]) == pytest.approx(0.5, abs=0.02)

    def test__plan__depends_on_epoch_and_seed(self) -> None:
        cfg = small_cfg()
        assert _epoch_plan([(64, 64)], cfg, 0) == _epoch_plan([(64, 64)], cfg, 0)
        assert _epoch_plan([(64, 64)], cfg, 0) != _epoch_plan([(64, 64)], cfg, 1)

    def test__pair__assigns_parts_by_swap(self) -> None:
        img = speckled(1, side=16)[0]
        norm = (-12.0, 8.0)
        for epoch in range(6):
            (pair,) = list(corpus_patches([img], small_cfg(), epoch, norm))
            source, target = (img.im, img.re) if pair.swapped else (img.re, img.im)
            expected_input = np.log(np.maximum(source.astype(np.float64) ** 2, 1e-10))
            expected_target = np.log(np.maximum(target.astype(np.float64) ** 2, 1e-10))
            np.testing.assert_allclose(pair.input.denormalized_log(), expected_input, atol=1e-5)
            np.testing.assert_allclose(pair.target.denormalized_log(), expected_target, atol=1e-5)

    def test__single_image__yields_one_pair_per_origin(self) -> None:
        img = speckled(1, side=32)[0]
        pairs = list(sample_patches(img, small_cfg(stride=8), 0, (-12.0, 8.0)))
        assert len(pairs) == 9
        assert all(pair.input.shape == (16, 16) for pair in pairs)

    def test__recentered_patches__are_finite(self) -> None:
        img = speckled(1, side=32)[0]
        for pair in sample_patches(img, small_cfg(recenter=True), 0, (-30.0, 12.0)):
            assert np.all(np.isfinite(pair.input.values))
            assert np.all(np.isfinite(pair.target.values))


class TestBatching:
    """Tests for batches and prefetched."""

    def test__last_batch__may_be_short(self) -> None:
        patches = corpus_patches(speckled(1), small_cfg(), 0, (-12.0, 8.0))
        sizes = [len(batch.inputs) for batch in batches(patches, 3, "merlin")]
        assert sizes == [3, 1]

    def test__merlin_target__is_log_magnitude(self) -> None:
        patches = list(corpus_patches(speckled(1), small_cfg(), 0, (-12.0, 8.0)))
        (batch,) = list(batches(iter(patches), 4, "merlin"))
        np.testing.assert_allclose(batch.targets[0, 0], 0.5 * patches[0].target.denormalized_log())
        assert batch.inputs.dtype == np.float32

    def test__prefetch__preserves_order(self) -> None:
        patches = list(corpus_patches(speckled(2), small_cfg(), 0, (-12.0, 8.0)))
        direct = list(batches(iter(patches), 2, "merlin"))
        fetched = list(prefetched(batches(iter(patches), 2, "merlin"), depth=1))
        assert len(fetched) == len(direct)
        for a, b in zip(direct, fetched):
            np.testing.assert_array_equal(a.inputs, b.inputs)

    def test__early_close__stops_producer_thread(self) -> None:
        stream = prefetched(iter([1, 2]), depth=1)  # type: ignore[arg-type]

        assert next(stream) == 1
        stream.close()

        assert not any(t.name == PREFETCH_THREAD and t.is_alive() for t in threading.enumerate())

    def test__prefetch__reraises_producer_errors(self) -> None:
        def failing():  # type: ignore[no-untyped-def]
            yield from batches(corpus_patches(speckled(1), small_cfg(), 0, (-12.0, 8.0)), 1, "merlin")
            raise RuntimeError("disk gone")

        with pytest.raises(RuntimeError, match="disk gone"):
            list(prefetched(failing()))


class TestTrain:
    """Tests for the self-supervised training loop."""

    def test__run__records_history_and_events(self, tmp_path: Path) -> None:
        events: list[TrainingEvent] = []
        cfg = small_cfg(lr_schedule=[(0, 1e-3), (1, 1e-4)])

        ckpt = train(speckled(2), TINY, cfg, out_dir=tmp_path, event_callback=events.append)

        assert ckpt.provenance.epoch == 1
        assert ckpt.provenance.step == 4
        assert ckpt.provenance.lr_history == [1e-3, 1e-4]
        assert ckpt.provenance.loss_kind == "merlin"
        assert len(ckpt.provenance.loss_history) == 2
        assert sum(isinstance(e, EpochCompleteEvent) for e in events) == 2
        assert sum(isinstance(e, TrainingCompleteEvent) for e in events) == 1
        assert {e.data["role"] for e in events if isinstance(e, CheckpointSavedEvent)} >= {"last", "best"}
        assert (tmp_path / LAST_CHECKPOINT).exists()
        assert (tmp_path / BEST_CHECKPOINT).exists()

    def test__train_log__is_line_delimited_json(self, tmp_path: Path) -> None:
        train(speckled(2), TINY, small_cfg(), out_dir=tmp_path)

        records = [json.loads(line) for line in (tmp_path / TRAIN_LOG).read_text().splitlines()]

        assert [record["epoch"] for record in records] == [0, 1]
        assert set(records[0]) == {"epoch", "step", "lr", "loss"}

    def test__same_seed__is_bit_reproducible(self) -> None:
        a = train(speckled(2), TINY, small_cfg(), deterministic=True)
        b = train(speckled(2), TINY, small_cfg(), deterministic=True)
        assert a.provenance.loss_history == b.provenance.loss_history
        for name in a.params:
            assert a.params[name].tobytes() == b.params[name].tobytes()

    def test__prefetching__matches_single_thread(self) -> None:
        a = train(speckled(2), TINY, small_cfg(), threads=1)
        b = train(speckled(2), TINY, small_cfg(), threads=3)
        assert a.provenance.loss_history == b.provenance.loss_history

    def test__zero_epochs__returns_initialization(self) -> None:
        ckpt = train(speckled(1), TINY, small_cfg(epochs=0))
        init = build_unet(TINY, RngStream(seed=0, stream_id=0))
        assert ckpt.provenance.step == 0
        for name, value in init.params.items():
            np.testing.assert_array_equal(ckpt.params[name], value)

    def test__recenter__is_recorded(self) -> None:
        assert train(speckled(1), TINY, small_cfg(epochs=1, recenter=True)).provenance.recenter is True

    def test__frozen_norm__is_kept(self) -> None:
        assert train(speckled(1), TINY, small_cfg(epochs=1), norm=(-9.0, 9.0)).norm == (-9.0, 9.0)

    def test__non_finite_loss__aborts(self, monkeypatch: MonkeyPatch) -> None:
        def poisoned(x, axes=None):  # type: ignore[no-untyped-def]
            return np.asarray(np.nan, dtype=x.dtype), lambda grad: (np.zeros_like(x),)

        monkeypatch.setitem(KERNELS, "reduce_mean", poisoned)

        with pytest.raises(NonFiniteLossError) as info:
            train(speckled(1), TINY, small_cfg())
        assert (info.value.epoch, info.value.batch) == (0, 0)
        assert "prediction_max" in info.value.stats

    def test__indivisible_patch__raises_config_error(self) -> None:
        with pytest.raises(ConfigError, match="not divisible"):
            train(speckled(1), UNetConfig(levels=3, base_channels=2), small_cfg(patch_size=20, stride=20))

    def test__empty_corpus__raises_config_error(self) -> None:
        with pytest.raises(ConfigError, match="empty"):
            train([], TINY, small_cfg())

    def test__small_image__raises(self) -> None:
        with pytest.raises(ShapeMismatchError):
            train(speckled(1, side=8), TINY, small_cfg())


class TestTrainSupervisedBaseline:
    """Tests for the supervised intensity baseline."""

    def test__run__is_marked_supervised(self) -> None:
        first, second = speckled(2)
        ckpt = train_supervised_baseline([(first, second)], TINY, small_cfg(epochs=1))
        assert ckpt.provenance.loss_kind == "supervised"
        assert ckpt.provenance.step == 1

    def test__mismatched_pair__raises(self) -> None:
        (first,) = speckled(1, side=32)
        (second,) = speckled(1, side=48)
        with pytest.raises(ShapeMismatchError):
            train_supervised_baseline([(first, second)], TINY, small_cfg())


@pytest.mark.slow
class TestDeskReproduction:
    """Desk-scale training on the synthetic scenes, scored on held-out ones."""

    def test__merlin__despeckles_and_tracks_baselines(self) -> None:
        from research.run_reproduction import run_reproduction

        results = run_reproduction(seed=0)
        merlin, supervised = results["merlin"], results["supervised"]

        assert merlin["psnr_db"] - merlin["noisy_psnr_db"] >= 5.0
        assert supervised["psnr_db"] - supervised["noisy_psnr_db"] >= 5.0
        assert supervised["psnr_db"] <= merlin["psnr_db"] + 2.0
        assert abs(results["merlin_intensity_only"]["psnr_db"] - merlin["psnr_db"]) <= 0.3
