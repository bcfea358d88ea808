"""Desk-scale reproduction: simulate a corpus, train MERLIN and the supervised baseline, score held-out scenes."""

import json
import sys
from datetime import datetime
from pathlib import Path
from time import perf_counter
from typing import Any

from dotenv import load_dotenv

from research.evaluation_dataset import SceneSplit, independent_pairs, realizations, scenes_for
from src.evaluation import evaluate_checkpoint
from src.logging import bind_context_vars, configure_structlog, get_logger, new_run_id
from src.models import EvalReport, TrainConfig, UNetConfig
from src.training import train, train_supervised_baseline

load_dotenv()

configure_structlog(testing=True)
log = get_logger("research.reproduction")

REALIZATIONS_PER_SCENE = 5
EVAL_INSTANCES = 20
DESK_SCHEDULE = [(0, 1e-3), (20, 3e-4), (30, 1e-4)]


def desk_config(seed: int = 0) -> TrainConfig:
    return TrainConfig.desk(batch_size=12, epochs=36, lr_schedule=DESK_SCHEDULE, seed=seed)


def run_reproduction(seed: int = 0, out_dir: Path | None = None) -> dict[str, Any]:
    """Train both networks on the same scenes and evaluate them on held-out ones.

    Args:
        seed: Root seed for speckle draws, initialization and patch order.
        out_dir: Where checkpoints and training logs go; nothing is written when absent.

    Returns:
        Evaluation reports keyed by "merlin", "merlin_intensity_only" and "supervised".
    """
    run_id = new_run_id()
    bind_context_vars(context="reproduction")
    start = perf_counter()
    unet_cfg = UNetConfig()
    cfg = desk_config(seed)

    print(f"Starting desk reproduction (run {run_id}, seed {seed})\n")
    print("Phase 1: Simulating training corpus...")
    train_scenes = scenes_for(SceneSplit.TRAIN)
    corpus = realizations(train_scenes, REALIZATIONS_PER_SCENE, seed)
    pairs = independent_pairs(train_scenes, REALIZATIONS_PER_SCENE, seed + 1)
    print(f"  {len(train_scenes)} scenes, {len(corpus)} single-look images\n")

    print("Phase 2: Training with the real/imaginary split...")
    merlin = train(corpus, unet_cfg, cfg, out_dir=out_dir / "merlin" if out_dir else None)
    print(f"  {merlin.provenance.step} steps, final loss {merlin.provenance.loss_history[-1]:.4g}\n")

    print("Phase 3: Training the supervised intensity baseline...")
    supervised = train_supervised_baseline(
        pairs, unet_cfg, cfg, norm=merlin.norm, out_dir=out_dir / "supervised" if out_dir else None
    )
    print(f"  {supervised.provenance.step} steps, final loss {supervised.provenance.loss_history[-1]:.4g}\n")

    print("Phase 4: Evaluating on held-out scenes...")
    test_scenes = scenes_for(SceneSplit.TEST)
    reports: dict[str, EvalReport] = {
        "merlin": evaluate_checkpoint(merlin, test_scenes, EVAL_INSTANCES, seed + 100),
        "merlin_intensity_only": evaluate_checkpoint(
            merlin, test_scenes, EVAL_INSTANCES, seed + 100, intensity_only=True
        ),
        "supervised": evaluate_checkpoint(supervised, test_scenes, EVAL_INSTANCES, seed + 100),
    }
    for name, report in reports.items():
        gain = report.psnr_db - report.noisy_psnr_db
        print(f"  {name}: {report.psnr_db:.2f} ± {report.psnr_sigma:.2f} dB (gain {gain:+.2f} dB)")

    duration_ms = int((perf_counter() - start) * 1000)
    log.info("reproduction.completed", duration_ms=duration_ms)
    return {name: report.model_dump(mode="json") for name, report in reports.items()}


def _format_table(results: dict[str, Any]) -> str:
    """PSNR table: one row per scene, one column pair per method."""
    methods = list(results)
    lines = [
        "| scene | noisy | " + " | ".join(methods) + " |",
        "|---" * (len(methods) + 2) + "|",
    ]
    rows = results[methods[0]]["scenes"]
    for index, row in enumerate(rows):
        cells = [f"{row['noisy_psnr_db']:.2f} ± {row['noisy_psnr_sigma']:.2f}"]
        for method in methods:
            scene = results[method]["scenes"][index]
            cells.append(f"{scene['psnr_db']:.2f} ± {scene['psnr_sigma']:.2f}")
        lines.append(f"| {row['scene']} | " + " | ".join(cells) + " |")
    averages = [f"{results[methods[0]]['noisy_psnr_db']:.2f}"]
    averages += [f"{results[method]['psnr_db']:.2f}" for method in methods]
    lines.append("| average | " + " | ".join(averages) + " |")
    return "\n".join(lines) + "\n"


def main() -> None:
    seed = int(sys.argv[1]) if len(sys.argv) > 1 else 0
    outputs_dir = Path(__file__).parent / "outputs"
    timestamp = datetime.now().strftime("%Y-%m-%d_%H-%M-%S")
    run_dir = outputs_dir / f"reproduction_{timestamp}"

    try:
        results = run_reproduction(seed, run_dir)
    except Exception as e:
        log.exception("reproduction.main.failed", error=str(e))
        print(f"\n❌ Reproduction failed: {e}")
        sys.exit(1)

    try:
        run_dir.mkdir(parents=True, exist_ok=True)
        (run_dir / "results.json").write_text(json.dumps(results, indent=2))
        (run_dir / "psnr_table.md").write_text(_format_table(results))
        log.info("reproduction.output.saved", path=str(run_dir))
        print(f"\n✅ Results saved to: {run_dir}")
    except OSError as e:
        log.exception("reproduction.output.failed", error=str(e))
        print(f"❌ Failed to save outputs: {e}")
        sys.exit(1)


if __name__ == "__main__":
    main()
