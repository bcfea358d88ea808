"""Command-line entry point: simulate, prep, train, despeckle, eval and check-h.

Every subcommand is a thin composition of library operations. JSON reports go
to stdout, logs to stderr. Exit codes: 0 success, 1 invalid input or
configuration, 2 runtime failure.
"""

import argparse
import json
import sys
from collections.abc import Callable, Sequence
from pathlib import Path
from typing import Any, NoReturn

from pydantic import ValidationError

from src import __version__
from src.checkpoint import MAGIC as CHECKPOINT_MAGIC
from src.checkpoint import load_checkpoint, save_checkpoint
from src.config import env_defaults, load_run_config, parse_transfer_spec
from src.despeckle import DEFAULT_MARGIN, DEFAULT_TILE, despeckle_image, despeckle_intensity
from src.evaluation import (
    check_transfer_independence,
    empirical_independence,
    evaluate_images,
    residual_ratio,
)
from src.exceptions import ConfigError, MerlinError
from src.logging import bind_context_vars, configure_structlog, get_logger, new_run_id
from src.models import ReflectivityImage, RngStream
from src.raster_io import (
    RFL_MAGIC,
    SLC_MAGIC,
    TNS_MAGIC,
    export_png,
    ingest_grayscale,
    load_reflectivity,
    load_slc,
    save_reflectivity,
    save_slc,
)
from src.speckle_sim import effective_reflectivity, intensity_of, simulate_slc
from src.spectrum_prep import prepare_image
from src.training import train, train_supervised_baseline

log = get_logger("src.cli")

EXIT_OK = 0
EXIT_INVALID = 1
EXIT_FAILURE = 2


class UsageError(Exception):
    """Raised by the argument parser instead of exiting."""


class _Parser(argparse.ArgumentParser):
    def error(self, message: str) -> NoReturn:
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: {message}")


# ============================================================================
# Helpers
# ============================================================================


def _emit(payload: dict[str, Any]) -> None:
    sys.stdout.write(json.dumps(payload, indent=2) + "\n")
    sys.stdout.flush()


def _load_scene(path: str, peak: float) -> ReflectivityImage:
    if Path(path).suffix.lower() == ".png":
        return ingest_grayscale(path, amplitude_peak=peak)
    return load_reflectivity(path)


def _region(value: str) -> tuple[int, int, int, int]:
    try:
        top, left, height, width = (int(part) for part in value.split(","))
    except ValueError as e:
        raise argparse.ArgumentTypeError(f"expected top,left,height,width, got '{value}'") from e
    return top, left, height, width


def _shape(value: str) -> tuple[int, int]:
    try:
        height, width = (int(part) for part in value.lower().split("x"))
    except ValueError as e:
        raise argparse.ArgumentTypeError(f"expected HxW, got '{value}'") from e
    return height, width


def _seed(args: argparse.Namespace) -> int:
    return 0 if args.seed is None else args.seed


def _threads(args: argparse.Namespace) -> int:
    return 1 if args.deterministic else args.threads


# ============================================================================
# Subcommands
# ============================================================================


def cmd_simulate(args: argparse.Namespace) -> int:
    scene = _load_scene(args.gt, args.peak)
    spec = parse_transfer_spec(args.h)
    slc = simulate_slc(scene, spec, RngStream(seed=_seed(args), stream_id=args.stream))
    save_slc(slc, args.out)
    if args.png:
        export_png(intensity_of(slc) ** 0.5, "amplitude_quantile", args.png)
    _emit({"out": args.out, "height": slc.height, "width": slc.width, "transfer_function": spec.kind})
    return EXIT_OK


def cmd_prep(args: argparse.Namespace) -> int:
    img = load_slc(args.input)
    prepared, reports = prepare_image(img, args.patch or min(img.shape))
    save_slc(prepared, args.out)
    payload = reports[0].model_dump() if len(reports) == 1 else {"patches": [r.model_dump() for r in reports]}
    if args.report:
        Path(args.report).write_text(json.dumps(payload, indent=2), encoding="utf-8")
    _emit(payload)
    return EXIT_OK


def cmd_train(args: argparse.Namespace) -> int:
    run = load_run_config(args.config)
    cfg = run.train if args.seed is None else run.train.model_copy(update={"seed": args.seed})
    files = sorted(Path(args.data).glob("*.slc"))
    if not files:
        raise ConfigError(args.data, "no .slc files found")
    images = [load_slc(path) for path in files]
    options: dict[str, Any] = {
        "norm": run.normalization,
        "out_dir": args.run_dir,
        "threads": _threads(args),
        "deterministic": args.deterministic,
    }
    if args.supervised:
        if len(images) % 2:
            raise ConfigError(args.data, "the supervised baseline needs an even number of realizations")
        pairs = list(zip(images[0::2], images[1::2]))
        ckpt = train_supervised_baseline(pairs, run.unet, cfg, **options)
    else:
        ckpt = train(images, run.unet, cfg, **options)
    save_checkpoint(ckpt, args.out)
    history = ckpt.provenance.loss_history
    _emit(
        {
            "checkpoint": args.out,
            "epochs": len(history),
            "steps": ckpt.provenance.step,
            "final_loss": history[-1] if history else None,
            "loss": ckpt.provenance.loss_kind,
        }
    )
    return EXIT_OK


def cmd_despeckle(args: argparse.Namespace) -> int:
    ckpt = load_checkpoint(args.ckpt)
    img = load_slc(args.input)
    if args.intensity_only:
        estimate = despeckle_intensity(
            ckpt,
            intensity_of(img),
            RngStream(seed=_seed(args)),
            subsample=args.subsample,
            tile=args.tile,
            margin=args.margin,
            threads=_threads(args),
        )
    else:
        estimate = despeckle_image(ckpt, img, args.tile, args.margin, threads=_threads(args), domain=args.domain)
    save_reflectivity(estimate, args.out)
    if args.png:
        export_png(estimate.values**0.5, "amplitude_quantile", args.png)
    _emit({"out": args.out, "height": estimate.height, "width": estimate.width})
    return EXIT_OK


def cmd_eval(args: argparse.Namespace) -> int:
    spec = parse_transfer_spec(args.spec) if args.spec else None
    scene = _load_scene(args.gt, args.peak)
    reference = effective_reflectivity(scene, spec) if spec is not None else scene
    noisy = load_slc(args.noisy)
    estimate = load_reflectivity(args.est)
    report = evaluate_images(
        reference, noisy, estimate, regions=args.region, spec=spec, draws=args.draws, seed=_seed(args)
    )
    if args.residual_png:
        export_png(residual_ratio(intensity_of(noisy), estimate), "log", args.residual_png)
    _emit(report.model_dump(mode="json", exclude={"scenes"}))
    return EXIT_OK


def cmd_check_h(args: argparse.Namespace) -> int:
    spec = parse_transfer_spec(args.spec)
    analytic = check_transfer_independence(spec, shape=args.shape)
    empirical = empirical_independence(spec, draws=args.draws, seed=_seed(args), shape=args.shape)
    _emit(
        {
            "verdict": analytic.verdict,
            "analytic": analytic.model_dump(),
            "empirical": empirical.model_dump(),
            "agree": analytic.verdict == empirical.verdict,
        }
    )
    return EXIT_OK


# ============================================================================
# Parser
# ============================================================================


def build_parser() -> argparse.ArgumentParser:
    defaults = env_defaults()
    common = _Parser(add_help=False)
    common.add_argument("--seed", type=int, help="Root seed of every random stream (train: overrides the config)")
    common.add_argument("--threads", type=int, default=defaults.threads, help="Worker threads (env MERLIN_THREADS)")
    common.add_argument(
        "--deterministic",
        action="store_true",
        default=defaults.deterministic,
        help="Single-threaded, bit-reproducible run (env MERLIN_DETERMINISTIC)",
    )
    common.add_argument("--log-json", action="store_true", help="Emit JSON log lines on stderr")

    parser = _Parser(prog="merlin", description="Self-supervised SAR despeckling toolkit")
    parser.add_argument("--version", action="store_true", help="Print version and supported container formats")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    simulate = sub.add_parser("simulate", parents=[common], help="Simulate an SLC from a ground-truth scene")
    simulate.add_argument("--gt", required=True, help="Ground truth: 8-bit grayscale PNG or .rfl container")
    simulate.add_argument("--h", default="identity", help="'identity' or a transfer function JSON file")
    simulate.add_argument("--peak", type=float, default=255.0, help="Amplitude of PNG level 255")
    simulate.add_argument("--stream", type=int, default=0, help="Random stream id under --seed")
    simulate.add_argument("--out", required=True)
    simulate.add_argument("--png", help="Optional amplitude preview")
    simulate.set_defaults(handler=cmd_simulate)

    prep = sub.add_parser("prep", parents=[common], help="Recenter and symmetrically mask SLC spectra")
    prep.add_argument("--in", dest="input", required=True)
    prep.add_argument("--out", required=True)
    prep.add_argument("--report", help="Also write the JSON report to this file")
    prep.add_argument("--patch", type=int, help="Patch side; defaults to the image height")
    prep.set_defaults(handler=cmd_prep)

    training = sub.add_parser("train", parents=[common], help="Train a despeckling network")
    training.add_argument("--config", required=True, help="Run configuration JSON")
    training.add_argument("--data", required=True, help="Directory of .slc training images")
    training.add_argument("--out", required=True, help="Checkpoint written after the last epoch")
    training.add_argument("--run-dir", help="Directory for last/best checkpoints and train_log.jsonl")
    training.add_argument("--supervised", action="store_true", help="Intensity baseline on consecutive file pairs")
    training.set_defaults(handler=cmd_train)

    despeckle = sub.add_parser("despeckle", parents=[common], help="Despeckle an SLC image")
    despeckle.add_argument("--ckpt", required=True)
    despeckle.add_argument("--in", dest="input", required=True)
    despeckle.add_argument("--out", required=True)
    despeckle.add_argument("--tile", type=int, default=DEFAULT_TILE)
    despeckle.add_argument("--margin", type=int, default=DEFAULT_MARGIN)
    despeckle.add_argument("--domain", choices=["linear", "log"], default="linear", help="Fusion of the two branches")
    despeckle.add_argument("--intensity-only", action="store_true", help="Discard the phase and draw a random one")
    despeckle.add_argument("--subsample", action="store_true", help="Decimate by two before intensity-only inference")
    despeckle.add_argument("--png", help="Optional amplitude preview")
    despeckle.set_defaults(handler=cmd_despeckle)

    evaluate = sub.add_parser("eval", parents=[common], help="Score a despeckled estimate")
    evaluate.add_argument("--gt", required=True, help="Ground truth: PNG or .rfl")
    evaluate.add_argument("--peak", type=float, default=255.0, help="Amplitude of PNG level 255")
    evaluate.add_argument("--noisy", required=True, help="Noisy .slc the estimate was computed from")
    evaluate.add_argument("--est", required=True, help="Despeckled .rfl")
    evaluate.add_argument("--spec", help="Transfer function of the noisy image, for r̃ and independence checks")
    evaluate.add_argument("--draws", type=int, default=100_000)
    evaluate.add_argument("--region", type=_region, action="append", default=[], help="ENL box top,left,h,w")
    evaluate.add_argument("--residual-png", help="Optional residual ratio preview")
    evaluate.set_defaults(handler=cmd_eval)

    check = sub.add_parser("check-h", parents=[common], help="Real/imaginary independence under a transfer function")
    check.add_argument("--spec", required=True, help="'identity' or a transfer function JSON file")
    check.add_argument("--draws", type=int, default=100_000)
    check.add_argument("--shape", type=_shape, default=(64, 64), help="Grid HxW")
    check.set_defaults(handler=cmd_check_h)
    return parser


def _version() -> str:
    magics = " ".join(magic.decode("ascii") for magic in (SLC_MAGIC, RFL_MAGIC, TNS_MAGIC, CHECKPOINT_MAGIC))
    return f"merlin-despeckle {__version__}\nformats: {magics}\n"


def run(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as e:
        sys.stderr.write(f"{e}\n")
        return EXIT_INVALID
    except SystemExit as e:  # --help
        return int(e.code or 0)

    if args.version:
        sys.stdout.write(_version())
        return EXIT_OK
    if args.command is None:
        parser.print_usage(sys.stderr)
        return EXIT_INVALID

    configure_structlog(testing=not args.log_json)
    new_run_id()
    bind_context_vars(context=f"cli.{args.command}")
    handler: Callable[[argparse.Namespace], int] = args.handler
    try:
        return handler(args)
    except (ConfigError, ValidationError, ValueError) as e:
        log.error("cli.command.failed", command=args.command, error_type=type(e).__name__, error=str(e))
        return EXIT_INVALID
    except (MerlinError, OSError) as e:
        log.error("cli.command.failed", command=args.command, error_type=type(e).__name__, error=str(e))
        return EXIT_FAILURE


def main() -> None:
    sys.exit(run())
