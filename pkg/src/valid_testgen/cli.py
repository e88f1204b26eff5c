from __future__ import annotations

import argparse
import os
import sys
from dataclasses import asdict, is_dataclass
from pathlib import Path

from dotenv import load_dotenv

from . import pipeline
from .errors import ConfigError, DegenerateCalibrationError, NumericError, SafetyViolation, TrainingError, ValidTestgenError
from .nn import dump_document
from .tools import get_logger, setup_logger

LOGGER = get_logger(__name__)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_RUNTIME = 2

RUNTIME_ERRORS = (NumericError, TrainingError, DegenerateCalibrationError, SafetyViolation)


class _Parser(argparse.ArgumentParser):
    def error(self, message: str) -> None:  # type: ignore[override]
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _parse_args(argv: list[str] | None = None) -> argparse.Namespace:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="Experiment config (JSON)")
    common.add_argument("--out", type=Path, help="Output directory (defaults to the config's output_dir)")
    common.add_argument("--seed", type=int, help="Override the master seed")

    parser = _Parser(prog="valid-testgen", description="Valid test input generation for DNNs guided by a VAE.")
    commands = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    commands.add_parser("train", parents=[common], help="Train the classifiers under test")
    commands.add_parser("train-vae", parents=[common], help="Train the validity VAE")
    commands.add_parser("profile", parents=[common], help="Record per-neuron activation ranges")
    commands.add_parser("calibrate", parents=[common], help="Calibrate the reconstruction probability threshold")

    generate = commands.add_parser("generate", parents=[common], help="Generate a differential test suite")
    generate.add_argument("--mode", choices=("baseline", "vae"), default="vae")
    generate.add_argument("--tune-lambda", action="store_true", help="Sweep the density weight before generating")

    validate = commands.add_parser("validate", parents=[common], help="Count valid/invalid inputs")
    validate.add_argument("--suite", type=Path)
    validate.add_argument("--images", type=Path)
    validate.add_argument("--labels", type=Path)

    coverage = commands.add_parser("coverage", parents=[common], help="Coverage of a suite file")
    coverage.add_argument("--suite", type=Path, required=True)
    coverage.add_argument("--model")

    commands.add_parser("report", parents=[common], help="Valid/invalid/total coverage report")
    return parser.parse_args(argv)


def _run(args: argparse.Namespace) -> object:
    if args.seed is not None and args.seed < 0:
        raise ConfigError("Seed must be non-negative", field="--seed")
    cfg = pipeline.load_config(args.config, args.seed)
    out = args.out or Path(cfg.output_dir)
    command = args.command
    if command == "train":
        return pipeline.cmd_train(cfg, out)
    if command == "train-vae":
        return pipeline.cmd_train_vae(cfg, out)
    if command == "profile":
        return pipeline.cmd_profile(cfg, out)
    if command == "calibrate":
        return pipeline.cmd_calibrate(cfg, out)
    if command == "generate":
        return pipeline.cmd_generate(cfg, out, args.mode, tune=args.tune_lambda)
    if command == "validate":
        return pipeline.cmd_validate(cfg, out, suite=args.suite, images=args.images, labels=args.labels)
    if command == "coverage":
        return pipeline.cmd_coverage(cfg, out, args.suite, model=args.model)
    return pipeline.cmd_report(cfg, out)


def _as_payload(result: object) -> dict:
    if hasattr(result, "model_dump"):
        return result.model_dump()
    if is_dataclass(result):
        return asdict(result)
    return result  # type: ignore[return-value]


def exit_code(exc: ValidTestgenError) -> int:
    if isinstance(exc, RUNTIME_ERRORS):
        return EXIT_RUNTIME
    return EXIT_USAGE


def main(argv: list[str] | None = None) -> int:
    load_dotenv()
    setup_logger(level=os.getenv("LOG_LEVEL", "INFO"))
    args = _parse_args(argv)
    try:
        result = _run(args)
    except ValidTestgenError as exc:
        LOGGER.error(
            f"{args.command} failed",
            stage=args.command,
            error_type=type(exc).__name__,
            error_details=str(exc),
        )
        print(f"valid-testgen {args.command}: {exc}", file=sys.stderr)
        return exit_code(exc)
    print(dump_document(_as_payload(result)).decode("utf-8"))
    return EXIT_OK


def entrypoint() -> None:
    raise SystemExit(main())


if __name__ == "__main__":
    entrypoint()
