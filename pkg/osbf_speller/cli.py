from __future__ import annotations

import argparse
import json
import logging
import sys

from .acceptance import CRITERIA, run_acceptance
from .config import ConfigError, PipelineConfig, Settings, load_pipeline_config, load_settings
from .dataset import DatasetError
from .evaluation import METHODS, MetricError
from .linsvm import SolverError
from .pipeline import run_pipeline, write_synth
from .scoreopt import MODES, ScoreOptError
from .scoring import ScoringError

EXIT_CONFIG = 1
EXIT_DATA = 2
EXIT_NUMERIC = 3

_EXIT_CODES: tuple[tuple[tuple[type[BaseException], ...], int], ...] = (
    ((ConfigError,), EXIT_CONFIG),
    ((DatasetError, FileNotFoundError), EXIT_DATA),
    ((SolverError, ScoringError, ScoreOptError, MetricError), EXIT_NUMERIC),
)


def setup_logger(level: str) -> logging.Logger:
    logging.basicConfig(
        level=getattr(logging, level.upper(), logging.INFO),
        format="%(asctime)s | %(levelname)s | %(message)s",
    )
    return logging.getLogger("osbf-speller")


def exit_code_for(exc: BaseException) -> int | None:
    for kinds, code in _EXIT_CODES:
        if isinstance(exc, kinds):
            return code
    return None


def _fail(logger: logging.Logger, exc: BaseException, code: int) -> None:
    record = {"status": "error", "kind": type(exc).__name__, "message": str(exc), "exit_code": code}
    logger.error("%s: %s", type(exc).__name__, exc)
    print(json.dumps(record, sort_keys=True), file=sys.stderr)
    raise SystemExit(code) from exc


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="Pipeline config (JSON); defaults to OSBF_CONFIG or the built-in synthetic run")
    parser.add_argument("--out", help="Output directory (default OSBF_OUTPUT_DIR or results/)")
    parser.add_argument("--seed", type=int, help="Seed for synthetic data and the solver's coordinate order")
    parser.add_argument("--mode", choices=MODES, help="Restrict score optimization to one protocol")
    parser.add_argument(
        "--method",
        action="append",
        choices=METHODS,
        help="Decision method to evaluate; repeat for several (default: all)",
    )
    parser.add_argument("--jobs", type=int, help="Subjects processed in parallel")


def _load_config(args: argparse.Namespace, settings: Settings) -> PipelineConfig:
    return load_pipeline_config(
        args.config,
        settings,
        out=args.out,
        seed=args.seed,
        mode=args.mode,
        methods=args.method,
        jobs=args.jobs,
    )


def _selftest(args: argparse.Namespace, logger: logging.Logger) -> None:
    results = run_acceptance(only=args.criterion)
    for result in results:
        status = "PASS" if result.passed else "FAIL"
        print(f"{status}  {result.name:<26} {result.seconds:7.2f}s / {result.budget_seconds:.0f}s  {result.detail}")
    failed = [r.name for r in results if not r.passed]
    if args.json:
        print(json.dumps([r.to_dict() for r in results], indent=2))
    if failed:
        logger.error("Self-test failed: %s", ", ".join(failed))
        raise SystemExit(EXIT_NUMERIC)
    logger.info("Self-test passed: %d criteria", len(results))


def main() -> None:
    parser = argparse.ArgumentParser(description="Score-based ERP speller pipeline with optimized score profiles")
    sub = parser.add_subparsers(dest="command", required=True)

    synth_parser = sub.add_parser("synth", help="Write synthetic subjects as dataset files plus a config for them")
    train_parser = sub.add_parser("train", help="Train the configured hyperplanes and save them")
    optimize_parser = sub.add_parser("optimize-scores", help="Train, score and optimize score profiles")
    evaluate_parser = sub.add_parser("evaluate", help="Evaluate with hyperplanes saved by a previous train run")
    run_parser = sub.add_parser("run", help="Run the full pipeline end to end")
    for command in (synth_parser, train_parser, optimize_parser, evaluate_parser, run_parser):
        _add_common(command)
    evaluate_parser.add_argument(
        "--hyperplanes",
        required=True,
        help="Directory holding <subject>__<classifier>.txt files written by train",
    )

    selftest_parser = sub.add_parser("selftest", help="Run the built-in acceptance checks")
    selftest_parser.add_argument(
        "--criterion",
        action="append",
        choices=[name for name, _, _ in CRITERIA],
        help="Run only this criterion; repeat for several",
    )
    selftest_parser.add_argument("--json", action="store_true", help="Also print the results as JSON")

    args = parser.parse_args()
    try:
        settings = load_settings()
    except ConfigError as exc:
        _fail(logging.getLogger("osbf-speller"), exc, EXIT_CONFIG)
    logger = setup_logger(settings.log_level)

    try:
        if args.command == "selftest":
            _selftest(args, logger)
            return

        cfg = _load_config(args, settings)
        if args.command == "synth":
            files = write_synth(cfg, logger)
            logger.info("Synthetic config: %s", files[-1])
            return

        stage = {"train": "train", "optimize-scores": "optimize"}.get(args.command, "evaluate")
        hyperplane_dir = getattr(args, "hyperplanes", None)
        outcome = run_pipeline(cfg, logger, stage=stage, hyperplane_dir=hyperplane_dir)
        for report in outcome.reports:
            logger.info(
                "%s %s %s %s: accuracy=%.3f iters=%.2f ITR=%.2f bit/min",
                report.subject,
                report.classifier,
                report.method,
                report.mode,
                report.accuracy,
                report.mean_iterations,
                report.itr_bits_per_min,
            )
    except Exception as exc:
        code = exit_code_for(exc)
        if code is None:
            logger.exception("Unexpected failure in %s", args.command)
            code = EXIT_NUMERIC
        _fail(logger, exc, code)


if __name__ == "__main__":
    main()
