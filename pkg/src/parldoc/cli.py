"""Command-line entry point: ``parldoc run-all|ocr|label|postprocess|link|evaluate``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .config import ConfigError, load_config
from .evaluation import run_benchmark
from .inference import FixtureBackend, HttpBackend
from .ingest import ManifestError, load_session_manifest
from .pipeline import STAGES, MissingInput, Pipeline

log = logging.getLogger("parldoc")

EXIT_OK, EXIT_FAILED, EXIT_USAGE, EXIT_NO_DATA = 0, 1, 2, 3


def _setup_logging(verbose: bool) -> None:
    logging.basicConfig(
        level=logging.DEBUG if verbose else logging.WARNING,
        format="%(asctime)s %(levelname)s %(name)s %(message)s" if verbose else "%(levelname)s: %(message)s",
        stream=sys.stderr,
    )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="parldoc", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    def pipeline_args(p: argparse.ArgumentParser) -> None:
        p.add_argument("--manifest", type=Path, required=True, help="JSON array of session records")
        p.add_argument("--out", type=Path, required=True, help="output directory (also holds checkpoints)")
        p.add_argument("--config", type=Path, help="pipeline configuration JSON")
        p.add_argument("--mock-fixtures", type=Path, help="replay inference responses from this directory")
        p.add_argument("--verbose", action="store_true")

    pipeline_args(sub.add_parser("run-all", help="run every stage for every session"))
    for stage, text in (("ocr", "rasterize pages and transcribe them"),
                        ("label", "segment and label transcribed pages"),
                        ("postprocess", "merge pages into one document-level sequence"),
                        ("link", "link speakers to knowledge-base entities and write outputs")):
        pipeline_args(sub.add_parser(stage, help=text))

    ev = sub.add_parser("evaluate", help="score pipeline outputs against a benchmark")
    ev.add_argument("--benchmark", type=Path, required=True)
    ev.add_argument("--outputs", type=Path, required=True)
    ev.add_argument("--report", type=Path, required=True, help="JSON report path; a .txt table is written beside it")
    ev.add_argument("--verbose", action="store_true")
    return parser


def _cmd_pipeline(args: argparse.Namespace, stage: str | None) -> int:
    try:
        cfg = load_config(args.config)
        sessions = load_session_manifest(args.manifest)
    except (ConfigError, ManifestError, OSError) as exc:
        print(f"parldoc: {exc}", file=sys.stderr)
        return EXIT_USAGE
    backend = FixtureBackend(args.mock_fixtures) if args.mock_fixtures else HttpBackend()
    pipeline = Pipeline(cfg, backend, args.out, base_dir=args.manifest.parent)
    try:
        failures = pipeline.run_many(sessions, stage)
    except MissingInput as exc:
        print(f"parldoc: {exc}", file=sys.stderr)
        return EXIT_USAGE
    for session, exc in failures:
        print(f"parldoc: session {session.session_id} failed: {exc}", file=sys.stderr)
    return EXIT_FAILED if failures else EXIT_OK


def _cmd_evaluate(args: argparse.Namespace) -> int:
    if not args.benchmark.is_dir():
        print(f"parldoc: benchmark directory not found: {args.benchmark}", file=sys.stderr)
        return EXIT_USAGE
    report = run_benchmark(args.benchmark, args.outputs)
    args.report.parent.mkdir(parents=True, exist_ok=True)
    args.report.write_text(json.dumps(report.to_dict(), indent=2) + "\n", encoding="utf-8")
    table = report.to_table()
    args.report.with_suffix(".txt").write_text(table, encoding="utf-8")
    sys.stdout.write(table)
    return EXIT_OK if report.pages else EXIT_NO_DATA


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    _setup_logging(args.verbose)
    if args.command == "evaluate":
        return _cmd_evaluate(args)
    stage = None if args.command == "run-all" else args.command
    assert stage is None or stage in STAGES
    return _cmd_pipeline(args, stage)


if __name__ == "__main__":
    sys.exit(main())
