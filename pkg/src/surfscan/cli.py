"""Command line front end for the scanning scenarios.

Each subcommand runs a fixed bundle of scenario stages:

    localize     fiducial detection and plane fit only
    reconstruct  localize, then a depth-camera orbit and surface reconstruction
    scan         contact establishment plus a raster pass on the true surface
    pipeline     localize, reconstruct, then raster on the reconstructed chart
    report       print the summary report of a finished run

Run commands exit 0 when every report check passed and 1 otherwise; a
stage that fails outright keeps its partial artifacts in the output
directory and is flagged in the report.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .scenario import StageError, load_config, parse_config, run_scenario
from .schema import SchemaError

_COMMAND_STAGES = {
    "localize": ("localize",),
    "reconstruct": ("localize", "reconstruct"),
    "scan": ("contact", "raster"),
    "pipeline": ("localize", "reconstruct", "raster"),
}


def _seed(text: str) -> int:
    value = int(text)
    if value < 0:
        raise argparse.ArgumentTypeError("seed must be non-negative")
    return value


def _add_run_flags(p) -> None:
    p.add_argument("--config", metavar="FILE",
                   help="scenario config (YAML); built-in defaults when omitted")
    p.add_argument("--seed", type=_seed, metavar="N",
                   help="override the config seed")
    p.add_argument("--out", required=True, metavar="DIR",
                   help="output directory for logs, meshes and the report")
    p.add_argument("--stage-timeout", type=float, default=None, metavar="S",
                   help="abort any single stage that runs longer than S seconds")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="surfscan",
        description="Surface-following ultrasound scanning scenarios.")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, text in (
        ("localize", "fit the phantom plane from synthetic fiducials"),
        ("reconstruct", "localize, then reconstruct the surface from a depth orbit"),
        ("scan", "establish contact and raster-scan the ground-truth surface"),
        ("pipeline", "full run: localize, reconstruct, raster on the result"),
    ):
        _add_run_flags(sub.add_parser(name, help=text))
    rp = sub.add_parser("report", help="print the report of a finished run")
    rp.add_argument("--out", required=True, metavar="DIR",
                    help="output directory of the run to report on")
    return parser


def _run(args, stages) -> int:
    try:
        config = parse_config({}) if args.config is None else load_config(args.config)
    except (SchemaError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    try:
        result = run_scenario(config, args.out, stages=stages, seed=args.seed,
                              stage_timeout=args.stage_timeout)
    except StageError as exc:
        # partial artifacts stay in --out; the report marks the failed stage
        print(f"error: {exc}", file=sys.stderr)
        return 1
    sys.stdout.write(result.report_path.read_text())
    return 0 if result.passed else 1


def _report(args) -> int:
    path = Path(args.out) / "report.txt"
    if not path.is_file():
        print(f"error: no report at {path}", file=sys.stderr)
        return 2
    text = path.read_text()
    sys.stdout.write(text)
    return 0 if "overall: PASS" in text else 1


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "report":
        return _report(args)
    return _run(args, _COMMAND_STAGES[args.command])


if __name__ == "__main__":
    raise SystemExit(main())
