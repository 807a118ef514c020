"""Command-line entry point.

Exit codes: 0 completed, 2 configuration error, 3 threshold unmet (only
with ``--assert``, except ``calibrate`` and ``selftest`` which always use 3
for an infeasible sweep or a failed self-test).
"""

import argparse
import dataclasses
import json
import logging
import sys
from pathlib import Path

import numpy as np

from dpsubspace import harness, synth
from dpsubspace.errors import ConfigError, NoFeasiblePoint, SelfTestFailed

EXIT_OK, EXIT_CONFIG, EXIT_UNMET = 0, 2, 3

_SUBCOMMAND_ALGO = {"exact": "exact", "approx": "approx", "boost": "boosted"}


def _common(p):
    p.add_argument("--config", type=Path, help="JSON file with ExperimentConfig fields")
    p.add_argument("--trials", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--out", type=str)
    p.add_argument("--threads", type=int)
    p.add_argument("--assert", dest="check", action="store_true",
                   help="exit with status 3 when the acceptance threshold is not met")


def build_parser():
    parser = argparse.ArgumentParser(prog="dpsubspace", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in ("exact", "approx", "boost"):
        _common(sub.add_parser(name, help=f"run seeded trials of the {name} estimator"))
    p = sub.add_parser("audit", help="sensitivity audit on neighbouring datasets")
    _common(p)
    p.add_argument("--algorithm", choices=harness.ALGORITHMS, default=None)
    p.add_argument("--pairs", type=int, default=300)
    p.add_argument("--identical", action="store_true")
    p = sub.add_parser("calibrate", help="sweep the universal constants")
    _common(p)
    p.add_argument("--grid", type=Path, help="JSON object with lists for c0, c1, c2, c3")
    p.add_argument("--min-success", type=float, default=0.7)
    p.add_argument("--min-capture", type=float, default=0.8)
    p = sub.add_parser("selftest", help="statistical self-test of the Gaussian sampler")
    p.add_argument("--k", type=int, default=2)
    p.add_argument("--t-param", type=float, default=3.0)
    p.add_argument("--samples", type=int, default=100_000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", type=str)
    return parser


def load_config(args, algorithm=None):
    raw = {}
    if args.config is not None:
        try:
            raw = json.loads(args.config.read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {args.config}: {exc}") from exc
    for name in ("trials", "seed", "out", "threads"):
        value = getattr(args, name, None)
        if value is not None:
            raw[name] = value
    if algorithm is None and "algorithm" not in raw:
        algorithm = "exact"
    return harness.ExperimentConfig.from_dict(raw, algorithm)


def _emit(text, out):
    if out:
        Path(out).write_text(text)
    else:
        sys.stdout.write(text)


def cmd_trials(args):
    cfg = load_config(args, _SUBCOMMAND_ALGO[args.command])
    records, summary = harness.run_trials(cfg)
    if not cfg.out:
        sys.stdout.write(harness.format_trials_csv(records))
    print(summary.line())
    if args.check and not (summary.success_rate >= cfg.success_threshold):
        return EXIT_UNMET
    return EXIT_OK


def cmd_audit(args):
    cfg = load_config(args, args.algorithm)
    report = harness.sensitivity_audit(cfg, pairs=args.pairs, identical=args.identical)
    _emit(report.jsonl(), cfg.out)
    print(f"audit {cfg.algorithm}: max_deviation={report.max_deviation} "
          f"bound={report.bound} {'PASS' if report.passed else 'FAIL'}", file=sys.stderr)
    if args.check and not report.passed:
        return EXIT_UNMET
    return EXIT_OK


def cmd_calibrate(args):
    cfg = load_config(args, "approx")
    grid = None
    if args.grid is not None:
        try:
            grid = json.loads(args.grid.read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read grid {args.grid}: {exc}") from exc
    try:
        result = harness.calibrate_constants(
            cfg, grid, success_threshold=args.min_success, capture_threshold=args.min_capture)
    except NoFeasiblePoint as exc:
        print(f"calibrate: {exc}", file=sys.stderr)
        return EXIT_UNMET
    lines = [json.dumps(row) for row in result.table]
    lines.append(json.dumps({"best": result.best}))
    _emit("\n".join(lines) + "\n", cfg.out)
    print("best " + json.dumps(result.best), file=sys.stderr)
    return EXIT_OK


def cmd_selftest(args):
    rng = np.random.default_rng(args.seed)
    try:
        report = synth.sampler_self_test(args.k, args.t_param, args.samples, rng)
    except SelfTestFailed as exc:
        print(f"selftest FAIL: {exc}", file=sys.stderr)
        return EXIT_UNMET
    except ValueError as exc:
        print(f"selftest: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    _emit(json.dumps(dataclasses.asdict(report)) + "\n", args.out)
    return EXIT_OK


COMMANDS = {
    "exact": cmd_trials,
    "approx": cmd_trials,
    "boost": cmd_trials,
    "audit": cmd_audit,
    "calibrate": cmd_calibrate,
    "selftest": cmd_selftest,
}


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
