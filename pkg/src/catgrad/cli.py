"""``catgrad`` command line: run experiments from presets or config files."""
from __future__ import annotations

import argparse
import logging
import sys

from .harness.config import DEFAULT_PRESET, FORMATS, PRESETS, load_config, preset
from .harness.reports import RunReport
from .harness.runner import run_experiment
from .selftest import SUITES, run_selftest

log = logging.getLogger("catgrad")

RUN_COMMANDS = ("bench-exact", "opt-synth", "dvae", "nesy")
EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2


def _positive_int(text: str) -> int:
    try:
        v = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected an integer, got {text!r}") from None
    if v < 0:
        raise argparse.ArgumentTypeError("must be non-negative")
    return v


def _name_list(text: str) -> list:
    names = [s.strip() for s in text.split(",") if s.strip()]
    if not names:
        raise argparse.ArgumentTypeError("empty estimator list")
    return names


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="catgrad", description="Gradient estimators for categorical expectations.")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND")
    for name in RUN_COMMANDS:
        p = sub.add_parser(name, help=f"run the {name} experiment")
        src = p.add_mutually_exclusive_group()
        src.add_argument("--config", help="INI config file")
        src.add_argument("--preset", choices=sorted(PRESETS),
                         help=f"named preset (default {DEFAULT_PRESET[name]})")
        p.add_argument("--seed", type=_positive_int)
        p.add_argument("--iters", type=_positive_int, help="iterations, trials or epochs")
        p.add_argument("--out", help="write the report here")
        p.add_argument("--format", choices=FORMATS)
        p.add_argument("--estimators", type=_name_list, help="comma-separated arm names")
        verb = p.add_mutually_exclusive_group()
        verb.add_argument("-v", "--verbose", action="store_true")
        verb.add_argument("-q", "--quiet", action="store_true")
    st = sub.add_parser("selftest", help="run the built-in property suites")
    st.add_argument("--suite", action="append", choices=sorted(SUITES))
    st.add_argument("--corrupt", action="store_true", help=argparse.SUPPRESS)
    st.add_argument("-q", "--quiet", action="store_true")
    return parser


def resolve_config(args):
    if args.config:
        cfg = load_config(args.config)
        if cfg.experiment != args.command:
            raise ValueError(f"config describes {cfg.experiment!r}, not {args.command!r}")
    else:
        cfg = preset(args.preset or DEFAULT_PRESET[args.command])
        if cfg.experiment != args.command:
            raise ValueError(f"preset {args.preset!r} is a {cfg.experiment} experiment, "
                             f"not {args.command}")
    if args.estimators:
        cfg = cfg.select_arms(args.estimators)
    if args.seed is not None:
        cfg.seed = args.seed
    if args.iters is not None:
        cfg.iterations = args.iters
    if args.out is not None:
        cfg.out = args.out
    if args.format is not None:
        cfg.format = args.format
    return cfg.validate()


def format_summary(report: RunReport) -> str:
    head = f"{'arm':<12} {'step':>6} {'objective':>12} {'grad var':>11} {'metric':>9} " \
           f"{'samples':>10} {'evals':>11}  status"
    lines = [head, "-" * len(head)]
    for arm in report.arms():
        r = report.arm(arm)[-1]
        status = "diverged" if r.diverged else "ok"
        lines.append(f"{arm:<12} {r.step:>6} {r.objective:>12.6g} {r.grad_variance:>11.4g} "
                     f"{r.metric:>9.4g} {r.samples:>10} {r.function_evals:>11}  {status}")
    for arm, s in report.summary.items():
        if isinstance(s, dict) and "error" in s:
            lines.append(f"{arm:<12} rejected: {s['error']}")
    return "\n".join(lines)


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_OK
    if args.command is None:
        parser.print_help(sys.stderr)
        return EXIT_USAGE
    quiet = getattr(args, "quiet", False)
    level = logging.DEBUG if getattr(args, "verbose", False) else (
        logging.ERROR if quiet else logging.INFO)
    logging.basicConfig(level=level, format="%(message)s", stream=sys.stderr)

    if args.command == "selftest":
        out = (lambda s: None) if quiet else print
        return run_selftest(corrupt=args.corrupt or None, suites=args.suite, out=out)

    try:
        cfg = resolve_config(args)
    except (ValueError, OSError) as exc:
        print(f"catgrad {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    log.debug("config: %s", cfg.to_dict())
    try:
        report = run_experiment(cfg)
    except (ValueError, OSError, FloatingPointError) as exc:
        print(f"catgrad {args.command}: failed: {exc}", file=sys.stderr)
        return EXIT_FAIL
    if not quiet:
        print(format_summary(report))
        if cfg.out:
            print(f"report written to {cfg.out}")
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
