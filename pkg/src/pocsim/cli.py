"""Command-line front end: ``run``, ``verify`` and ``analyze``.

Exit status: 0 on success, 1 when verification or a run-time invariant
fails, 2 for configuration and usage errors.
"""

from __future__ import annotations

import argparse
import json
import sys
from fractions import Fraction
from typing import Optional, Sequence

from .analysis import as_json_number, energy_model, fork_success_prob, rebuild_time
from .chain import DumpError, dump_chain, load_chain, verify_chain
from .fork_attack import ForkParams, run_fork_attack
from .scenario import load_config, run_scenario
from .slicing import ConfigError

EXIT_OK, EXIT_FAIL, EXIT_CONFIG = 0, 1, 2


def _write(path: Optional[str], text: str) -> None:
    if path is None or path == "-":
        sys.stdout.write(text)
    else:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(text)


def cmd_run(args) -> int:
    try:
        cfg = load_config(args.config, seed=args.seed, mode=args.mode)
    except OSError as exc:
        print(f"error: cannot read config: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ConfigError as exc:
        print(f"error: invalid config: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    sim, report = run_scenario(cfg, keep_trace=args.trace is not None)
    liveness = sim.check_liveness() if args.check_liveness else []
    report.violations.extend(f"liveness: {p}" for p in liveness)
    _write(args.out, json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n")
    if args.dump_chain:
        _write(args.dump_chain, dump_chain(sim.chain()))
    if args.trace:
        _write(args.trace, "".join(line + "\n" for line in sim.trace_lines))
    print(f"trace hash {report.trace_hash}", file=sys.stderr)
    if report.violations:
        for v in report.violations:
            print(f"violation: {v}", file=sys.stderr)
        return EXIT_FAIL
    return EXIT_OK


def verify_file(path: str) -> tuple[int, str]:
    try:
        with open(path, "rb") as fh:
            data = fh.read()
    except OSError as exc:
        return EXIT_CONFIG, f"error: cannot read dump: {exc}"
    try:
        chain = load_chain(data)
    except DumpError as exc:
        return EXIT_FAIL, f"parse error: {exc}"
    result = verify_chain(chain)
    if result.ok:
        return EXIT_OK, f"ok: {result.checked} blocks verified"
    return EXIT_FAIL, f"FAILED at block {result.block}: {result.failure}"


def cmd_verify(args) -> int:
    status, message = verify_file(args.dump)
    print(message, file=sys.stdout if status == EXIT_OK else sys.stderr)
    return status


def _fraction(text: str) -> Fraction:
    try:
        return Fraction(text)
    except (ValueError, ZeroDivisionError):
        raise argparse.ArgumentTypeError(f"not a number: {text!r}") from None


def cmd_analyze(args) -> int:
    try:
        if args.what == "fork-prob":
            p = fork_success_prob(args.b, args.coverage)
            out = {"b": args.b, "coverage": as_json_number(args.coverage),
                   "probability": as_json_number(p), "exact": str(p)}
        elif args.what == "rebuild-time":
            t = rebuild_time(args.alpha, args.m, args.h)
            out = {"alpha": as_json_number(args.alpha), "m": as_json_number(args.m),
                   "h": as_json_number(args.h), "months": as_json_number(t)}
        elif args.what == "energy":
            res = energy_model(args.n, args.E, args.tau)
            out = {k: {"resources": as_json_number(c.resources), "time": as_json_number(c.time),
                       "energy": as_json_number(c.energy)} for k, c in res.items()}
        else:
            report = run_fork_attack(ForkParams(m=args.m_rate, h=args.h_rate, length=args.length,
                                                difficulty=args.difficulty, seed=args.seed))
            out = report.to_dict()
    except (ValueError, ZeroDivisionError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    print(json.dumps(out, sort_keys=True))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="pocsim", description="Collaborative mining simulator")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run a scenario")
    run.add_argument("--config", required=True)
    run.add_argument("--seed", type=int)
    run.add_argument("--mode", choices=["sha256", "modeled", "real-hash"])
    run.add_argument("--out", help="metrics JSON (default stdout)")
    run.add_argument("--dump-chain", help="write the settled chain as JSON lines")
    run.add_argument("--trace", help="write the event trace as JSON lines")
    run.add_argument("--check-liveness", action="store_true",
                     help="fail unless every workload S-block ends up settled")
    run.set_defaults(func=cmd_run)

    verify = sub.add_parser("verify", help="audit a chain dump")
    verify.add_argument("dump")
    verify.set_defaults(func=cmd_verify)

    analyze = sub.add_parser("analyze", help="closed-form models")
    asub = analyze.add_subparsers(dest="what", required=True)
    fp = asub.add_parser("fork-prob")
    fp.add_argument("--b", type=int, required=True)
    fp.add_argument("--coverage", type=_fraction, default=Fraction(1, 2))
    rt = asub.add_parser("rebuild-time")
    rt.add_argument("--alpha", type=_fraction, required=True)
    rt.add_argument("--m", type=_fraction, required=True)
    rt.add_argument("--h", type=_fraction, required=True)
    en = asub.add_parser("energy")
    en.add_argument("--n", type=int, required=True)
    en.add_argument("--E", type=_fraction, required=True)
    en.add_argument("--tau", type=_fraction, required=True)
    fs = asub.add_parser("fork-sim", help="simulate a long-range rebuild")
    fs.add_argument("--m", dest="m_rate", type=int, default=1)
    fs.add_argument("--h", dest="h_rate", type=int, default=1)
    fs.add_argument("--length", type=int, default=200)
    fs.add_argument("--difficulty", type=int, default=10)
    fs.add_argument("--seed", type=int, default=0)
    analyze.set_defaults(func=cmd_analyze)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
