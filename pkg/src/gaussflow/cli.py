"""Command-line entry point: ``gaussflow {wulff,run,verify,oracle,suite}``.

Exit codes: 0 pass, 1 check failure, 2 configuration error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import io
from .anisotropy import convexity_certificate, shift_point, verify_shift_property
from .errors import ConfigError, GaussFlowError, NotUniformlyConvexError, NumericalFailureError


def _print_json(obj):
    print(json.dumps(obj, indent=2, sort_keys=True, default=str))


def _load(args):
    if args.config is None:
        raise ConfigError("--config is required")
    cfg = io.parse_config(args.config)
    if args.seed is not None:
        cfg = cfg.model_copy(update={"seed": args.seed})
    return cfg


def _print_checks(report):
    for r in report.get("checks", []):
        status = "PASS" if r["pass"] else "FAIL"
        print(f"{status} {r['check']:<12} bound={r['bound']!s:<24} observed={r['observed']!s:<24} "
              f"margin={r['margin']}", file=sys.stderr)
    if "error" in report:
        print(f"error at stage {report.get('stage')}: {report['error']}", file=sys.stderr)


def cmd_wulff(args) -> int:
    cfg = _load(args)
    desc = io.build_descriptor(cfg)
    try:
        lo, hi = convexity_certificate(desc)
    except NotUniformlyConvexError as exc:
        witness = None if exc.witness is None else np.asarray(exc.witness).tolist()
        _print_json({"certified": False, "error": str(exc), "witness": witness})
        return io.EXIT_CONFIG
    out = {"certified": True, "lambda_lo": lo, "lambda_hi": hi, "descriptor": desc.to_dict()}
    e = io._e_dir(cfg)
    try:
        z0 = shift_point(desc, e, cfg.shift.t0, cfg.shift.samples)
        margin = verify_shift_property(desc, z0, e, 10 * cfg.shift.samples)
    except NumericalFailureError as exc:
        out["shift_error"] = str(exc)
        _print_json(out)
        return io.EXIT_NUMERICAL
    out["shift"] = {"e_dir": e.tolist(), "t0": cfg.shift.t0, "z0": z0.tolist(), "margin": margin,
                    "holds": margin <= 1e-8}
    _print_json(out)
    if args.out:
        Path(args.out).mkdir(parents=True, exist_ok=True)
        (Path(args.out) / "wulff.json").write_text(json.dumps(out, indent=2, sort_keys=True) + "\n")
    return io.EXIT_PASS if margin <= 1e-8 else io.EXIT_NUMERICAL


def cmd_run(args) -> int:
    cfg = _load(args)
    code, report = io.run_experiment(cfg, args.out)
    _print_checks(report)
    _print_json({k: report[k] for k in ("id", "stage", "passed", "exit_code") if k in report})
    return code


def cmd_verify(args) -> int:
    trace_dir = args.trace or args.out
    if trace_dir is None:
        raise ConfigError("verify needs --trace DIR (or --out DIR) pointing at a trace directory")
    cfg = io.parse_config(args.config) if args.config else None
    code, report = io.verify_trace(trace_dir, cfg)
    _print_checks(report)
    _print_json(report)
    return code


def cmd_oracle(args) -> int:
    cfg = _load(args)
    if args.out is None:
        raise ConfigError("oracle needs --out DIR")
    times = args.times if args.times else None
    for path in io.export_oracle(cfg, args.out, times):
        print(path)
    return io.EXIT_PASS


def cmd_suite(args) -> int:
    if args.config is None:
        raise ConfigError("suite needs --config MATRIX")
    code, report = io.verify_suite(args.config, args.out, jobs=args.jobs, seed=args.seed)
    print(io.format_summary(report))
    return code


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="gaussflow",
                                     description="anisotropic alpha-Gauss curvature flow of convex graphs")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="experiment config (YAML or JSON)")
        p.add_argument("--out", help="output directory")
        p.add_argument("--seed", type=int, help="override the config seed")
        return p

    common(sub.add_parser("wulff", help="certify the anisotropy and compute the shift point")
           ).set_defaults(func=cmd_wulff)
    common(sub.add_parser("run", help="run one experiment")).set_defaults(func=cmd_run)
    p = common(sub.add_parser("verify", help="re-run estimate checks on an existing trace"))
    p.add_argument("--trace", help="trace directory (defaults to --out)")
    p.set_defaults(func=cmd_verify)
    p = common(sub.add_parser("oracle", help="export the oracle profile on the config grid"))
    p.add_argument("--times", type=float, nargs="+", help="output times (default 0 and t_end)")
    p.set_defaults(func=cmd_oracle)
    p = common(sub.add_parser("suite", help="run an experiment matrix"))
    p.add_argument("--jobs", type=int, default=None, help="parallel worker processes")
    p.set_defaults(func=cmd_suite)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return io.EXIT_CONFIG
    except NumericalFailureError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return io.EXIT_NUMERICAL
    except GaussFlowError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return io.EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
