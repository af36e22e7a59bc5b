"""Command-line entry points: rate, size, levelset, verify, simulate."""

from __future__ import annotations

import argparse
import json
import logging
import math
import re
import sys
from decimal import Decimal, InvalidOperation

from . import collision_math as cm


def parse_count(text: str) -> int:
    """Parse integers written as ``1000``, ``1e7``, ``2^64`` or ``2**64``."""
    s = text.strip().replace("_", "")
    power = re.fullmatch(r"(\d+)\s*(?:\^|\*\*)\s*(\d+)", s)
    if power:
        return int(power.group(1)) ** int(power.group(2))
    try:
        value = Decimal(s)
    except InvalidOperation:
        raise argparse.ArgumentTypeError(f"not an integer: {text!r}") from None
    if value != value.to_integral_value():
        raise argparse.ArgumentTypeError(f"not an integer: {text!r}")
    return int(value)


def _emit(args, payload: dict, text: str) -> None:
    if args.json:
        print(json.dumps(payload, indent=2, sort_keys=True))
    else:
        print(text)


def cmd_rate(args) -> int:
    cfg = cm.BucketConfig(args.n, args.m)
    est = cm.estimate(cfg, args.method, args.K)
    log10 = math.log10(est.value) if est.value > 0 else None
    payload = {
        "n": cfg.n,
        "m": cfg.m,
        "alpha": cfg.alpha,
        "method": est.label,
        "value": est.value,
        "log10_value": log10,
        "delta_lo": est.delta_lo,
        "remainder_abs": est.remainder_abs,
        "lower": est.lower,
        "upper": est.upper,
    }
    text = "\n".join(
        [
            f"method        {est.label}",
            f"n, m, alpha   {cfg.n}, {cfg.m}, {cfg.alpha:.6g}",
            f"rate          {est.value:.12g}",
            f"log10(rate)   {'-inf' if log10 is None else f'{log10:.4f}'}",
            f"delta bound   [{est.delta_lo:.3e}, 0]",
            f"remainder     +/- {est.remainder_abs:.3e}",
            f"certified     [{est.lower:.12g}, {est.upper:.12g}]",
        ]
    )
    _emit(args, payload, text)
    return 0


def cmd_size(args) -> int:
    m = cm.min_buckets(args.n, args.target, args.K)
    bits = m.bit_length() - 1
    rate = 0.0 if args.n == 1 else cm.certified_rate(cm.BucketConfig(args.n, m), args.K)
    payload = {"n": args.n, "target": args.target, "m": m, "log2_m": bits, "certified_rate": rate}
    _emit(args, payload, f"m = 2^{bits} = {m}  (certified rate {rate:.4g} <= {args.target:g})")
    return 0


def cmd_levelset(args) -> int:
    from .levelset import compute_levelset, write_csv

    n_lo, n_hi, n_pts = args.n_range
    m_lo, m_hi = args.m_range
    grid = compute_levelset(n_lo, n_hi, n_pts, m_lo, m_hi, args.K)
    try:
        write_csv(grid, args.out)
    except OSError as exc:
        print(f"error: cannot write {args.out}: {exc}", file=sys.stderr)
        return 1
    cells = grid.values.size
    out_of_domain = int(sum(1 for v in grid.values.flat if math.isnan(v)))
    _emit(
        args,
        {"out": str(args.out), "cells": cells, "out_of_domain": out_of_domain},
        f"wrote {cells} cells ({out_of_domain} out of domain) to {args.out}",
    )
    return 0


def cmd_verify(args) -> int:
    from .verify import print_report, run_all

    results = run_all(seed=args.seed, inject_fault=args.inject_fault)
    ok = all(r.passed for r in results)
    if args.json:
        print(
            json.dumps(
                [
                    {"suite": r.name, "passed": r.passed, "cases": r.cases, "failures": r.failures}
                    for r in results
                ],
                indent=2,
            )
        )
    else:
        print_report(results)
        print("all suites passed" if ok else "verification FAILED")
    return 0 if ok else 1


def cmd_simulate(args) -> int:
    from .simulation import simulate

    report = simulate(
        sensors=args.sensors,
        devices=args.devices,
        frames=args.frames,
        overlap=args.overlap,
        clock_skew_ms=args.clock_skew_ms,
        seed=args.seed,
        boundary_events=args.boundary_events,
    )
    if args.json:
        print(json.dumps(report.to_dict(), indent=2))
    else:
        for fr in report.frame_reports:
            print(
                f"frame {fr.frame}: unique {fr.unique_ids} / truth {fr.ground_truth} "
                f"({fr.total_records} records)"
            )
        print(f"cross-sensor agreement   {100 * report.cross_sensor_agreement:.3f} %"
              f" over {report.multi_sensor_events} multi-sensor events")
        print(f"cross-frame linkage      {100 * report.cross_frame_linkage:.3f} %"
              f" (set intersections {report.frame_intersections},"
              f" expected by chance {report.expected_chance_intersection:.2e})")
        if report.boundary_events:
            print(
                f"boundary mismatch        {100 * report.boundary_mismatch_fraction:.4f} %"
                f" ({report.boundary_mismatches}/{report.boundary_events};"
                f" expected {100 * report.expected_boundary_mismatch_fraction:.4f} %)"
            )
        print(f"dropped (no pepper)      {report.dropped_missing_pepper}")
        print(f"privacy scan             {'clean' if report.privacy_ok else 'VIOLATION'}"
              f" ({report.scanned_blobs} blobs)")
        for problem in report.privacy_problems:
            print(f"  {problem}")
    return 0 if report.privacy_ok else 1


def _n_range(text: str):
    parts = text.split(":")
    if len(parts) != 3:
        raise argparse.ArgumentTypeError("expected LO:HI:POINTS, e.g. 1e2:1e8:50")
    return float(parts[0]), float(parts[1]), int(parts[2])


def _m_range(text: str):
    parts = text.split(":")
    if len(parts) != 2:
        raise argparse.ArgumentTypeError("expected MIN_EXP:MAX_EXP, e.g. 10:64")
    return int(parts[0]), int(parts[1])


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="probeanon", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("rate", help="collision rate of n inserts into m buckets")
    p.add_argument("--n", type=parse_count, required=True)
    p.add_argument("--m", type=parse_count, required=True)
    p.add_argument("--method", choices=[m.value for m in cm.Method], default="series")
    p.add_argument("--K", type=int, default=cm.DEFAULT_ORDER, help="series order")
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_rate)

    p = sub.add_parser("size", help="smallest power-of-two m meeting a target rate")
    p.add_argument("--n", type=parse_count, required=True)
    p.add_argument("--target", type=float, required=True)
    p.add_argument("--K", type=int, default=cm.DEFAULT_ORDER)
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_size)

    p = sub.add_parser("levelset", help="write log10 collision rates over an (n, m) grid")
    p.add_argument("--n-range", type=_n_range, default=(1e2, 1e8, 50))
    p.add_argument("--m-range", type=_m_range, default=(10, 64))
    p.add_argument("--K", type=int, default=cm.DEFAULT_ORDER)
    p.add_argument("--out", required=True)
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_levelset)

    p = sub.add_parser("verify", help="run the estimator self-check suites")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--inject-fault", action="store_true", help=argparse.SUPPRESS)
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("simulate", help="multi-sensor end-to-end simulation")
    p.add_argument("--sensors", type=int, default=3)
    p.add_argument("--devices", type=int, default=1000)
    p.add_argument("--frames", type=int, default=2)
    p.add_argument("--overlap", type=float, default=1.0)
    p.add_argument("--clock-skew-ms", type=float, default=0.0)
    p.add_argument("--boundary-events", type=int, default=100_000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_simulate)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING)
    try:
        return args.func(args)
    except (cm.DomainError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
