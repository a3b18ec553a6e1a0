"""``mbcast`` command line.

Exit codes: 0 success, 1 validation check failed, 2 unsatisfiable plan,
64 usage error.  Numbers are printed with 6 significant digits.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
import warnings
from pathlib import Path
from typing import Optional, Sequence

from . import __version__
from .fec import DomainError, ErasureChannel, RaptorCode, code_for_segment, segment_loss_probability
from .metrics import summarize
from .planner import (
    DEFAULT_THRESHOLD,
    DelayBudget,
    ServiceConfig,
    UnicastLink,
    UnsatisfiablePlan,
    availability_start_time,
    max_code_rate,
    plan_buffer_for_loss,
    playback_deadline,
    sweep_code_rate,
)
from .scenario_io import fmt, load_raw, round6, scenario_from_dict, scenario_hash, summary_dict, summary_json, users_csv
from .simulator import ScenarioError, resolve_buffer, run_scenario
from .validation import CHECKS, run_checks

EXIT_OK = 0
EXIT_CHECK_FAILED = 1
EXIT_UNSATISFIABLE = 2
EXIT_USAGE = 64

SWEEP_COLUMNS = (
    "t_seg",
    "code_rate",
    "p_loss",
    "sdr",
    "m",
    "d_b_seconds",
    "d_b_segments",
    "within_limit",
    "max_code_rate",
    "k",
    "r",
)


class UsageError(Exception):
    pass


class Parser(argparse.ArgumentParser):
    def error(self, message: str):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _nonneg(text: str) -> float:
    try:
        value = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a number: {text!r}") from None
    if value < 0:
        raise argparse.ArgumentTypeError(f"must be >= 0, got {text}")
    return value


def _positive(text: str) -> float:
    value = _nonneg(text)
    if value == 0:
        raise argparse.ArgumentTypeError("must be > 0")
    return value


def _probability(text: str) -> float:
    value = _nonneg(text)
    if value > 1:
        raise argparse.ArgumentTypeError(f"must lie in [0, 1], got {text}")
    return value


def _float_list(text: str) -> list[float]:
    try:
        values = [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None
    if not values:
        raise argparse.ArgumentTypeError("list must not be empty")
    return values


def _emit(record: dict, fmt_name: str, out) -> None:
    if fmt_name == "json":
        out.write(json.dumps(record, sort_keys=False) + "\n")
        return
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(record.keys())
    writer.writerow(record.values())


def _link_from(args, need_bits: Optional[float]) -> UnicastLink:
    if (args.d_t is None) == (args.unicast_rate is None):
        raise UsageError("give exactly one of --d-t / --unicast-rate")
    if args.unicast_rate is not None and need_bits is None:
        raise UsageError("--unicast-rate needs the segment size (--segment-bytes)")
    return UnicastLink(rtt=args.rtt, d_t=args.d_t, unicast_rate=args.unicast_rate)


def _add_link_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--rtt", type=_nonneg, default=0.0, help="round-trip time, seconds")
    p.add_argument("--d-t", type=_nonneg, help="unicast transmission delay per segment, seconds")
    p.add_argument("--unicast-rate", type=_positive, help="unicast rate, bits/s")


def _add_format_flag(p: argparse.ArgumentParser) -> None:
    p.add_argument("--format", choices=("csv", "json"), default="csv")


def cmd_plan_buffer(args) -> int:
    model = args.p_loss is not None
    code_flags = [args.per, args.k, args.r, args.code_rate]
    if model and any(v is not None for v in code_flags):
        raise UsageError("--p-loss conflicts with --per/--k/--r/--code-rate")
    segment_bits = args.segment_bytes * 8 if args.segment_bytes else None
    code = None
    if model:
        p_loss = args.p_loss
    else:
        if args.per is None:
            raise UsageError("give either --p-loss or --per with a code")
        if args.k is not None:
            if args.segment_bytes is not None:
                raise UsageError("--k conflicts with --segment-bytes")
            if (args.r is None) == (args.code_rate is None):
                raise UsageError("with --k give exactly one of --r / --code-rate")
            if args.r is not None:
                code = RaptorCode(k=args.k, r=args.r, symbol_size=args.symbol_size)
            else:
                code = code_for_segment(args.k * args.symbol_size, args.symbol_size, args.code_rate)
        elif args.segment_bytes is not None:
            code = code_for_segment(args.segment_bytes, args.symbol_size, args.code_rate or 1.0)
        else:
            raise UsageError("--per needs --k or --segment-bytes")
        p_loss = segment_loss_probability(code, ErasureChannel(args.per))
        segment_bits = segment_bits or code.k * code.symbol_size * 8
    link = _link_from(args, segment_bits)
    try:
        plan = plan_buffer_for_loss(p_loss, args.threshold, link, args.t_seg, segment_bits)
    except UnsatisfiablePlan as exc:
        print(f"unsatisfiable: {exc}", file=sys.stderr)
        return EXIT_UNSATISFIABLE
    record = {
        "p_loss": p_loss,
        "threshold": args.threshold,
        "m": plan.m,
        "d_b_seconds": plan.d_b_seconds,
        "d_b_segments": plan.d_b_segments,
        "min_buffer_time_s": plan.buffer_seconds,
    }
    if code is not None:
        record.update(k=code.k, r=code.r)
    if args.format == "csv":
        record = {k: fmt(v) if isinstance(v, float) else str(v) for k, v in record.items()}
    else:
        record = {k: round6(v) if isinstance(v, float) else v for k, v in record.items()}
    _emit(record, args.format, sys.stdout)
    return EXIT_OK


def cmd_plan_timing(args) -> int:
    budget = DelayBudget(d_se=args.d_se, d_fe=args.d_fe, d_fd=args.d_fd, d_pvs=args.d_pvs)
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        svc = ServiceConfig(
            t_seg=args.t_seg,
            r_embms=args.r_embms,
            media_bitrate=args.media_bitrate,
            code_rate=args.code_rate,
            symbol_size=args.symbol_size,
        )
    for w in caught:
        print(f"warning: {w.message}", file=sys.stderr)
    ast = availability_start_time(budget, svc)
    if args.d_b is not None and args.p_loss is not None:
        raise UsageError("--d-b conflicts with --p-loss")
    if args.p_loss is not None:
        link = _link_from(args, svc.segment_bits)
        try:
            plan = plan_buffer_for_loss(args.p_loss, args.threshold, link, args.t_seg, svc.segment_bits)
        except UnsatisfiablePlan as exc:
            print(f"unsatisfiable: {exc}", file=sys.stderr)
            return EXIT_UNSATISFIABLE
        d_b = plan.buffer_seconds
    else:
        d_b = args.d_b if args.d_b is not None else 0.0
    record = {
        "d_vs_s": svc.d_vs,
        "availability_start_time_s": ast,
        "min_buffer_time_s": d_b,
        "playback_deadline_s": playback_deadline(ast, d_b),
    }
    if args.format == "csv":
        _emit({k: fmt(v) for k, v in record.items()}, "csv", sys.stdout)
    else:
        _emit({k: round6(v) for k, v in record.items()}, "json", sys.stdout)
    return EXIT_OK


def sweep_records(args) -> list[dict]:
    svc = ServiceConfig(
        t_seg=min(args.t_segs),
        r_embms=args.r_embms,
        media_bitrate=args.media_bitrate,
        code_rate=1.0,
        symbol_size=args.symbol_size,
    )
    rows = sweep_code_rate(svc, ErasureChannel(args.per), args.code_rates, args.t_segs)
    best = max_code_rate(rows, args.recovery_limit)
    records = []
    for row in rows:
        bits = svc.media_bitrate * row.t_seg
        if args.d_t_factor is not None:
            link = UnicastLink(rtt=args.rtt, d_t=args.d_t_factor * row.t_seg)
        else:
            link = _link_from(args, bits)
        try:
            plan = plan_buffer_for_loss(row.p_loss, args.threshold, link, row.t_seg, bits)
            m, d_b, d_seg = str(plan.m), fmt(plan.d_b_seconds), str(plan.d_b_segments)
        except UnsatisfiablePlan:
            m = d_b = d_seg = ""
        chosen = best[row.t_seg]
        records.append(
            {
                "t_seg": fmt(row.t_seg),
                "code_rate": fmt(row.code_rate),
                "p_loss": fmt(row.p_loss),
                "sdr": fmt(row.sdr),
                "m": m,
                "d_b_seconds": d_b,
                "d_b_segments": d_seg,
                "within_limit": "1" if row.p_loss <= args.recovery_limit else "0",
                "max_code_rate": "" if chosen is None else fmt(chosen),
                "k": str(row.code.k),
                "r": str(row.code.r),
            }
        )
    return records


def cmd_sweep(args) -> int:
    if args.d_t_factor is not None and (args.d_t is not None or args.unicast_rate is not None):
        raise UsageError("--d-t-factor conflicts with --d-t / --unicast-rate")
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        records = sweep_records(args)
    out = open(args.out, "w", newline="") if args.out else sys.stdout
    try:
        writer = csv.DictWriter(out, fieldnames=SWEEP_COLUMNS, lineterminator="\n")
        writer.writeheader()
        writer.writerows(records)
    finally:
        if args.out:
            out.close()
    return EXIT_OK


def cmd_sim_run(args) -> int:
    raw = load_raw(Path(args.scenario))
    scenario = scenario_from_dict(raw, seed=args.seed)
    buffer_seconds = resolve_buffer(scenario)
    reports = run_scenario(scenario, workers=args.workers)
    summary = summarize(reports)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    payload = summary_dict(summary, scenario_hash(raw, scenario.master_seed), scenario.master_seed, buffer_seconds)
    (out_dir / "users.csv").write_text(users_csv(reports), encoding="utf-8")
    (out_dir / "summary.json").write_text(summary_json(payload), encoding="utf-8")
    hist = payload["histogram"]
    print(
        f"users={summary.n_users} buffer_s={fmt(buffer_seconds)} stalls 0/1/2/3+="
        f"{hist['0']}/{hist['1']}/{hist['2']}/{hist['3plus']} severe_fraction={fmt(summary.severe_fraction)}"
    )
    return EXIT_OK


def cmd_validate(args) -> int:
    results = run_checks(args.check, trials=args.trials)
    for res in results:
        print(res.line())
    failed = [r.name for r in results if not r.passed]
    if failed:
        print(f"failed: {', '.join(failed)}", file=sys.stderr)
        return EXIT_CHECK_FAILED
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = Parser(prog="mbcast", description="Buffer and timing planner for DASH over broadcast with unicast repair.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=Parser)

    p = sub.add_parser("plan-buffer", help="minimum buffer for a loss probability or code/channel")
    p.add_argument("--p-loss", type=_probability, help="segment loss probability (model level)")
    p.add_argument("--per", type=_probability, help="packet error rate")
    p.add_argument("--k", type=int, help="source symbols")
    p.add_argument("--r", type=int, help="repair symbols")
    p.add_argument("--segment-bytes", type=int, help="segment size, bytes")
    p.add_argument("--code-rate", type=_probability)
    p.add_argument("--symbol-size", type=int, default=1024, help="bytes")
    p.add_argument("--threshold", type=_probability, default=DEFAULT_THRESHOLD)
    p.add_argument("--t-seg", type=_positive, required=True, help="segment duration, seconds")
    _add_link_flags(p)
    _add_format_flag(p)
    p.set_defaults(func=cmd_plan_buffer)

    p = sub.add_parser("plan-timing", help="availabilityStartTime and playback deadline")
    for name in ("d-se", "d-fe", "d-fd", "d-pvs"):
        p.add_argument(f"--{name}", type=_nonneg, default=0.0, help="seconds")
    p.add_argument("--t-seg", type=_positive, required=True)
    p.add_argument("--r-embms", type=_positive, required=True, help="broadcast rate, bits/s")
    p.add_argument("--media-bitrate", type=_positive, required=True, help="bits/s")
    p.add_argument("--code-rate", type=_probability, default=1.0)
    p.add_argument("--symbol-size", type=int, default=1024)
    p.add_argument("--d-b", type=_nonneg, help="buffer level, seconds")
    p.add_argument("--p-loss", type=_probability, help="plan the buffer from this loss probability")
    p.add_argument("--threshold", type=_probability, default=DEFAULT_THRESHOLD)
    _add_link_flags(p)
    _add_format_flag(p)
    p.set_defaults(func=cmd_plan_timing)

    p = sub.add_parser("sweep", help="code rate x segment duration table")
    p.add_argument("--t-segs", type=_float_list, required=True, help="comma-separated seconds")
    p.add_argument("--code-rates", type=_float_list, required=True, help="comma-separated rates")
    p.add_argument("--per", type=_probability, required=True)
    p.add_argument("--media-bitrate", type=_positive, required=True, help="bits/s")
    p.add_argument("--r-embms", type=_positive, required=True, help="bits/s")
    p.add_argument("--symbol-size", type=int, default=1024)
    p.add_argument("--threshold", type=_probability, default=DEFAULT_THRESHOLD)
    p.add_argument("--recovery-limit", type=_probability, default=0.1)
    p.add_argument("--d-t-factor", type=_nonneg, help="unicast delay as a multiple of t_seg")
    p.add_argument("--out", help="write CSV here instead of stdout")
    _add_link_flags(p)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("sim-run", help="simulate a scenario file")
    p.add_argument("scenario", help="YAML scenario file")
    p.add_argument("--out-dir", default=".", help="directory for users.csv and summary.json")
    p.add_argument("--seed", type=int, help="override the file's seed")
    p.add_argument("--workers", type=int, help="worker threads (default: $MBCAST_THREADS)")
    p.set_defaults(func=cmd_sim_run)

    p = sub.add_parser("validate", help="analytic vs simulation cross-checks")
    p.add_argument("--trials", type=int, default=100_000, help="segments per Monte Carlo run")
    p.add_argument("--check", action="append", choices=sorted(CHECKS), help="run only this check (repeatable)")
    p.set_defaults(func=cmd_validate)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        for name in ("t_segs", "code_rates"):
            values = getattr(args, name, None) or []
            if any(v <= 0 for v in values) or (name == "code_rates" and any(v > 1 for v in values)):
                raise UsageError(f"--{name.replace('_', '-')} values out of range")
        if getattr(args, "trials", 1) < 1:
            raise UsageError("--trials must be >= 1")
        return args.func(args)
    except UsageError as exc:
        print(f"mbcast: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ScenarioError as exc:
        print(f"mbcast: invalid scenario: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DomainError, ValueError, OSError) as exc:
        print(f"mbcast: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
