"""Command-line interface: validate configs, run scenarios, report traces.

Exit codes: 0 ok, 1 config error, 2 engine error, 3 I/O error.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import os
import sys
from dataclasses import replace
from decimal import Decimal, InvalidOperation

from .config import ConfigError, load_scenario
from .money import ZERO, dec
from .sim import EngineAbort, run

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_ENGINE = 2
EXIT_IO = 3


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="liqstake", description="Staking-liquidity protocol scenario runner")
    sub = parser.add_subparsers(dest="command", required=True)

    p_val = sub.add_parser("validate", help="check a scenario config against the schema")
    p_val.add_argument("--config", required=True, help="scenario TOML path")

    p_run = sub.add_parser("run", help="run a scenario and export the trace")
    p_run.add_argument("--config", required=True, help="scenario TOML path")
    p_run.add_argument("--out", required=True, help="output directory")
    p_run.add_argument("--seed", type=int, default=None, help="override the scenario seed")
    p_run.add_argument("--epochs", type=int, default=None, help="override the epoch count")
    p_run.add_argument("--format", choices=("csv", "json"), default="csv", help="trace export format")

    p_rep = sub.add_parser("report", help="summarize a previously exported trace")
    p_rep.add_argument("--out", required=True, help="directory holding trace.csv and summary.json")
    return parser


def cmd_validate(args) -> int:
    try:
        with open(args.config, "r", encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        print(f"error: cannot read config: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    from .config import parse_scenario

    try:
        parse_scenario(text)
    except ConfigError as exc:
        for path, msg in exc.diagnostics:
            print(f"invalid: {path}: {msg}", file=sys.stderr)
        return EXIT_CONFIG
    print("config ok")
    return EXIT_OK


def cmd_run(args) -> int:
    try:
        scenario = load_scenario(args.config)
    except OSError as exc:
        print(f"error: cannot read config: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ConfigError as exc:
        for path, msg in exc.diagnostics:
            print(f"invalid: {path}: {msg}", file=sys.stderr)
        return EXIT_CONFIG

    if args.seed is not None:
        scenario = replace(scenario, seed=args.seed)
    if args.epochs is not None:
        scenario = replace(scenario, epochs=args.epochs)
    bad = scenario.violations()
    if bad:
        for path, msg in bad:
            print(f"invalid: {path}: {msg}", file=sys.stderr)
        return EXIT_CONFIG

    try:
        trace = run(scenario)
    except EngineAbort as exc:
        print(f"engine error: {exc}", file=sys.stderr)
        return EXIT_ENGINE

    try:
        os.makedirs(args.out, exist_ok=True)
        if args.format == "csv":
            with open(os.path.join(args.out, "trace.csv"), "w", encoding="utf-8", newline="") as fh:
                fh.write(trace.export_csv())
        else:
            with open(os.path.join(args.out, "trace.json"), "w", encoding="utf-8") as fh:
                fh.write(trace.export_rows_json())
        with open(os.path.join(args.out, "summary.json"), "w", encoding="utf-8") as fh:
            fh.write(trace.export_summary_json())
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_IO
    print(f"wrote {args.out}/trace.{args.format} and {args.out}/summary.json ({len(trace.rows)} rows)")
    return EXIT_OK


def _read_trace_csv(path: str) -> tuple[list[str], list[dict]]:
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ValueError("line 1: empty trace")
        rows = []
        for lineno, rec in enumerate(reader, start=2):
            if len(rec) != len(header):
                raise ValueError(f"line {lineno}: expected {len(header)} fields, got {len(rec)}")
            rows.append(dict(zip(header, rec)))
    return header, rows


def cmd_report(args) -> int:
    csv_path = os.path.join(args.out, "trace.csv")
    summary_path = os.path.join(args.out, "summary.json")
    if not os.path.exists(csv_path) or not os.path.exists(summary_path):
        print(f"i/o error: missing trace files under {args.out}", file=sys.stderr)
        return EXIT_IO

    try:
        header, rows = _read_trace_csv(csv_path)
        with open(summary_path, "r", encoding="utf-8") as fh:
            summary = json.load(fh)
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (ValueError, json.JSONDecodeError) as exc:
        print(f"corrupt trace: {csv_path}: {exc}", file=sys.stderr)
        return EXIT_ENGINE

    dr_cols = [c for c in header if c.startswith("DR_")]
    sum_r = ZERO
    sum_sr = ZERO
    try:
        for lineno, row in enumerate(rows, start=2):
            r = dec(row["R"])
            sum_r += r
            sum_sr += dec(row["SR"])
            dr_total = sum((dec(row[c]) for c in dr_cols), ZERO)
            if abs(dr_total - r) > Decimal("1e-9"):
                print(f"corrupt trace: line {lineno}: sum DR {dr_total} != R {r}", file=sys.stderr)
                return EXIT_ENGINE
    except (KeyError, InvalidOperation) as exc:
        print(f"corrupt trace: {csv_path}: bad field {exc}", file=sys.stderr)
        return EXIT_ENGINE

    if dec(summary["sum_r"]) != sum_r or dec(summary["sum_sr"]) != sum_sr:
        print("corrupt trace: summary totals disagree with the CSV", file=sys.stderr)
        return EXIT_ENGINE

    path = summary.get("controller_path", [])
    path_str = " -> ".join(f"{v:.3f}" for v in (path[:3] + path[-2:])) if len(path) > 5 else " -> ".join(
        f"{v:.3f}" for v in path
    )
    print(f"epochs:               {summary['epochs']} ({len(rows)} rows)")
    print(f"objective:            {summary['objective']:.6f}")
    print(f"  total value:        {summary['total_value']}")
    print(f"  total variance:     {summary['total_variance']:.6f}")
    print(f"kappa constraint:     freq {summary['kappa_freq']:.3f} vs alpha {summary['alpha']:.3f} "
          f"-> {'pass' if summary['kappa_pass'] else 'FAIL'}")
    print(f"cVaR(0.99):           {summary['cvar']:.6f} vs limit {summary['cvar_limit']:.6f} "
          f"-> {'pass' if summary['cvar_pass'] else 'FAIL'}")
    print(f"incentives vs budget: {summary['sum_r']} / {summary['sum_sr']} "
          f"-> {'pass' if summary['budget_pass'] else 'FAIL'}")
    print(f"controller target:    {path_str}")
    print(f"wash flags:           {summary['wash_flags']}")
    print(f"liveness:             freq {summary['liveness_freq']:.4f} vs lambda {summary['liveness_lambda']:.4f} "
          f"-> {'pass' if summary['liveness_pass'] else 'FAIL'}")
    return EXIT_OK


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    if args.command == "validate":
        return cmd_validate(args)
    if args.command == "run":
        return cmd_run(args)
    if args.command == "report":
        return cmd_report(args)
    return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
