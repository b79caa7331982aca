"""Command-line entry point.

Exit codes: 0 success, 1 domain error (one ``error: ...`` line on stderr),
2 usage error.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

from . import __version__
from .analysis import DEFAULT_DELTA, DEFAULT_WINDOW, chase_curves, detect_breakpoints, fraction_of_bound, summarize
from .errors import AnalysisError, MembenchError
from .topo import OPS, bounds_matrix, load_topology, topology_hash

NO_PIN_ENV = "MEMBENCH_NO_PIN"


def _fmt_bound(b) -> str:
    if b is None:
        return "unreachable"
    x = b.bound
    return str(x.numerator) if x.denominator == 1 else f"{float(x):.6g}"


def cmd_topo_validate(args) -> int:
    spec = load_topology(args.file)
    print(f"ok: {spec.name} pus={len(spec.pus)} memories={len(spec.memories)} links={len(spec.links)}")
    print(f"hash: {topology_hash(spec)}")
    return 0


def cmd_topo_bounds(args) -> int:
    spec = load_topology(args.file)
    bm = bounds_matrix(spec, args.op, args.initiator)
    if args.json:
        out = {
            "op": bm.op,
            "initiator": bm.initiator,
            "rows": list(bm.rows),
            "cols": list(bm.cols),
            "cells": [[None if c is None else c.to_dict() for c in row] for row in bm.cells],
        }
        print(json.dumps(out, indent=2))
        return 0
    corner = "src\\dst" if bm.op == "copy" else ""
    cells = [[f"{_fmt_bound(c)} ({c.limiting_resource})" if c else "unreachable" for c in row] for row in bm.cells]
    widths = [max(len(corner), *(len(r) for r in bm.rows))] + [
        max(len(col), *(len(cells[i][j]) for i in range(len(bm.rows)))) for j, col in enumerate(bm.cols)
    ]
    print(f"{bm.op} bounds for {bm.initiator} [GB/s] (limiting resource)")
    print("  ".join(h.ljust(w) for h, w in zip([corner, *bm.cols], widths)))
    for r, row in zip(bm.rows, cells):
        print("  ".join(v.ljust(w) for v, w in zip([r, *row], widths)))
    return 0


def cmd_run(args) -> int:
    from .alloc import host_cores
    from .harness import parse_suite, run_suite

    pin = os.environ.get(NO_PIN_ENV) != "1"
    spec = load_topology(args.topology)
    cases = parse_suite(Path(args.suite).read_text())
    if pin:
        requested = sorted({c for case in cases if isinstance(case, dict) for c in _case_cores(case)})
        available = host_cores()
        missing = [c for c in requested if c not in available]
        if missing:
            raise MembenchError(
                f"requested core(s) {missing} exceed host inventory {available} "
                f"(set {NO_PIN_ENV}=1 for an unpinned smoke run)"
            )
    result = run_suite(cases, spec, out=args.out, pin=pin, cooldown_s=args.cooldown)
    for r in result.records:
        print(f"{r.case_id}: {r.derived_value:.6g} {r.unit}" if r.derived_value is not None else f"{r.case_id}: n/a")
    for e in result.errors:
        print(f"error: case {e['case_id']}: {e['error']}", file=sys.stderr)
    print(f"wrote {len(result.records)} record(s) to {args.out}")
    return 1 if result.errors and not result.records else 0


def _case_cores(case: dict):
    yield from case.get("cores", [])
    if case.get("noise"):
        yield from case["noise"].get("cores", [])


def cmd_analyze(args) -> int:
    from .report import read_results

    records = read_results(args.results)
    spec = load_topology(args.topology)
    for r in records:
        try:
            st = summarize(r)
        except AnalysisError as exc:
            print(f"{r.case_id}: {exc}")
            continue
        line = (
            f"{r.case_id}: {r.kernel} n={st.count} mean={float(st.mean):.0f}ns min={st.min}ns "
            f"max={st.max}ns sd={st.stdev:.0f}ns -> "
            + (f"{r.derived_value:.6g} {r.unit}" if r.derived_value is not None else "n/a")
        )
        if r.kernel in ("read", "write", "copy"):
            try:
                fe = fraction_of_bound(r, spec)
                line += f" | {float(fe.fraction):.2g} of {float(fe.bound):g} GB/s bound ({fe.limiting_resource})"
                if fe.note:
                    line += f" {fe.note}"
            except AnalysisError as exc:
                line += f" | bound n/a: {exc}"
        print(line)
    if args.breakpoints:
        curves = chase_curves(records)
        if not curves:
            print("breakpoints: no chase records")
        for key, pts in curves.items():
            try:
                found = detect_breakpoints(pts, args.delta, args.window)
                print(f"breakpoints cores={list(key[0])} placement={key[1]}: {found}")
            except AnalysisError as exc:
                print(f"breakpoints cores={list(key[0])}: {exc}")
    return 0


def cmd_report(args) -> int:
    from .report import export_records, read_results, records_to_matrix, records_to_series, render_heatmap, render_lines

    records = read_results(args.results)
    out = Path(args.out)
    if out.suffix == ".csv":
        out.write_text(export_records(records, "csv"))
    elif args.lines:
        series = records_to_series(records, args.x)
        markers = [int(m) for m in args.markers.split(",")] if args.markers else []
        unit = records[0].unit if records else ""
        out.write_text(render_lines(series, args.axes, markers=markers, y_label=unit))
    else:
        out.write_text(render_heatmap(records_to_matrix(records)))
    print(f"wrote {out}")
    return 0


def cmd_clockinfo(args) -> int:
    from .clock import estimate_resolution

    info = estimate_resolution(args.samples)
    print(f"source: {info.source}")
    print(f"resolution_ns: {info.resolution}")
    print(f"frequency_hz: {info.frequency}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="membench", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"membench {__version__}")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    topo = sub.add_parser("topo", help="topology validation and bounds")
    tsub = topo.add_subparsers(dest="topo_command", required=True)
    v = tsub.add_parser("validate")
    v.add_argument("file")
    v.set_defaults(func=cmd_topo_validate)
    b = tsub.add_parser("bounds")
    b.add_argument("file")
    b.add_argument("--op", choices=OPS, required=True)
    b.add_argument("--initiator", required=True)
    b.add_argument("--json", action="store_true")
    b.set_defaults(func=cmd_topo_bounds)

    r = sub.add_parser("run", help="run a benchmark suite")
    r.add_argument("suite")
    r.add_argument("--topology", required=True)
    r.add_argument("--out", required=True)
    r.add_argument("--cooldown", type=float, default=0.1, help="seconds between cases")
    r.set_defaults(func=cmd_run)

    a = sub.add_parser("analyze", help="statistics and fractions of bound")
    a.add_argument("results")
    a.add_argument("--topology", required=True)
    a.add_argument("--breakpoints", action="store_true")
    a.add_argument("--delta", type=float, default=DEFAULT_DELTA)
    a.add_argument("--window", type=int, default=DEFAULT_WINDOW)
    a.set_defaults(func=cmd_analyze)

    rep = sub.add_parser("report", help="render results")
    kind = rep.add_mutually_exclusive_group(required=True)
    kind.add_argument("--heatmap", action="store_true")
    kind.add_argument("--lines", action="store_true")
    rep.add_argument("results")
    rep.add_argument("--out", required=True, help="output .svg, or .csv for a CSV export")
    rep.add_argument("--axes", choices=("linear", "log2-x"), default="log2-x")
    rep.add_argument("--x", choices=("length", "workers"), default=None)
    rep.add_argument("--markers", default="", help="comma-separated x positions (bytes)")
    rep.set_defaults(func=cmd_report)

    c = sub.add_parser("clockinfo", help="clock source and resolution")
    c.add_argument("--samples", type=int, default=100_000)
    c.set_defaults(func=cmd_clockinfo)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (MembenchError, OSError, ValueError) as exc:
        reason = " ".join(str(exc).split())
        print(f"error: {reason}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
