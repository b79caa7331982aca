"""Result export (CSV, JSON lines) and SVG rendering (heatmaps, line plots).

CSV columns, in order::

    case_id, kernel, cores, placements, bytes, iter_index, warmup_flag,
    elapsed_ns, derived_value, unit, topo_hash, timestamp

One row per iteration. ``cores`` is ``;``-joined, ``placements`` is
``|``-joined placement labels, ``warmup_flag`` is 0/1 and ``derived_value``
is the record-level value (repr of the float, empty when undefined).

SVG output is deterministic: fixed element order, coordinates printed with
two decimals, no timestamps.
"""

from __future__ import annotations

import csv
import io
import json
import math
from collections import defaultdict
from dataclasses import dataclass, field
from xml.sax.saxutils import escape

from .errors import ReportError
from .records import Iteration, MeasurementRecord

CSV_COLUMNS = (
    "case_id",
    "kernel",
    "cores",
    "placements",
    "bytes",
    "iter_index",
    "warmup_flag",
    "elapsed_ns",
    "derived_value",
    "unit",
    "topo_hash",
    "timestamp",
)

LOW_COLOR = (0xF7, 0xFB, 0xFF)
HIGH_COLOR = (0x08, 0x30, 0x6B)
MISSING_COLOR = "#d9d9d9"
SERIES_COLORS = ("#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf")


@dataclass
class Matrix:
    rows: list[str]
    cols: list[str]
    values: list[list[float | None]]
    unit: str = ""
    annotations: list[list[str | None]] | None = None

    def __post_init__(self):
        self.rows, self.cols = list(self.rows), list(self.cols)
        if len(set(self.rows)) != len(self.rows) or len(set(self.cols)) != len(self.cols):
            raise ReportError("matrix labels must be unique")
        if len(self.values) != len(self.rows) or any(len(r) != len(self.cols) for r in self.values):
            raise ReportError("matrix must be rectangular and match its labels")
        if self.annotations is not None and (
            len(self.annotations) != len(self.rows) or any(len(r) != len(self.cols) for r in self.annotations)
        ):
            raise ReportError("annotations must match the matrix shape")


@dataclass
class Series:
    label: str
    xs: list[float]
    ys: list[float]
    meta: dict = field(default_factory=dict)


# --------------------------------------------------------------------------
# export


def placement_label(p: dict) -> str:
    if "label" in p:
        return p["label"]
    pol = p.get("policy", {})
    kind = pol.get("kind", "default")
    if kind == "node":
        base = f"node{pol['node']}"
    elif kind == "interleave":
        base = "interleave" + ",".join(map(str, pol["nodes"]))
    elif kind == "first_touch":
        base = "first-touch"
    else:
        base = "default"
    nodes = p.get("realized_nodes")
    realized = "?" if not isinstance(nodes, list) else ",".join(map(str, nodes))
    return f"{base}@{realized}" + ("!" if p.get("degraded") else "")


def _fmt_float(x: float | None) -> str:
    return "" if x is None else repr(float(x))


def export_records(records, fmt: str = "csv") -> str:
    if fmt in ("json-lines", "jsonl"):
        return "".join(r.to_json() + "\n" for r in records)
    if fmt != "csv":
        raise ValueError(f"unknown format {fmt!r}")
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    for r in records:
        cores = ";".join(map(str, r.cores))
        places = "|".join(placement_label(p) for p in r.placements)
        for it in r.iterations:
            w.writerow(
                (
                    r.case_id,
                    r.kernel,
                    cores,
                    places,
                    r.bytes_per_iter,
                    it.index,
                    int(it.warmup),
                    it.elapsed_ns,
                    _fmt_float(r.derived_value),
                    r.unit,
                    r.topo_hash or "",
                    r.timestamp,
                )
            )
    return buf.getvalue()


def parse_records(text: str, fmt: str = "json-lines") -> list[MeasurementRecord]:
    """Inverse of :func:`export_records`.

    CSV carries only its columns, so records rebuilt from CSV hold exactly
    what is needed to export the same CSV again.
    """
    if fmt in ("json-lines", "jsonl"):
        out = []
        for n, line in enumerate(text.splitlines(), 1):
            if not line.strip():
                continue
            try:
                out.append(MeasurementRecord.from_dict(json.loads(line)))
            except (json.JSONDecodeError, TypeError, KeyError) as exc:
                raise ReportError(f"line {n}: not a measurement record ({exc})") from None
        return out
    if fmt != "csv":
        raise ValueError(f"unknown format {fmt!r}")
    reader = csv.reader(io.StringIO(text))
    header = next(reader, None)
    if header is None or tuple(header) != CSV_COLUMNS:
        raise ReportError("CSV header does not match the documented column order")
    records: list[MeasurementRecord] = []
    current = None
    for row in reader:
        d = dict(zip(CSV_COLUMNS, row))
        index = int(d["iter_index"])
        if current is None or d["case_id"] != current.case_id or index == 0:
            current = MeasurementRecord(
                case_id=d["case_id"],
                kernel=d["kernel"],
                cores=[int(c) for c in d["cores"].split(";") if c],
                bytes_per_iter=int(d["bytes"]),
                iterations=[],
                derived_value=float(d["derived_value"]) if d["derived_value"] else None,
                unit=d["unit"],
                placements=[{"label": s} for s in d["placements"].split("|")] if d["placements"] else [],
                topo_hash=d["topo_hash"] or None,
                timestamp=d["timestamp"],
            )
            records.append(current)
        current.iterations.append(Iteration(index=index, elapsed_ns=int(d["elapsed_ns"]), warmup=d["warmup_flag"] == "1"))
    return records


def read_results(path) -> list[MeasurementRecord]:
    with open(path) as fh:
        return parse_records(fh.read(), "json-lines")


# --------------------------------------------------------------------------
# matrices and series from records


def _mem_label(p: dict) -> str:
    nodes = p.get("realized_nodes")
    if isinstance(nodes, list) and len(nodes) == 1 and not p.get("degraded"):
        return f"node{nodes[0]}"
    return placement_label(p)


def records_to_matrix(records) -> Matrix:
    """Copy records -> src x dst grid; otherwise kernel x placement grid. Cells average duplicates."""
    if not records:
        raise ReportError("no records to tabulate")
    cells: dict[tuple[str, str], list[float]] = defaultdict(list)
    all_copy = all(r.kernel == "copy" for r in records)
    unit = records[0].unit
    for r in records:
        if r.derived_value is None:
            continue
        if all_copy:
            key = (_mem_label(r.placements[0]), _mem_label(r.placements[1]))
        else:
            key = (r.kernel, "|".join(_mem_label(p) for p in r.placements))
        cells[key].append(r.derived_value)
    rows = sorted({k[0] for k in cells})
    cols = sorted({k[1] for k in cells})
    if not rows:
        raise ReportError("no record has a derived value")
    values = [[(sum(cells[(r, c)]) / len(cells[(r, c)])) if (r, c) in cells else None for c in cols] for r in rows]
    return Matrix(rows, cols, values, unit)


def records_to_series(records, x: str | None = None) -> list[Series]:
    """Group records into curves.

    ``x="length"`` plots against the first buffer's length (latency sweeps),
    ``x="workers"`` against worker count (scaling); default picks length for
    chase records and workers otherwise.
    """
    groups: dict[str, list[tuple[float, float]]] = defaultdict(list)
    for r in records:
        if r.derived_value is None:
            continue
        axis = x or ("length" if r.kernel == "chase" else "workers")
        if axis == "length":
            xv = r.placements[0].get("length") if r.placements else None
            if xv is None:
                xv = r.bytes_per_iter
            label = f"{r.kernel} {_mem_label(r.placements[0]) if r.placements else ''}".strip()
        else:
            xv = r.worker_count
            label = f"{r.kernel} " + "|".join(_mem_label(p) for p in r.placements)
        groups[label.strip()].append((float(xv), float(r.derived_value)))
    out = []
    for label in sorted(groups):
        pts = sorted(groups[label])
        out.append(Series(label, [p[0] for p in pts], [p[1] for p in pts]))
    return out


def bounds_to_matrix(bm) -> Matrix:
    """topo.BoundsMatrix -> Matrix of GB/s with the limiting resource as annotation."""
    values = [[None if c is None else float(c.bound) for c in row] for row in bm.cells]
    notes = [[None if c is None else c.limiting_resource for c in row] for row in bm.cells]
    return Matrix(list(bm.rows), list(bm.cols), values, "GB/s", notes)


# --------------------------------------------------------------------------
# SVG


def _f(x: float) -> str:
    return f"{x:.2f}"


def format_value(v: float | None, sig: int | None = None) -> str:
    if v is None:
        return "n/a"
    if sig is not None:
        return f"{v:.{sig}g}"
    if abs(v) >= 100:
        return f"{v:.0f}"
    return f"{v:.3g}"


def scale_color(t: float) -> str:
    t = min(1.0, max(0.0, t))
    rgb = (round(lo + (hi - lo) * t) for lo, hi in zip(LOW_COLOR, HIGH_COLOR))
    return "#" + "".join(f"{c:02x}" for c in rgb)


def render_heatmap(matrix: Matrix, title: str = "", *, cell_w: int = 96, cell_h: int = 44, sig: int | None = None) -> str:
    """Grid of cells with printed values; fill is linear between matrix min (light) and max (dark)."""
    if not matrix.rows or not matrix.cols:
        raise ReportError("cannot render an empty matrix")
    present = [v for row in matrix.values for v in row if v is not None]
    lo = min(present, default=0.0)
    hi = max(present, default=0.0)
    left = 12 + 8 * max(len(r) for r in matrix.rows)
    top = 56
    width = left + cell_w * len(matrix.cols) + 16
    height = top + cell_h * len(matrix.rows) + 16
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}" font-family="sans-serif">',
        f'<rect x="0" y="0" width="{width}" height="{height}" fill="#ffffff"/>',
    ]
    caption = title or (f"[{matrix.unit}]" if matrix.unit else "")
    if caption:
        parts.append(f'<text x="{_f(left)}" y="18" font-size="14">{escape(caption)}</text>')
    for j, col in enumerate(matrix.cols):
        x = left + cell_w * j + cell_w / 2
        parts.append(f'<text x="{_f(x)}" y="{top - 8}" font-size="12" text-anchor="middle">{escape(col)}</text>')
    for i, row in enumerate(matrix.rows):
        y = top + cell_h * i
        parts.append(
            f'<text x="{_f(left - 6)}" y="{_f(y + cell_h / 2 + 4)}" font-size="12" text-anchor="end">{escape(row)}</text>'
        )
        for j, v in enumerate(matrix.values[i]):
            x = left + cell_w * j
            if v is None:
                fill, t = MISSING_COLOR, 0.0
            else:
                t = (v - lo) / (hi - lo) if hi > lo else 0.0
                fill = scale_color(t)
            value_attr = "" if v is None else f' data-value="{repr(float(v))}"'
            parts.append(
                f'<rect class="cell" x="{_f(x)}" y="{_f(y)}" width="{cell_w}" height="{cell_h}" '
                f'fill="{fill}" stroke="#ffffff"{value_attr}/>'
            )
            ink = "#ffffff" if v is not None and t > 0.5 else "#000000"
            note = matrix.annotations[i][j] if matrix.annotations else None
            ty = y + cell_h / 2 + (0 if note else 5)
            parts.append(
                f'<text class="value" x="{_f(x + cell_w / 2)}" y="{_f(ty)}" font-size="13" '
                f'text-anchor="middle" fill="{ink}">{escape(format_value(v, sig))}</text>'
            )
            if note:
                parts.append(
                    f'<text class="note" x="{_f(x + cell_w / 2)}" y="{_f(ty + 14)}" font-size="9" '
                    f'text-anchor="middle" fill="{ink}">{escape(note)}</text>'
                )
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def _ticks(lo: float, hi: float, n: int = 5) -> list[float]:
    if hi <= lo:
        return [lo]
    raw = (hi - lo) / n
    mag = 10 ** math.floor(math.log10(raw))
    step = min((m * mag for m in (1, 2, 5, 10) if m * mag >= raw), default=raw)
    first = math.ceil(lo / step) * step
    out, v = [], first
    while v <= hi + step * 1e-9:
        out.append(round(v, 12))
        v += step
    return out


def _size_label(x: float) -> str:
    for unit, div in (("GiB", 1 << 30), ("MiB", 1 << 20), ("KiB", 1 << 10)):
        if x >= div and x % div == 0:
            return f"{int(x // div)} {unit}"
    return f"{x:g}"


def render_lines(
    series: list[Series],
    axes: str = "linear",
    *,
    markers=(),
    marker_labels=None,
    title: str = "",
    x_label: str = "",
    y_label: str = "",
    width: int = 720,
    height: int = 440,
) -> str:
    """Polyline per series, optional vertical markers (e.g. cache sizes), legend.

    With ``axes="log2-x"`` every doubling of x spans the same pixel distance.
    """
    if axes not in ("linear", "log2-x"):
        raise ValueError("axes must be 'linear' or 'log2-x'")
    if not series:
        raise ReportError("no series to plot")
    for s in series:
        if not s.xs or len(s.xs) != len(s.ys):
            raise ReportError(f"series {s.label!r} needs at least one point with matching x and y")
    log_x = axes == "log2-x"
    xs = [x for s in series for x in s.xs] + list(markers)
    if log_x and any(x <= 0 for x in xs):
        raise ReportError("log2-x axis needs positive x values")
    ys = [y for s in series for y in s.ys]
    tx = (lambda v: math.log2(v)) if log_x else (lambda v: v)
    x0, x1 = tx(min(xs)), tx(max(xs))
    if x1 == x0:
        x1 = x0 + 1
    y0, y1 = min(0.0, min(ys)), max(ys)
    if y1 == y0:
        y1 = y0 + 1
    left, right, top, bottom = 70, 20, 36, 56
    pw, ph = width - left - right, height - top - bottom

    def px(v):
        return left + (tx(v) - x0) / (x1 - x0) * pw

    def py(v):
        return top + ph - (v - y0) / (y1 - y0) * ph

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}" font-family="sans-serif">',
        f'<rect x="0" y="0" width="{width}" height="{height}" fill="#ffffff"/>',
        f'<rect class="plot-area" x="{left}" y="{top}" width="{pw}" height="{ph}" fill="none" stroke="#000000"/>',
    ]
    if title:
        parts.append(f'<text x="{left}" y="22" font-size="14">{escape(title)}</text>')
    if log_x:
        k0, k1 = math.ceil(x0), math.floor(x1)
        xticks = [2.0**k for k in range(k0, k1 + 1)]
        stride = max(1, math.ceil(len(xticks) / 10))
        xticks = xticks[::stride]
    else:
        xticks = _ticks(x0, x1)
    for t in xticks:
        x = px(t)
        label = _size_label(t) if log_x else f"{t:g}"
        parts.append(f'<line class="xtick" x1="{_f(x)}" y1="{top + ph}" x2="{_f(x)}" y2="{top + ph + 5}" stroke="#000000"/>')
        parts.append(f'<text x="{_f(x)}" y="{top + ph + 18}" font-size="10" text-anchor="middle">{escape(label)}</text>')
    for t in _ticks(y0, y1):
        y = py(t)
        parts.append(f'<line class="ytick" x1="{left - 5}" y1="{_f(y)}" x2="{left}" y2="{_f(y)}" stroke="#000000"/>')
        parts.append(f'<text x="{left - 8}" y="{_f(y + 3)}" font-size="10" text-anchor="end">{t:g}</text>')
    if x_label:
        parts.append(f'<text x="{_f(left + pw / 2)}" y="{height - 12}" font-size="12" text-anchor="middle">{escape(x_label)}</text>')
    if y_label:
        parts.append(
            f'<text x="16" y="{_f(top + ph / 2)}" font-size="12" text-anchor="middle" '
            f'transform="rotate(-90 16 {_f(top + ph / 2)})">{escape(y_label)}</text>'
        )
    labels = list(marker_labels) if marker_labels is not None else [_size_label(m) for m in markers]
    for m, lab in zip(markers, labels):
        x = px(m)
        parts.append(
            f'<line class="marker" x1="{_f(x)}" y1="{top}" x2="{_f(x)}" y2="{top + ph}" '
            f'stroke="#777777" stroke-dasharray="4 3"/>'
        )
        parts.append(f'<text x="{_f(x + 3)}" y="{top + 12}" font-size="10" fill="#555555">{escape(lab)}</text>')
    for k, s in enumerate(series):
        color = SERIES_COLORS[k % len(SERIES_COLORS)]
        pts = " ".join(f"{_f(px(x))},{_f(py(y))}" for x, y in zip(s.xs, s.ys))
        parts.append(f'<polyline class="series" points="{pts}" fill="none" stroke="{color}" stroke-width="2"/>')
        for x, y in zip(s.xs, s.ys):
            parts.append(f'<circle class="point" cx="{_f(px(x))}" cy="{_f(py(y))}" r="2.5" fill="{color}"/>')
        ly = top + 14 + 16 * k
        lx = left + pw - 180
        parts.append(f'<line class="legend" x1="{lx}" y1="{ly}" x2="{lx + 20}" y2="{ly}" stroke="{color}" stroke-width="2"/>')
        parts.append(f'<text x="{lx + 26}" y="{ly + 4}" font-size="11">{escape(s.label)}</text>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"
