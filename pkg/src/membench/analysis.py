"""Statistics, achieved-vs-bound fractions and cache breakpoint detection."""

from __future__ import annotations

import statistics
from dataclasses import dataclass
from fractions import Fraction

from .errors import AnalysisError, RoutingError
from .records import BANDWIDTH_KERNELS, MeasurementRecord, exact_derived
from .topo import TopologySpec, compute_bound

DEFAULT_DELTA = 0.3
DEFAULT_WINDOW = 2


@dataclass(frozen=True)
class Stats:
    mean: Fraction
    min: int
    max: int
    stdev: float  # sample standard deviation; 0 for a single iteration
    count: int
    unit: str = "ns"


def summarize(record: MeasurementRecord) -> Stats:
    """Elapsed-time statistics over the non-warmup iterations."""
    values = [it.elapsed_ns for it in record.measured()]
    if not values:
        raise AnalysisError(f"record {record.case_id!r} has no measured iterations")
    stdev = statistics.stdev(values) if len(values) > 1 else 0.0
    return Stats(Fraction(sum(values), len(values)), min(values), max(values), stdev, len(values))


@dataclass(frozen=True)
class FractionEntry:
    record_id: str
    achieved: Fraction
    bound: Fraction
    fraction: Fraction
    limiting_resource: str | None = None

    @property
    def note(self) -> str:
        return "cache-resident?" if self.fraction > 1 else ""


def fraction(achieved, bound) -> Fraction:
    """achieved / bound, exact for ints, Fractions and floats alike; never clamped."""
    achieved, bound = Fraction(achieved), Fraction(bound)
    if bound <= 0:
        raise AnalysisError("bound must be positive")
    return achieved / bound


def _memory_of(placement: dict, spec: TopologySpec) -> str:
    nodes = placement.get("realized_nodes")
    policy = placement.get("policy", {})
    if placement.get("degraded"):
        raise AnalysisError("degraded allocation cannot be mapped to a topology memory domain")
    if isinstance(nodes, list):
        if len(nodes) != 1:
            raise AnalysisError(f"placement spans nodes {nodes}; no single memory domain")
        node = nodes[0]
    elif policy.get("kind") == "node":
        node = policy["node"]  # bound explicitly but pages could not be located
    else:
        raise AnalysisError("placement realization is unverified")
    mem = spec.memory_for_node(node)
    if mem is None:
        raise AnalysisError(f"NUMA node {node} has no memory domain in topology {spec.name!r}")
    return mem.id


def record_bound(record: MeasurementRecord, spec: TopologySpec):
    if record.kernel not in BANDWIDTH_KERNELS:
        raise AnalysisError(f"{record.kernel} records have no bandwidth bound")
    initiator = record.initiator
    if initiator is None:
        pus = {spec.pu_for_core(c) for c in record.cores}
        if len(pus) != 1 or None in pus:
            raise AnalysisError(f"cores {record.cores} do not map to a single processing unit")
        initiator = pus.pop()
    mems = [_memory_of(p, spec) for p in record.placements]
    try:
        if record.kernel == "copy":
            return compute_bound(spec, "copy", initiator, mems[0], mems[1])
        return compute_bound(spec, record.kernel, initiator, mems[0])
    except RoutingError as exc:
        raise AnalysisError(str(exc)) from None


def fraction_of_bound(record: MeasurementRecord, spec: TopologySpec) -> FractionEntry:
    achieved = exact_derived(record)
    if achieved is None:
        raise AnalysisError(f"record {record.case_id!r} has no measured throughput")
    b = record_bound(record, spec)
    return FractionEntry(record.case_id, achieved, b.bound, fraction(achieved, b.bound), b.limiting_resource)


def detect_breakpoints(samples, delta: float = DEFAULT_DELTA, window: int = DEFAULT_WINDOW) -> list:
    """Sizes after which latency jumps.

    For each size s_i with ``window`` points on both sides, the ratio is
    median(next window) / median(window ending at s_i). s_i is a breakpoint
    when the ratio is at least ``1 + delta`` and is a local maximum of the
    ratio sequence (strictly above its left neighbour, at least its right),
    so a single step yields a single size: the last one before the jump.
    """
    pts = [(s, float(v)) for s, v in samples]
    if len(pts) < max(4, 2 * window):
        raise AnalysisError(f"need at least {max(4, 2 * window)} samples, got {len(pts)}")
    sizes = [p[0] for p in pts]
    if any(b <= a for a, b in zip(sizes, sizes[1:])):
        raise AnalysisError("samples must be sorted by strictly increasing size")
    lat = [p[1] for p in pts]
    ratios: dict[int, float] = {}
    for i in range(window - 1, len(pts) - window):
        before = statistics.median(lat[i - window + 1 : i + 1])
        after = statistics.median(lat[i + 1 : i + 1 + window])
        ratios[i] = after / before if before > 0 else float("inf")
    out = []
    for i, r in ratios.items():
        left = ratios.get(i - 1, float("-inf"))
        right = ratios.get(i + 1, float("-inf"))
        if r >= 1 + delta and r > left and r >= right:
            out.append(sizes[i])
    return out


def chase_curves(records) -> dict[tuple, list[tuple[int, float]]]:
    """Chase records grouped by (cores, placement kind) as sorted (size, ns/access) lists."""
    groups: dict[tuple, list] = {}
    for r in records:
        if r.kernel != "chase" or r.derived_value is None or not r.placements:
            continue
        p = r.placements[0]
        key = (tuple(r.cores), str(p.get("policy", {}).get("kind", "")), str(p.get("realized_nodes")))
        groups.setdefault(key, []).append((int(p["length"]), float(r.derived_value)))
    return {k: sorted(v) for k, v in groups.items()}
