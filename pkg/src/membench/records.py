"""MeasurementRecord: the unit written to results files and consumed by analysis/report."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from fractions import Fraction

BANDWIDTH_KERNELS = ("read", "write", "copy")
UNITS = {"read": "GB/s", "write": "GB/s", "copy": "GB/s", "chase": "ns/access", "pingpong": "ns/exchange"}


@dataclass
class Iteration:
    index: int
    elapsed_ns: int  # max(worker end) - start tick
    warmup: bool = False
    start_skew_ns: int = 0
    worker_end_ns: list[int] = field(default_factory=list)  # each worker's end - start
    accesses: int | None = None  # chase
    kernel_ns: int | None = None  # ping-pong: first to last successful ping swap
    retried: bool = False


@dataclass
class MeasurementRecord:
    case_id: str
    kernel: str
    cores: list[int]
    bytes_per_iter: int
    iterations: list[Iteration]
    derived_value: float | None
    unit: str
    worker_count: int = 1
    initiator: str | None = None
    placements: list[dict] = field(default_factory=list)
    clock: dict | None = None
    topo_hash: str | None = None
    start_skew_ns: int = 0
    timestamp: str = ""
    version: str = ""
    pinned: bool = True
    degraded: bool = False
    rounds: int | None = None
    access_width: int | None = None
    checksum: int | None = None
    noise: dict | None = None

    def measured(self) -> list[Iteration]:
        return [it for it in self.iterations if not it.warmup]

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "MeasurementRecord":
        d = dict(d)
        d["iterations"] = [Iteration(**it) for it in d.get("iterations", [])]
        return cls(**d)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), separators=(",", ":"))


def exact_derived(record: MeasurementRecord) -> Fraction | None:
    """Derived value recomputed exactly from stored fields.

    GB/s is bytes per ns; latencies are ns per access / per full exchange.
    Warmup iterations are excluded.
    """
    its = record.measured()
    if not its:
        return None
    if record.kernel in BANDWIDTH_KERNELS:
        total = sum(it.elapsed_ns for it in its)
        return Fraction(record.bytes_per_iter * len(its), total) if total > 0 else None
    if record.kernel == "chase":
        accesses = sum(it.accesses or 0 for it in its)
        return Fraction(sum(it.elapsed_ns for it in its), accesses) if accesses else None
    if record.kernel == "pingpong":
        exchanges = len(its) * ((record.rounds or 0) - 1)
        return Fraction(sum(it.kernel_ns or 0 for it in its), exchanges) if exchanges > 0 else None
    raise ValueError(f"unknown kernel {record.kernel!r}")


def derived_float(record: MeasurementRecord) -> float | None:
    x = exact_derived(record)
    return None if x is None else float(x)
