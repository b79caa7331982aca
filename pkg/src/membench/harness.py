"""Benchmark orchestration: pinned workers, synchronized start, cases and suites.

Start protocol: the control thread picks ``start = now + delay`` and hands
it to every worker. Each worker records its arrival tick, waits on a barrier
until all have arrived, spins until ``start`` and runs its kernel, recording
begin and end ticks. The iteration's elapsed time is ``max(end) - start``.
A worker arriving at or after ``start`` invalidates the attempt; it is
retried once with four times the delay.

Spin hygiene: a waiting worker calls sched_yield while more than
``YIELD_MARGIN_NS`` remain, then spins on plain clock reads.
"""

from __future__ import annotations

import json
import logging
import threading
import time
from concurrent.futures import Future, ThreadPoolExecutor
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path

import numpy as np
from numba import njit

from . import __version__
from ._native import mono_ns, spin_until
from .alloc import (
    CACHE_LINE,
    BenchBuffer,
    Default,
    FirstTouch,
    Policy,
    allocate,
    host_cores,
    partition,
    pin_current_thread,
    policy_from_dict,
    policy_label,
    policy_to_dict,
)
from .clock import SYSTEM_CLOCK, estimate_resolution
from .errors import MembenchError, PingPongTimeout, PinningError, SyncStartError
from .kernels import (
    ACCESS_WIDTH,
    DEFAULT_CHASE_NS,
    DEFAULT_GRANULARITY,
    DEFAULT_NOISE_BYTES,
    FLAG_REGION,
    PONG,
    WORD,
    CancelToken,
    _chase_core,
    _copy_core,
    _pingpong_core,
    _read_core,
    _write_core,
    build_chase,
    kernel_noise,
    pingpong_roles,
)
from .records import UNITS, Iteration, MeasurementRecord, derived_float
from .report import Matrix
from .topo import TopologySpec, topology_hash

log = logging.getLogger(__name__)

KERNELS = ("read", "write", "copy", "chase", "pingpong")
DEFAULT_DELAY_NS = 1_000_000
RETRY_FACTOR = 4
YIELD_MARGIN_NS = 200_000
DEFAULT_COOLDOWN_S = 0.1
DEFAULT_PINGPONG_TIMEOUT_NS = 10_000_000_000


# --------------------------------------------------------------------------
# case description


@dataclass
class BufferSpec:
    length: int
    policy: Policy = field(default_factory=Default)
    alignment: int = CACHE_LINE

    def to_dict(self) -> dict:
        return {"length": self.length, "policy": policy_to_dict(self.policy), "alignment": self.alignment}

    @classmethod
    def from_dict(cls, d: dict) -> "BufferSpec":
        return cls(int(d["length"]), policy_from_dict(d.get("policy")), int(d.get("alignment", CACHE_LINE)))


@dataclass
class NoiseConfig:
    cores: tuple[int, ...]
    length: int = DEFAULT_NOISE_BYTES
    policy: Policy = field(default_factory=Default)

    def to_dict(self) -> dict:
        return {"cores": list(self.cores), "length": self.length, "policy": policy_to_dict(self.policy)}

    @classmethod
    def from_dict(cls, d: dict) -> "NoiseConfig":
        return cls(tuple(d["cores"]), int(d.get("length", DEFAULT_NOISE_BYTES)), policy_from_dict(d.get("policy")))


_OPERANDS = {"read": 1, "write": 1, "copy": 2, "chase": 1, "pingpong": 1}


@dataclass
class BenchmarkCase:
    id: str
    kernel: str
    cores: tuple[int, ...]
    buffers: tuple[BufferSpec, ...]
    repetitions: int = 10
    warmup: int = 1
    passes: int = 1  # kernel-level repetitions per measured iteration (read)
    stride: int = ACCESS_WIDTH  # write stride in bytes
    pattern: int = 0xA5A5A5A5A5A5A5A5
    chase_stride: int = CACHE_LINE
    seed: int = 0
    duration_ns: int = DEFAULT_CHASE_NS
    granularity: int = DEFAULT_GRANULARITY
    rounds: int = 1000
    timeout_ns: int = DEFAULT_PINGPONG_TIMEOUT_NS
    delay_ns: int = DEFAULT_DELAY_NS
    initiator: str | None = None  # topology PU id; derived from cores when absent
    noise: NoiseConfig | None = None

    def __post_init__(self):
        self.cores = tuple(self.cores)
        self.buffers = tuple(self.buffers)
        problems = []
        if self.kernel not in KERNELS:
            problems.append(f"unknown kernel {self.kernel!r}")
        elif len(self.buffers) != _OPERANDS[self.kernel]:
            problems.append(f"{self.kernel} takes {_OPERANDS[self.kernel]} buffer(s), got {len(self.buffers)}")
        if not self.cores:
            problems.append("at least one initiator core is required")
        if self.repetitions < 1:
            problems.append("repetitions must be >= 1")
        if self.warmup < 0:
            problems.append("warmup must be >= 0")
        if self.kernel == "chase" and len(self.cores) != 1:
            problems.append("chase runs on exactly one core")
        if self.kernel == "pingpong" and len(self.cores) != 2:
            problems.append("pingpong needs exactly two cores (ping, pong)")
        if self.noise is not None and set(self.noise.cores) & set(self.cores):
            problems.append("noise cores must be disjoint from initiator cores")
        if problems:
            raise ValueError(f"case {self.id!r}: " + "; ".join(problems))

    def to_dict(self) -> dict:
        d = {k: getattr(self, k) for k in self.__dataclass_fields__}
        d["cores"] = list(self.cores)
        d["buffers"] = [b.to_dict() for b in self.buffers]
        d["noise"] = self.noise.to_dict() if self.noise else None
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "BenchmarkCase":
        d = dict(d)
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError(f"case {d.get('id')!r}: unknown field(s) {sorted(unknown)}")
        d["buffers"] = [BufferSpec.from_dict(b) for b in d.get("buffers", [])]
        d["cores"] = tuple(d.get("cores", ()))
        if d.get("noise") is not None:
            d["noise"] = NoiseConfig.from_dict(d["noise"])
        return cls(**d)


def parse_suite(text: str | list) -> list:
    """Suite document (JSON list of case objects) -> raw case dicts."""
    doc = json.loads(text) if isinstance(text, (str, bytes)) else text
    if not isinstance(doc, list):
        raise ValueError("suite must be a JSON list of cases")
    return doc


# --------------------------------------------------------------------------
# workers and the start protocol


class WorkerPool:
    """One single-thread executor per worker, each pinned to its core."""

    def __init__(self, cores, pin: bool = True, name: str = "worker"):
        self.cores = tuple(cores)
        self.pin = pin
        self.executors = [
            ThreadPoolExecutor(
                1,
                thread_name_prefix=f"{name}{i}-core{c}",
                initializer=pin_current_thread if pin else None,
                initargs=(c,) if pin else (),
            )
            for i, c in enumerate(self.cores)
        ]

    def __len__(self):
        return len(self.executors)

    def submit(self, i: int, fn, *args) -> Future:
        return self.executors[i].submit(fn, *args)

    def run_on(self, i: int, fn):
        return self.submit(i, fn).result()

    def close(self):
        for ex in self.executors:
            ex.shutdown(wait=True)

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def check_cores(cores) -> None:
    available = host_cores()
    bad = sorted(set(c for c in cores if c not in available))
    if bad:
        raise PinningError(f"core(s) {bad} not available; host cores are {available}")


@dataclass
class StartOutcome:
    start: int
    arrivals: list[int]
    begins: list[int]
    ends: list[int]
    payloads: list
    delay_ns: int
    retried: bool = False

    @property
    def valid(self) -> bool:
        return all(a < self.start for a in self.arrivals)

    @property
    def start_skew(self) -> int:
        return max(b - self.start for b in self.begins)

    @property
    def elapsed(self) -> int:
        return max(self.ends) - self.start

    @property
    def worker_spans(self) -> list[int]:
        return [e - self.start for e in self.ends]


def _attempt(workers, delay_ns, clock, submit) -> StartOutcome:
    n = len(workers)
    barrier = threading.Barrier(n)
    start = clock.now_ns() + delay_ns

    def task(worker):
        arrival = clock.now_ns()
        barrier.wait(timeout=60)
        begin, end, payload = worker(start)
        return arrival, begin, end, payload

    futures = [submit(i, task, w) for i, w in enumerate(workers)]
    results = [f.result() for f in futures]
    return StartOutcome(
        start=start,
        arrivals=[r[0] for r in results],
        begins=[r[1] for r in results],
        ends=[r[2] for r in results],
        payloads=[r[3] for r in results],
        delay_ns=delay_ns,
    )


def synchronized_start(workers, delay_ns: int = DEFAULT_DELAY_NS, clock=None, pool: WorkerPool | None = None) -> StartOutcome:
    """Run ``workers`` (callables ``start_tick -> (begin, end, payload)``) from a common start tick."""
    clock = clock or SYSTEM_CLOCK
    own = None
    if pool is None:
        own = ThreadPoolExecutor(len(workers), thread_name_prefix="sync")
        submit = lambda i, fn, *a: own.submit(fn, *a)  # noqa: E731
    else:
        submit = pool.submit
    try:
        outcome = _attempt(workers, delay_ns, clock, submit)
        if not outcome.valid:
            log.warning("start tick missed with delay %d ns; retrying with %d ns", delay_ns, delay_ns * RETRY_FACTOR)
            outcome = _attempt(workers, delay_ns * RETRY_FACTOR, clock, submit)
            outcome.retried = True
            if not outcome.valid:
                raise SyncStartError(
                    f"workers arrived after the start tick even with delay {delay_ns * RETRY_FACTOR} ns"
                )
        return outcome
    finally:
        if own is not None:
            own.shutdown(wait=True)


# --------------------------------------------------------------------------
# compiled timed bodies: spin to start, run the kernel, stamp the end


@njit(nogil=True, cache=True)
def _timed_read(words, passes, start, margin):
    begin = spin_until(start, margin)
    checksum = _read_core(words, passes)
    return begin, mono_ns(), checksum


@njit(nogil=True, cache=True)
def _timed_write(words, stride_words, pattern, start, margin):
    begin = spin_until(start, margin)
    readback, stores = _write_core(words, stride_words, pattern)
    return begin, mono_ns(), readback, stores


@njit(nogil=True, cache=True)
def _timed_copy(src, dst, start, margin):
    begin = spin_until(start, margin)
    n = _copy_core(src, dst)
    return begin, mono_ns(), n


@njit(nogil=True, cache=True)
def _timed_chase(words, stride_words, start_index, duration_ns, granularity, start, margin):
    begin = spin_until(start, margin)
    accesses, idx, _, _ = _chase_core(words, stride_words, start_index, duration_ns, granularity)
    return begin, mono_ns(), accesses, idx


@njit(nogil=True, cache=True)
def _timed_pingpong(flag, expected, desired, rounds, timeout_ns, start, margin):
    begin = spin_until(start, margin)
    swaps, first, last, timed_out = _pingpong_core(flag, expected, desired, rounds, timeout_ns)
    return begin, mono_ns(), swaps, first, last, timed_out


def _make_workers(case: BenchmarkCase, buffers: list[BenchBuffer]):
    """Per-worker callables plus a fold of their payloads into iteration fields."""
    n = len(case.cores)
    margin = YIELD_MARGIN_NS

    if case.kernel == "read":
        ranges = partition(buffers[0], n)
        views = [buffers[0].words(a, b) for a, b in ranges]
        workers = [lambda s, w=w: _split(_timed_read(w, case.passes, s, margin)) for w in views]
        return workers, buffers[0].length * case.passes, ranges

    if case.kernel == "write":
        if case.stride % ACCESS_WIDTH:
            raise ValueError("write stride must be a multiple of 16 bytes")
        ranges = partition(buffers[0], n)
        views = [buffers[0].words(a, b) for a, b in ranges]
        pattern = np.uint64(case.pattern)
        workers = [
            lambda s, w=w: _split(_timed_write(w, case.stride // WORD, pattern, s, margin)) for w in views
        ]
        stores = sum(-(-(b - a) // case.stride) for a, b in ranges)
        return workers, stores * ACCESS_WIDTH, ranges

    if case.kernel == "copy":
        src, dst = buffers
        if src.length != dst.length:
            raise ValueError(f"copy buffers differ in length ({src.length} vs {dst.length})")
        ranges = partition(src, n)
        pairs = [(src.words(a, b), dst.words(a, b)) for a, b in ranges]
        workers = [lambda s, p=p: _split(_timed_copy(p[0], p[1], s, margin)) for p in pairs]
        return workers, src.length, ranges

    if case.kernel == "chase":
        chase = build_chase(buffers[0].array, case.chase_stride, case.seed, cache_line=buffers[0].cache_line)
        worker = lambda s: _split(  # noqa: E731
            _timed_chase(chase.words, chase.stride_words, chase.start_index, case.duration_ns, case.granularity, s, margin)
        )
        return [worker], 0, [(0, buffers[0].length)]

    if case.kernel == "pingpong":
        flag = buffers[0].array[:FLAG_REGION]
        workers = []
        for role in ("ping", "pong"):
            expected, desired = pingpong_roles(role)
            workers.append(
                lambda s, e=expected, d=desired: _split(
                    _timed_pingpong(flag, e, d, case.rounds, case.timeout_ns, s, margin)
                )
            )
        return workers, 0, [(0, FLAG_REGION)]

    raise ValueError(f"unknown kernel {case.kernel!r}")


def _split(result):
    begin, end, *payload = result
    return int(begin), int(end), tuple(payload)


# --------------------------------------------------------------------------
# cases


_CLOCK_INFO = None


def clock_info() -> dict:
    global _CLOCK_INFO
    if _CLOCK_INFO is None:
        _CLOCK_INFO = estimate_resolution(20_000).to_dict()
    return dict(_CLOCK_INFO)


def resolve_initiator(case: BenchmarkCase, spec: TopologySpec | None) -> str | None:
    if case.initiator is not None or spec is None:
        return case.initiator
    pus = {spec.pu_for_core(c) for c in case.cores}
    if len(pus) == 1:
        return pus.pop()
    return None


def _cache_line(spec: TopologySpec | None, initiator: str | None) -> int:
    if spec is None or initiator is None:
        return CACHE_LINE
    return spec.pu(initiator).cache_line


def _allocate_operand(bs: BufferSpec, case_cores, pool: WorkerPool | None, cache_line: int, pin: bool) -> BenchBuffer:
    policy = bs.policy
    run_on = None
    if isinstance(policy, FirstTouch):
        if not policy.cores:
            policy = FirstTouch(tuple(case_cores))
        if pool is not None and policy.cores == pool.cores:
            run_on = pool.run_on
    buf = allocate(bs.length, policy, bs.alignment, cache_line=cache_line, run_on=run_on, pin=pin)
    if policy is not bs.policy:
        buf.notes.append(f"first touch by initiator cores {list(policy.cores)}")
    return buf


class _Noise:
    def __init__(self, cfg: NoiseConfig, pin: bool, cache_line: int):
        self.cfg = cfg
        self.pool = WorkerPool(cfg.cores, pin, name="noise")
        self.buffers = [
            allocate(cfg.length, cfg.policy, cache_line=cache_line, pin=pin) for _ in cfg.cores
        ]
        self.tokens = [CancelToken() for _ in cfg.cores]
        self.futures = []

    def start(self):
        self.futures = [
            self.pool.submit(i, kernel_noise, b.array, t)
            for i, (b, t) in enumerate(zip(self.buffers, self.tokens))
        ]

    def stop(self) -> dict:
        for t in self.tokens:
            t.cancel()
        totals = [f.result() for f in self.futures]
        self.pool.close()
        meta = self.cfg.to_dict()
        meta["placements"] = [b.placement() for b in self.buffers]
        meta["bytes_read"] = totals
        for b in self.buffers:
            b.close()
        return meta


def run_case(case: BenchmarkCase, spec: TopologySpec | None = None, *, pin: bool = True) -> MeasurementRecord:
    """Allocate, run warmup + measured iterations, and return the record."""
    if pin:
        check_cores(case.cores)
        if case.noise is not None:
            check_cores(case.noise.cores)
    initiator = resolve_initiator(case, spec)
    cache_line = _cache_line(spec, initiator)
    noise = None
    buffers: list[BenchBuffer] = []
    pool = WorkerPool(case.cores, pin)
    try:
        # flush pinning errors out of the executors before any real work
        for i in range(len(pool)):
            pool.run_on(i, lambda: None)
        for bs in case.buffers:
            buffers.append(_allocate_operand(bs, case.cores, pool, cache_line, pin))
        workers, bytes_per_iter, _ = _make_workers(case, buffers)

        if case.noise is not None:
            noise = _Noise(case.noise, pin, cache_line)
            noise.start()

        iterations = []
        checksum = 0
        for index in range(case.warmup + case.repetitions):
            if case.kernel == "pingpong":
                buffers[0].array[0] = PONG
            outcome = synchronized_start(workers, case.delay_ns, SYSTEM_CLOCK, pool)
            it = Iteration(
                index=index,
                elapsed_ns=outcome.elapsed,
                warmup=index < case.warmup,
                start_skew_ns=outcome.start_skew,
                worker_end_ns=outcome.worker_spans,
                retried=outcome.retried,
            )
            checksum = _fold_payloads(case, outcome, it, buffers)
            iterations.append(it)
        noise_meta = noise.stop() if noise is not None else None
        noise = None
    finally:
        if noise is not None:
            noise.stop()
        pool.close()

    placements = [b.placement() for b in buffers]
    for b in buffers:
        b.close()
    record = MeasurementRecord(
        case_id=case.id,
        kernel=case.kernel,
        cores=list(case.cores),
        bytes_per_iter=bytes_per_iter,
        iterations=iterations,
        derived_value=None,
        unit=UNITS[case.kernel],
        worker_count=len(case.cores),
        initiator=initiator,
        placements=placements,
        clock=clock_info(),
        topo_hash=topology_hash(spec) if spec is not None else None,
        start_skew_ns=max((it.start_skew_ns for it in iterations if not it.warmup), default=0),
        timestamp=datetime.now(timezone.utc).isoformat(timespec="seconds"),
        version=__version__,
        pinned=pin,
        degraded=(not pin) or any(p["degraded"] for p in placements),
        rounds=case.rounds if case.kernel == "pingpong" else None,
        access_width=ACCESS_WIDTH if case.kernel in ("read", "write", "copy") else None,
        checksum=checksum,
        noise=noise_meta,
    )
    record.derived_value = derived_float(record)
    return record


def _fold_payloads(case, outcome: StartOutcome, it: Iteration, buffers) -> int:
    payloads = outcome.payloads
    if case.kernel == "read":
        acc = 0
        for (cs,) in payloads:
            acc ^= int(cs)
        return acc
    if case.kernel == "write":
        pattern = np.uint64(case.pattern)
        for readback, stores in payloads:
            if stores and readback != pattern:
                raise MembenchError("write read-back did not observe the stored pattern")
        return int(pattern)
    if case.kernel == "copy":
        return int(sum(p[0] for p in payloads))
    if case.kernel == "chase":
        accesses, idx = payloads[0]
        it.accesses = int(accesses)
        return int(idx)
    if case.kernel == "pingpong":
        (ping_swaps, first, last, ping_to), (pong_swaps, _, _, pong_to) = payloads
        if ping_to or pong_to:
            raise PingPongTimeout(f"case {case.id!r}: partner absent (swaps {ping_swaps}/{pong_swaps})")
        if ping_swaps != pong_swaps or buffers[0].array[0] != PONG:
            raise MembenchError(f"case {case.id!r}: ping-pong ended inconsistent")
        it.kernel_ns = int(last - first)
        return int(ping_swaps)
    return 0


# --------------------------------------------------------------------------
# suites


@dataclass
class SuiteResult:
    records: list[MeasurementRecord] = field(default_factory=list)
    errors: list[dict] = field(default_factory=list)


def run_suite(
    suite,
    spec: TopologySpec | None = None,
    *,
    out: str | Path | None = None,
    pin: bool = True,
    cooldown_s: float = DEFAULT_COOLDOWN_S,
) -> SuiteResult:
    """Run cases one after another in file order.

    Each finished record is appended to ``out`` (JSON lines) immediately; a
    failing case is logged to ``<out>.errors.jsonl`` and the suite moves on.
    """
    cases = parse_suite(suite)
    result = SuiteResult()
    out_path = Path(out) if out is not None else None
    err_path = out_path.with_name(out_path.name + ".errors.jsonl") if out_path else None
    if out_path is not None:
        out_path.write_text("")
        if err_path.exists():
            err_path.unlink()
    for n, raw in enumerate(cases):
        case_id = raw.get("id", f"#{n}") if isinstance(raw, dict) else f"#{n}"
        try:
            case = BenchmarkCase.from_dict(raw)
            record = run_case(case, spec, pin=pin)
        except (MembenchError, ValueError, TypeError, KeyError, OSError) as exc:
            entry = {"case_id": case_id, "error": f"{type(exc).__name__}: {exc}"}
            log.error("case %s failed: %s", case_id, entry["error"])
            result.errors.append(entry)
            if err_path is not None:
                with err_path.open("a") as fh:
                    fh.write(json.dumps(entry) + "\n")
            continue
        result.records.append(record)
        if out_path is not None:
            with out_path.open("a") as fh:
                fh.write(record.to_json() + "\n")
        if cooldown_s and n + 1 < len(cases):
            time.sleep(cooldown_s)
    return result


def pingpong_matrix(
    core_pairs,
    placements,
    rounds: int = 1000,
    *,
    repetitions: int = 5,
    warmup: int = 1,
    spec: TopologySpec | None = None,
    pin: bool = True,
    records: list | None = None,
) -> Matrix:
    """Mean full-exchange latency (ns) per (core pair, flag placement).

    ``placements`` maps a column label to a placement policy, or is a list of
    policies labelled by :func:`policy_label`.
    """
    if not isinstance(placements, dict):
        placements = {policy_label(p): p for p in placements}
    pairs = [tuple(p) for p in core_pairs]
    for a, b in pairs:
        if a == b:
            raise ValueError(f"ping-pong pair ({a}, {b}) must use distinct cores")
    rows, values = [], []
    for a, b in pairs:
        rows.append(f"{a}-{b}")
        row = []
        for label, policy in placements.items():
            case = BenchmarkCase(
                id=f"pingpong-{a}-{b}-{label}",
                kernel="pingpong",
                cores=(a, b),
                buffers=(BufferSpec(FLAG_REGION, policy),),
                repetitions=repetitions,
                warmup=warmup,
                rounds=rounds,
            )
            rec = run_case(case, spec, pin=pin)
            if records is not None:
                records.append(rec)
            row.append(rec.derived_value)
        values.append(row)
    return Matrix(rows=rows, cols=list(placements), values=values, unit="ns")
