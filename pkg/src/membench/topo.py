"""System topology model and theoretical bandwidth bounds.

A topology is a graph of processing units (PUs), memory domains and
full-duplex links. Every memory domain lives at a *home* PU (the chip whose
fabric hosts its controller); reaching it from the home PU crosses no link.
Links connect PUs, memories (i.e. their home) or named socket ports.

Bounds follow a resource-accounting scheme: each memory domain is one shared
read+write capacity, each link direction is an independent capacity, and the
bound of an operation is ``min(capacity / uses)`` over the resources its
payload crosses. Only payload direction is counted; request and coherence
traffic is ignored. All arithmetic is exact (``fractions.Fraction``).
"""

from __future__ import annotations

import hashlib
import json
from collections import Counter
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Iterable

from .errors import RoutingError, TopologyError

CPU = "cpu"
ACCELERATOR = "accelerator"
PU_KINDS = (CPU, ACCELERATOR)
DDR = "ddr"
HBM = "hbm"
MEMORY_KINDS = (DDR, HBM)
OPS = ("read", "write", "copy")

PORT_PREFIX = "port:"
REFERENCE_TOPOLOGY = Path(__file__).parent / "topologies" / "quad_gh200.json"


@dataclass(frozen=True)
class Cache:
    level: int
    size: int
    shared: bool = False


@dataclass(frozen=True)
class ProcessingUnit:
    id: str
    kind: str
    socket: int
    core_count: int
    caches: tuple[Cache, ...] = ()
    cache_line: int = 64
    host_cores: tuple[int, ...] | None = None


@dataclass(frozen=True)
class MemoryDomain:
    id: str
    kind: str
    socket: int
    numa_node: int
    capacity: int
    bandwidth: Fraction
    home: str


@dataclass(frozen=True)
class Link:
    id: str
    endpoint_a: str
    endpoint_b: str
    bandwidth_per_direction: Fraction
    allowed_initiators: frozenset[str] = frozenset(PU_KINDS)
    note: str | None = None


@dataclass(frozen=True)
class TopologySpec:
    name: str
    page_size: int
    pus: tuple[ProcessingUnit, ...]
    memories: tuple[MemoryDomain, ...]
    links: tuple[Link, ...]
    sockets: tuple[int, ...] | None = None

    def pu(self, pu_id: str) -> ProcessingUnit:
        for p in self.pus:
            if p.id == pu_id:
                return p
        raise RoutingError(f"unknown processing unit {pu_id!r}")

    def memory(self, mem_id: str) -> MemoryDomain:
        for m in self.memories:
            if m.id == mem_id:
                return m
        raise RoutingError(f"unknown memory domain {mem_id!r}")

    def link(self, link_id: str) -> Link:
        for lk in self.links:
            if lk.id == link_id:
                return lk
        raise KeyError(link_id)

    def memory_for_node(self, numa_node: int) -> MemoryDomain | None:
        for m in self.memories:
            if m.numa_node == numa_node:
                return m
        return None

    def vertex(self, endpoint: str) -> str:
        """Graph vertex for a link endpoint: memories collapse onto their home PU."""
        for m in self.memories:
            if m.id == endpoint:
                return m.home
        return endpoint

    def core_map(self) -> dict[int, str]:
        """Host core id -> CPU-like PU id.

        PUs without ``host_cores`` get consecutive ranges in declaration order.
        """
        mapping: dict[int, str] = {}
        next_core = 0
        for p in self.pus:
            if p.kind != CPU:
                continue
            cores = p.host_cores
            if cores is None:
                cores = tuple(range(next_core, next_core + p.core_count))
            for c in cores:
                mapping.setdefault(c, p.id)
            next_core = max(next_core, max(cores, default=-1) + 1)
        return mapping

    def pu_for_core(self, core: int) -> str | None:
        return self.core_map().get(core)


@dataclass(frozen=True)
class Hop:
    """One link traversal; payload flows ``source -> target``."""

    link: str
    source: str
    target: str

    @property
    def resource(self) -> str:
        return link_resource(self.link, self.source, self.target)


@dataclass(frozen=True)
class Datapath:
    initiator: str
    memory: str
    hops: tuple[Hop, ...]  # ordered from the memory towards the initiator

    @property
    def link_ids(self) -> tuple[str, ...]:
        return tuple(h.link for h in self.hops)


@dataclass(frozen=True)
class BoundResult:
    op: str
    initiator: str
    src: str
    dst: str | None
    bound: Fraction
    limiting_resource: str
    usage_counts: dict[str, int] = field(hash=False)

    def to_dict(self) -> dict:
        return {
            "op": self.op,
            "initiator": self.initiator,
            "src": self.src,
            "dst": self.dst,
            "bound": _number(self.bound),
            "bound_exact": str(self.bound),
            "limiting_resource": self.limiting_resource,
            "usage_counts": dict(sorted(self.usage_counts.items())),
        }


@dataclass(frozen=True)
class BoundsMatrix:
    op: str
    initiator: str
    rows: tuple[str, ...]
    cols: tuple[str, ...]
    cells: tuple[tuple[BoundResult | None, ...], ...]  # None = unreachable

    def get(self, row: str, col: str) -> BoundResult | None:
        return self.cells[self.rows.index(row)][self.cols.index(col)]


def link_resource(link_id: str, source: str, target: str) -> str:
    return f"{link_id}:{source}>{target}"


def _number(x: Fraction):
    return x.numerator if x.denominator == 1 else float(x)


# --------------------------------------------------------------------------
# parsing and validation


def _rational(value, where: str, problems: list[str]) -> Fraction | None:
    if isinstance(value, bool) or value is None:
        problems.append(f"{where}: expected a number, got {value!r}")
        return None
    try:
        # str() keeps decimal literals exact (0.1 -> 1/10)
        x = Fraction(str(value)) if isinstance(value, float) else Fraction(value)
    except (TypeError, ValueError, ZeroDivisionError):
        problems.append(f"{where}: expected a number, got {value!r}")
        return None
    if x <= 0:
        problems.append(f"{where}: non-positive bandwidth {value!r}")
        return None
    return x


def _int(obj: dict, key: str, where: str, problems: list[str], *, positive=False, default=None):
    if key not in obj:
        if default is not None:
            return default
        problems.append(f"{where}: missing field {key!r}")
        return None
    v = obj[key]
    if isinstance(v, bool) or not isinstance(v, int):
        problems.append(f"{where}: field {key!r} must be an integer, got {v!r}")
        return None
    if positive and v <= 0:
        problems.append(f"{where}: field {key!r} must be positive, got {v}")
        return None
    return v


def _str(obj: dict, key: str, where: str, problems: list[str]):
    v = obj.get(key)
    if not isinstance(v, str) or not v:
        problems.append(f"{where}: missing or empty string field {key!r}")
        return None
    return v


def _is_pow2(n: int) -> bool:
    return n > 0 and n & (n - 1) == 0


def parse_topology(text: str | bytes) -> TopologySpec:
    """Parse and validate a topology JSON document.

    Raises TopologyError listing every violated rule, not just the first.
    """
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise TopologyError(f"malformed document: {exc}") from None
    return topology_from_dict(doc)


def load_topology(path: str | Path) -> TopologySpec:
    return parse_topology(Path(path).read_text())


def topology_from_dict(doc) -> TopologySpec:
    problems: list[str] = []
    if not isinstance(doc, dict):
        raise TopologyError("malformed document: top level must be an object")
    for key in ("pus", "memories", "links"):
        if not isinstance(doc.get(key, []), list):
            problems.append(f"malformed document: {key!r} must be a list")
    if problems:
        raise TopologyError(problems)

    name = doc.get("name", "")
    if not isinstance(name, str):
        problems.append("name must be a string")
    page_size = _int(doc, "page_size", "topology", problems, positive=True)
    if page_size is not None and not _is_pow2(page_size):
        problems.append(f"page_size {page_size} is not a power of two")
    sockets = doc.get("sockets")
    if sockets is not None and (
        not isinstance(sockets, list) or not all(isinstance(s, int) and not isinstance(s, bool) for s in sockets)
    ):
        problems.append("sockets must be a list of integers")
        sockets = None

    seen: Counter = Counter()
    pus: list[ProcessingUnit] = []
    for i, raw in enumerate(doc.get("pus", [])):
        where = f"pus[{i}]"
        if not isinstance(raw, dict):
            problems.append(f"{where}: must be an object")
            continue
        pid = _str(raw, "id", where, problems)
        if pid:
            where = f"pu {pid!r}"
            seen[pid] += 1
        kind = raw.get("kind")
        if kind not in PU_KINDS:
            problems.append(f"{where}: kind must be one of {PU_KINDS}, got {kind!r}")
        socket = _int(raw, "socket", where, problems)
        cores = _int(raw, "core_count", where, problems, positive=True)
        cache_line = _int(raw, "cache_line", where, problems, positive=True, default=64)
        if cache_line is not None and not _is_pow2(cache_line):
            problems.append(f"{where}: cache_line {cache_line} is not a power of two")
        caches = []
        for j, c in enumerate(raw.get("caches", [])):
            cw = f"{where} caches[{j}]"
            if not isinstance(c, dict):
                problems.append(f"{cw}: must be an object")
                continue
            level = _int(c, "level", cw, problems, positive=True)
            size = _int(c, "size", cw, problems, positive=True)
            shared = c.get("shared", False)
            if not isinstance(shared, bool):
                problems.append(f"{cw}: shared must be a boolean")
            if level is not None and size is not None:
                caches.append(Cache(level, size, bool(shared)))
        caches.sort(key=lambda c: c.level)
        for lo, hi in zip(caches, caches[1:]):
            if hi.level == lo.level or hi.size <= lo.size:
                problems.append(f"{where}: cache sizes must strictly increase with level")
                break
        host_cores = raw.get("host_cores")
        if host_cores is not None:
            if not isinstance(host_cores, list) or not all(
                isinstance(c, int) and not isinstance(c, bool) and c >= 0 for c in host_cores
            ):
                problems.append(f"{where}: host_cores must be a list of non-negative integers")
                host_cores = None
            else:
                host_cores = tuple(host_cores)
        if pid and kind in PU_KINDS and socket is not None and cores is not None:
            pus.append(
                ProcessingUnit(pid, kind, socket, cores, tuple(caches), cache_line or 64, host_cores)
            )

    declared = set(sockets) if sockets is not None else {p.socket for p in pus}
    if sockets is not None:
        for p in pus:
            if p.socket not in declared:
                problems.append(f"pu {p.id!r}: socket {p.socket} is not declared")
    pu_ids = {p.id for p in pus}

    memories: list[MemoryDomain] = []
    numa_seen: Counter = Counter()
    for i, raw in enumerate(doc.get("memories", [])):
        where = f"memories[{i}]"
        if not isinstance(raw, dict):
            problems.append(f"{where}: must be an object")
            continue
        mid = _str(raw, "id", where, problems)
        if mid:
            where = f"memory {mid!r}"
            seen[mid] += 1
        kind = raw.get("kind")
        if kind not in MEMORY_KINDS:
            problems.append(f"{where}: kind must be one of {MEMORY_KINDS}, got {kind!r}")
        socket = _int(raw, "socket", where, problems)
        if socket is not None and socket not in declared:
            problems.append(f"{where}: socket {socket} is not declared")
        node = _int(raw, "numa_node", where, problems)
        if node is not None:
            numa_seen[node] += 1
        capacity = _int(raw, "capacity", where, problems, positive=True)
        bw = _rational(raw.get("bandwidth"), f"{where} bandwidth", problems)
        home = raw.get("home")
        if home is not None:
            if home not in pu_ids:
                problems.append(f"{where}: dangling reference home={home!r}")
                home = None
        elif socket is not None and kind in MEMORY_KINDS:
            home = _infer_home(kind, socket, pus)
            if home is None:
                problems.append(f"{where}: cannot infer home PU on socket {socket}; set 'home'")
        if mid and kind in MEMORY_KINDS and None not in (socket, node, capacity, bw, home):
            memories.append(MemoryDomain(mid, kind, socket, node, capacity, bw, home))
    for node, n in sorted(numa_seen.items()):
        if n > 1:
            problems.append(f"numa_node {node} used by {n} memory domains")

    mem_ids = {m.id for m in memories}
    home_of = {m.id: m.home for m in memories}
    links: list[Link] = []
    for i, raw in enumerate(doc.get("links", [])):
        where = f"links[{i}]"
        if not isinstance(raw, dict):
            problems.append(f"{where}: must be an object")
            continue
        lid = _str(raw, "id", where, problems)
        if lid:
            where = f"link {lid!r}"
            seen[lid] += 1
        ends = []
        for key in ("endpoint_a", "endpoint_b"):
            e = _str(raw, key, where, problems)
            if e is None:
                continue
            if e in pu_ids or e in mem_ids:
                ends.append(e)
            elif e.startswith(PORT_PREFIX):
                parts = e.split(":")
                ok = len(parts) == 3 and parts[1].lstrip("-").isdigit() and parts[2]
                if not ok:
                    problems.append(f"{where}: malformed port reference {e!r} (want port:<socket>:<name>)")
                elif int(parts[1]) not in declared:
                    problems.append(f"{where}: dangling reference {e!r} (socket not declared)")
                else:
                    ends.append(e)
            else:
                problems.append(f"{where}: dangling reference {key}={e!r}")
        if len(ends) == 2:
            a, b = (home_of.get(e, e) for e in ends)
            if ends[0] == ends[1] or a == b:
                problems.append(f"{where}: endpoints must be distinct")
                ends = []
        bw = _rational(raw.get("bandwidth_per_direction"), f"{where} bandwidth_per_direction", problems)
        allowed = raw.get("allowed_initiators", list(PU_KINDS))
        if not isinstance(allowed, list) or any(k not in PU_KINDS for k in allowed):
            problems.append(f"{where}: allowed_initiators must be a subset of {PU_KINDS}")
            allowed = None
        note = raw.get("note")
        if note is not None and not isinstance(note, str):
            problems.append(f"{where}: note must be a string")
            note = None
        if lid and len(ends) == 2 and bw is not None and allowed is not None:
            links.append(Link(lid, ends[0], ends[1], bw, frozenset(allowed), note))

    for ident, n in sorted(seen.items()):
        if n > 1:
            problems.append(f"duplicate id {ident!r}")
    if problems:
        raise TopologyError(problems)
    return TopologySpec(
        name=name,
        page_size=page_size,
        pus=tuple(pus),
        memories=tuple(memories),
        links=tuple(links),
        sockets=tuple(sockets) if sockets is not None else None,
    )


def _infer_home(kind: str, socket: int, pus: Iterable[ProcessingUnit]) -> str | None:
    on_socket = [p for p in pus if p.socket == socket]
    preferred = CPU if kind == DDR else ACCELERATOR
    matching = [p for p in on_socket if p.kind == preferred]
    if len(matching) == 1:
        return matching[0].id
    if len(on_socket) == 1:
        return on_socket[0].id
    return None


def topology_to_dict(spec: TopologySpec) -> dict:
    """Canonical dict form: entries sorted by id, numbers as exact strings where rational."""

    def bw(x: Fraction):
        return x.numerator if x.denominator == 1 else str(x)

    out = {
        "name": spec.name,
        "page_size": spec.page_size,
        "pus": [
            {
                "id": p.id,
                "kind": p.kind,
                "socket": p.socket,
                "core_count": p.core_count,
                "cache_line": p.cache_line,
                "caches": [{"level": c.level, "size": c.size, "shared": c.shared} for c in p.caches],
                **({"host_cores": list(p.host_cores)} if p.host_cores is not None else {}),
            }
            for p in sorted(spec.pus, key=lambda p: p.id)
        ],
        "memories": [
            {
                "id": m.id,
                "kind": m.kind,
                "socket": m.socket,
                "numa_node": m.numa_node,
                "capacity": m.capacity,
                "bandwidth": bw(m.bandwidth),
                "home": m.home,
            }
            for m in sorted(spec.memories, key=lambda m: m.id)
        ],
        "links": [
            {
                "id": lk.id,
                "endpoint_a": lk.endpoint_a,
                "endpoint_b": lk.endpoint_b,
                "bandwidth_per_direction": bw(lk.bandwidth_per_direction),
                "allowed_initiators": sorted(lk.allowed_initiators),
                **({"note": lk.note} if lk.note is not None else {}),
            }
            for lk in sorted(spec.links, key=lambda lk: lk.id)
        ],
    }
    if spec.sockets is not None:
        out["sockets"] = sorted(spec.sockets)
    return out


def topology_hash(spec: TopologySpec) -> str:
    canon = json.dumps(topology_to_dict(spec), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canon.encode()).hexdigest()


# --------------------------------------------------------------------------
# routing and bounds


def resolve_datapath(spec: TopologySpec, pu: str, mem: str) -> Datapath:
    """Fewest-link admissible path from ``mem`` to ``pu``.

    Ties are broken by the lexicographically smallest link-id sequence, read
    in payload order (memory first).
    """
    initiator = spec.pu(pu)
    memory = spec.memory(mem)
    origin, goal = memory.home, initiator.id
    if origin == goal:
        return Datapath(pu, mem, ())

    adjacency: dict[str, list[tuple[str, str]]] = {}
    for lk in spec.links:
        if initiator.kind not in lk.allowed_initiators:
            continue
        a, b = spec.vertex(lk.endpoint_a), spec.vertex(lk.endpoint_b)
        adjacency.setdefault(a, []).append((lk.id, b))
        adjacency.setdefault(b, []).append((lk.id, a))

    # Layered BFS; best[v] is the lexicographically smallest shortest path to v.
    # Extending the best prefix is enough since all prefixes have equal length.
    best: dict[str, tuple[Hop, ...]] = {origin: ()}
    frontier = [origin]
    while frontier and goal not in best:
        layer: dict[str, tuple[Hop, ...]] = {}
        for u in frontier:
            for lid, v in adjacency.get(u, ()):
                if v in best:
                    continue
                cand = best[u] + (Hop(lid, u, v),)
                cur = layer.get(v)
                if cur is None or _key(cand) < _key(cur):
                    layer[v] = cand
        best.update(layer)
        frontier = sorted(layer)
    if goal not in best:
        raise RoutingError(f"no admissible path from {mem!r} to {pu!r}")
    return Datapath(pu, mem, best[goal])


def _key(path: tuple[Hop, ...]) -> tuple[str, ...]:
    return tuple(h.link for h in path)


def capacities(spec: TopologySpec) -> dict[str, Fraction]:
    caps: dict[str, Fraction] = {m.id: m.bandwidth for m in spec.memories}
    for lk in spec.links:
        a, b = spec.vertex(lk.endpoint_a), spec.vertex(lk.endpoint_b)
        caps[link_resource(lk.id, a, b)] = lk.bandwidth_per_direction
        caps[link_resource(lk.id, b, a)] = lk.bandwidth_per_direction
    return caps


def _read_usage(spec: TopologySpec, pu: str, mem: str) -> Counter:
    path = resolve_datapath(spec, pu, mem)
    usage = Counter({mem: 1})
    for h in path.hops:
        usage[h.resource] += 1
    return usage


def _write_usage(spec: TopologySpec, pu: str, mem: str) -> Counter:
    path = resolve_datapath(spec, pu, mem)
    usage = Counter({mem: 1})
    for h in path.hops:
        usage[link_resource(h.link, h.target, h.source)] += 1
    return usage


def compute_bound(spec: TopologySpec, op: str, pu: str, src: str, dst: str | None = None) -> BoundResult:
    """Theoretical bandwidth bound (GB/s) of one operation.

    read uses ``src``; write uses ``src`` as the written memory; copy moves
    ``src -> dst`` and sums both usages, so a memory or link direction crossed
    twice counts twice against its capacity.
    """
    if op == "read":
        usage = _read_usage(spec, pu, src)
    elif op == "write":
        usage = _write_usage(spec, pu, src)
    elif op == "copy":
        if dst is None:
            raise ValueError("copy needs a destination memory")
        usage = _read_usage(spec, pu, src) + _write_usage(spec, pu, dst)
    else:
        raise ValueError(f"unknown op {op!r}; expected one of {OPS}")
    caps = capacities(spec)
    limiting, bound = min(
        ((res, caps[res] / n) for res, n in usage.items()),
        key=lambda item: (item[1], item[0]),
    )
    return BoundResult(op, pu, src, dst if op == "copy" else None, bound, limiting, dict(usage))


def bounds_matrix(spec: TopologySpec, op: str, initiator: str, memories: Iterable[str] | None = None) -> BoundsMatrix:
    """All bounds for one initiator; read/write give 1 x M, copy gives M x M (src rows, dst cols)."""
    spec.pu(initiator)
    mems = tuple(memories) if memories is not None else tuple(m.id for m in spec.memories)

    def attempt(*args):
        try:
            return compute_bound(spec, op, initiator, *args)
        except RoutingError:
            return None

    if op == "copy":
        cells = tuple(tuple(attempt(s, d) for d in mems) for s in mems)
        return BoundsMatrix(op, initiator, mems, mems, cells)
    if op not in OPS:
        raise ValueError(f"unknown op {op!r}; expected one of {OPS}")
    return BoundsMatrix(op, initiator, (initiator,), mems, (tuple(attempt(m) for m in mems),))
