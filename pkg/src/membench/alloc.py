"""Benchmark buffers with explicit NUMA placement and per-worker partitions.

Buffers are private anonymous mappings, so no page is backed until it is
first written; the placement policy decides who writes first (first touch) or
binds the range beforehand through libnuma. When the host cannot honour a
policy the buffer falls back to default placement and is flagged ``degraded``.
"""

from __future__ import annotations

import ctypes
import ctypes.util
import mmap
import os
import threading
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .errors import AllocationError, PinningError

CACHE_LINE = 64


@dataclass(frozen=True)
class Default:
    pass


@dataclass(frozen=True)
class FirstTouch:
    cores: tuple[int, ...] = ()  # partition i is touched by a worker pinned to cores[i]


@dataclass(frozen=True)
class ExplicitNode:
    node: int


@dataclass(frozen=True)
class Interleave:
    nodes: tuple[int, ...]


Policy = Default | FirstTouch | ExplicitNode | Interleave


def policy_to_dict(policy: Policy) -> dict:
    if isinstance(policy, FirstTouch):
        return {"kind": "first_touch", "cores": list(policy.cores)}
    if isinstance(policy, ExplicitNode):
        return {"kind": "node", "node": policy.node}
    if isinstance(policy, Interleave):
        return {"kind": "interleave", "nodes": list(policy.nodes)}
    return {"kind": "default"}


def policy_from_dict(d: dict | None) -> Policy:
    if d is None:
        return Default()
    kind = d.get("kind", "default")
    if kind == "first_touch":
        return FirstTouch(tuple(int(c) for c in d.get("cores", ())))
    if kind == "node":
        return ExplicitNode(int(d["node"]))
    if kind == "interleave":
        return Interleave(tuple(int(n) for n in d["nodes"]))
    if kind == "default":
        return Default()
    raise ValueError(f"unknown placement policy {kind!r}")


def policy_label(policy: Policy) -> str:
    if isinstance(policy, FirstTouch):
        return "first-touch" + (f"@{','.join(map(str, policy.cores))}" if policy.cores else "")
    if isinstance(policy, ExplicitNode):
        return f"node{policy.node}"
    if isinstance(policy, Interleave):
        return "interleave" + ",".join(map(str, policy.nodes))
    return "default"


# --------------------------------------------------------------------------
# host queries


def query_page_size() -> int:
    return mmap.PAGESIZE


def host_cores() -> list[int]:
    return sorted(os.sched_getaffinity(0))


def host_nodes() -> list[int]:
    base = "/sys/devices/system/node"
    try:
        names = os.listdir(base)
    except OSError:
        return []
    return sorted(int(n[4:]) for n in names if n.startswith("node") and n[4:].isdigit())


def host_cache_sizes(cpu: int = 0) -> dict[int, int]:
    """Data/unified cache size in bytes per level, from sysfs; empty if unavailable."""
    base = f"/sys/devices/system/cpu/cpu{cpu}/cache"
    out: dict[int, int] = {}
    try:
        entries = sorted(e for e in os.listdir(base) if e.startswith("index"))
    except OSError:
        return out
    for e in entries:
        try:
            with open(f"{base}/{e}/type") as fh:
                kind = fh.read().strip()
            with open(f"{base}/{e}/level") as fh:
                level = int(fh.read())
            with open(f"{base}/{e}/size") as fh:
                raw = fh.read().strip()
        except (OSError, ValueError):
            continue
        if kind == "Instruction" or not raw:
            continue
        mult = {"K": 1 << 10, "M": 1 << 20, "G": 1 << 30}.get(raw[-1].upper(), 1)
        out[level] = int(raw.rstrip("KMGkmg")) * mult
    return out


def pin_current_thread(core: int) -> None:
    """Bind the calling thread (not the process) to one core."""
    try:
        os.sched_setaffinity(0, {core})
    except (OSError, ValueError) as exc:
        raise PinningError(f"cannot pin to core {core}: {exc}") from None


def run_pinned(core: int | None, fn, pin: bool = True):
    """Run ``fn`` on a fresh thread pinned to ``core`` and return its result."""
    out: dict = {}

    def body():
        try:
            if pin and core is not None:
                pin_current_thread(core)
            out["value"] = fn()
        except BaseException as exc:  # re-raised on the caller's thread
            out["error"] = exc

    t = threading.Thread(target=body, name=f"touch-{core}")
    t.start()
    t.join()
    if "error" in out:
        raise out["error"]
    return out.get("value")


class _Numa:
    """Thin ctypes wrapper over the few libnuma calls we need."""

    @cached_property
    def lib(self):
        name = ctypes.util.find_library("numa") or "libnuma.so.1"
        try:
            lib = ctypes.CDLL(name)
        except OSError:
            return None
        if lib.numa_available() < 0:
            return None
        lib.numa_tonode_memory.argtypes = [ctypes.c_void_p, ctypes.c_size_t, ctypes.c_int]
        lib.numa_tonode_memory.restype = None
        lib.numa_parse_nodestring.argtypes = [ctypes.c_char_p]
        lib.numa_parse_nodestring.restype = ctypes.c_void_p
        lib.numa_interleave_memory.argtypes = [ctypes.c_void_p, ctypes.c_size_t, ctypes.c_void_p]
        lib.numa_interleave_memory.restype = None
        lib.numa_bitmask_free.argtypes = [ctypes.c_void_p]
        lib.numa_bitmask_free.restype = None
        lib.numa_move_pages.argtypes = [
            ctypes.c_int,
            ctypes.c_ulong,
            ctypes.POINTER(ctypes.c_void_p),
            ctypes.c_void_p,
            ctypes.POINTER(ctypes.c_int),
            ctypes.c_int,
        ]
        lib.numa_move_pages.restype = ctypes.c_int
        lib.numa_node_of_cpu.argtypes = [ctypes.c_int]
        lib.numa_node_of_cpu.restype = ctypes.c_int
        return lib

    @property
    def available(self) -> bool:
        return self.lib is not None

    def bind(self, addr: int, size: int, nodes: tuple[int, ...], interleave: bool) -> None:
        if not interleave:
            self.lib.numa_tonode_memory(addr, size, nodes[0])
            return
        mask = self.lib.numa_parse_nodestring(",".join(map(str, nodes)).encode())
        if not mask:
            raise AllocationError(f"libnuma rejected node list {nodes}")
        try:
            self.lib.numa_interleave_memory(addr, size, mask)
        finally:
            self.lib.numa_bitmask_free(mask)

    def page_nodes(self, addrs: list[int]) -> list[int] | None:
        """Current node of each page, or None when the kernel will not say."""
        if not self.available or not addrs:
            return None
        n = len(addrs)
        pages = (ctypes.c_void_p * n)(*addrs)
        status = (ctypes.c_int * n)()
        if self.lib.numa_move_pages(0, n, pages, None, status, 0) != 0:
            return None
        nodes = list(status)
        if any(s < 0 for s in nodes):
            return None
        return nodes

    def node_of_cpu(self, core: int) -> int | None:
        if not self.available:
            return None
        node = self.lib.numa_node_of_cpu(core)
        return node if node >= 0 else None


NUMA = _Numa()


# --------------------------------------------------------------------------
# buffers


@dataclass
class BenchBuffer:
    length: int
    alignment: int
    policy: Policy
    realized_nodes: list[int] | str  # "unverified" when pages cannot be located
    degraded: bool
    array: np.ndarray = field(repr=False)
    cache_line: int = CACHE_LINE
    notes: list[str] = field(default_factory=list)
    _mapping: mmap.mmap | None = field(default=None, repr=False)

    @property
    def address(self) -> int:
        return self.array.ctypes.data

    def words(self, start: int = 0, stop: int | None = None) -> np.ndarray:
        """uint64 view of ``[start, stop)``; both ends must be 8-byte aligned."""
        return self.array[start:stop].view(np.uint64)

    def placement(self) -> dict:
        return {
            "policy": policy_to_dict(self.policy),
            "length": self.length,
            "alignment": self.alignment,
            "realized_nodes": self.realized_nodes,
            "degraded": self.degraded,
            "notes": list(self.notes),
        }

    def close(self) -> None:
        mapping, self._mapping = self._mapping, None
        self.array = np.empty(0, np.uint8)
        if mapping is not None:
            try:
                mapping.close()
            except BufferError:
                pass  # views still alive; the mapping goes when they do


def _check_pow2(value: int, what: str) -> None:
    if value <= 0 or value & (value - 1):
        raise ValueError(f"{what} must be a positive power of two, got {value}")


def aligned_array(nbytes: int, alignment: int = CACHE_LINE) -> np.ndarray:
    """Zeroed uint8 array whose data pointer is ``alignment``-aligned."""
    _check_pow2(alignment, "alignment")
    raw = np.zeros(nbytes + alignment, dtype=np.uint8)
    offset = (-raw.ctypes.data) % alignment
    return raw[offset : offset + nbytes]


def allocate(
    length: int,
    policy: Policy | None = None,
    alignment: int = CACHE_LINE,
    *,
    cache_line: int = CACHE_LINE,
    run_on=None,
    pin: bool = True,
) -> BenchBuffer:
    """Map, place and zero a buffer.

    ``run_on(i, fn)`` executes ``fn`` on the worker owning partition ``i``; it
    is used by FirstTouch. The default spawns a thread pinned to
    ``policy.cores[i]`` (unpinned when ``pin`` is False, which flags the
    buffer degraded).
    """
    policy = policy if policy is not None else Default()
    if length <= 0:
        raise ValueError("length must be positive")
    _check_pow2(alignment, "alignment")
    _check_pow2(cache_line, "cache_line")
    if alignment < cache_line:
        raise ValueError(f"alignment {alignment} is below the cache line size {cache_line}")

    notes = []
    if length % cache_line:
        rounded = -(-length // cache_line) * cache_line
        notes.append(f"length rounded up from {length} to {rounded}")
        length = rounded

    page = query_page_size()
    slack = alignment if alignment > page else 0
    try:
        mapping = mmap.mmap(-1, length + slack, flags=mmap.MAP_PRIVATE | mmap.MAP_ANONYMOUS)
    except (OSError, OverflowError) as exc:
        raise AllocationError(f"cannot map {length} bytes: {exc}") from None
    raw = np.frombuffer(mapping, dtype=np.uint8)
    offset = (-raw.ctypes.data) % alignment
    array = raw[offset : offset + length]
    addr = array.ctypes.data

    degraded = False
    effective = policy
    if isinstance(policy, (ExplicitNode, Interleave)):
        wanted = (policy.node,) if isinstance(policy, ExplicitNode) else policy.nodes
        present = host_nodes()
        missing = [n for n in wanted if n not in present]
        if not NUMA.available:
            notes.append("libnuma unavailable; default placement used")
            degraded, effective = True, Default()
        elif missing and len(present) > 1:
            raise AllocationError(f"invalid NUMA node(s) {missing}; host nodes are {present}")
        elif missing:
            notes.append(f"node(s) {missing} absent on single-node host; default placement used")
            degraded, effective = True, Default()
        else:
            NUMA.bind(addr, length, tuple(wanted), interleave=isinstance(policy, Interleave))

    if isinstance(effective, FirstTouch) and effective.cores:
        ranges = partition(length, len(effective.cores), cache_line)
        if not pin:
            notes.append("first touch ran unpinned")
            degraded = True

        def toucher(i):
            a, b = ranges[i]
            return lambda: array[a:b].fill(0)

        for i in range(len(ranges)):
            if run_on is not None:
                run_on(i, toucher(i))
            else:
                run_pinned(effective.cores[i], toucher(i), pin=pin)
    else:
        array.fill(0)

    realized = _realized_nodes(addr, length, page)
    return BenchBuffer(
        length=length,
        alignment=alignment,
        policy=policy,
        realized_nodes=realized,
        degraded=degraded,
        array=array,
        cache_line=cache_line,
        notes=notes,
        _mapping=mapping,
    )


def _realized_nodes(addr: int, length: int, page: int, max_samples: int = 64) -> list[int] | str:
    first = addr - addr % page
    n_pages = (addr + length - first + page - 1) // page
    step = max(1, n_pages // max_samples)
    addrs = [first + i * page for i in range(0, n_pages, step)]
    nodes = NUMA.page_nodes(addrs)
    if nodes is None:
        return "unverified"
    return sorted(set(nodes))


def partition(buffer: BenchBuffer | int, n_workers: int, cache_line: int = CACHE_LINE) -> list[tuple[int, int]]:
    """Split into ``n_workers`` contiguous byte ranges of whole cache lines.

    The first ``lines % n_workers`` ranges get one extra line.
    """
    length = buffer.length if isinstance(buffer, BenchBuffer) else int(buffer)
    if isinstance(buffer, BenchBuffer):
        cache_line = buffer.cache_line
    if n_workers < 1:
        raise ValueError("n_workers must be >= 1")
    lines = length // cache_line
    if n_workers > lines:
        raise ValueError(f"{n_workers} workers exceed the buffer's {lines} cache lines")
    base, extra = divmod(lines, n_workers)
    ranges, start = [], 0
    for i in range(n_workers):
        stop = start + (base + (i < extra)) * cache_line
        ranges.append((start, stop))
        start = stop
    # a ragged tail (length not a line multiple) goes to the last worker
    if start < length:
        ranges[-1] = (ranges[-1][0], length)
    return ranges
