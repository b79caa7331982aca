"""Timed inner loops: read, write, copy, pointer chase, ping-pong and noise.

Each public kernel has a compiled ``nogil`` core (``_*_core``) that the
harness calls directly inside its timed region, plus a Python wrapper that
checks preconditions and packages a :class:`KernelResult`.

Anti-elimination mechanisms:

* read: XOR-folds every loaded word and returns the fold; callers keep it.
* write: returns a read-back of the last stored word, checked by the wrapper.
* copy: the destination is observable memory; stores cannot be dropped.
* chase: returns the final index, which depends on every load.
* noise: the fold of all passes is stored on the cancel token.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numba import njit

from ._native import cas_u8, load_u8, mono_ns, store_u8
from .alloc import CACHE_LINE
from .errors import PingPongTimeout

ACCESS_WIDTH = 16  # bytes per load/store "pair", as with LDP/STP
WORD = 8
PING = np.uint8(1)
PONG = np.uint8(2)
FLAG_REGION = 2 * CACHE_LINE
DEFAULT_CHASE_NS = 2_500_000_000
DEFAULT_GRANULARITY = 200
DEFAULT_NOISE_BYTES = 8 << 30


@dataclass
class KernelResult:
    bytes_moved: int = 0
    checksum: int = 0
    elapsed: int | None = None  # ns; filled by the harness except for chase/ping-pong
    accesses: int | None = None
    swaps: int | None = None


def _check_region(region: np.ndarray, what: str = "range") -> None:
    if region.dtype != np.uint8 or region.ndim != 1:
        raise TypeError(f"{what} must be a 1-d uint8 array")
    if region.size % CACHE_LINE or region.ctypes.data % CACHE_LINE:
        raise ValueError(f"{what} must be cache-line aligned and a whole number of lines")


# --------------------------------------------------------------------------
# read


@njit(nogil=True, cache=True)
def _read_core(words, repetitions):
    # two independent accumulators = one 16-byte load pair per step
    acc0 = np.uint64(0)
    acc1 = np.uint64(0)
    n = words.size
    for _ in range(repetitions):
        for i in range(0, n - 1, 2):
            acc0 ^= words[i]
            acc1 ^= words[i + 1]
        if n & 1:
            acc0 ^= words[n - 1]
    return acc0 ^ acc1


def kernel_read(region: np.ndarray, repetitions: int = 1) -> KernelResult:
    _check_region(region)
    checksum = int(_read_core(region.view(np.uint64), repetitions))
    return KernelResult(bytes_moved=region.size * repetitions, checksum=checksum)


# --------------------------------------------------------------------------
# write


@njit(nogil=True, cache=True)
def _write_core(words, stride_words, pattern):
    n = words.size
    last = -1
    for i in range(0, n - 1, stride_words):
        words[i] = pattern
        words[i + 1] = pattern
        last = i
    if last < 0:
        return np.uint64(0), 0
    return words[last + 1], (last // stride_words) + 1


def kernel_write(region: np.ndarray, stride_bytes: int = ACCESS_WIDTH, pattern: int = 0xA5A5A5A5A5A5A5A5) -> KernelResult:
    """Store 16 bytes of ``pattern`` at every ``stride_bytes`` offset."""
    _check_region(region)
    if stride_bytes < ACCESS_WIDTH or stride_bytes % ACCESS_WIDTH:
        raise ValueError("stride_bytes must be a positive multiple of 16")
    pat = np.uint64(pattern)
    readback, stores = _write_core(region.view(np.uint64), stride_bytes // WORD, pat)
    if stores and readback != pat:
        raise RuntimeError("write read-back did not observe the stored pattern")
    return KernelResult(bytes_moved=int(stores) * ACCESS_WIDTH, checksum=int(readback))


# --------------------------------------------------------------------------
# copy


@njit(nogil=True, cache=True)
def _copy_core(src, dst):
    # four independent 16-byte load/store pairs per iteration (64 bytes)
    n = src.size
    body = n - n % 8
    for i in range(0, body, 8):
        a0 = src[i]
        a1 = src[i + 1]
        b0 = src[i + 2]
        b1 = src[i + 3]
        c0 = src[i + 4]
        c1 = src[i + 5]
        d0 = src[i + 6]
        d1 = src[i + 7]
        dst[i] = a0
        dst[i + 1] = a1
        dst[i + 2] = b0
        dst[i + 3] = b1
        dst[i + 4] = c0
        dst[i + 5] = c1
        dst[i + 6] = d0
        dst[i + 7] = d1
    for i in range(body, n):
        dst[i] = src[i]
    return n


@njit(nogil=True, cache=True)
def _copy_core_1pair(src, dst):
    n = src.size
    for i in range(0, n - 1, 2):
        a0 = src[i]
        a1 = src[i + 1]
        dst[i] = a0
        dst[i + 1] = a1
    if n & 1:
        dst[n - 1] = src[n - 1]
    return n


def kernel_copy(src: np.ndarray, dst: np.ndarray, pairs: int = 4) -> KernelResult:
    if src.size != dst.size:
        raise ValueError(f"length mismatch: src {src.size} bytes, dst {dst.size} bytes")
    if src.size == 0:
        return KernelResult(bytes_moved=0)
    _check_region(src, "src")
    _check_region(dst, "dst")
    core = _copy_core if pairs == 4 else _copy_core_1pair
    core(src.view(np.uint64), dst.view(np.uint64))
    return KernelResult(bytes_moved=src.size)


# --------------------------------------------------------------------------
# pointer chase


@njit(nogil=True, cache=True)
def _sattolo(uniforms):
    n = uniforms.size + 1
    succ = np.arange(n, dtype=np.uint64)
    for k in range(n - 1):
        i = n - 1 - k
        j = int(uniforms[k] * i)  # uniform in [0, i)
        succ[i], succ[j] = succ[j], succ[i]
    return succ


def sattolo_cycle(slots: int, seed: int) -> np.ndarray:
    """Successor array of a uniformly random single cycle over ``slots`` items."""
    if slots < 2:
        raise ValueError("a chase needs at least 2 slots")
    uniforms = np.random.default_rng(seed).random(slots - 1)
    return _sattolo(uniforms)


@njit(nogil=True, cache=True)
def _scatter(words, stride_words, succ):
    for i in range(succ.size):
        words[i * stride_words] = succ[i]


@njit(nogil=True, cache=True)
def _gather(words, stride_words, slots):
    out = np.empty(slots, dtype=np.uint64)
    for i in range(slots):
        out[i] = words[i * stride_words]
    return out


@dataclass
class ChaseBuffer:
    slots: int
    stride: int
    seed: int
    start_index: int
    words: np.ndarray  # uint64 view of the backing buffer

    @property
    def stride_words(self) -> int:
        return self.stride // WORD

    def successors(self) -> np.ndarray:
        return _gather(self.words, self.stride_words, self.slots)


def build_chase(buffer: np.ndarray, stride_bytes: int = CACHE_LINE, seed: int = 0, *, cache_line: int = CACHE_LINE,
                require_line_multiple: bool = True) -> ChaseBuffer:
    """Lay a random single-cycle permutation over ``buffer``.

    Slot ``i`` lives at byte offset ``i * stride_bytes`` and stores the index
    (not the address) of its successor.
    """
    if stride_bytes < WORD or stride_bytes % WORD:
        raise ValueError("stride must be a positive multiple of the pointer width (8)")
    if require_line_multiple and stride_bytes % cache_line:
        raise ValueError(f"stride must be a multiple of the cache line ({cache_line})")
    slots = buffer.size // stride_bytes
    if slots < 2:
        raise ValueError(f"buffer of {buffer.size} bytes holds fewer than 2 slots of {stride_bytes}")
    if buffer.ctypes.data % WORD:
        raise ValueError("buffer must be 8-byte aligned")
    words = buffer[: buffer.size - buffer.size % WORD].view(np.uint64)
    _scatter(words, stride_bytes // WORD, sattolo_cycle(slots, seed))
    return ChaseBuffer(slots, stride_bytes, seed, 0, words)


@njit(nogil=True, cache=True)
def _chase_core(words, stride_words, start_index, duration_ns, granularity):
    idx = np.int64(start_index)
    accesses = 0
    t0 = mono_ns()
    while True:
        for _ in range(granularity):
            idx = np.int64(words[idx * stride_words])
        accesses += granularity
        t1 = mono_ns()
        if t1 - t0 >= duration_ns:
            break
    return accesses, idx, t0, t1


def kernel_chase(chase: ChaseBuffer, duration_ns: int = DEFAULT_CHASE_NS, granularity: int = DEFAULT_GRANULARITY) -> KernelResult:
    """Dependent loads along the cycle; the clock is read every ``granularity`` loads
    and the loop stops at the first check past ``duration_ns``."""
    if granularity < 1:
        raise ValueError("granularity must be >= 1")
    accesses, idx, t0, t1 = _chase_core(chase.words, chase.stride_words, chase.start_index, duration_ns, granularity)
    return KernelResult(bytes_moved=0, checksum=int(idx), elapsed=int(t1 - t0), accesses=int(accesses))


# --------------------------------------------------------------------------
# ping-pong


def make_flag_region() -> np.ndarray:
    """Two cache lines, line-aligned, flag byte at offset 0 initialised to PONG."""
    region = np.zeros(FLAG_REGION + CACHE_LINE, dtype=np.uint8)
    offset = (-region.ctypes.data) % CACHE_LINE
    region = region[offset : offset + FLAG_REGION]
    region[0] = PONG
    return region


@njit(nogil=True, cache=True)
def _pingpong_core(flag, expected, desired, rounds, timeout_ns):
    """Perform ``rounds`` successful CAS(expected -> desired) on flag[0].

    Returns (swaps, first_success_tick, last_success_tick, timed_out). The
    deadline is checked every 1024 failed attempts.
    """
    swaps = 0
    first = np.int64(0)
    last = np.int64(0)
    deadline = mono_ns() + timeout_ns
    spins = 0
    while swaps < rounds:
        if cas_u8(flag, 0, expected, desired):
            last = mono_ns()
            if swaps == 0:
                first = last
            swaps += 1
        else:
            spins += 1
            if spins & 1023 == 0 and mono_ns() > deadline:
                return swaps, first, last, True
    return swaps, first, last, False


def pingpong_roles(role: str):
    if role == "ping":
        return PONG, PING
    if role == "pong":
        return PING, PONG
    raise ValueError(f"role must be 'ping' or 'pong', got {role!r}")


def kernel_pingpong(flag_region: np.ndarray, role: str, rounds: int, timeout_ns: int = 5_000_000_000) -> KernelResult:
    """One side of the CAS ping-pong. Ping flips PONG->PING, pong flips PING->PONG.

    ``elapsed`` spans this side's first to last successful swap, so on the
    ping side it covers ``rounds - 1`` full exchanges.
    """
    if flag_region.size < FLAG_REGION or flag_region.ctypes.data % CACHE_LINE:
        raise ValueError("flag region must be 128 bytes, cache-line aligned")
    expected, desired = pingpong_roles(role)
    swaps, first, last, timed_out = _pingpong_core(flag_region, expected, desired, rounds, timeout_ns)
    if timed_out:
        raise PingPongTimeout(f"{role}: partner absent after {swaps} swaps")
    return KernelResult(swaps=int(swaps), elapsed=int(last - first))


# --------------------------------------------------------------------------
# noise


class CancelToken:
    """Atomic cancel flag plus progress counter shared with a noise worker."""

    def __init__(self):
        self.flag = np.zeros(CACHE_LINE, dtype=np.uint8)
        self.progress = np.zeros(1, dtype=np.uint64)
        self.checksum = 0

    def cancel(self) -> None:
        _raise_flag(self.flag)

    @property
    def cancelled(self) -> bool:
        return bool(self.flag[0])

    @property
    def bytes_done(self) -> int:
        return int(self.progress[0])


@njit(nogil=True, cache=True)
def _raise_flag(flag):
    store_u8(flag, 0, 1)


@njit(nogil=True, cache=True)
def _noise_core(words, flag, progress, chunk_words):
    acc = np.uint64(0)
    total = 0
    n = words.size
    while load_u8(flag, 0) == 0:
        for start in range(0, n, chunk_words):
            stop = min(start + chunk_words, n)
            acc ^= _read_core(words[start:stop], 1)
            total += (stop - start) * 8
            progress[0] = total
            if load_u8(flag, 0) != 0:
                return total, acc
    return total, acc


def kernel_noise(buffer: np.ndarray, cancel_token: CancelToken, chunk_bytes: int = 1 << 20) -> int:
    """Read ``buffer`` over and over until cancelled; returns bytes read."""
    _check_region(buffer, "noise buffer")
    total, acc = _noise_core(buffer.view(np.uint64), cancel_token.flag, cancel_token.progress, max(1, chunk_bytes // WORD))
    cancel_token.checksum = int(acc)
    return int(total)
