import threading
import time

import pytest

from membench.clock import ClockInfo, MockClock, estimate_resolution, now_ns
from membench.errors import ClockError


def test_successive_reads_do_not_decrease():
    prev = now_ns()
    for _ in range(200_000):
        t = now_ns()
        assert t >= prev
        prev = t


def test_sleep_delta():
    t1 = now_ns()
    time.sleep(0.001)
    delta = now_ns() - t1
    assert 1_000_000 <= delta < 50_000_000


def test_busy_wait_matches_wall_clock():
    w0, t0 = time.perf_counter_ns(), now_ns()
    while time.perf_counter_ns() - w0 < 200_000_000:
        pass
    w1, t1 = time.perf_counter_ns(), now_ns()
    assert abs((t1 - t0) - (w1 - w0)) < 0.05 * (w1 - w0)


def test_host_resolution_positive_and_reproducible():
    a = estimate_resolution(20_000)
    b = estimate_resolution(20_000)
    assert a.resolution > 0 and a.frequency == 0 and a.source == "CLOCK_MONOTONIC"
    assert max(a.resolution, b.resolution) <= 2 * min(a.resolution, b.resolution) + 64


def test_constant_mock_clock_errors():
    with pytest.raises(ClockError):
        estimate_resolution(1000, clock=MockClock(5, step=0))


def test_mock_resolution_is_step():
    info = estimate_resolution(1000, clock=MockClock(0, step=7))
    assert info == ClockInfo(0, 7, "mock")


def test_too_few_samples():
    with pytest.raises(ValueError):
        estimate_resolution(999)


def test_mock_clock_is_thread_safe():
    clock = MockClock(step=1)
    seen = []
    lock = threading.Lock()

    def reader():
        local = [clock.now_ns() for _ in range(1000)]
        with lock:
            seen.extend(local)

    threads = [threading.Thread(target=reader) for _ in range(4)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    assert sorted(seen) == list(range(4000))


def test_clock_info_round_trip():
    info = ClockInfo(0, 32, "CLOCK_MONOTONIC")
    assert ClockInfo.from_dict(info.to_dict()) == info


def test_ten_million_reads_monotone():
    from numba import njit

    from membench._native import mono_ns

    @njit
    def decreases(n):
        prev = mono_ns()
        for _ in range(n):
            t = mono_ns()
            if t < prev:
                return True
            prev = t
        return False

    assert not decreases(10_000_000)
