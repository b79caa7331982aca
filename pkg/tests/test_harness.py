import json
from fractions import Fraction

import pytest

from membench.alloc import Default, ExplicitNode, FirstTouch, allocate, host_cores, partition
from membench.clock import MockClock
from membench.errors import PinningError, SyncStartError
from membench.harness import (
    BenchmarkCase,
    BufferSpec,
    NoiseConfig,
    _make_workers,
    parse_suite,
    pingpong_matrix,
    run_case,
    run_suite,
    synchronized_start,
)
from membench.records import exact_derived
from membench.topo import REFERENCE_TOPOLOGY, load_topology

SINGLE = load_topology(REFERENCE_TOPOLOGY.parent / "single_socket.json")
CORE = host_cores()[0]
MULTICORE = len(host_cores()) > 1
OTHER = host_cores()[1] if MULTICORE else CORE + 1  # fake id for unpinned runs
PIN_PAIR = MULTICORE
KiB, MiB = 1 << 10, 1 << 20


def mock_worker(clock, duration):
    def run(start):
        t = clock.now_ns()
        begin = max(t, start)
        return begin, begin + duration, duration

    return run


# synchronized start with a mock clock


def test_all_begin_after_start():
    clock = MockClock(start=0, step=1)
    workers = [mock_worker(clock, d) for d in (50, 10, 70, 30)]
    out = synchronized_start(workers, 1000, clock)
    assert out.valid and not out.retried
    assert out.start == 1000
    assert all(b >= out.start for b in out.begins)
    assert sorted(out.arrivals) == [1, 2, 3, 4]


def test_total_time_is_max_end_minus_start():
    clock = MockClock(start=500, step=1)
    durations = (11, 97, 42)
    out = synchronized_start([mock_worker(clock, d) for d in durations], 1000, clock)
    assert out.elapsed == max(out.ends) - out.start == 97
    assert all(out.elapsed >= span for span in out.worker_spans)
    assert out.start_skew == 0


def test_skew_is_max_late_begin():
    clock = MockClock(step=1)

    def late(start):
        return start + 25, start + 40, None

    out = synchronized_start([mock_worker(clock, 5), late], 1000, clock)
    assert out.start_skew == 25
    assert out.elapsed == 40


def test_missed_start_retries_with_four_times_delay():
    clock = MockClock(step=1)
    out = synchronized_start([mock_worker(clock, 1) for _ in range(4)], 2, clock)
    assert out.retried and out.valid
    assert out.delay_ns == 8


def test_zero_delay_fails_after_retry():
    clock = MockClock(step=1)
    with pytest.raises(SyncStartError):
        synchronized_start([mock_worker(clock, 1) for _ in range(2)], 0, clock)


def test_real_clock_start():
    import time

    def w(start):
        while time.monotonic_ns() < start:
            pass
        b = time.monotonic_ns()
        return b, time.monotonic_ns(), None

    out = synchronized_start([w, w], 2_000_000)
    assert out.valid and all(b >= out.start for b in out.begins)


# cases


def test_case_validation():
    buf = [BufferSpec(4096)]
    with pytest.raises(ValueError, match="unknown kernel"):
        BenchmarkCase("x", "triad", [0], buf)
    with pytest.raises(ValueError, match="2 buffer"):
        BenchmarkCase("x", "copy", [0], buf)
    with pytest.raises(ValueError, match="repetitions"):
        BenchmarkCase("x", "read", [0], buf, repetitions=0)
    with pytest.raises(ValueError, match="disjoint"):
        BenchmarkCase("x", "read", [0], buf, noise=NoiseConfig((0,), 4096))
    with pytest.raises(ValueError, match="exactly two"):
        BenchmarkCase("x", "pingpong", [0], buf)
    with pytest.raises(ValueError, match="unknown field"):
        BenchmarkCase.from_dict({"id": "x", "kernel": "read", "cores": [0], "buffers": [], "colour": 1})


def test_case_dict_round_trip():
    case = BenchmarkCase(
        "c", "copy", [0, 0], [BufferSpec(4096, ExplicitNode(0)), BufferSpec(4096, FirstTouch((0,)))],
        noise=NoiseConfig((3,), 1 << 20, Default()),
    )
    again = BenchmarkCase.from_dict(json.loads(json.dumps(case.to_dict())))
    assert again == case


def test_worker_ranges_are_partition_output():
    buf = allocate(1023 * 64)
    case = BenchmarkCase("r", "read", [0] * 4, [BufferSpec(buf.length)])
    _, bytes_per_iter, ranges = _make_workers(case, [buf])
    assert ranges == partition(buf, 4)
    assert bytes_per_iter == buf.length


def test_write_bytes_per_iter():
    buf = allocate(1 << 20)
    case = BenchmarkCase("w", "write", [0, 0], [BufferSpec(buf.length)], stride=65536)
    _, bytes_per_iter, _ = _make_workers(case, [buf])
    assert bytes_per_iter == 16 * 16


def check_record(rec, case):
    assert len(rec.iterations) == case.warmup + case.repetitions
    assert [it.warmup for it in rec.iterations] == [True] * case.warmup + [False] * case.repetitions
    for it in rec.iterations:
        assert it.elapsed_ns == max(it.worker_end_ns)
        assert it.start_skew_ns >= 0
    assert rec.derived_value == float(exact_derived(rec))
    assert rec.clock["resolution"] > 0
    assert rec.topo_hash and rec.version and rec.timestamp


@pytest.mark.parametrize("kernel", ["read", "write", "copy"])
def test_bandwidth_case_record(kernel):
    n_buf = 2 if kernel == "copy" else 1
    case = BenchmarkCase(
        kernel, kernel, [CORE, CORE], [BufferSpec(4 * MiB, ExplicitNode(0))] * n_buf, repetitions=3
    )
    rec = run_case(case, SINGLE)
    check_record(rec, case)
    measured = rec.measured()
    assert exact_derived(rec) == Fraction(rec.bytes_per_iter * len(measured), sum(i.elapsed_ns for i in measured))
    assert rec.unit == "GB/s" and rec.worker_count == 2 and rec.initiator == "cpu0"
    assert rec.access_width == 16
    assert len(rec.placements) == n_buf


def test_read_checksum_consumed():
    case = BenchmarkCase("r", "read", [CORE], [BufferSpec(1 * MiB)], repetitions=1, warmup=0)
    assert run_case(case, SINGLE).checksum == 0


def test_chase_case_record():
    case = BenchmarkCase("ch", "chase", [CORE], [BufferSpec(256 * KiB)], repetitions=2, duration_ns=20_000_000)
    rec = run_case(case, SINGLE)
    check_record(rec, case)
    assert all(it.accesses % case.granularity == 0 for it in rec.iterations)
    assert rec.unit == "ns/access" and rec.derived_value > 0


def test_pingpong_case_record():
    case = BenchmarkCase(
        "pp", "pingpong", [CORE, OTHER], [BufferSpec(128)], rounds=6, repetitions=2
    )
    rec = run_case(case, SINGLE, pin=PIN_PAIR)
    check_record(rec, case)
    assert rec.rounds == 6 and rec.checksum == 6
    assert rec.derived_value > 0


def test_noise_metadata():
    case = BenchmarkCase(
        "rn", "read", [CORE], [BufferSpec(1 * MiB)], repetitions=2, noise=NoiseConfig((OTHER,), 2 * MiB)
    )
    rec = run_case(case, SINGLE, pin=PIN_PAIR)
    assert rec.noise["cores"] == [OTHER]
    assert rec.noise["length"] == 2 * MiB
    assert len(rec.noise["bytes_read"]) == 1
    assert rec.degraded == (not PIN_PAIR)


def test_unpinned_run_is_degraded():
    case = BenchmarkCase("r", "read", [CORE], [BufferSpec(64 * KiB)], repetitions=1)
    rec = run_case(case, SINGLE, pin=False)
    assert rec.degraded and not rec.pinned


def test_invalid_core_is_a_pinning_error():
    case = BenchmarkCase("r", "read", [99_999], [BufferSpec(64 * KiB)])
    with pytest.raises(PinningError):
        run_case(case, SINGLE)


def test_first_touch_defaults_to_case_cores():
    case = BenchmarkCase("r", "read", [CORE, CORE], [BufferSpec(64 * KiB, FirstTouch())], repetitions=1)
    rec = run_case(case, SINGLE)
    assert rec.placements[0]["policy"] == {"kind": "first_touch", "cores": [CORE, CORE]}
    assert any("first touch" in n for n in rec.placements[0]["notes"])


# suites


def read_case(cid, length=64 * KiB):
    return {"id": cid, "kernel": "read", "cores": [CORE], "repetitions": 2,
            "buffers": [{"length": length, "policy": {"kind": "default"}}]}


def test_empty_suite(tmp_path):
    res = run_suite([], SINGLE, out=tmp_path / "r.jsonl")
    assert res.records == [] and res.errors == []
    assert (tmp_path / "r.jsonl").read_text() == ""


def test_suite_continues_after_failure(tmp_path):
    out = tmp_path / "r.jsonl"
    suite = [read_case("a"), read_case("b", 1 << 50), read_case("c")]
    res = run_suite(json.dumps(suite), SINGLE, out=out, cooldown_s=0)
    assert [r.case_id for r in res.records] == ["a", "c"]
    assert [e["case_id"] for e in res.errors] == ["b"]
    assert "AllocationError" in res.errors[0]["error"]
    assert [json.loads(l)["case_id"] for l in out.read_text().splitlines()] == ["a", "c"]
    assert len((tmp_path / "r.jsonl.errors.jsonl").read_text().splitlines()) == 1


def test_parse_suite_rejects_non_list():
    with pytest.raises(ValueError):
        parse_suite('{"id": "a"}')


def test_pingpong_matrix_one_by_one():
    recs = []
    m = pingpong_matrix([(CORE, OTHER)], [Default()], rounds=4, repetitions=1, warmup=0,
                        spec=SINGLE, pin=PIN_PAIR, records=recs)
    assert m.rows == [f"{CORE}-{OTHER}"] and m.cols == ["default"]
    assert m.values[0][0] == recs[0].derived_value > 0


def test_pingpong_matrix_rejects_same_core():
    with pytest.raises(ValueError):
        pingpong_matrix([(0, 0)], [Default()], rounds=2)
