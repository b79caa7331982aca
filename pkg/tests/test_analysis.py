from fractions import Fraction

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from membench.analysis import chase_curves, detect_breakpoints, fraction, fraction_of_bound, summarize
from membench.errors import AnalysisError
from membench.records import Iteration, MeasurementRecord
from membench.topo import REFERENCE_TOPOLOGY, load_topology

KiB, MiB = 1 << 10, 1 << 20


@pytest.fixture(scope="module")
def ref():
    return load_topology(REFERENCE_TOPOLOGY)


def record(elapsed, warmup=0, kernel="read", bytes_per_iter=1000, nodes=(0,), initiator="grace0", **kw):
    its = [Iteration(i, e, warmup=i < warmup) for i, e in enumerate(elapsed)]
    placements = [{"policy": {"kind": "node", "node": n}, "length": bytes_per_iter, "realized_nodes": [n],
                   "degraded": False} for n in nodes]
    return MeasurementRecord("r", kernel, [0], bytes_per_iter, its, None, "GB/s", initiator=initiator,
                             placements=placements, **kw)


# summarize


def test_constant_iterations():
    s = summarize(record([10, 10, 10]))
    assert (s.mean, s.stdev, s.min, s.max, s.count) == (10, 0, 10, 10, 3)


def test_one_two_three():
    s = summarize(record([1, 2, 3]))
    assert (s.mean, s.min, s.max) == (2, 1, 3)
    assert s.stdev == 1.0


def test_warmup_excluded():
    assert summarize(record([100, 10, 10], warmup=1)).mean == 10
    assert summarize(record([100, 10, 10], warmup=0)).mean == 40


def test_empty_record():
    with pytest.raises(AnalysisError):
        summarize(record([5, 6], warmup=2))


@given(st.lists(st.integers(1, 10**12), min_size=1, max_size=30), st.randoms())
def test_summarize_permutation_invariant(values, rnd):
    shuffled = list(values)
    rnd.shuffle(shuffled)
    a, b = summarize(record(values)), summarize(record(shuffled))
    assert (a.mean, a.min, a.max, a.count) == (b.mean, b.min, b.max, b.count)
    assert a.stdev == pytest.approx(b.stdev)
    assert a.min <= a.mean <= a.max


# fractions


def test_half_of_bound(ref):
    # 225 bytes/ns against read(grace0, hbm0) = 450
    rec = record([1000, 1000], bytes_per_iter=225_000, nodes=(4,))
    fe = fraction_of_bound(rec, ref)
    assert fe.fraction == Fraction(1, 2)
    assert fe.bound == 450 and fe.achieved == 225
    assert fe.limiting_resource == "c2c0:hopper0>grace0"
    assert fe.note == ""


def test_equal_to_bound(ref):
    rec = record([2, 2], bytes_per_iter=1000, nodes=(0,))
    assert fraction_of_bound(rec, ref).fraction == 1


def test_above_bound_is_not_clamped(ref):
    fe = fraction_of_bound(record([1], bytes_per_iter=1000), ref)
    assert fe.fraction == 2 and fe.note == "cache-resident?"


def test_copy_fraction(ref):
    rec = record([4], kernel="copy", bytes_per_iter=1000, nodes=(0, 0), initiator="hopper0")
    assert fraction_of_bound(rec, ref).fraction == 1


def test_initiator_from_core_map(ref):
    rec = record([1000], bytes_per_iter=250_000, nodes=(0,), initiator=None)
    rec.cores = [0, 71]
    assert fraction_of_bound(rec, ref).fraction == Fraction(1, 2)
    rec.cores = [0, 72]
    with pytest.raises(AnalysisError):
        fraction_of_bound(rec, ref)


def test_degraded_placement_is_an_error(ref):
    rec = record([1000])
    rec.placements[0]["degraded"] = True
    with pytest.raises(AnalysisError):
        fraction_of_bound(rec, ref)


def test_unmapped_node_is_an_error(ref):
    with pytest.raises(AnalysisError):
        fraction_of_bound(record([1000], nodes=(7,)), ref)


def test_latency_records_have_no_bound(ref):
    with pytest.raises(AnalysisError):
        fraction_of_bound(record([1000], kernel="chase"), ref)


@given(
    st.fractions(min_value=Fraction(1, 1000), max_value=10**6),
    st.fractions(min_value=Fraction(1, 1000), max_value=10**6),
    st.fractions(min_value=Fraction(1, 1000), max_value=1000),
)
def test_fraction_scale_consistent(a, b, k):
    assert fraction(a * k, b * k) == fraction(a, b) == a / b


def test_fraction_rejects_zero_bound():
    with pytest.raises(AnalysisError):
        fraction(1, 0)


# breakpoints


def sizes(lo=4 * KiB, hi=256 * MiB):
    out, s = [], lo
    while s <= hi:
        out.append(s)
        s *= 2
    return out


def step_curve(steps, levels):
    return [(s, levels[sum(s > t for t in steps)]) for s in sizes()]


def test_single_step():
    assert detect_breakpoints(step_curve([64 * KiB], [1, 10])) == [64 * KiB]


def test_flat_curve():
    assert detect_breakpoints(step_curve([], [3])) == []


def test_two_step():
    assert detect_breakpoints(step_curve([32 * KiB, 1 * MiB], [1.2, 4.0, 90.0])) == [32 * KiB, 1 * MiB]


def test_small_steps_ignored():
    assert detect_breakpoints(step_curve([64 * KiB], [1, 1.2])) == []
    assert detect_breakpoints(step_curve([64 * KiB], [1, 1.2]), delta=0.1) == [64 * KiB]


def test_too_few_samples():
    with pytest.raises(AnalysisError):
        detect_breakpoints([(1, 1), (2, 1), (4, 1)])


def test_unsorted_samples():
    with pytest.raises(AnalysisError):
        detect_breakpoints([(4, 1), (2, 1), (8, 1), (16, 1)])


@st.composite
def staircase(draw):
    n = draw(st.integers(8, 20))
    window = 2
    positions, i = [], window - 1 + draw(st.integers(0, 3))
    while i <= n - window - 1 and len(positions) < 4:
        positions.append(i)
        i += draw(st.integers(2 * window, 6))
    levels = [draw(st.floats(0.5, 5))]
    for _ in positions:
        levels.append(levels[-1] * draw(st.floats(1.5, 20)))
    xs = [4096 << k for k in range(n)]
    ys = []
    for idx in range(n):
        ys.append(levels[sum(idx > p for p in positions)])
    return list(zip(xs, ys)), [xs[p] for p in positions]


@settings(max_examples=200)
@given(staircase())
def test_constructed_steps_recovered(case):
    samples, expected = case
    assert detect_breakpoints(samples, 0.3, 2) == expected


@settings(max_examples=200)
@given(
    st.lists(st.floats(0.1, 1000), min_size=4, max_size=24),
    st.floats(0, 5),
    st.floats(0, 5),
    st.integers(1, 3),
)
def test_monotone_in_delta(lat, d1, d2, window):
    lo, hi = sorted((d1, d2))
    samples = [(1 << i, v) for i, v in enumerate(lat)]
    if len(samples) < 2 * window:
        return
    assert set(detect_breakpoints(samples, hi, window)) <= set(detect_breakpoints(samples, lo, window))


def test_chase_curves_groups_and_sorts():
    recs = []
    for length in (8 * KiB, 4 * KiB, 16 * KiB):
        r = record([1], kernel="chase", bytes_per_iter=0)
        r.placements[0]["length"] = length
        r.derived_value = length / 1024
        recs.append(r)
    curves = chase_curves(recs)
    assert list(curves.values()) == [[(4 * KiB, 4.0), (8 * KiB, 8.0), (16 * KiB, 16.0)]]
