"""Deterministic synthetic measurement records."""

import random

from membench.records import Iteration, MeasurementRecord, derived_float

KERNEL_UNITS = {"read": "GB/s", "write": "GB/s", "copy": "GB/s", "chase": "ns/access", "pingpong": "ns/exchange"}


def synthetic_records(n: int = 100, seed: int = 0) -> list[MeasurementRecord]:
    rng = random.Random(seed)
    out = []
    for k in range(n):
        kernel = rng.choice(list(KERNEL_UNITS))
        n_it = rng.randint(1, 6)
        warm = rng.randint(0, min(1, n_it - 1))
        its = []
        for i in range(n_it):
            it = Iteration(i, rng.randint(1_000, 10**9), warmup=i < warm)
            if kernel == "chase":
                it.accesses = 200 * rng.randint(1, 10**6)
            if kernel == "pingpong":
                it.kernel_ns = rng.randint(1, it.elapsed_ns)
            its.append(it)
        n_ops = 2 if kernel == "copy" else 1
        placements = [
            {"policy": {"kind": "node", "node": node}, "length": 1 << rng.randint(12, 30), "alignment": 64,
             "realized_nodes": [node], "degraded": False, "notes": []}
            for node in (rng.randint(0, 3) for _ in range(n_ops))
        ]
        cores = [rng.randint(0, 7) for _ in range(2 if kernel == "pingpong" else rng.randint(1, 4))]
        rec = MeasurementRecord(
            case_id=f"case-{k:03d}, {kernel}",
            kernel=kernel,
            cores=cores,
            bytes_per_iter=0 if kernel in ("chase", "pingpong") else rng.randint(1, 1 << 32),
            iterations=its,
            derived_value=None,
            unit=KERNEL_UNITS[kernel],
            worker_count=len(cores),
            placements=placements,
            topo_hash="%064x" % rng.getrandbits(256),
            timestamp=f"2026-01-{rng.randint(1, 28):02d}T00:00:00+00:00",
            version="0.1.0",
            rounds=rng.randint(2, 1000) if kernel == "pingpong" else None,
        )
        rec.derived_value = derived_float(rec)
        out.append(rec)
    return out
