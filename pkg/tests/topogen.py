"""Seeded random topologies and a brute-force routing oracle for tests."""

from __future__ import annotations

import copy
import random
from collections import Counter
from fractions import Fraction

from membench.topo import topology_from_dict


def _bw(rng: random.Random):
    # mix integers and exact decimal values
    if rng.random() < 0.7:
        return rng.randint(10, 5000)
    return rng.randint(100, 50000) / 10


def random_topology_doc(seed: int) -> dict:
    rng = random.Random(seed)
    n_sockets = rng.randint(1, 4)
    pus, memories, links = [], [], []
    socket_pus: dict[int, list[str]] = {}
    node = 0
    for s in range(n_sockets):
        cpu = f"c{s}"
        pus.append({"id": cpu, "kind": "cpu", "socket": s, "core_count": rng.randint(1, 8), "caches": []})
        socket_pus[s] = [cpu]
        memories.append(
            {"id": f"d{s}", "kind": "ddr", "socket": s, "numa_node": node, "capacity": 1 << 30, "bandwidth": _bw(rng)}
        )
        node += 1
        if rng.random() < 0.6:
            acc = f"a{s}"
            pus.append({"id": acc, "kind": "accelerator", "socket": s, "core_count": 4, "caches": []})
            socket_pus[s].append(acc)
            memories.append(
                {"id": f"h{s}", "kind": "hbm", "socket": s, "numa_node": 100 + s, "capacity": 1 << 30, "bandwidth": _bw(rng)}
            )
            links.append(
                {"id": f"c2c{s}", "endpoint_a": f"d{s}" if rng.random() < 0.3 else cpu, "endpoint_b": acc,
                 "bandwidth_per_direction": _bw(rng), "allowed_initiators": ["cpu", "accelerator"]}
            )
    kinds = (["cpu"], ["accelerator"], ["cpu", "accelerator"])
    for s in range(n_sockets):
        for t in range(s + 1, n_sockets):
            for k in range(rng.choice((0, 1, 1, 2))):
                a = rng.choice(socket_pus[s])
                b = rng.choice(socket_pus[t])
                links.append(
                    {"id": f"x{s}{t}{k}", "endpoint_a": a, "endpoint_b": b,
                     "bandwidth_per_direction": _bw(rng), "allowed_initiators": rng.choice(kinds)}
                )
    if n_sockets > 1 and rng.random() < 0.3:
        # a switch port reachable from every cpu
        for s in range(n_sockets):
            links.append(
                {"id": f"sw{s}", "endpoint_a": f"c{s}", "endpoint_b": "port:0:switch",
                 "bandwidth_per_direction": _bw(rng), "allowed_initiators": ["cpu"]}
            )
    rng.shuffle(links)
    return {"name": f"random-{seed}", "page_size": 4096, "pus": pus, "memories": memories, "links": links}


def random_topology(seed: int):
    return topology_from_dict(random_topology_doc(seed))


def scaled_doc(doc: dict, k) -> dict:
    out = copy.deepcopy(doc)
    k = Fraction(k)
    for m in out["memories"]:
        m["bandwidth"] = str(Fraction(str(m["bandwidth"])) * k)
    for link in out["links"]:
        link["bandwidth_per_direction"] = str(Fraction(str(link["bandwidth_per_direction"])) * k)
    return out


def with_unused_links(doc: dict, seed: int) -> dict:
    """Add links that no datapath can use: dead-end ports and links nobody may initiate over."""
    rng = random.Random(seed)
    out = copy.deepcopy(doc)
    pu = rng.choice(out["pus"])["id"]
    out["links"].append(
        {"id": "zz_deadend", "endpoint_a": pu, "endpoint_b": f"port:{rng.choice(out['pus'])['socket']}:stub",
         "bandwidth_per_direction": 1, "allowed_initiators": ["cpu", "accelerator"]}
    )
    present = {p["kind"] for p in out["pus"]}
    if present == {"cpu"}:
        a, b = rng.sample([p["id"] for p in out["pus"]], 2) if len(out["pus"]) > 1 else (pu, "port:0:x")
        out["links"].append(
            {"id": "zz_accel_only", "endpoint_a": a, "endpoint_b": b,
             "bandwidth_per_direction": 1, "allowed_initiators": ["accelerator"]}
        )
    return out


# --------------------------------------------------------------------------
# brute-force oracle


def oracle_path(spec, pu: str, mem: str):
    """Every simple admissible path from mem's home to pu; fewest links, then smallest id sequence.

    Returns a list of (link_id, source_vertex, target_vertex) or None.
    """
    kind = spec.pu(pu).kind
    home = spec.memory(mem).home
    edges = []
    for link in spec.links:
        if kind not in link.allowed_initiators:
            continue
        a, b = spec.vertex(link.endpoint_a), spec.vertex(link.endpoint_b)
        edges.append((link.id, a, b))
        edges.append((link.id, b, a))
    best = None

    def dfs(v, visited, used, path):
        nonlocal best
        if v == pu:
            key = (len(path), [e[0] for e in path])
            if best is None or key < best[0]:
                best = (key, list(path))
            return
        if best is not None and len(path) >= best[0][0]:
            return
        for lid, s, t in edges:
            if s == v and t not in visited and lid not in used:
                path.append((lid, s, t))
                visited.add(t)
                used.add(lid)
                dfs(t, visited, used, path)
                path.pop()
                visited.discard(t)
                used.discard(lid)

    if home == pu:
        return []
    dfs(home, {home}, set(), [])
    return None if best is None else best[1]


def oracle_bound(spec, op: str, pu: str, src: str, dst: str | None = None):
    """Exact bound recomputed from oracle paths; None if unreachable."""
    usage: Counter = Counter()

    def add(mem, reverse):
        path = oracle_path(spec, pu, mem)
        if path is None:
            return False
        usage[mem] += 1
        for lid, s, t in path:
            usage[(lid, t, s) if reverse else (lid, s, t)] += 1
        return True

    if op == "read":
        ok = add(src, False)
    elif op == "write":
        ok = add(src, True)
    else:
        ok = add(src, False) and add(dst, True)
    if not ok:
        return None
    caps = {}
    for r in usage:
        if isinstance(r, tuple):
            caps[r] = spec.link(r[0]).bandwidth_per_direction
        else:
            caps[r] = spec.memory(r).bandwidth
    return min(Fraction(caps[r]) / n for r, n in usage.items())
