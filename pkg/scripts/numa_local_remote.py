"""Read and copy throughput from one core against every NUMA node of the host.

On a single-node host this prints the one local figure and says so.
"""

import argparse

from membench.alloc import NUMA, ExplicitNode, host_cores, host_nodes
from membench.harness import BenchmarkCase, BufferSpec, run_case


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--core", type=int, default=host_cores()[0])
    ap.add_argument("--size-mib", type=int, default=256)
    args = ap.parse_args()

    nodes = host_nodes() or [0]
    local = NUMA.node_of_cpu(args.core) if NUMA.available else None
    length = args.size_mib << 20
    print(f"core {args.core}, local node {local}, nodes {nodes}")
    for node in nodes:
        policy = ExplicitNode(node)
        read = run_case(BenchmarkCase(f"read-n{node}", "read", [args.core], [BufferSpec(length, policy)]))
        copy = run_case(
            BenchmarkCase(f"copy-n{node}", "copy", [args.core], [BufferSpec(length, policy), BufferSpec(length, policy)])
        )
        tag = "local" if node == local else "remote"
        print(f"node {node} ({tag}): read {read.derived_value:.2f} GB/s, copy {copy.derived_value:.2f} GB/s")
    if len(nodes) < 2:
        print("single-node host: no remote comparison possible")


if __name__ == "__main__":
    main()
