"""Pointer-chase latency from 4 KiB to 256 MiB, with detected breakpoints and an SVG plot."""

import argparse

from membench.alloc import allocate, host_cache_sizes
from membench.analysis import detect_breakpoints
from membench.kernels import build_chase, kernel_chase
from membench.report import Series, render_lines


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--min-kib", type=int, default=4)
    ap.add_argument("--max-mib", type=int, default=256)
    ap.add_argument("--duration-ms", type=float, default=200.0)
    ap.add_argument("--delta", type=float, default=0.3)
    ap.add_argument("--out", default="chase_sweep.svg")
    args = ap.parse_args()

    points = []
    size = args.min_kib << 10
    while size <= args.max_mib << 20:
        buf = allocate(size)
        chase = build_chase(buf.array, 64, seed=size)
        kernel_chase(chase, 10_000_000)
        r = kernel_chase(chase, int(args.duration_ms * 1e6))
        points.append((size, r.elapsed / r.accesses))
        print(f"{size >> 10:>9} KiB  {points[-1][1]:8.2f} ns/access")
        buf.close()
        size *= 2

    caches = host_cache_sizes()
    found = detect_breakpoints(points, args.delta)
    print("host caches:", {f"L{k}": f"{v >> 10} KiB" for k, v in caches.items()})
    print("breakpoints:", [f"{b >> 10} KiB" for b in found])
    svg = render_lines(
        [Series("chase", [p[0] for p in points], [p[1] for p in points])],
        "log2-x",
        markers=sorted(caches.values()),
        marker_labels=[f"L{k}" for k in sorted(caches, key=caches.get)],
        title="pointer-chase latency",
        x_label="buffer size",
        y_label="ns/access",
    )
    with open(args.out, "w") as fh:
        fh.write(svg)
    print("wrote", args.out)


if __name__ == "__main__":
    main()
