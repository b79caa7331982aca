"""Print and render the theoretical bounds of a topology for every initiator."""

import argparse
from pathlib import Path

from membench.report import bounds_to_matrix, render_heatmap
from membench.topo import REFERENCE_TOPOLOGY, bounds_matrix, load_topology


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("topology", nargs="?", default=str(REFERENCE_TOPOLOGY))
    ap.add_argument("--out-dir", default="bounds")
    args = ap.parse_args()

    spec = load_topology(args.topology)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for pu in spec.pus:
        for op in ("read", "write", "copy"):
            bm = bounds_matrix(spec, op, pu.id)
            if op != "copy":
                cells = ", ".join(
                    f"{c}={float(cell.bound):g}" if cell else f"{c}=-" for c, cell in zip(bm.cols, bm.cells[0])
                )
                print(f"{op:>5} {pu.id}: {cells}")
            path = out / f"{op}_{pu.id}.svg"
            path.write_text(render_heatmap(bounds_to_matrix(bm), f"{op} bounds for {pu.id} [GB/s]"))
    print("SVGs in", out)


if __name__ == "__main__":
    main()
