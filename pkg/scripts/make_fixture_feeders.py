"""Regenerate the two 20-bus LV feeders shipped in src/lvfault/data/grids/.

Each feeder hangs off the slack through a transformer-like branch (r=0.04, x=0.12 pu)
followed by a randomly branching cable run. Impedances are sized so the far end of the
feeder sags below 0.95 pu during the evening household peak.
"""

import argparse
from pathlib import Path

import numpy as np

from lvfault.grid_model import Bus, GridModel, Line, export_grid, validate_radial

OUT = Path(__file__).resolve().parents[1] / "src" / "lvfault" / "data" / "grids"


def lv_feeder(name, seed, n_buses=20, r_trafo=0.04, r_cable=0.015):
    rng = np.random.default_rng(seed)
    buses = [Bus("s0", "slack", 0.4)] + [Bus(f"n{k}", "pq", 0.4) for k in range(1, n_buses)]
    lines = [Line("s0", "n1", r_trafo, 3 * r_trafo)]
    for k in range(2, n_buses):
        parent = int(rng.integers(max(1, k - 3), k))
        r = round(float(rng.uniform(0.5, 1.5)) * r_cable, 6)
        x = round(float(rng.uniform(0.5, 1.5)) * r_cable * 0.4, 6)
        lines.append(Line(f"n{parent}", f"n{k}", r, x))
    grid = GridModel(name, tuple(buses), tuple(lines), base_mva=0.1)
    assert not validate_radial(grid)
    return grid


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", type=Path, default=OUT)
    args = ap.parse_args()
    args.out.mkdir(parents=True, exist_ok=True)
    for name, seed in (("feeder_a", 1), ("feeder_b", 2)):
        path = args.out / f"{name}.json"
        path.write_text(export_grid(lv_feeder(name, seed)))
        print(f"wrote {path}")


if __name__ == "__main__":
    main()
