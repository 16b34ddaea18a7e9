"""Tracking MAE, error spread and per-step time of every controller on the 1-DoF finger.

    python scripts/tracking_table.py --seeds 0 1 2 --out results/tracking
"""

import argparse
import pathlib
from dataclasses import replace

import numpy as np

from adapj.harness import CONTROLLER_KINDS, ExperimentConfig, prepare, run_tracking


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
    ap.add_argument("--duration", type=float, default=500.0)
    ap.add_argument("--out", type=pathlib.Path, default=pathlib.Path("results/tracking"))
    args = ap.parse_args()

    rows = []
    for seed in args.seeds:
        base = ExperimentConfig(seed=seed)
        cfg = replace(base, trajectory=replace(base.trajectory, duration=args.duration))
        prep = prepare(cfg, CONTROLLER_KINDS)
        for kind in CONTROLLER_KINDS:
            rep = run_tracking(replace(cfg, controller=kind), prep)
            agg = rep.aggregates()
            rows.append((kind, seed, agg["mae"], agg["std"], agg["step_time_mean_s"]))

    args.out.mkdir(parents=True, exist_ok=True)
    lines = ["controller,seed,mae,std,step_time_mean_s"]
    lines += [f"{k},{s},{m!r},{sd!r},{t!r}" for k, s, m, sd, t in rows]
    (args.out / "tracking.csv").write_text("\n".join(lines) + "\n")

    print(f"{'controller':<10} {'MAE mm':>10} {'std mm':>10} {'step us':>10}")
    for kind in CONTROLLER_KINDS:
        sel = np.array([r[2:] for r in rows if r[0] == kind])
        m, sd, t = sel.mean(axis=0)
        print(f"{kind:<10} {m:10.3f} {sd:10.3f} {t * 1e6:10.1f}")


if __name__ == "__main__":
    main()
