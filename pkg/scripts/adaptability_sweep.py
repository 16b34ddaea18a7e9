"""MAE versus stiffness and damping ratio, with AdapJ updates on and frozen.

    python scripts/adaptability_sweep.py --seeds 0 1 2 --workers 1
"""

import argparse
import pathlib

import numpy as np

from adapj.harness import DEFAULT_RATIOS, ExperimentConfig, run_sweep

CONTROLLERS = ("jacobian", "mpc", "adapj", "adapj_frozen", "rnn")


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--ratios", type=float, nargs="+", default=list(DEFAULT_RATIOS))
    ap.add_argument("--seeds", type=int, nargs="+", default=[0])
    ap.add_argument("--workers", type=int, default=1)
    ap.add_argument("--out", type=pathlib.Path, default=pathlib.Path("results/sweep"))
    args = ap.parse_args()

    res = run_sweep(ExperimentConfig(), args.ratios, args.ratios, CONTROLLERS,
                    seeds=args.seeds, workers=args.workers)
    args.out.mkdir(parents=True, exist_ok=True)
    (args.out / "sweep.csv").write_text(res.to_csv())
    (args.out / "adapj_params.csv").write_text(res.params_csv())

    tab = res.table()
    for axis in ("stiffness", "damping"):
        print(f"\n{axis} ratio " + " ".join(f"{c:>12}" for c in CONTROLLERS) + f" {'A0':>8}")
        for r in args.ratios:
            maes = [np.mean([tab[(axis, r, c, s)] for s in args.seeds]) for c in CONTROLLERS]
            a0 = np.mean([res.adapj_params[(axis, r, s)]["A0"][0, 0] for s in args.seeds])
            print(f"{r:>15g} " + " ".join(f"{m:12.3f}" for m in maes) + f" {a0:8.4f}")


if __name__ == "__main__":
    main()
