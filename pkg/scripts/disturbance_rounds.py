"""Five Lissajous rounds on the 2-axis finger: clean, impulses, clean, obstacle, clean.

    python scripts/disturbance_rounds.py --seed 0
"""

import argparse
import pathlib

from adapj.harness import DisturbanceProtocol, ExperimentConfig, run_disturbance_protocol


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--obstacle-tip-mm", type=float, default=DisturbanceProtocol.obstacle_tip_mm)
    ap.add_argument("--out", type=pathlib.Path, default=pathlib.Path("results/disturbance"))
    args = ap.parse_args()

    protocol = DisturbanceProtocol(obstacle_tip_mm=args.obstacle_tip_mm)
    res = run_disturbance_protocol(ExperimentConfig(seed=args.seed), protocol)
    args.out.mkdir(parents=True, exist_ok=True)
    (args.out / "rounds.csv").write_text(res.to_csv())
    (args.out / "timeseries.csv").write_text(res.report.to_csv())

    print(f"{'round':>5} {'disturbance':>15} {'MAE mm':>8} {'mean a':>8}")
    for r, (lab, m, av) in enumerate(zip(res.labels, res.round_mae, res.round_mean_action)):
        print(f"{r:>5} {lab:>15} {m:8.3f} {av:8.4f}")
    print(f"obstacle-axis shift {res.shift:.4f} ({res.shift_z:.1f} standard errors)")


if __name__ == "__main__":
    main()
