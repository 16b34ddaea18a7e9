"""Median act+update time per controller on identical input streams.

    python scripts/timing.py --iterations 5000
"""

import argparse
import pathlib

from adapj.harness import (
    CONTROLLER_KINDS,
    ExperimentConfig,
    bench_step_time,
    make_controller,
    prepare,
    timing_csv,
)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--iterations", type=int, default=5000)
    ap.add_argument("--out", type=pathlib.Path, default=pathlib.Path("results/timing"))
    args = ap.parse_args()

    cfg = ExperimentConfig()
    prep = prepare(cfg, CONTROLLER_KINDS)
    ctrls = {k: make_controller(k, prep, cfg) for k in CONTROLLER_KINDS}
    rows = bench_step_time(ctrls, args.iterations)
    args.out.mkdir(parents=True, exist_ok=True)
    (args.out / "timing.csv").write_text(timing_csv(rows))
    for r in sorted(rows, key=lambda r: r.median_s):
        print(f"{r.controller:<10} median {r.median_s * 1e6:8.1f} us  p95 {r.p95_s * 1e6:8.1f} us")


if __name__ == "__main__":
    main()
