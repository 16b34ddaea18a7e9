"""Free-slope versus tied-slope tangent planes, and piecewise tangent lines of sin.

    python scripts/linear_approx.py
"""

import numpy as np

from adapj.linapprox import demo_table, piecewise_linear_1d


def main():
    mae_free, mae_tied, rows = demo_table()
    print(f"{'x':>6} {'y':>6} {'z':>9} {'free err':>9} {'tied err':>9}")
    for x, y, z, ei, ec in rows:
        print(f"{x:6.1f} {y:6.1f} {z:9.5f} {ei:9.5f} {ec:9.5f}")
    print(f"grid MAE: free slopes {mae_free:.5f}, tied slopes {mae_tied:.5f}")

    for k in (2, 4, 8, 16):
        pl = piecewise_linear_1d(np.sin, np.linspace(0, np.pi, k), df=np.cos)
        print(f"{k:>2} tangent lines on [0, pi]: max error {pl.max_error:.4f}")


if __name__ == "__main__":
    main()
