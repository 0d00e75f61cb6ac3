"""Export measured means and variances of the LQG and LQS reaching models as tidy CSV.

    python scripts/compare_lqs_lqg.py --out runs/compare.csv
"""
import argparse

import numpy as np

from lqisoc import build_reaching_model, forward
from lqisoc.io import write_plot_csv


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", required=True)
    args = ap.parse_args()

    sources = {}
    for kind in ("lqg", "lqs"):
        problem = build_reaching_model(kind=kind)
        _, traj, _ = forward(problem)
        sources[kind] = traj.measured(problem.system.M)
    write_plot_csv(args.out, sources)

    vg = np.diagonal(sources["lqg"][1], axis1=1, axis2=2)[:, 1]
    vs = np.diagonal(sources["lqs"][1], axis1=1, axis2=2)[:, 1]
    print(f"var(p_y): LQG argmax t={vg.argmax()} ({vg.max():.3e}), LQS argmax t={vs.argmax()} ({vs.max():.3e})")


if __name__ == "__main__":
    main()
