"""Double integrator: minimum of h along closed-loop runs as the error grows.

The estimate is corrupted adversarially (it reports the state inside
x - B with the largest h). The nominal input is zero, so only the filter
keeps the state inside h >= 0. By default a handful of magnitudes is run;
pass --full for the 20-point grid (a few minutes).

Run: python3 demos/02_double_integrator_sweep.py [--full]
"""

import argparse

import numpy as np

from robustcbf import FilterSpec, Setup, min_h_sweep
from robustcbf.sim import CorruptionModel

parser = argparse.ArgumentParser()
parser.add_argument("--full", action="store_true")
args = parser.parse_args()

deltas = np.arange(1, 21) / 100 if args.full else [0.02, 0.06, 0.1, 0.14, 0.18]
setup = Setup(
    benchmark="double_integrator",
    x0=(0.4, 0.6),
    dt=0.01,
    horizon=5.0,
    corruption=CorruptionModel.adversarial(21),
    timing=False,
)
filters = [FilterSpec("duality", directions=16), FilterSpec("standard"), FilterSpec("mr_cbf"), FilterSpec("r_cbf")]
table = min_h_sweep(setup, deltas, filters)

labels = [f.label for f in filters]
print("delta   " + "".join(f"{l:>12}" for l in labels))
for i, d in enumerate(table.deltas):
    cells = []
    for l in labels:
        mark = "*" if table.infeasible[l][i] else " "
        cells.append(f"{table.min_h[l][i]:+11.5f}{mark}")
    print(f"{d:<6.2f}  " + "".join(cells))
print("\n* the filter reported Infeasible at some step (previous input held)")
for l in labels:
    print(f"{l:<9} first infeasible magnitude: {table.first_infeasible(l)}")
