"""A system that is not built in: a planar single integrator avoiding a disc.

With two inputs the coefficient space is (a1, a2, b), so the supporting
hyperplane polytope lives in R^3. Everything else is the same as for the
benchmarks: describe f, g and h, pick an error set and call the filter.

Run: python3 demos/04_custom_system.py
"""

import numpy as np

from robustcbf import Cbf, ControlAffineSystem, ErrorSet, FilterSpec, simulate
from robustcbf.sim import CorruptionModel
from robustcbf.systems import LinearAlpha

CENTER, RADIUS, GOAL = np.array([0.0, 0.0]), 0.5, np.array([2.0, 0.1])

system = ControlAffineSystem(
    2,
    2,
    drift=lambda x: np.zeros_like(x),
    input_matrix=lambda x: np.broadcast_to(np.eye(2), x.shape[:-1] + (2, 2)).copy(),
    domain=[[-3.0, 3.0], [-3.0, 3.0]],
    input_bounds=[[-2.0, 2.0], [-2.0, 2.0]],
    name="single_integrator",
)
cbf = Cbf(
    h=lambda x: np.sum((x - CENTER) ** 2, axis=-1) - RADIUS**2,
    grad=lambda x: 2.0 * (x - CENTER),
    alpha=LinearAlpha(2.0),
)


def go_to_goal(t, x_hat):
    return np.clip(GOAL - x_hat, -2.0, 2.0)


B = ErrorSet.box([0.1, 0.1])
for spec in (FilterSpec("duality"), FilterSpec("standard")):
    tr = simulate(system, cbf, spec, CorruptionModel.adversarial(11), B, [-2.0, 0.0], go_to_goal, dt=0.01, horizon=6.0)
    print(f"{spec.label:<9} min h = {tr.min_h:+.4f}  final state = {np.round(tr.x[-1], 3)}  infeasible steps = {tr.infeasible_steps}")
