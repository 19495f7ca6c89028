"""Segway: ellipsoidal image set and the dual SDP filter.

The pitch-rate barrier is nonlinear in the state, so the coefficient image
of a ball of estimation error is curved. We sample it on the surface of the
ball, fit an enclosing ellipsoid and robustify against that. An LQR
controller that ignores the barrier supplies the nominal input.

Run: python3 demos/03_segway_ellipsoid.py [eps]
"""

import sys

import numpy as np

from robustcbf import ErrorSet, FilterSpec, Setup, get_benchmark
from robustcbf.sim import CorruptionModel
from robustcbf.uncertainty import SamplingSpec, ellipsoid_fit, sample_image

eps = float(sys.argv[1]) if len(sys.argv) > 1 else 0.02
system, cbf = get_benchmark("segway")
x0 = np.array([-4.0, -0.5, 0.0, 1.0])

# one ellipsoid, up close
samples = sample_image(system, cbf, x0, ErrorSet.ball(eps, 4), SamplingSpec("boundary", 1000, 42))
E = ellipsoid_fit(samples, margin=0.01)
pts = samples.points
print(f"image samples: a in [{pts[:, 0].min():+.4f}, {pts[:, 0].max():+.4f}], b in [{pts[:, 1].min():+.4f}, {pts[:, 1].max():+.4f}]")
print(f"fitted ellipsoid centre {np.round(E.center, 4)}, all samples inside: {bool(np.all(E.contains(pts)))}")

setup = Setup(
    benchmark="segway",
    x0=tuple(x0),
    dt=0.01,
    horizon=6.0,
    desired={"type": "lqr", "Q": [10.0, 1.0, 1.0, 1.0], "R": [1.0]},
    corruption=CorruptionModel.adversarial(21),
    error_kind="ball",
)
for spec in (FilterSpec("duality", label="duality_sdp", overapprox="ellipsoid", samples=1000), FilterSpec("standard")):
    tr = setup.run(spec, eps)
    stats = tr.solve_stats()
    print(
        f"{spec.label:<12} min h = {tr.min_h:+.4f}   infeasible steps = {tr.infeasible_steps:<4}"
        f" mean solve {stats['mean_ms']:.2f} ms (max {stats['max_ms']:.2f})"
    )
