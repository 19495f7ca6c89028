"""Robust control barrier function safety filters under state-estimation error.

The filters take an estimate ``x_hat`` and a bounded error set ``B`` and
return an input that keeps ``h`` non-negative for every true state in
``x_hat + B``. The coupled uncertainty of the CBF coefficients is handled
through a polytope (dual QP) or an ellipsoid (dual SDP), both solved with
the bundled conic interior-point solver.
"""

from .filters import (
    FilterResult,
    FilterStatus,
    MrCbfParams,
    RCbfParams,
    cbf_qp,
    inner_min_dual,
    inner_min_primal,
    mr_cbf_qp,
    mr_lipschitz_constants,
    r_cbf_qp,
    robust_dual_qp,
    robust_dual_sdp,
    robust_filter,
    scenario_oracle,
    standard_cbf_qp,
)
from .sim import CorruptionModel, FilterSpec, Setup, SweepTable, Trajectory, min_h_sweep, simulate
from .solvers import ConicProblem, Cones, SolveReport, SolveStatus, check_certificate, solve
from .systems import (
    Cbf,
    CbfCoefficients,
    ControlAffineSystem,
    DomainError,
    SegwayParams,
    coefficients,
    get_benchmark,
)
from .uncertainty import (
    ErrorSet,
    SamplingSpec,
    UncertaintyEllipsoid,
    UncertaintyPolytope,
    ellipsoid_fit,
    feasibility_check,
    polytopic_overapprox,
    sample_image,
)

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]
