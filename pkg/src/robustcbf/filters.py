"""Safety filters: nominal CBF-QP, R-CBF, MR-CBF and the duality-based robust filters.

Every filter returns the minimizer of ``|u - k_d|^2`` over ``U`` subject to
its own safety constraint. ``U`` is a list of per-coordinate intervals;
infinite entries are dropped.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

from .solvers import ConicProblem, Cones, SolveReport, SolveStatus, Tolerances, DEFAULT_TOLERANCES, lmi, solve
from .systems import DEFAULT_INPUT_BOUND, Cbf, CbfCoefficients, ControlAffineSystem, coefficients
from .uncertainty import (
    ErrorSet,
    LIPSCHITZ_INFLATION,
    ImageSamples,
    UncertaintyEllipsoid,
    UncertaintyPolytope,
    UncertaintySet,
)


class FilterStatus(str, enum.Enum):
    FEASIBLE = "Feasible"
    INFEASIBLE = "Infeasible"
    SOLVER_FAILURE = "SolverFailure"


@dataclass
class FilterResult:
    status: FilterStatus
    u: np.ndarray | None = None
    duals: dict = field(default_factory=dict)
    report: SolveReport | None = None
    residual: float = np.nan
    problem: ConicProblem | None = field(default=None, repr=False)

    @property
    def feasible(self) -> bool:
        return self.status is FilterStatus.FEASIBLE


@dataclass(frozen=True)
class RCbfParams:
    gamma1: float = 0.05
    gamma2: float = 0.5

    def __post_init__(self):
        if self.gamma1 < 0 or self.gamma2 < 0:
            raise ValueError("R-CBF gains must be non-negative")


@dataclass(frozen=True)
class MrCbfParams:
    """Uncertainty radius and Lipschitz constants of L_f h, alpha(h) and L_g h."""

    epsilon: float
    lip_lfh: float
    lip_alpha_h: float
    lip_lgh: float

    def __post_init__(self):
        if min(self.epsilon, self.lip_lfh, self.lip_alpha_h, self.lip_lgh) < 0:
            raise ValueError("MR-CBF parameters must be non-negative")


def default_bounds(m: int) -> np.ndarray:
    return np.tile([-DEFAULT_INPUT_BOUND, DEFAULT_INPUT_BOUND], (m, 1))


def _as_bounds(bounds, m: int) -> np.ndarray:
    if bounds is None:
        return default_bounds(m)
    b = np.asarray(bounds, dtype=float).reshape(m, 2)
    if np.any(b[:, 0] > b[:, 1]):
        raise ValueError("input lower bounds exceed upper bounds")
    return b


def _bound_rows(bounds: np.ndarray, nvar: int):
    """Orthant rows ``G x <= h`` for the finite input bounds on the first m variables."""
    rows, rhs = [], []
    for i, (lo, hi) in enumerate(bounds):
        if np.isfinite(lo):
            r = np.zeros(nvar)
            r[i] = -1.0
            rows.append(r)
            rhs.append(-lo)
        if np.isfinite(hi):
            r = np.zeros(nvar)
            r[i] = 1.0
            rows.append(r)
            rhs.append(hi)
    return np.array(rows).reshape(-1, nvar), np.array(rhs)


def _result(problem: ConicProblem, rep: SolveReport, m: int, bounds: np.ndarray) -> FilterResult:
    if rep.status is SolveStatus.OPTIMAL:
        u = np.clip(rep.x[:m], bounds[:, 0], bounds[:, 1])
        return FilterResult(FilterStatus.FEASIBLE, u=u, report=rep, problem=problem)
    if rep.status is SolveStatus.PRIMAL_INFEASIBLE:
        return FilterResult(FilterStatus.INFEASIBLE, report=rep, problem=problem)
    return FilterResult(FilterStatus.SOLVER_FAILURE, report=rep, problem=problem)


def _objective(k_d: np.ndarray, nvar: int):
    m = k_d.size
    P = np.zeros((nvar, nvar))
    P[:m, :m] = 2.0 * np.eye(m)
    c = np.zeros(nvar)
    c[:m] = -2.0 * k_d
    return P, c


# ---------------------------------------------------------------------------
# single-point filters


def cbf_qp(coeffs: CbfCoefficients, k_d, bounds=None, rhs: float = 0.0, tol: Tolerances = DEFAULT_TOLERANCES) -> FilterResult:
    """``argmin |u - k_d|^2`` over U subject to ``a.u + b >= rhs``."""
    k_d = np.atleast_1d(np.asarray(k_d, dtype=float))
    m = k_d.size
    if coeffs.a.size != m:
        raise ValueError("desired input and coefficient dimensions differ")
    bounds = _as_bounds(bounds, m)
    Gb, hb = _bound_rows(bounds, m)
    G = np.vstack([-coeffs.a[None, :], Gb])
    h = np.concatenate([[coeffs.b - rhs], hb])
    P, c = _objective(k_d, m)
    problem = ConicProblem(c=c, G=G, h=h, cones=Cones(l=h.size), P=P)
    res = _result(problem, solve(problem, tol), m, bounds)
    if res.feasible:
        res.residual = coeffs.constraint(res.u) - rhs
        res.duals["cbf"] = float(res.report.z[0])
    return res


def standard_cbf_qp(system: ControlAffineSystem, cbf: Cbf, x_hat, k_d, bounds=None) -> FilterResult:
    """Nominal CBF-QP evaluated at the estimate as if it were the true state."""
    bounds = system.input_bounds if bounds is None else bounds
    return cbf_qp(coefficients(system, cbf, x_hat), k_d, bounds)


def r_cbf_margin(coeffs: CbfCoefficients, params: RCbfParams) -> float:
    na = float(np.linalg.norm(coeffs.a))
    return params.gamma1 * na + params.gamma2 * na * na


def r_cbf_qp(system: ControlAffineSystem, cbf: Cbf, x_hat, k_d, params: RCbfParams, bounds=None) -> FilterResult:
    """CBF-QP with the margin ``gamma1 |L_g h| + gamma2 |L_g h|^2`` on the right-hand side."""
    bounds = system.input_bounds if bounds is None else bounds
    coeffs = coefficients(system, cbf, x_hat)
    return cbf_qp(coeffs, k_d, bounds, rhs=r_cbf_margin(coeffs, params))


def mr_cbf_socp(coeffs: CbfCoefficients, k_d, params: MrCbfParams, bounds=None, tol: Tolerances = DEFAULT_TOLERANCES) -> FilterResult:
    """``a.u + b >= eps (L1 + L2 + L3 |u|)`` as a second-order cone constraint."""
    k_d = np.atleast_1d(np.asarray(k_d, dtype=float))
    m = k_d.size
    bounds = _as_bounds(bounds, m)
    eps = params.epsilon
    offset = eps * (params.lip_lfh + params.lip_alpha_h)
    slope = eps * params.lip_lgh
    Gb, hb = _bound_rows(bounds, m)
    # (a.u + b - offset, slope * u) in Q^(m+1)
    Gq = np.vstack([-coeffs.a[None, :], -slope * np.eye(m)])
    hq = np.concatenate([[coeffs.b - offset], np.zeros(m)])
    G = np.vstack([Gb, Gq])
    h = np.concatenate([hb, hq])
    P, c = _objective(k_d, m)
    problem = ConicProblem(c=c, G=G, h=h, cones=Cones(l=hb.size, q=(m + 1,)), P=P)
    res = _result(problem, solve(problem, tol), m, bounds)
    if res.feasible:
        res.residual = coeffs.constraint(res.u) - offset - slope * float(np.linalg.norm(res.u))
    return res


def mr_cbf_qp(system: ControlAffineSystem, cbf: Cbf, x_hat, k_d, params: MrCbfParams, bounds=None) -> FilterResult:
    bounds = system.input_bounds if bounds is None else bounds
    return mr_cbf_socp(coefficients(system, cbf, x_hat), k_d, params, bounds)


def mr_lipschitz_constants(
    system: ControlAffineSystem,
    cbf: Cbf,
    x_hat,
    B: ErrorSet,
    inflation: float = LIPSCHITZ_INFLATION,
    resolution: int = 21,
    step: float = 1e-6,
) -> MrCbfParams:
    """MR-CBF parameters from gradient norms sampled on ``x_hat + B``.

    The radius is the largest norm of an element of ``B``. Gradients of
    ``L_f h`` and ``alpha(h)`` and the Jacobian of ``L_g h`` come from central
    differences on a grid of the error set; each Lipschitz constant is the
    largest norm found, multiplied by ``inflation`` to cover the grid gaps.
    """
    n = system.state_dim
    x_hat = np.asarray(x_hat, dtype=float).reshape(n)
    eps = B.max_norm
    if eps == 0:
        return MrCbfParams(0.0, 0.0, 0.0, 0.0)
    hw = B.bounding_half_widths
    axes = [np.linspace(-w, w, resolution) if w > 0 else np.zeros(1) for w in hw]
    cube = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, n)
    states = x_hat + B.project(cube)

    def parts(xi):
        dh = cbf.grad(xi)
        lfh = np.einsum("...i,...i->...", dh, system.f(xi))
        ah = cbf.alpha(cbf.h(xi))
        lgh = np.einsum("...i,...ij->...j", dh, system.g(xi))
        return lfh, ah, lgh

    d_lfh, d_ah, d_lgh = [], [], []
    for i in range(n):
        dx = np.zeros(n)
        dx[i] = step
        p, q = parts(states + dx), parts(states - dx)
        d_lfh.append((p[0] - q[0]) / (2 * step))
        d_ah.append((p[1] - q[1]) / (2 * step))
        d_lgh.append((p[2] - q[2]) / (2 * step))
    g_lfh = np.stack(d_lfh, axis=-1)
    g_ah = np.stack(d_ah, axis=-1)
    j_lgh = np.stack(d_lgh, axis=-1)  # (N, m, n)
    return MrCbfParams(
        epsilon=eps,
        lip_lfh=inflation * float(np.max(np.linalg.norm(g_lfh, axis=-1))),
        lip_alpha_h=inflation * float(np.max(np.linalg.norm(g_ah, axis=-1))),
        lip_lgh=inflation * float(np.max(np.linalg.norm(j_lgh, ord=2, axis=(-2, -1)))),
    )


# ---------------------------------------------------------------------------
# inner minimization m(u) = min over the set of a.u + b


def _cost_vector(u, dim: int) -> np.ndarray:
    u = np.atleast_1d(np.asarray(u, dtype=float))
    if u.size != dim - 1:
        raise ValueError(f"input must have length {dim - 1}")
    return np.append(u, 1.0)


def inner_min_primal(u, uset: UncertaintySet) -> float:
    """``min (u, 1).eta`` over the set: LP for a polytope, closed form for an ellipsoid."""
    c = _cost_vector(u, uset.dim)
    if isinstance(uset, UncertaintyEllipsoid):
        center = uset.center
        Pic = np.linalg.solve(uset.P, c)
        return float(c @ center - np.sqrt(uset.interior_measure * (c @ Pic)))
    rep = solve(ConicProblem(c=c, G=uset.C, h=uset.d, cones=Cones(l=uset.d.size)))
    if rep.status is SolveStatus.DUAL_INFEASIBLE:
        raise ValueError("polytope is unbounded in the cost direction")
    if rep.status is SolveStatus.PRIMAL_INFEASIBLE:
        raise ValueError("polytope is empty")
    if not rep.optimal:
        raise RuntimeError(f"inner LP failed: {rep.status}")
    return rep.primal_objective


def inner_min_dual(u, uset: UncertaintySet) -> float:
    """Optimal value of the Lagrange dual of the inner minimization.

    Polytope: ``max -d.lam  s.t.  C'lam + (u, 1) = 0, lam >= 0``.
    Ellipsoid: ``max r lam - t`` subject to the Schur-complement LMI
    ``[[4t, (c + lam q)'], [c + lam q, lam P]] >= 0`` and ``lam >= 0``.
    """
    c = _cost_vector(u, uset.dim)
    if isinstance(uset, UncertaintyPolytope):
        p = uset.d.size
        rep = solve(ConicProblem(c=uset.d, G=-np.eye(p), h=np.zeros(p), cones=Cones(l=p), A=uset.C.T, b=-c))
        if rep.status is SolveStatus.PRIMAL_INFEASIBLE:
            raise ValueError("dual is infeasible: the polytope is unbounded in the cost direction")
        if not rep.optimal:
            raise RuntimeError(f"dual LP failed: {rep.status}")
        return -rep.primal_objective
    k = uset.dim
    F0, Flam, Ft = _schur_blocks(c, uset)
    G1, h1 = lmi(F0, [Flam, Ft])
    G = np.vstack([[-1.0, 0.0], G1])
    h = np.concatenate([[0.0], h1])
    rep = solve(ConicProblem(c=[-uset.r, 1.0], G=G, h=h, cones=Cones(l=1, s=(k + 1,))))
    if not rep.optimal:
        raise RuntimeError(f"dual SDP failed: {rep.status}")
    return -rep.primal_objective


def _schur_blocks(c: np.ndarray, E: UncertaintyEllipsoid):
    """Constant, lambda and t parts of the LMI ``[[4t, (c+lam q)'], [c+lam q, lam P]]``."""
    k = E.dim
    F0 = np.zeros((k + 1, k + 1))
    F0[0, 1:] = F0[1:, 0] = c
    Flam = np.zeros((k + 1, k + 1))
    Flam[0, 1:] = Flam[1:, 0] = E.q
    Flam[1:, 1:] = E.P
    Ft = np.zeros((k + 1, k + 1))
    Ft[0, 0] = 4.0
    return F0, Flam, Ft


# ---------------------------------------------------------------------------
# robust filters


def robust_dual_qp(k_d, polytope: UncertaintyPolytope, bounds=None, tol: Tolerances = DEFAULT_TOLERANCES) -> FilterResult:
    """Robust filter over a polytope through LP duality.

    Solves ``min |u - k_d|^2`` over ``(u, lam)`` subject to
    ``C'lam + (u, 1) = 0``, ``-d.lam >= 0``, ``lam >= 0`` and ``u in U``.
    """
    k_d = np.atleast_1d(np.asarray(k_d, dtype=float))
    m = k_d.size
    if polytope.input_dim != m:
        raise ValueError("polytope and input dimensions differ")
    bounds = _as_bounds(bounds, m)
    C, d = polytope.C, polytope.d
    p = d.size
    nvar = m + p
    A = np.hstack([np.vstack([np.eye(m), np.zeros((1, m))]), C.T])
    b = np.zeros(m + 1)
    b[-1] = -1.0
    Gb, hb = _bound_rows(bounds, nvar)
    G = np.vstack([np.hstack([np.zeros((p, m)), -np.eye(p)]), np.append(np.zeros(m), d)[None, :], Gb])
    h = np.concatenate([np.zeros(p + 1), hb])
    P, c = _objective(k_d, nvar)
    problem = ConicProblem(c=c, G=G, h=h, cones=Cones(l=h.size), A=A, b=b, P=P)
    res = _result(problem, solve(problem, tol), m, bounds)
    if res.feasible:
        lam = np.clip(res.report.x[m:], 0.0, None)
        res.duals["lambda"] = lam
        res.residual = float(-d @ lam)
    return res


def robust_dual_sdp(k_d, ellipsoid: UncertaintyEllipsoid, bounds=None, tol: Tolerances = DEFAULT_TOLERANCES) -> FilterResult:
    """Robust filter over an ellipsoid through the Lagrange dual and Schur complements.

    Variables ``(u, lam, s, t)``; minimizes ``s`` subject to
    ``[[4t, (c + lam q)'], [c + lam q, lam P]] >= 0`` with ``c = (u, 1)``,
    ``[[s, (u - k_d)'], [u - k_d, I]] >= 0``, ``r lam - t >= 0``, ``lam >= 0``
    and ``u in U``.
    """
    k_d = np.atleast_1d(np.asarray(k_d, dtype=float))
    m = k_d.size
    if ellipsoid.input_dim != m:
        raise ValueError("ellipsoid and input dimensions differ")
    bounds = _as_bounds(bounds, m)
    # same set, normalized so that q'P^-1 q / 4 - r = 1
    rho = ellipsoid.interior_measure
    E = UncertaintyEllipsoid(ellipsoid.P / rho, ellipsoid.q / rho, ellipsoid.r / rho)
    k = m + 1
    nvar = m + 3
    il, is_, it = m, m + 1, m + 2

    # Schur LMI on (u, lam, t), size m + 2
    e_last = np.zeros(k)
    e_last[-1] = 1.0
    F0, Flam, Ft = _schur_blocks(e_last, E)
    Fu = []
    for i in range(m):
        F = np.zeros((k + 1, k + 1))
        F[0, 1 + i] = F[1 + i, 0] = 1.0
        Fu.append(F)
    Z = np.zeros((k + 1, k + 1))
    G1, h1 = lmi(F0, Fu + [Flam, Z, Ft])

    # cost LMI [[s, (u - k)'], [u - k, I]], size m + 1
    C0 = np.eye(m + 1)
    C0[0, 0] = 0.0
    C0[0, 1:] = C0[1:, 0] = -k_d
    Cu = []
    for i in range(m):
        F = np.zeros((m + 1, m + 1))
        F[0, 1 + i] = F[1 + i, 0] = 1.0
        Cu.append(F)
    Cs = np.zeros((m + 1, m + 1))
    Cs[0, 0] = 1.0
    Zc = np.zeros((m + 1, m + 1))
    G2, h2 = lmi(C0, Cu + [Zc, Cs, Zc])

    lin = np.zeros((2, nvar))
    lin[0, il] = -E.r  # -(r lam - t) <= 0
    lin[0, it] = 1.0
    lin[1, il] = -1.0  # -lam <= 0
    Gb, hb = _bound_rows(bounds, nvar)
    G = np.vstack([lin, Gb, G1, G2])
    h = np.concatenate([np.zeros(2), hb, h1, h2])
    c = np.zeros(nvar)
    c[is_] = 1.0
    problem = ConicProblem(c=c, G=G, h=h, cones=Cones(l=2 + hb.size, s=(m + 2, m + 1)))
    res = _result(problem, solve(problem, tol), m, bounds)
    if res.feasible:
        x = res.report.x
        # lambda scales back by the normalization of the ellipsoid data
        res.duals.update({"lambda": float(x[il]) / rho, "s": float(x[is_]), "t": float(x[it])})
        res.residual = inner_min_primal(res.u, ellipsoid)
    return res


def robust_filter(k_d, uset: UncertaintySet, bounds=None) -> FilterResult:
    if isinstance(uset, UncertaintyPolytope):
        return robust_dual_qp(k_d, uset, bounds)
    if isinstance(uset, UncertaintyEllipsoid):
        return robust_dual_sdp(k_d, uset, bounds)
    raise TypeError(f"expected a polytope or an ellipsoid, got {type(uset).__name__}")


# ---------------------------------------------------------------------------
# brute-force oracle


def nnls(E: np.ndarray, f: np.ndarray, max_iter: int | None = None) -> tuple[np.ndarray, float]:
    """Lawson-Hanson active-set solution of ``min |E w - f|`` over ``w >= 0``.

    Written out here because scipy 1.15's ``nnls`` returns non-optimal points
    on wide matrices with many nearly parallel columns, which is exactly what
    dense boundary samples produce.
    """
    E = np.asarray(E, dtype=float)
    f = np.asarray(f, dtype=float)
    k, n = E.shape
    max_iter = 3 * n + 50 if max_iter is None else max_iter
    tol = 10 * np.finfo(float).eps * max(k, n) * max(1.0, np.max(np.abs(E), initial=0.0))
    w = np.zeros(n)
    passive = np.zeros(n, dtype=bool)
    for _ in range(max_iter):
        grad = E.T @ (f - E @ w)
        grad[passive] = -np.inf
        j = int(np.argmax(grad))
        if grad[j] <= tol:
            break
        passive[j] = True
        while True:
            idx = np.flatnonzero(passive)
            z = np.linalg.lstsq(E[:, idx], f, rcond=None)[0]
            if np.all(z > tol):
                w[:] = 0.0
                w[idx] = z
                break
            # step back toward the feasible w and drop the columns that hit zero
            neg = z <= tol
            wi = w[idx]
            alpha = np.min(wi[neg] / (wi[neg] - z[neg]))
            w[idx] = wi + alpha * (z - wi)
            passive &= w > tol
            w[~passive] = 0.0
            if not passive.any():
                break
    return w, float(np.linalg.norm(E @ w - f))


def scenario_points(source, count: int = 10000) -> np.ndarray:
    """Constraint points for the scenario oracle from samples or a convex set."""
    if isinstance(source, ImageSamples):
        return source.points
    if isinstance(source, UncertaintyPolytope):
        if source.dim == 2:
            return source.vertices()
        raise NotImplementedError("vertex enumeration is implemented for 2-D polytopes")
    if isinstance(source, UncertaintyEllipsoid):
        return source.boundary_points(count)
    return np.atleast_2d(np.asarray(source, dtype=float))


def scenario_oracle(k_d, points, bounds=None, count: int = 10000) -> FilterResult:
    """QP with one constraint ``zeta_a.u + zeta_b >= 0`` per point, solved exactly.

    Uses the least-distance-programming reduction to non-negative least
    squares, which is independent of the interior-point solver. When the
    constraints are inconsistent the NNLS solution is a Farkas certificate.
    """
    Z = scenario_points(points, count)
    k_d = np.atleast_1d(np.asarray(k_d, dtype=float))
    m = k_d.size
    if Z.shape[0] == 0 or Z.shape[1] != m + 1:
        raise ValueError("scenario oracle needs a nonempty list of points in R^(m+1)")
    bounds = _as_bounds(bounds, m)
    # with u = k_d + x the constraints read  Gx >= hh
    G = Z[:, :m]
    hh = -Z[:, m] - G @ k_d
    rows, rhs = [G], [hh]
    for i, (lo, hi) in enumerate(bounds):
        e = np.zeros(m)
        e[i] = 1.0
        if np.isfinite(lo):
            rows.append(e[None, :])
            rhs.append([lo - k_d[i]])
        if np.isfinite(hi):
            rows.append(-e[None, :])
            rhs.append([k_d[i] - hi])
    G = np.vstack(rows)
    hh = np.concatenate([np.ravel(r) for r in rhs])
    scale = max(1.0, float(np.max(np.abs(G), initial=0.0)), float(np.max(np.abs(hh), initial=0.0)))
    E = np.vstack([G.T, hh[None, :]]) / scale
    f = np.zeros(m + 1)
    f[-1] = 1.0
    w, _ = nnls(E, f)
    r = E @ w - f
    if np.linalg.norm(r) < 1e-10 or r[-1] >= 0:
        return FilterResult(FilterStatus.INFEASIBLE, duals={"farkas": w / scale})
    x = -r[:m] / r[-1]
    u = np.clip(k_d + x, bounds[:, 0], bounds[:, 1])
    margin = float(np.min(Z[:, :m] @ u + Z[:, m]))
    return FilterResult(FilterStatus.FEASIBLE, u=u, duals={"weights": w / scale}, residual=margin)
