"""Small dense conic solver: LP, convex QP, second-order cone and PSD blocks.

Problems are stated in the standard form

    minimize    1/2 x'Px + c'x
    subject to  G x + s = h,   A x = b,   s in K

where K is a product of a non-negative orthant, second-order cones and
positive semidefinite cones. PSD blocks are stored in ``svec`` form (lower
triangle, column by column, off-diagonal entries scaled by sqrt(2)) so that
``svec(X) @ svec(Y) == trace(X @ Y)``.

The algorithm is a homogeneous self-dual interior-point method with
Nesterov-Todd scaling and a Mehrotra predictor-corrector step. A quadratic
objective is lifted into an epigraph second-order cone, so infeasibility and
unboundedness are always detected through certificates of the embedding.
Everything is dense; the target is problems with a few dozen variables and
PSD blocks up to 8x8, as they arise in a safety filter evaluated at every
control step.
"""

from __future__ import annotations

import contextlib
import enum
import functools
import logging
import math
import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla

logger = logging.getLogger(__name__)

SQRT2 = np.sqrt(2.0)
MAX_PSD_SIDE = 8
REG_DELTA = 1e-11


class SolveStatus(str, enum.Enum):
    OPTIMAL = "Optimal"
    PRIMAL_INFEASIBLE = "Infeasible"
    DUAL_INFEASIBLE = "Unbounded"
    MAX_ITERATIONS = "MaxIterations"
    NUMERICAL_ERROR = "NumericalError"


@dataclass(frozen=True)
class Tolerances:
    feastol: float = 1e-9
    abstol: float = 1e-9
    reltol: float = 1e-10
    # looser level accepted when progress stalls before the targets above
    certified: float = 1e-7
    max_iters: int = 200


DEFAULT_TOLERANCES = Tolerances()


@dataclass(frozen=True)
class Cones:
    """Cone layout of the slack vector: orthant, then SOCs, then PSD blocks."""

    l: int = 0
    q: tuple[int, ...] = ()
    s: tuple[int, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "q", tuple(int(k) for k in self.q))
        object.__setattr__(self, "s", tuple(int(k) for k in self.s))
        if self.l < 0 or any(k < 1 for k in self.q) or any(k < 1 for k in self.s):
            raise ValueError(f"invalid cone dimensions {self}")
        if any(k > MAX_PSD_SIDE for k in self.s):
            raise ValueError(f"PSD blocks are limited to {MAX_PSD_SIDE}x{MAX_PSD_SIDE}")

    @property
    def dim(self) -> int:
        return self.l + sum(self.q) + sum(k * (k + 1) // 2 for k in self.s)

    @property
    def degree(self) -> int:
        return self.l + len(self.q) + sum(self.s)

    def blocks(self) -> tuple:
        """``(kind, size, slice)`` for each block in storage order."""
        return _block_layout(self.l, self.q, self.s)


@functools.lru_cache(maxsize=256)
def _block_layout(l: int, q: tuple, s: tuple) -> tuple:
    out = []
    pos = 0
    if l:
        out.append(("l", l, slice(0, l)))
        pos = l
    for k in q:
        out.append(("q", k, slice(pos, pos + k)))
        pos += k
    for k in s:
        n = k * (k + 1) // 2
        out.append(("s", k, slice(pos, pos + n)))
        pos += n
    return tuple(out)


# ---------------------------------------------------------------------------
# svec helpers


@functools.lru_cache(maxsize=None)
def _svec_layout(k: int):
    rows, cols = np.tril_indices(k)
    # column-major order of the lower triangle
    order = np.lexsort((rows, cols))
    rows, cols = rows[order], cols[order]
    off = rows != cols
    n = rows.size
    # vec(X) (row-major, k*k) <-> svec(X) maps
    to_svec = np.zeros((n, k * k))
    to_svec[np.arange(n), rows * k + cols] = np.where(off, SQRT2, 1.0)
    to_mat = np.zeros((k * k, n))
    to_mat[rows * k + cols, np.arange(n)] = np.where(off, 1.0 / SQRT2, 1.0)
    to_mat[cols * k + rows, np.arange(n)] = np.where(off, 1.0 / SQRT2, 1.0)
    return rows, cols, np.where(off, SQRT2, 1.0), to_svec, to_mat


def svec(X: np.ndarray) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    rows, cols, scale, _, _ = _svec_layout(X.shape[0])
    return X[rows, cols] * scale


def smat(v: np.ndarray) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    k = int(round((np.sqrt(8 * v.size + 1) - 1) / 2))
    if k * (k + 1) // 2 != v.size:
        raise ValueError(f"length {v.size} is not a triangular number")
    return (_svec_layout(k)[4] @ v).reshape(k, k)


def lmi(F0: np.ndarray, Fs: list[np.ndarray], sym_tol: float = 1e-12):
    """Rows ``(G, h)`` encoding ``F0 + sum_i x_i Fs[i] >= 0`` as a PSD block.

    With ``s = h - G x`` the slack equals ``svec(F0 + sum x_i F_i)``.
    """
    mats = [np.asarray(F0, dtype=float)] + [np.asarray(F, dtype=float) for F in Fs]
    k = mats[0].shape[0]
    for F in mats:
        if F.shape != (k, k):
            raise ValueError("LMI data must be square matrices of equal size")
        if np.max(np.abs(F - F.T), initial=0.0) > sym_tol * max(1.0, np.max(np.abs(F), initial=0.0)):
            raise ValueError("LMI data must be symmetric")
    h = svec(mats[0])
    G = -np.column_stack([svec(F) for F in mats[1:]]) if Fs else np.zeros((h.size, 0))
    return G, h


# ---------------------------------------------------------------------------
# problem and report


@dataclass
class ConicProblem:
    c: np.ndarray
    G: np.ndarray
    h: np.ndarray
    cones: Cones
    A: np.ndarray | None = None
    b: np.ndarray | None = None
    P: np.ndarray | None = None

    def __post_init__(self):
        self.c = np.atleast_1d(np.asarray(self.c, dtype=float))
        n = self.c.size
        self.G = np.asarray(self.G, dtype=float).reshape(-1, n)
        self.h = np.atleast_1d(np.asarray(self.h, dtype=float))
        if self.A is None:
            self.A = np.zeros((0, n))
            self.b = np.zeros(0)
        self.A = np.asarray(self.A, dtype=float).reshape(-1, n)
        self.b = np.atleast_1d(np.asarray(self.b, dtype=float)) if self.b is not None else None
        if self.b is None or self.b.size != self.A.shape[0]:
            raise ValueError("A and b have inconsistent sizes")
        if self.G.shape[0] != self.h.size or self.h.size != self.cones.dim:
            raise ValueError(
                f"G has {self.G.shape[0]} rows, h has {self.h.size} entries, cones need {self.cones.dim}"
            )
        if self.P is not None:
            self.P = np.asarray(self.P, dtype=float)
            if self.P.shape != (n, n):
                raise ValueError("P must be n x n")
            if not np.allclose(self.P, self.P.T, atol=1e-12):
                raise ValueError("P must be symmetric")
            if not np.any(self.P):
                self.P = None

    @property
    def n(self) -> int:
        return self.c.size

    def objective(self, x: np.ndarray) -> float:
        val = float(self.c @ x)
        if self.P is not None:
            val += 0.5 * float(x @ self.P @ x)
        return val


@dataclass
class SolveReport:
    status: SolveStatus
    x: np.ndarray | None = None
    s: np.ndarray | None = None
    z: np.ndarray | None = None
    y: np.ndarray | None = None
    primal_objective: float = np.nan
    dual_objective: float = np.nan
    gap: float = np.nan
    primal_residual: float = np.nan
    dual_residual: float = np.nan
    iterations: int = 0
    tolerance: float = DEFAULT_TOLERANCES.certified
    info: dict = field(default_factory=dict)

    @property
    def optimal(self) -> bool:
        return self.status is SolveStatus.OPTIMAL


# ---------------------------------------------------------------------------
# cone algebra


def _identity(cones: Cones) -> np.ndarray:
    e = np.zeros(cones.dim)
    for kind, k, sl in cones.blocks():
        if kind == "l":
            e[sl] = 1.0
        elif kind == "q":
            e[sl.start] = 1.0
        else:
            e[sl] = svec(np.eye(k))
    return e


def cone_margin(cones: Cones, x: np.ndarray) -> float:
    """Smallest 'eigenvalue' of x over all blocks (>= 0 iff x is in K)."""
    vals = [np.inf]
    for kind, k, sl in cones.blocks():
        v = x[sl]
        if kind == "l":
            vals.append(v.min())
        elif kind == "q":
            vals.append(v[0] - np.linalg.norm(v[1:]))
        else:
            vals.append(np.linalg.eigvalsh(smat(v))[0])
    return float(min(vals))


def _jordan(cones: Cones, x: np.ndarray, y: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    for kind, k, sl in cones.blocks():
        u, v = x[sl], y[sl]
        if kind == "l":
            out[sl] = u * v
        elif kind == "q":
            out[sl.start] = u @ v
            out[sl.start + 1 : sl.stop] = u[0] * v[1:] + v[0] * u[1:]
        else:
            U, V = smat(u), smat(v)
            out[sl] = svec(0.5 * (U @ V + V @ U))
    return out


def _jordan_solve(cones: Cones, lam: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Solve ``lam o w = v`` for w; PSD parts of lam are diagonal matrices."""
    out = np.empty_like(v)
    for kind, k, sl in cones.blocks():
        l, r = lam[sl], v[sl]
        if kind == "l":
            out[sl] = r / l
        elif kind == "q":
            l0, l1 = l[0], l[1:]
            w0 = (l0 * r[0] - l1 @ r[1:]) / (l0 * l0 - l1 @ l1)
            out[sl.start] = w0
            out[sl.start + 1 : sl.stop] = (r[1:] - w0 * l1) / l0
        else:
            d = np.diag(smat(l))
            out[sl] = svec(smat(r) * (2.0 / (d[:, None] + d[None, :])))
    return out


def _max_step(cones: Cones, x: np.ndarray, dx: np.ndarray) -> float:
    """Largest alpha with x + alpha*dx in K (x in int K)."""
    alpha = np.inf
    for kind, k, sl in cones.blocks():
        u, d = x[sl], dx[sl]
        if kind == "l":
            neg = d < 0
            if np.any(neg):
                alpha = min(alpha, float(np.min(-u[neg] / d[neg])))
        elif kind == "q":
            alpha = min(alpha, _soc_step(u, d))
        else:
            X, D = smat(u), smat(d)
            try:
                L = np.linalg.cholesky(X)
            except np.linalg.LinAlgError:
                return 0.0
            Li = sla.solve_triangular(L, np.eye(k), lower=True)
            top = np.linalg.eigvalsh(-(Li @ D @ Li.T))[-1]
            if top > 0:
                alpha = min(alpha, 1.0 / top)
    return alpha


def _soc_step(u: np.ndarray, d: np.ndarray) -> float:
    # q(a) = (u0 + a d0)^2 - |u1 + a d1|^2 stays >= 0 until its first positive root
    qa = d[0] ** 2 - d[1:] @ d[1:]
    qb = 2.0 * (u[0] * d[0] - u[1:] @ d[1:])
    qc = u[0] ** 2 - u[1:] @ u[1:]
    if qc <= 0 or u[0] <= 0:
        return 0.0
    roots = []
    if abs(qa) < 1e-14 * max(1.0, abs(qb), qc):
        if qb < 0:
            roots.append(-qc / qb)
    else:
        disc = qb * qb - 4 * qa * qc
        if disc >= 0:
            sq = np.sqrt(disc)
            t = -0.5 * (qb + np.copysign(sq, qb))
            for r in (t / qa, qc / t if t != 0 else np.inf):
                if r > 0:
                    roots.append(r)
    step = min(roots) if roots else np.inf
    # the ray could also leave through the negative nappe via the apex
    if d[0] < 0:
        step = min(step, -u[0] / d[0])
    return step


def _nt_scaling(cones: Cones, s: np.ndarray, z: np.ndarray):
    """Dense block-diagonal W, W^{-T} and lam with W z = W^{-T} s = lam."""
    N = cones.dim
    W = np.zeros((N, N))
    WiT = np.zeros((N, N))
    lam = np.zeros(N)
    for kind, k, sl in cones.blocks():
        sv, zv = s[sl], z[sl]
        if kind == "l":
            w = np.sqrt(sv / zv)
            W[sl, sl] = np.diag(w)
            WiT[sl, sl] = np.diag(1.0 / w)
            lam[sl] = np.sqrt(sv * zv)
        elif kind == "q":
            J = -np.eye(k)
            J[0, 0] = 1.0
            sn = _jnorm(sv)
            zn = _jnorm(zv)
            sb, zb = sv / sn, zv / zn
            gam = np.sqrt(0.5 * (1.0 + sb @ zb))
            wb = (sb + J @ zb) / (2.0 * gam)
            beta = np.sqrt(sn / zn)
            Wb = np.empty((k, k))
            Wb[0, 0] = wb[0]
            Wb[0, 1:] = Wb[1:, 0] = wb[1:]
            Wb[1:, 1:] = np.eye(k - 1) + np.outer(wb[1:], wb[1:]) / (1.0 + wb[0])
            Wq = beta * Wb
            W[sl, sl] = Wq
            # inverse of the hyperbolic rotation Wb is J Wb J; Wb is symmetric
            WiT[sl, sl] = (J @ Wb @ J) / beta
            lam[sl] = Wq @ zv
        else:
            S, Z = smat(sv), smat(zv)
            L1 = np.linalg.cholesky(S)
            L2 = np.linalg.cholesky(Z)
            U, d, Vt = np.linalg.svd(L2.T @ L1)
            R = L1 @ Vt.T / np.sqrt(d)
            Ri = np.linalg.inv(R)
            W[sl, sl] = _congruence(R.T, k)
            WiT[sl, sl] = _congruence(Ri, k)
            lam[sl] = svec(np.diag(d))
    return W, WiT, lam


def _jnorm(v: np.ndarray) -> float:
    """sqrt(v0^2 - |v1|^2) evaluated without cancellation."""
    r = np.linalg.norm(v[1:])
    val = (v[0] - r) * (v[0] + r)
    if not val > 0:
        raise ValueError("point is not in the interior of the cone")
    return float(np.sqrt(val))


def _congruence(M: np.ndarray, k: int) -> np.ndarray:
    """Matrix T with T svec(X) = svec(M X M^T)."""
    _, _, _, to_svec, to_mat = _svec_layout(k)
    return to_svec @ np.kron(M, M) @ to_mat


# ---------------------------------------------------------------------------
# quadratic objective lifting


def _lift_quadratic(problem: ConicProblem):
    """Replace 1/2 x'Px by an epigraph variable t with |Fx|^2 <= 2t."""
    P = problem.P
    w, V = np.linalg.eigh(P)
    if w[0] < -1e-10 * max(1.0, w[-1]):
        raise ValueError("P must be positive semidefinite")
    keep = w > 1e-14 * max(1.0, w[-1])
    F = np.sqrt(w[keep])[:, None] * V[:, keep].T
    n, k = problem.n, F.shape[0]
    soc_G = np.zeros((k + 2, n + 1))
    soc_h = np.zeros(k + 2)
    soc_G[0, n] = -1.0
    soc_h[0] = 0.5
    soc_G[1 : k + 1, :n] = -F
    soc_G[k + 1, n] = -1.0
    soc_h[k + 1] = -0.5

    cones = problem.cones
    nl = cones.l
    nq = sum(cones.q)
    Gp = np.hstack([problem.G, np.zeros((problem.G.shape[0], 1))])
    G = np.vstack([Gp[: nl + nq], soc_G, Gp[nl + nq :]])
    h = np.concatenate([problem.h[: nl + nq], soc_h, problem.h[nl + nq :]])
    lifted = ConicProblem(
        c=np.append(problem.c, 1.0),
        G=G,
        h=h,
        cones=Cones(cones.l, cones.q + (k + 2,), cones.s),
        A=np.hstack([problem.A, np.zeros((problem.A.shape[0], 1))]),
        b=problem.b,
    )
    cut = (nl + nq, nl + nq + k + 2)
    return lifted, cut


# ---------------------------------------------------------------------------
# main entry points


_observers: list = []


@contextlib.contextmanager
def observe_solves(callback):
    """Call ``callback(problem, report)`` after every solve made inside the block."""
    _observers.append(callback)
    try:
        yield
    finally:
        _observers.remove(callback)


@contextlib.contextmanager
def record_solves():
    """Collect ``(problem, report)`` for every solve made inside the block."""
    log: list = []
    with observe_solves(lambda problem, report: log.append((problem, report))):
        yield log


def solve(problem: ConicProblem, tol: Tolerances = DEFAULT_TOLERANCES) -> SolveReport:
    """Solve a conic problem; see the module docstring for the standard form."""
    rep = _solve(problem, tol)
    for fn in _observers:
        fn(problem, rep)
    return rep


def _solve(problem: ConicProblem, tol: Tolerances) -> SolveReport:
    if problem.P is not None:
        lifted, (lo, hi) = _lift_quadratic(problem)
        n = problem.n
        P, c, G, A = problem.P, problem.c, problem.G, problem.A
        nc = 1.0 + _nrm(c)

        def original_dres(x, y, z):
            # near the epigraph cone's apex a small lifted gap can leave this one large
            zo = np.concatenate([z[:lo], z[hi:]])
            return _nrm(P @ x[:n] + c + G.T @ zo + A.T @ y) / nc <= tol.certified

        rep = _hsd(lifted, tol, accept=original_dres)

        def drop(v):
            return None if v is None else np.concatenate([v[:lo], v[hi:]])

        out = SolveReport(
            status=rep.status,
            x=None if rep.x is None else rep.x[:n],
            s=drop(rep.s),
            z=drop(rep.z),
            y=rep.y,
            iterations=rep.iterations,
            tolerance=tol.certified,
            info=rep.info,
        )
        if out.status is SolveStatus.OPTIMAL:
            _fill_metrics(problem, out)
        return out
    return _hsd(problem, tol)


def _fill_metrics(problem: ConicProblem, rep: SolveReport) -> None:
    x, z, y = rep.x, rep.z, rep.y
    s = problem.h - problem.G @ x
    rep.s = s
    Px = problem.P @ x if problem.P is not None else np.zeros_like(x)
    rep.primal_objective = problem.objective(x)
    rep.dual_objective = float(-0.5 * x @ Px - problem.h @ z - problem.b @ y)
    rep.gap = float(s @ z)
    rep.primal_residual = float(
        max(
            _nrm(problem.A @ x - problem.b) / (1.0 + _nrm(problem.b)),
            max(0.0, -cone_margin(problem.cones, s)) / (1.0 + _nrm(problem.h)),
        )
    )
    rep.dual_residual = float(
        _nrm(Px + problem.c + problem.G.T @ z + problem.A.T @ y) / (1.0 + _nrm(problem.c))
    )


def _nrm(v) -> float:
    v = np.ravel(v)
    return math.sqrt(float(v @ v)) if v.size else 0.0


def _hsd(pr: ConicProblem, tol: Tolerances, accept=None) -> SolveReport:
    cones = pr.cones
    c, G, h, A, b = pr.c, pr.G, pr.h, pr.A, pr.b
    n, p, N = c.size, b.size, h.size
    nu = cones.degree
    e = _identity(cones)

    x = np.zeros(n)
    y = np.zeros(p)
    s = e.copy()
    z = e.copy()
    tau = kappa = 1.0

    nc = 1.0 + _nrm(c)
    nbp, nhp = 1.0 + _nrm(b), 1.0 + _nrm(h)
    # column offsets in the Newton system
    ix, iy, iz, is_ = 0, n, n + p, n + p + N
    it_, ik = n + p + 2 * N, n + p + 2 * N + 1
    dim = n + p + 2 * N + 2

    M = np.zeros((dim, dim))
    M[ix : ix + n, iy : iy + p] = A.T
    M[ix : ix + n, iz : iz + N] = G.T
    M[ix : ix + n, it_] = c
    M[iy : iy + p, ix : ix + n] = -A
    M[iy : iy + p, it_] = b
    M[iz : iz + N, ix : ix + n] = G
    M[iz : iz + N, is_ : is_ + N] = np.eye(N)
    M[iz : iz + N, it_] = -h
    r4 = n + p + N
    M[r4, ix : ix + n] = c
    M[r4, iy : iy + p] = b
    M[r4, iz : iz + N] = h
    M[r4, ik] = 1.0
    r5 = r4 + 1
    r6 = r5 + N
    # static regularization keeps the factorization nonsingular when G or A
    # are rank deficient
    reg = np.zeros((dim, dim))
    reg[np.arange(n), np.arange(n)] = REG_DELTA
    reg[iy + np.arange(p), iy + np.arange(p)] = -REG_DELTA

    best = None
    status = SolveStatus.MAX_ITERATIONS
    it = 0
    for it in range(tol.max_iters + 1):
        rx = A.T @ y + G.T @ z + c * tau
        ry = b * tau - A @ x
        rz = s + G @ x - h * tau
        rt = kappa + c @ x + b @ y + h @ z
        mu = (s @ z + tau * kappa) / (nu + 1)

        xh, yh, zh, sh = x / tau, y / tau, z / tau, s / tau
        pres = max(_nrm(A @ xh - b) / nbp, _nrm(G @ xh + sh - h) / nhp)
        dres = _nrm(A.T @ yh + G.T @ zh + c) / nc
        pcost = c @ xh
        dcost = -h @ zh - b @ yh
        gap = sh @ zh
        relgap = gap / max(1.0, min(abs(pcost), abs(dcost)))
        metrics = dict(pres=pres, dres=dres, gap=gap, relgap=relgap, pcost=pcost, dcost=dcost)
        logger.debug("it %d: %s tau=%.2e kappa=%.2e", it, metrics, tau, kappa)

        ok = accept is None or accept(xh, yh, zh)
        if ok and pres <= tol.feastol and dres <= tol.feastol and (gap <= tol.abstol or relgap <= tol.reltol):
            status = SolveStatus.OPTIMAL
            break
        if ok and pres <= tol.certified and dres <= tol.certified and (gap <= tol.certified or relgap <= tol.certified):
            best = (it, x.copy(), y.copy(), z.copy(), s.copy(), tau)

        hz = h @ z + b @ y
        if hz < 0:
            pinf = _nrm(A.T @ y + G.T @ z) / (-hz)
            if pinf <= tol.feastol:
                status = SolveStatus.PRIMAL_INFEASIBLE
                break
        cx = c @ x
        if cx < 0:
            dinf = max(_nrm(A @ x), _nrm(G @ x + s)) / (-cx)
            if dinf <= tol.feastol:
                status = SolveStatus.DUAL_INFEASIBLE
                break
        if it == tol.max_iters:
            break

        try:
            W, WiT, lam = _nt_scaling(cones, s, z)
        except (np.linalg.LinAlgError, FloatingPointError, ValueError):
            status = SolveStatus.NUMERICAL_ERROR
            break
        M[r5 : r5 + N, iz : iz + N] = W
        M[r5 : r5 + N, is_ : is_ + N] = WiT
        M[r6, it_] = kappa
        M[r6, ik] = tau
        try:
            with warnings.catch_warnings():
                warnings.simplefilter("error", sla.LinAlgWarning)
                lu = sla.lu_factor(M + reg, check_finite=True)
        except (ValueError, sla.LinAlgWarning, sla.LinAlgError):
            status = SolveStatus.NUMERICAL_ERROR
            break

        lamlam = _jordan(cones, lam, lam)

        def direction(eta, comp, tk):
            rhs = np.concatenate([-eta * rx, -eta * ry, -eta * rz, [-eta * rt], _jordan_solve(cones, lam, comp), [tk]])
            d = sla.lu_solve(lu, rhs, check_finite=False)
            # refinement against the unregularized system
            for _ in range(3):
                res = rhs - M @ d
                if _nrm(res) <= 1e-14 * (1.0 + _nrm(rhs)):
                    break
                d += sla.lu_solve(lu, res, check_finite=False)
            return d

        def step_length(d):
            dz_, ds_ = d[iz : iz + N], d[is_ : is_ + N]
            a = min(_max_step(cones, s, ds_), _max_step(cones, z, dz_))
            for v, dv in ((tau, d[it_]), (kappa, d[ik])):
                if dv < 0:
                    a = min(a, -v / dv)
            return a

        # predictor
        d_aff = direction(1.0, -lamlam, -tau * kappa)
        a_aff = min(1.0, step_length(d_aff))
        sigma = (1.0 - a_aff) ** 3
        # corrector
        dsa = WiT @ d_aff[is_ : is_ + N]
        dza = W @ d_aff[iz : iz + N]
        comp = -lamlam - _jordan(cones, dsa, dza) + sigma * mu * e
        tk = -tau * kappa - d_aff[it_] * d_aff[ik] + sigma * mu
        d = direction(1.0 - sigma, comp, tk)
        if not np.all(np.isfinite(d)):
            status = SolveStatus.NUMERICAL_ERROR
            break
        alpha = min(1.0, 0.99 * step_length(d))
        if alpha < 1e-12:
            logger.debug("step length collapsed at iteration %d", it)
            break

        x = x + alpha * d[ix : ix + n]
        y = y + alpha * d[iy : iy + p]
        z = z + alpha * d[iz : iz + N]
        s = s + alpha * d[is_ : is_ + N]
        tau = tau + alpha * d[it_]
        kappa = kappa + alpha * d[ik]

    report = SolveReport(status=status, iterations=it, tolerance=tol.certified, info=metrics)
    if status is SolveStatus.OPTIMAL:
        report.x, report.y, report.z, report.s = x / tau, y / tau, z / tau, s / tau
    elif status is SolveStatus.PRIMAL_INFEASIBLE:
        scale = -(h @ z + b @ y)
        report.y, report.z = y / scale, z / scale
    elif status is SolveStatus.DUAL_INFEASIBLE:
        scale = -(c @ x)
        report.x, report.s = x / scale, s / scale
    elif best is not None:
        # stalled close to the optimum: fall back to the certified iterate
        it_b, xb, yb, zb, sb, tb = best
        report.status = SolveStatus.OPTIMAL
        report.x, report.y, report.z, report.s = xb / tb, yb / tb, zb / tb, sb / tb
        report.info["stalled_at"] = it_b
    if report.status is SolveStatus.OPTIMAL:
        _fill_metrics(pr, report)
    return report


def check_certificate(problem: ConicProblem, report: SolveReport, factor: float = 10.0) -> bool:
    """Independently re-check a report's optimality or infeasibility certificate.

    Residuals, duality gap and cone membership are recomputed from the
    problem data; everything must hold within ``factor`` times the report's
    tolerance.
    """
    tol = factor * report.tolerance
    K = problem.cones
    if report.status is SolveStatus.OPTIMAL:
        x, z, y = report.x, report.z, report.y
        if x is None or z is None or y is None:
            return False
        s = problem.h - problem.G @ x
        scale_h = 1.0 + _nrm(problem.h)
        if cone_margin(K, s) < -tol * scale_h:
            return False
        if cone_margin(K, z) < -tol * (1.0 + _nrm(z)):
            return False
        if _nrm(problem.A @ x - problem.b) > tol * (1.0 + _nrm(problem.b)):
            return False
        Px = problem.P @ x if problem.P is not None else np.zeros_like(x)
        if _nrm(Px + problem.c + problem.G.T @ z + problem.A.T @ y) > tol * (1.0 + _nrm(problem.c)):
            return False
        pobj = problem.objective(x)
        dobj = -0.5 * x @ Px - problem.h @ z - problem.b @ y
        return abs(pobj - dobj) <= tol * (1.0 + abs(pobj))
    if report.status is SolveStatus.PRIMAL_INFEASIBLE:
        z, y = report.z, report.y
        if z is None or y is None:
            return False
        val = problem.h @ z + problem.b @ y
        if val >= 0:
            return False
        zn, yn = z / -val, y / -val
        if cone_margin(K, zn) < -tol:
            return False
        return _nrm(problem.G.T @ zn + problem.A.T @ yn) <= tol * (1.0 + _nrm(zn) + _nrm(yn))
    if report.status is SolveStatus.DUAL_INFEASIBLE:
        x = report.x
        if x is None:
            return False
        val = problem.c @ x
        if val >= 0:
            return False
        xn = x / -val
        s = -problem.G @ xn
        if cone_margin(K, s) < -tol:
            return False
        if problem.P is not None and _nrm(problem.P @ xn) > tol:
            return False
        return _nrm(problem.A @ xn) <= tol
    return False
