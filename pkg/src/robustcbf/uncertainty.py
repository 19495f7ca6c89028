"""Estimation-error sets and convex over-approximations of the coefficient image.

For an estimate ``x_hat`` and error set ``B`` the image set is

    P = {(a(xi), b(xi)) : xi in x_hat + B}  in R^(m+1),

with ``a = L_g h`` and ``b = L_f h + alpha(h)``. Robust filters only need a
convex set containing ``P``; this module builds polytopes from supporting
hyperplanes and ellipsoids from sample moments.
"""

from __future__ import annotations

import functools

import json
import math
from dataclasses import dataclass
from typing import Literal, Union

import numpy as np
from scipy.stats import qmc

from .systems import Cbf, ControlAffineSystem, coefficients_batch

DEFAULT_SEED = 42
DEFAULT_ELLIPSOID_MARGIN = 0.01
# inflation applied to sampled Jacobian norms when bounding the grid error
LIPSCHITZ_INFLATION = 1.1
DEFAULT_GRID_BUDGET = 20000


@dataclass(frozen=True)
class ErrorSet:
    """Origin-centred error set: a box of half-widths or a Euclidean ball."""

    kind: Literal["box", "ball"]
    half_widths: np.ndarray | None = None
    radius: float | None = None
    dim: int | None = None

    def __post_init__(self):
        if self.kind == "box":
            hw = np.atleast_1d(np.asarray(self.half_widths, dtype=float))
            if hw.ndim != 1 or not np.all(np.isfinite(hw)) or np.any(hw < 0):
                raise ValueError("box half-widths must be finite and non-negative")
            object.__setattr__(self, "half_widths", hw)
            object.__setattr__(self, "dim", hw.size)
        elif self.kind == "ball":
            if self.radius is None or not np.isfinite(self.radius) or self.radius < 0:
                raise ValueError("ball radius must be finite and non-negative")
            if self.dim is None or self.dim < 1:
                raise ValueError("ball dimension must be a positive integer")
            object.__setattr__(self, "radius", float(self.radius))
        else:
            raise ValueError(f"unknown error-set kind {self.kind!r}")

    @classmethod
    def box(cls, half_widths) -> "ErrorSet":
        return cls("box", half_widths=half_widths)

    @classmethod
    def ball(cls, radius: float, dim: int) -> "ErrorSet":
        return cls("ball", radius=radius, dim=dim)

    @property
    def bounding_half_widths(self) -> np.ndarray:
        if self.kind == "box":
            return self.half_widths
        return np.full(self.dim, self.radius)

    @property
    def max_norm(self) -> float:
        """Largest Euclidean norm of an element."""
        if self.kind == "box":
            return float(np.linalg.norm(self.half_widths))
        return self.radius

    @property
    def is_point(self) -> bool:
        return self.max_norm == 0.0

    def scaled(self, factor: float) -> "ErrorSet":
        if self.kind == "box":
            return ErrorSet.box(self.half_widths * factor)
        return ErrorSet.ball(self.radius * factor, self.dim)

    def contains(self, e, tol: float = 1e-12) -> np.ndarray:
        e = np.asarray(e, dtype=float)
        if self.kind == "box":
            return np.all(np.abs(e) <= self.half_widths + tol, axis=-1)
        return np.linalg.norm(e, axis=-1) <= self.radius + tol

    def project(self, e) -> np.ndarray:
        e = np.asarray(e, dtype=float)
        if self.kind == "box":
            return np.clip(e, -self.half_widths, self.half_widths)
        nrm = np.linalg.norm(e, axis=-1, keepdims=True)
        scale = np.where(nrm > self.radius, self.radius / np.where(nrm > 0, nrm, 1.0), 1.0)
        return e * scale

    def to_dict(self) -> dict:
        if self.kind == "box":
            return {"type": "box", "half_widths": self.half_widths.tolist()}
        return {"type": "ball", "radius": self.radius, "dim": self.dim}

    @classmethod
    def from_dict(cls, d: dict) -> "ErrorSet":
        if d["type"] == "box":
            return cls.box(d["half_widths"])
        return cls.ball(d["radius"], d["dim"])


@dataclass(frozen=True)
class SamplingSpec:
    """How to sample ``x_hat + B``.

    ``grid``: per-axis uniform grid with ``resolution`` points per axis for a
    box, or ``resolution`` Halton points plus as many boundary points for a
    ball. ``random``: ``resolution`` uniform samples drawn with ``seed``.
    ``boundary``: ``resolution`` uniform samples on the surface of the set.
    """

    mode: Literal["grid", "random", "boundary"] = "grid"
    resolution: int = 11
    seed: int = DEFAULT_SEED

    def __post_init__(self):
        if self.mode not in ("grid", "random", "boundary"):
            raise ValueError(f"unknown sampling mode {self.mode!r}")
        if self.resolution < 1:
            raise ValueError("sampling resolution must be at least 1")


@dataclass(frozen=True)
class ImageSamples:
    states: np.ndarray
    points: np.ndarray
    provenance: str = ""

    @property
    def input_dim(self) -> int:
        return self.points.shape[1] - 1

    def __len__(self) -> int:
        return self.points.shape[0]


def error_samples(B: ErrorSet, spec: SamplingSpec) -> np.ndarray:
    """Points of ``B`` according to ``spec`` (boundary points included in grid mode)."""
    n = B.dim
    if B.is_point:
        return np.zeros((1, n))
    if spec.mode == "boundary":
        rng = np.random.default_rng(spec.seed)
        if B.kind == "ball":
            d = rng.normal(size=(spec.resolution, n))
            return B.radius * d / np.linalg.norm(d, axis=1, keepdims=True)
        pts = rng.uniform(-1.0, 1.0, size=(spec.resolution, n))
        # push one coordinate per point to a face, faces weighted by their area
        w = B.half_widths
        live = w > 0
        # face areas within the span of the non-degenerate axes
        area = np.array([np.prod(w[live & (np.arange(n) != i)]) if live[i] else 0.0 for i in range(n)])
        face = rng.choice(n, size=spec.resolution, p=area / area.sum())
        pts[np.arange(spec.resolution), face] = rng.choice([-1.0, 1.0], size=spec.resolution)
        return pts * w
    if spec.mode == "random":
        rng = np.random.default_rng(spec.seed)
        if B.kind == "box":
            return rng.uniform(-1.0, 1.0, size=(spec.resolution, n)) * B.half_widths
        d = rng.normal(size=(spec.resolution, n))
        d /= np.linalg.norm(d, axis=1, keepdims=True)
        r = B.radius * rng.uniform(size=(spec.resolution, 1)) ** (1.0 / n)
        return d * r
    if B.kind == "box":
        axes = [np.linspace(-w, w, spec.resolution) if w > 0 else np.zeros(1) for w in B.half_widths]
        return np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, n)
    cube = 2.0 * qmc.Halton(d=n, scramble=False).random(spec.resolution + 1)[1:] - 1.0
    inner = _cube_to_ball(cube) * B.radius
    if n == 1:
        boundary = np.array([[-B.radius], [B.radius]])
    else:
        dirs = _sphere_points(spec.resolution, n)
        boundary = dirs * B.radius
    return np.vstack([np.zeros((1, n)), inner, boundary])


def _cube_to_ball(c: np.ndarray) -> np.ndarray:
    """Radial map from [-1,1]^n onto the unit ball (sup-norm to 2-norm)."""
    inf = np.max(np.abs(c), axis=1, keepdims=True)
    two = np.linalg.norm(c, axis=1, keepdims=True)
    return c * np.where(two > 0, inf / np.where(two > 0, two, 1.0), 0.0)


def _sphere_points(count: int, dim: int) -> np.ndarray:
    """Deterministic, roughly uniform unit vectors in R^dim."""
    if dim == 2:
        ang = 2.0 * np.pi * np.arange(count) / count
        return np.column_stack([np.cos(ang), np.sin(ang)])
    if dim == 3:
        return fibonacci_sphere(count)
    from scipy.stats import norm

    u = qmc.Halton(d=dim, scramble=False).random(count + 1)[1:]
    g = norm.ppf(np.clip(u, 1e-12, 1 - 1e-12))
    return g / np.linalg.norm(g, axis=1, keepdims=True)


def fibonacci_sphere(count: int) -> np.ndarray:
    i = np.arange(count) + 0.5
    z = 1.0 - 2.0 * i / count
    rad = np.sqrt(np.clip(1.0 - z * z, 0.0, None))
    theta = np.pi * (1.0 + 5.0**0.5) * i
    return np.column_stack([rad * np.cos(theta), rad * np.sin(theta), z])


def default_directions(m: int, count: int | None = None) -> np.ndarray:
    """Unit directions in R^(m+1): uniform on the circle for m=1, Fibonacci otherwise."""
    if m == 1:
        count = count or 16
        ang = 2.0 * np.pi * np.arange(count) / count
        return np.column_stack([np.cos(ang), np.sin(ang)])
    if m == 2:
        return fibonacci_sphere(count or 64)
    return _sphere_points(count or 32 * m, m + 1)


def sample_image(
    system: ControlAffineSystem,
    cbf: Cbf,
    x_hat,
    B: ErrorSet,
    density: SamplingSpec | int = 11,
) -> ImageSamples:
    """Coefficient pairs at sampled states of ``x_hat + B``."""
    if isinstance(density, (int, np.integer)):
        density = SamplingSpec("grid", int(density))
    x_hat = np.asarray(x_hat, dtype=float).reshape(system.state_dim)
    if B.dim != system.state_dim:
        raise ValueError("error set and system dimensions differ")
    states = x_hat + error_samples(B, density)
    a, b = coefficients_batch(system, cbf, states)
    tag = f"{density.mode}:{density.resolution}" + (f":seed={density.seed}" if density.mode == "random" else "")
    return ImageSamples(states, np.column_stack([a, b]), tag)


# ---------------------------------------------------------------------------
# support values


def _raw_coefficients(system, cbf, xi):
    dh = cbf.grad(xi)
    a = np.einsum("...i,...ij->...j", dh, system.g(xi))
    b = np.einsum("...i,...i->...", dh, system.f(xi)) + cbf.alpha(cbf.h(xi))
    return np.concatenate([a, np.asarray(b)[..., None]], axis=-1)


def lipschitz_estimate(system, cbf, states: np.ndarray, step: float = 1e-6) -> float:
    """Largest spectral norm of the coefficient Jacobian over ``states``.

    Jacobians come from central differences and the result is inflated by
    ``LIPSCHITZ_INFLATION`` to account for the space between samples.
    """
    n = system.state_dim
    cols = []
    for i in range(n):
        dx = np.zeros(n)
        dx[i] = step
        cols.append((_raw_coefficients(system, cbf, states + dx) - _raw_coefficients(system, cbf, states - dx)) / (2 * step))
    jac = np.stack(cols, axis=-1)
    return LIPSCHITZ_INFLATION * float(np.max(np.linalg.norm(jac, ord=2, axis=(-2, -1))))


@dataclass(frozen=True)
class GridImage:
    """Image of a covering grid of ``x_hat + B`` plus a certified slack.

    Every point of ``x_hat + B`` lies within ``cell_diameter / 2`` of a grid
    state, so ``max_i v.zeta_i + slack`` bounds the support value in any unit
    direction ``v`` when ``slack = L * cell_diameter``.
    """

    points: np.ndarray
    slack: float

    def support(self, v) -> float:
        return float(np.max(self.points @ v)) + self.slack


def grid_image(system, cbf, x_hat, B: ErrorSet, resolution: int | None = None) -> GridImage:
    n = system.state_dim
    x_hat = np.asarray(x_hat, dtype=float).reshape(n)
    system.check_domain(x_hat)
    if B.is_point:
        return GridImage(_raw_coefficients(system, cbf, x_hat[None, :]), 0.0)
    if resolution is None:
        resolution = max(3, int(math.floor(DEFAULT_GRID_BUDGET ** (1.0 / n))))
    hw = B.bounding_half_widths
    axes = [np.linspace(-w, w, resolution) if w > 0 else np.zeros(1) for w in hw]
    cube = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, n)
    # projection onto B is non-expansive, so projected grid points still cover B
    states = x_hat + B.project(cube)
    system.check_domain(states)
    cell = np.where(hw > 0, 2.0 * hw / (resolution - 1), 0.0)
    diam = float(np.linalg.norm(cell))
    points = _raw_coefficients(system, cbf, states)
    L = lipschitz_estimate(system, cbf, states)
    return GridImage(points, L * diam)


def support_value(
    system: ControlAffineSystem,
    cbf: Cbf,
    x_hat,
    B: ErrorSet,
    v,
    resolution: int | None = None,
    method: Literal["auto", "exact", "grid"] = "auto",
) -> float:
    """Upper bound on ``sup {v.zeta : zeta in Conv(P)}`` for a unit direction ``v``."""
    v = np.asarray(v, dtype=float)
    if v.shape != (system.input_dim + 1,):
        raise ValueError(f"direction must have length {system.input_dim + 1}")
    if abs(np.linalg.norm(v) - 1.0) > 1e-9:
        raise ValueError("direction must be a unit vector")
    if method != "grid" and cbf.exact_support is not None:
        try:
            return float(cbf.exact_support(np.asarray(x_hat, dtype=float), B, v))
        except NotImplementedError:
            if method == "exact":
                raise
    elif method == "exact":
        raise NotImplementedError("no closed-form support function for this benchmark")
    return grid_image(system, cbf, x_hat, B, resolution).support(v)


def _max_quadratic(c2: float, c1: float, c0: float, lo: float, hi: float) -> float:
    """max of c2 t^2 + c1 t + c0 over [lo, hi]."""
    cands = [lo, hi]
    if c2 < 0:
        t = -c1 / (2 * c2)
        if lo < t < hi:
            cands.append(t)
    return max(c2 * t * t + c1 * t + c0 for t in cands)


def double_integrator_support(x_hat, B: ErrorSet, v) -> float:
    """Closed-form support of the double-integrator image over a box.

    ``phi_v(x) = v1 a(x) + v2 b(x)`` is an indefinite (or linear) quadratic,
    so its maximum over a rectangle lies on one of the four edges; on each
    edge it is a one-dimensional quadratic maximized in closed form.
    """
    if B.kind != "box":
        raise NotImplementedError("closed-form support is only available for boxes")
    v1, v2 = float(v[0]), float(v[1])
    (l1, u1), (l2, u2) = [(c - w, c + w) for c, w in zip(np.asarray(x_hat, dtype=float), B.half_widths)]
    # phi = v1(-x1 - 2 x2) + v2(1 - x1^2 - 2 x2^2 - 3 x1 x2)
    best = -np.inf
    for z in (l1, u1):
        # x1 = z fixed, quadratic in x2
        best = max(best, _max_quadratic(-2 * v2, -2 * v1 - 3 * v2 * z, -v1 * z + v2 * (1 - z * z), l2, u2))
    for z in (l2, u2):
        # x2 = z fixed, quadratic in x1
        best = max(best, _max_quadratic(-v2, -v1 - 3 * v2 * z, -2 * v1 * z + v2 * (1 - 2 * z * z), l1, u1))
    return float(best)


# ---------------------------------------------------------------------------
# convex sets


@dataclass(frozen=True)
class UncertaintyPolytope:
    """``{zeta : C zeta <= d}`` in R^(m+1)."""

    C: np.ndarray
    d: np.ndarray

    def __post_init__(self):
        C = np.atleast_2d(np.asarray(self.C, dtype=float))
        d = np.atleast_1d(np.asarray(self.d, dtype=float))
        if C.shape[0] != d.size:
            raise ValueError("C and d have inconsistent sizes")
        if not (np.all(np.isfinite(C)) and np.all(np.isfinite(d))):
            raise ValueError("polytope data must be finite")
        object.__setattr__(self, "C", C)
        object.__setattr__(self, "d", d)

    @property
    def dim(self) -> int:
        return self.C.shape[1]

    @property
    def input_dim(self) -> int:
        return self.dim - 1

    def contains(self, points, tol: float = 1e-9) -> np.ndarray:
        points = np.atleast_2d(points)
        return np.all(points @ self.C.T <= self.d + tol, axis=-1)

    def support(self, v) -> float:
        """``max v.zeta`` over the polytope (LP); ``inf`` when unbounded."""
        from .solvers import ConicProblem, Cones, SolveStatus, solve

        rep = solve(ConicProblem(c=-np.asarray(v, dtype=float), G=self.C, h=self.d, cones=Cones(l=self.d.size)))
        if rep.status is SolveStatus.DUAL_INFEASIBLE:
            return np.inf
        if rep.status is SolveStatus.PRIMAL_INFEASIBLE:
            return -np.inf
        if not rep.optimal:
            raise RuntimeError(f"support LP failed: {rep.status}")
        return -rep.primal_objective

    def is_bounded(self) -> bool:
        eye = np.eye(self.dim)
        return all(np.isfinite(self.support(s * e)) for e in eye for s in (1.0, -1.0))

    def is_empty(self) -> bool:
        return self.support(np.eye(self.dim)[0]) == -np.inf

    def vertices(self) -> np.ndarray:
        """Vertices of a bounded 2-D polytope, counter-clockwise."""
        if self.dim != 2:
            raise NotImplementedError("vertex enumeration is implemented for 2-D polytopes")
        C, d = self.C, self.d
        pts = []
        for i in range(len(d)):
            for j in range(i + 1, len(d)):
                M = C[[i, j]]
                if abs(np.linalg.det(M)) < 1e-12:
                    continue
                p = np.linalg.solve(M, d[[i, j]])
                if np.all(C @ p <= d + 1e-9 * (1 + np.abs(d))):
                    pts.append(p)
        if not pts:
            return np.zeros((0, 2))
        pts = np.unique(np.round(np.array(pts), 12), axis=0)
        ctr = pts.mean(axis=0)
        order = np.argsort(np.arctan2(pts[:, 1] - ctr[1], pts[:, 0] - ctr[0]))
        return pts[order]

    def to_dict(self) -> dict:
        return {"type": "polytope", "C": self.C.tolist(), "d": self.d.tolist()}


@dataclass(frozen=True)
class UncertaintyEllipsoid:
    """``{eta : eta' P eta + q' eta + r <= 0}`` with P symmetric positive definite."""

    P: np.ndarray
    q: np.ndarray
    r: float

    def __post_init__(self):
        P = np.atleast_2d(np.asarray(self.P, dtype=float))
        q = np.atleast_1d(np.asarray(self.q, dtype=float))
        if P.shape != (q.size, q.size):
            raise ValueError("P and q have inconsistent sizes")
        if np.max(np.abs(P - P.T)) > 1e-10 * max(1.0, np.max(np.abs(P))):
            raise ValueError("P must be symmetric")
        P = 0.5 * (P + P.T)
        if np.linalg.eigvalsh(P)[0] <= 0:
            raise ValueError("P must be positive definite")
        object.__setattr__(self, "P", P)
        object.__setattr__(self, "q", q)
        object.__setattr__(self, "r", float(self.r))
        if not self.interior_measure > 0:
            raise ValueError("ellipsoid has an empty interior (q'P^-1 q / 4 - r <= 0)")

    @classmethod
    def from_center(cls, center, shape) -> "UncertaintyEllipsoid":
        """``{(eta - c)' S^-1 (eta - c) <= 1}`` for a positive definite shape S."""
        c = np.atleast_1d(np.asarray(center, dtype=float))
        P = np.linalg.inv(np.atleast_2d(shape))
        P = 0.5 * (P + P.T)
        return cls(P, -2.0 * P @ c, float(c @ P @ c) - 1.0)

    @property
    def dim(self) -> int:
        return self.q.size

    @property
    def input_dim(self) -> int:
        return self.dim - 1

    @property
    def center(self) -> np.ndarray:
        return -0.5 * np.linalg.solve(self.P, self.q)

    @property
    def interior_measure(self) -> float:
        """``q' P^-1 q / 4 - r``; positive iff the interior is nonempty."""
        return float(self.q @ np.linalg.solve(self.P, self.q)) / 4.0 - self.r

    def value(self, points) -> np.ndarray:
        points = np.atleast_2d(points)
        return np.einsum("ni,ij,nj->n", points, self.P, points) + points @ self.q + self.r

    def contains(self, points, tol: float = 1e-9) -> np.ndarray:
        # scale-free test: normalized quadratic (eta-c)'P(eta-c)/rho <= 1
        return self.value(points) / self.interior_measure <= tol

    def boundary_points(self, count: int) -> np.ndarray:
        """Points on the boundary (deterministic directions)."""
        dirs = _sphere_points(count, self.dim) if self.dim > 1 else np.array([[-1.0], [1.0]])
        L = np.linalg.cholesky(np.linalg.inv(self.P) * self.interior_measure)
        return self.center + dirs @ L.T

    def to_dict(self) -> dict:
        return {"type": "ellipsoid", "P": self.P.tolist(), "q": self.q.tolist(), "r": self.r}


UncertaintySet = Union[UncertaintyPolytope, UncertaintyEllipsoid]


def set_from_dict(d: dict) -> UncertaintySet:
    kind = d.get("type")
    if kind == "polytope":
        return UncertaintyPolytope(np.array(d["C"], dtype=float), np.array(d["d"], dtype=float))
    if kind == "ellipsoid":
        return UncertaintyEllipsoid(np.array(d["P"], dtype=float), np.array(d["q"], dtype=float), float(d["r"]))
    raise ValueError(f"unknown uncertainty set type {kind!r}")


def dumps_set(s: UncertaintySet) -> str:
    return json.dumps(s.to_dict())


def loads_set(text: str) -> UncertaintySet:
    return set_from_dict(json.loads(text))


# ---------------------------------------------------------------------------
# constructions


def _positively_spanning(V: np.ndarray) -> bool:
    """True iff every nonzero w has max_i v_i.w > 0 (cones of V cover R^k)."""
    return _positively_spanning_cached(V.shape, V.tobytes())


@functools.lru_cache(maxsize=64)
def _positively_spanning_cached(shape: tuple, raw: bytes) -> bool:
    from .solvers import ConicProblem, Cones, solve

    V = np.frombuffer(raw, dtype=float).reshape(shape)
    p, k = V.shape
    if p < k + 1 or np.linalg.matrix_rank(V) < k:
        return False
    # maximize t s.t. V' lam = 0, sum lam = 1, lam >= t
    c = np.zeros(p + 1)
    c[-1] = -1.0
    A = np.vstack([np.hstack([V.T, np.zeros((k, 1))]), np.append(np.ones(p), 0.0)])
    b = np.append(np.zeros(k), 1.0)
    G = np.hstack([-np.eye(p), np.ones((p, 1))])
    rep = solve(ConicProblem(c=c, G=G, h=np.zeros(p), cones=Cones(l=p), A=A, b=b))
    return rep.optimal and -rep.primal_objective > 1e-9


def polytopic_overapprox(
    system: ControlAffineSystem,
    cbf: Cbf,
    x_hat,
    B: ErrorSet,
    directions=None,
    resolution: int | None = None,
    method: Literal["auto", "exact", "grid"] = "auto",
) -> UncertaintyPolytope:
    """Supporting-hyperplane polytope ``{zeta : v_i.zeta <= support(v_i)}``.

    ``directions`` is an array of unit vectors, a count for the default
    direction set, or None for the default count.
    """
    m = system.input_dim
    if directions is None or isinstance(directions, (int, np.integer)):
        V = default_directions(m, directions)
    else:
        V = np.atleast_2d(np.asarray(directions, dtype=float))
    if V.shape[1] != m + 1:
        raise ValueError(f"directions must live in R^{m + 1}")
    if np.any(np.abs(np.linalg.norm(V, axis=1) - 1.0) > 1e-9):
        raise ValueError("directions must be unit vectors")
    if not _positively_spanning(V):
        raise ValueError("directions do not positively span the coefficient space; the polytope would be unbounded")
    x_hat = np.asarray(x_hat, dtype=float)
    use_exact = method != "grid" and cbf.exact_support is not None
    if use_exact:
        try:
            d = np.array([cbf.exact_support(x_hat, B, v) for v in V])
            return UncertaintyPolytope(V.copy(), d)
        except NotImplementedError:
            if method == "exact":
                raise
    elif method == "exact":
        raise NotImplementedError("no closed-form support function for this benchmark")
    img = grid_image(system, cbf, x_hat, B, resolution)
    d = np.max(img.points @ V.T, axis=0) + img.slack
    return UncertaintyPolytope(V.copy(), d)


def box_polytope(lower, upper) -> UncertaintyPolytope:
    """Axis-aligned box ``lower <= zeta <= upper`` as a polytope."""
    lower = np.atleast_1d(np.asarray(lower, dtype=float))
    upper = np.atleast_1d(np.asarray(upper, dtype=float))
    k = lower.size
    return UncertaintyPolytope(np.vstack([np.eye(k), -np.eye(k)]), np.concatenate([upper, -lower]))


def ellipsoid_fit(samples: ImageSamples | np.ndarray, margin: float = DEFAULT_ELLIPSOID_MARGIN) -> UncertaintyEllipsoid:
    """Enclosing ellipsoid from the sample mean and (regularized) covariance.

    The covariance ellipsoid is scaled to the largest Mahalanobis distance of
    any sample and then enlarged by ``1 + margin``. Since only samples are
    covered, a positive margin guards against unsampled image points.
    """
    if margin < 0:
        raise ValueError("margin must be non-negative")
    Z = samples.points if isinstance(samples, ImageSamples) else np.atleast_2d(np.asarray(samples, dtype=float))
    k = Z.shape[1]
    mu = Z.mean(axis=0)
    if Z.shape[0] > 1:
        cov = np.atleast_2d(np.cov(Z, rowvar=False))
    else:
        cov = np.zeros((k, k))
    lam = 1e-9 * np.trace(cov) / k + 1e-12
    cov = cov + lam * np.eye(k)
    Lc = np.linalg.cholesky(cov)
    w = np.linalg.solve(Lc, (Z - mu).T)
    scale = max(float(np.max(np.sum(w * w, axis=0))), 1.0)
    scale *= 1.0 + margin
    return UncertaintyEllipsoid.from_center(mu, cov * scale)


def feasibility_check(uset: UncertaintySet, tol: float = 1e-12) -> bool:
    """True when the set misses ``N = {0}^m x (-inf, 0]``.

    Disjointness guarantees (by strict separation) that some input satisfies
    ``zeta_a.u + zeta_b >= 0`` on the whole set.
    """
    if isinstance(uset, UncertaintyEllipsoid):
        pbb, qb = uset.P[-1, -1], uset.q[-1]
        t = min(0.0, -qb / (2.0 * pbb))
        return bool(pbb * t * t + qb * t + uset.r > tol * max(1.0, abs(uset.r)))
    # one-variable LP: C[:, -1] t <= d, t <= 0
    col, d = uset.C[:, -1], uset.d
    lo, hi = -np.inf, 0.0
    scale = 1.0 + np.max(np.abs(d))
    for ci, di in zip(col, d):
        if ci > 0:
            hi = min(hi, di / ci)
        elif ci < 0:
            lo = max(lo, di / ci)
        elif di < -tol * scale:
            return True
    return bool(lo > hi + tol * scale)
