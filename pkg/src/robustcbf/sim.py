"""Closed-loop simulation with corrupted state estimates.

Each control period the simulator draws an estimate ``x_hat`` with
``x - x_hat`` in the error set, evaluates the configured filter at ``x_hat``,
holds the input over the period and integrates the true dynamics with RK4.
"""

from __future__ import annotations

import csv
import enum
import io
import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .filters import (
    FilterResult,
    FilterStatus,
    RCbfParams,
    cbf_qp,
    mr_cbf_socp,
    mr_lipschitz_constants,
    r_cbf_margin,
    robust_dual_qp,
    robust_dual_sdp,
)
from .systems import Cbf, ControlAffineSystem, DomainError, coefficients, get_benchmark, lqr_gain
from .uncertainty import (
    DEFAULT_ELLIPSOID_MARGIN,
    DEFAULT_SEED,
    ErrorSet,
    SamplingSpec,
    ellipsoid_fit,
    error_samples,
    polytopic_overapprox,
    sample_image,
)

log = logging.getLogger(__name__)

DEFAULT_DT = 1e-3


def rk4_step(system: ControlAffineSystem, x, u, dt: float) -> np.ndarray:
    """One classical Runge-Kutta step of ``xdot = f(x) + g(x) u`` with ``u`` held."""
    if not dt > 0:
        raise ValueError("step size must be positive")
    x = np.asarray(x, dtype=float)
    u = np.atleast_1d(np.asarray(u, dtype=float))
    k1 = system.dynamics(x, u)
    k2 = system.dynamics(x + 0.5 * dt * k1, u)
    k3 = system.dynamics(x + 0.5 * dt * k2, u)
    k4 = system.dynamics(x + dt * k3, u)
    return x + dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


# ---------------------------------------------------------------------------
# estimate corruption


class CorruptionKind(str, enum.Enum):
    NONE = "none"
    RANDOM = "random"
    ADVERSARIAL = "adversarial"
    FIXED = "fixed"


@dataclass(frozen=True)
class CorruptionModel:
    """How the estimate is produced from the true state.

    ``adversarial`` picks the candidate ``x - e`` (``e`` on a grid of ``B``)
    with the largest ``h``, so the controller believes it is safer than it is.
    The grid has ``resolution`` points per axis for a box and
    ``resolution**2`` interior plus as many boundary points for a ball.
    """

    kind: CorruptionKind = CorruptionKind.NONE
    seed: int = DEFAULT_SEED
    offset: tuple | None = None
    resolution: int = 21

    def __post_init__(self):
        object.__setattr__(self, "kind", CorruptionKind(self.kind))
        if self.kind is CorruptionKind.FIXED and self.offset is None:
            raise ValueError("fixed corruption needs an offset")
        if self.resolution < 2:
            raise ValueError("adversarial grid needs at least two points per axis")

    @classmethod
    def none(cls) -> "CorruptionModel":
        return cls(CorruptionKind.NONE)

    @classmethod
    def random_in_b(cls, seed: int = DEFAULT_SEED) -> "CorruptionModel":
        return cls(CorruptionKind.RANDOM, seed=seed)

    @classmethod
    def adversarial(cls, resolution: int = 21) -> "CorruptionModel":
        return cls(CorruptionKind.ADVERSARIAL, resolution=resolution)

    @classmethod
    def fixed_offset(cls, offset) -> "CorruptionModel":
        return cls(CorruptionKind.FIXED, offset=tuple(float(v) for v in np.ravel(offset)))

    def estimator(self, cbf: Cbf, B: ErrorSet) -> Callable[[np.ndarray], np.ndarray]:
        """A stateful map from true state to estimate for one run."""
        if self.kind is CorruptionKind.NONE or B.is_point:
            return lambda x: np.array(x, dtype=float)
        if self.kind is CorruptionKind.FIXED:
            e0 = np.asarray(self.offset, dtype=float)
            if e0.size != B.dim or not B.contains(e0[None, :])[0]:
                raise ValueError("fixed offset must lie in the error set")
            return lambda x: np.asarray(x, dtype=float) - e0
        if self.kind is CorruptionKind.RANDOM:
            rng = np.random.default_rng(self.seed)

            def draw(x):
                e = error_samples(B, SamplingSpec("random", 1, int(rng.integers(2**31))))[0]
                return np.asarray(x, dtype=float) - e

            return draw
        # the whole grid, interior included: h is not monotone along rays of B in general
        count = self.resolution if B.kind == "box" else self.resolution ** 2
        errs = error_samples(B, SamplingSpec("grid", count))
        errs = errs[B.contains(errs)]

        def worst(x):
            cand = np.asarray(x, dtype=float) - errs
            return cand[int(np.argmax(cbf.h(cand)))]

        return worst


# ---------------------------------------------------------------------------
# filters and desired inputs


FILTER_KINDS = ("standard", "r_cbf", "mr_cbf", "duality", "decoupled")


@dataclass(frozen=True)
class FilterSpec:
    """Filter selection plus the knobs of its over-approximation.

    For ``duality`` the set is a supporting-hyperplane polytope with
    ``directions`` facets (default for the input dimension) or an ellipsoid
    fitted to ``samples`` image points with the given ``margin``. The points
    are drawn on the surface of ``B`` by default (``sample_mode``); uniform
    interior samples leave the extremes of the image poorly covered.

    ``decoupled`` bounds every coefficient by its own interval and robustifies
    against the resulting box, ignoring how ``a`` and ``b`` move together.
    """

    kind: str = "duality"
    label: str = ""
    r_cbf: RCbfParams = field(default_factory=RCbfParams)
    overapprox: str = "polytope"
    directions: int | None = None
    samples: int = 1000
    margin: float = DEFAULT_ELLIPSOID_MARGIN
    sample_mode: str = "boundary"
    support_method: str = "auto"
    lipschitz_resolution: int = 11
    seed: int = DEFAULT_SEED

    def __post_init__(self):
        if self.kind not in FILTER_KINDS:
            raise ValueError(f"unknown filter {self.kind!r}; choose from {FILTER_KINDS}")
        if self.overapprox not in ("polytope", "ellipsoid"):
            raise ValueError("over-approximation must be 'polytope' or 'ellipsoid'")
        if self.sample_mode not in ("random", "boundary"):
            raise ValueError("ellipsoid samples must be 'random' or 'boundary'")
        if self.samples < 1:
            raise ValueError("ellipsoid fit needs at least one sample")
        if not self.label:
            object.__setattr__(self, "label", self.kind)

    def evaluate(self, system: ControlAffineSystem, cbf: Cbf, x_hat, B: ErrorSet, k_d, bounds) -> FilterResult:
        if self.kind in ("standard", "r_cbf", "mr_cbf"):
            coeffs = coefficients(system, cbf, x_hat)
            if self.kind == "standard":
                return cbf_qp(coeffs, k_d, bounds)
            if self.kind == "r_cbf":
                return cbf_qp(coeffs, k_d, bounds, rhs=r_cbf_margin(coeffs, self.r_cbf))
            params = mr_lipschitz_constants(system, cbf, x_hat, B, resolution=self.lipschitz_resolution)
            return mr_cbf_socp(coeffs, k_d, params, bounds)
        if self.kind == "decoupled":
            k = system.input_dim + 1
            axes = np.vstack([np.eye(k), -np.eye(k)])
            return robust_dual_qp(k_d, polytopic_overapprox(system, cbf, x_hat, B, directions=axes, method=self.support_method), bounds)
        if self.overapprox == "polytope":
            poly = polytopic_overapprox(system, cbf, x_hat, B, directions=self.directions, method=self.support_method)
            return robust_dual_qp(k_d, poly, bounds)
        samples = sample_image(system, cbf, x_hat, B, SamplingSpec(self.sample_mode, self.samples, self.seed))
        return robust_dual_sdp(k_d, ellipsoid_fit(samples, self.margin), bounds)


def desired_policy(spec: dict, system: ControlAffineSystem) -> Callable[[float, np.ndarray], np.ndarray]:
    """Nominal controller ``k_d(t, x_hat)`` from a small dictionary.

    ``{"type": "zero"}``, ``{"type": "constant", "value": [...]}``,
    ``{"type": "linear", "gain": [[...]]}`` (``u = K x_hat``) or
    ``{"type": "lqr", "Q": [...], "R": [...]}`` with diagonal weights.
    """
    kind = spec.get("type", "zero")
    m, n = system.input_dim, system.state_dim
    if kind == "zero":
        return lambda t, x: np.zeros(m)
    if kind == "constant":
        value = np.asarray(spec["value"], dtype=float).reshape(m)
        return lambda t, x: value.copy()
    if kind == "linear":
        K = np.asarray(spec["gain"], dtype=float).reshape(m, n)
    elif kind == "lqr":
        K = lqr_gain(system, np.diag(np.asarray(spec["Q"], dtype=float)), np.diag(np.asarray(spec["R"], dtype=float)))
    else:
        raise ValueError(f"unknown desired-input type {kind!r}")
    return lambda t, x: K @ x


# ---------------------------------------------------------------------------
# trajectories


@dataclass
class Trajectory:
    """Sampled closed-loop run. The last row holds the terminal state and no input."""

    t: np.ndarray
    x: np.ndarray
    x_hat: np.ndarray
    u: np.ndarray
    h: np.ndarray
    status: list
    solve_ms: np.ndarray
    flagged: bool = False
    domain_exit: bool = False
    label: str = ""

    def __post_init__(self):
        k = self.t.size
        if not (self.x.shape[0] == self.x_hat.shape[0] == self.u.shape[0] == self.h.size == len(self.status) == self.solve_ms.size == k):
            raise ValueError("trajectory arrays have inconsistent lengths")

    @property
    def min_h(self) -> float:
        return float(np.min(self.h))

    @property
    def infeasible_steps(self) -> int:
        return sum(s in (FilterStatus.INFEASIBLE.value, FilterStatus.SOLVER_FAILURE.value) for s in self.status)

    @property
    def any_infeasible(self) -> bool:
        return any(s == FilterStatus.INFEASIBLE.value for s in self.status)

    def solve_stats(self) -> dict:
        """Mean and max solve time over the control steps (terminal row excluded)."""
        ms = self.solve_ms[:-1]
        if ms.size == 0:
            return {"steps": 0, "mean_ms": 0.0, "max_ms": 0.0}
        return {"steps": int(ms.size), "mean_ms": float(np.mean(ms)), "max_ms": float(np.max(ms))}

    def header(self) -> list[str]:
        n, m = self.x.shape[1], self.u.shape[1]
        return (
            ["t"]
            + [f"x{i + 1}" for i in range(n)]
            + [f"xhat{i + 1}" for i in range(n)]
            + [f"u{i + 1}" for i in range(m)]
            + ["h", "status", "solve_ms"]
        )

    def to_csv(self, target=None) -> str:
        """CSV text (``repr`` floats, so values round-trip exactly); also written to ``target`` if given."""
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(self.header())
        for k in range(self.t.size):
            nums = [self.t[k], *self.x[k], *self.x_hat[k], *self.u[k], self.h[k]]
            w.writerow([repr(float(v)) for v in nums] + [self.status[k], repr(float(self.solve_ms[k]))])
        text = buf.getvalue()
        if target is not None:
            with open(target, "w", newline="", encoding="ascii") as fh:
                fh.write(text)
        return text

    @classmethod
    def from_csv(cls, text: str, state_dim: int, input_dim: int) -> "Trajectory":
        rows = list(csv.reader(io.StringIO(text)))[1:]
        n, m = state_dim, input_dim
        num = np.array([[float(v) for v in r[: 1 + 2 * n + m + 1]] for r in rows])
        return cls(
            t=num[:, 0],
            x=num[:, 1 : 1 + n],
            x_hat=num[:, 1 + n : 1 + 2 * n],
            u=num[:, 1 + 2 * n : 1 + 2 * n + m],
            h=num[:, -1],
            status=[r[-2] for r in rows],
            solve_ms=np.array([float(r[-1]) for r in rows]),
        )


def simulate(
    system: ControlAffineSystem,
    cbf: Cbf,
    filter_spec: FilterSpec,
    corruption: CorruptionModel,
    B: ErrorSet,
    x0,
    k_d: Callable[[float, np.ndarray], np.ndarray],
    dt: float = DEFAULT_DT,
    horizon: float = 5.0,
    substeps: int = 1,
    bounds=None,
    timing: bool = True,
) -> Trajectory:
    """Run the closed loop for ``horizon`` seconds with control period ``dt``.

    On an infeasible or failed filter step the previous input is held (on the
    first step, ``k_d`` clipped to the input bounds) and the step is flagged.
    Leaving the state domain ends the run early with ``domain_exit`` set.
    With ``timing=False`` solve times are recorded as zero so that output is
    reproducible byte for byte.
    """
    if not horizon > 0 or not dt > 0:
        raise ValueError("horizon and dt must be positive")
    if B.dim != system.state_dim:
        raise ValueError("error set and system dimensions differ")
    x = np.asarray(x0, dtype=float).reshape(system.state_dim)
    system.check_domain(x)
    bounds = system.input_bounds if bounds is None else np.asarray(bounds, dtype=float).reshape(system.input_dim, 2)
    estimate = corruption.estimator(cbf, B)
    steps = int(round(horizon / dt))
    n, m = system.state_dim, system.input_dim

    ts, xs, xhs, us, hs, st, ms = [], [], [], [], [], [], []
    u_prev = None
    flagged = domain_exit = False
    for k in range(steps):
        t = k * dt
        x_hat = estimate(x)
        try:
            system.check_domain(x_hat)
        except DomainError:
            domain_exit = True
            break
        kd = np.asarray(k_d(t, x_hat), dtype=float).reshape(m)
        tic = time.perf_counter()
        try:
            res = filter_spec.evaluate(system, cbf, x_hat, B, kd, bounds)
        except DomainError:
            # the uncertainty set around the estimate reaches outside the model's domain
            domain_exit = True
            break
        elapsed = (time.perf_counter() - tic) * 1e3 if timing else 0.0
        if res.feasible:
            u = res.u
        else:
            flagged = True
            u = np.clip(kd, bounds[:, 0], bounds[:, 1]) if u_prev is None else u_prev
            log.debug("t=%.4f %s: %s, holding input", t, filter_spec.label, res.status.value)
        ts.append(t)
        xs.append(x)
        xhs.append(x_hat)
        us.append(u)
        hs.append(float(cbf.h(x)))
        st.append(res.status.value)
        ms.append(elapsed)
        u_prev = u
        h_sub = dt / substeps
        for _ in range(substeps):
            x = rk4_step(system, x, u, h_sub)
        if not np.all(system.in_domain(x)):
            domain_exit = True
            break

    # terminal row: the state reached after the last held input
    ts.append(len(ts) * dt)
    xs.append(x)
    xhs.append(np.full(n, np.nan))
    us.append(np.full(m, np.nan))
    hs.append(float(cbf.h(x)))
    st.append("Terminal" if not domain_exit else "DomainExit")
    ms.append(0.0)
    return Trajectory(
        t=np.array(ts),
        x=np.array(xs),
        x_hat=np.array(xhs),
        u=np.array(us),
        h=np.array(hs),
        status=st,
        solve_ms=np.array(ms),
        flagged=flagged,
        domain_exit=domain_exit,
        label=filter_spec.label,
    )


# ---------------------------------------------------------------------------
# experiment setups and sweeps


@dataclass(frozen=True)
class Setup:
    """Everything but the filter and the uncertainty magnitude.

    ``error_kind`` turns a magnitude ``delta`` into ``B``: a box with half
    width ``delta`` on every state coordinate, or a ball of radius ``delta``.
    """

    benchmark: str
    x0: tuple
    dt: float = DEFAULT_DT
    horizon: float = 5.0
    substeps: int = 1
    desired: dict = field(default_factory=lambda: {"type": "zero"})
    corruption: CorruptionModel = field(default_factory=CorruptionModel.adversarial)
    error_kind: str = "box"
    input_bounds: tuple | None = None
    benchmark_params: dict = field(default_factory=dict)
    timing: bool = True

    def __post_init__(self):
        if self.error_kind not in ("box", "ball"):
            raise ValueError("error_kind must be 'box' or 'ball'")

    def error_set(self, delta: float, dim: int) -> ErrorSet:
        if delta < 0:
            raise ValueError("uncertainty magnitude must be non-negative")
        if self.error_kind == "box":
            return ErrorSet.box([delta] * dim)
        return ErrorSet.ball(delta, dim)

    def run(self, filter_spec: FilterSpec, delta: float) -> Trajectory:
        system, cbf = get_benchmark(self.benchmark, **self.benchmark_params)
        policy = desired_policy(self.desired, system)
        return simulate(
            system,
            cbf,
            filter_spec,
            self.corruption,
            self.error_set(delta, system.state_dim),
            self.x0,
            policy,
            dt=self.dt,
            horizon=self.horizon,
            substeps=self.substeps,
            bounds=self.input_bounds,
            timing=self.timing,
        )


@dataclass
class SweepTable:
    deltas: list
    min_h: dict  # label -> list of floats
    infeasible: dict  # label -> list of bool
    trajectories: dict = field(default_factory=dict, repr=False)  # (label, delta) -> Trajectory

    def first_infeasible(self, label: str) -> float | None:
        for d, bad in zip(self.deltas, self.infeasible[label]):
            if bad:
                return d
        return None

    def to_csv(self) -> str:
        labels = list(self.min_h)
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["delta"] + [f"min_h_{l}" for l in labels] + [f"infeasible_{l}" for l in labels])
        for i, d in enumerate(self.deltas):
            w.writerow(
                [repr(float(d))]
                + [repr(float(self.min_h[l][i])) for l in labels]
                + [str(int(self.infeasible[l][i])) for l in labels]
            )
        return buf.getvalue()


def min_h_sweep(
    setup: Setup,
    deltas: Sequence[float],
    filters: Sequence[FilterSpec],
    threads: int = 1,
    keep: bool = False,
) -> SweepTable:
    """``min_t h`` for every (filter, magnitude) cell.

    A cell is marked infeasible when its filter reported Infeasible at any
    step. Cells are independent, so ``threads > 1`` evaluates them on a pool
    without changing the results.
    """
    deltas = [float(d) for d in deltas]
    if any(d < 0 for d in deltas) or deltas != sorted(deltas):
        raise ValueError("magnitudes must be non-negative and ascending")
    labels = [f.label for f in filters]
    if len(set(labels)) != len(labels):
        raise ValueError("filter labels must be unique")
    cells = [(f, d) for f in filters for d in deltas]
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            trajs = list(pool.map(lambda c: setup.run(*c), cells))
    else:
        trajs = [setup.run(f, d) for f, d in cells]
    table = SweepTable(deltas, {l: [] for l in labels}, {l: [] for l in labels})
    for (f, d), tr in zip(cells, trajs):
        table.min_h[f.label].append(tr.min_h)
        table.infeasible[f.label].append(tr.any_infeasible)
        if keep:
            table.trajectories[(f.label, d)] = tr
    return table
