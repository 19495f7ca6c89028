"""Control-affine systems, barrier functions and the benchmark plants.

All evaluators are vectorized over leading axes: ``f(x)`` maps ``(..., n)``
to ``(..., n)``, ``g(x)`` maps ``(..., n)`` to ``(..., n, m)``, ``h`` maps
``(..., n)`` to ``(...)`` and ``grad_h`` maps ``(..., n)`` to ``(..., n)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import scipy.linalg as sla

DEFAULT_INPUT_BOUND = 100.0


class DomainError(ValueError):
    """A state lies outside the declared domain box of a system."""


def identity_alpha(s):
    return s


@dataclass(frozen=True)
class LinearAlpha:
    """Extended class-K function ``alpha(s) = gain * s``."""

    gain: float = 1.0

    def __post_init__(self):
        if not self.gain > 0:
            raise ValueError("alpha gain must be positive")

    def __call__(self, s):
        return self.gain * np.asarray(s)


@dataclass(frozen=True, eq=False)
class ControlAffineSystem:
    """Dynamics ``xdot = f(x) + g(x) u`` on a box-shaped domain."""

    state_dim: int
    input_dim: int
    drift: Callable[[np.ndarray], np.ndarray]
    input_matrix: Callable[[np.ndarray], np.ndarray]
    domain: np.ndarray
    input_bounds: np.ndarray = None
    name: str = ""

    def __post_init__(self):
        if self.state_dim < 1 or self.input_dim < 1:
            raise ValueError("state and input dimensions must be positive")
        dom = np.asarray(self.domain, dtype=float).reshape(self.state_dim, 2)
        if np.any(dom[:, 0] > dom[:, 1]):
            raise ValueError("domain lower bounds exceed upper bounds")
        object.__setattr__(self, "domain", dom)
        if self.input_bounds is None:
            bounds = np.tile([-DEFAULT_INPUT_BOUND, DEFAULT_INPUT_BOUND], (self.input_dim, 1))
        else:
            bounds = np.asarray(self.input_bounds, dtype=float).reshape(self.input_dim, 2)
        if np.any(bounds[:, 0] > bounds[:, 1]):
            raise ValueError("input lower bounds exceed upper bounds")
        object.__setattr__(self, "input_bounds", bounds)

    def f(self, x):
        return self.drift(np.asarray(x, dtype=float))

    def g(self, x):
        return self.input_matrix(np.asarray(x, dtype=float))

    def dynamics(self, x, u):
        x = np.asarray(x, dtype=float)
        return self.f(x) + np.einsum("...ij,...j->...i", self.g(x), np.asarray(u, dtype=float))

    def in_domain(self, x, tol: float = 0.0) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        lo, hi = self.domain[:, 0], self.domain[:, 1]
        return np.all((x >= lo - tol) & (x <= hi + tol), axis=-1)

    def check_domain(self, x) -> None:
        x = np.asarray(x, dtype=float)
        if x.shape[-1] != self.state_dim:
            raise DomainError(f"expected states of dimension {self.state_dim}, got shape {x.shape}")
        inside = self.in_domain(x, tol=1e-12)
        if not np.all(inside):
            bad = x.reshape(-1, self.state_dim)[~np.atleast_1d(inside).reshape(-1)][0]
            raise DomainError(f"state {bad} outside the domain {self.domain.tolist()} of {self.name or 'system'}")


@dataclass(frozen=True, eq=False)
class Cbf:
    """Barrier function h with its gradient and extended class-K function.

    ``exact_support`` optionally holds a closed-form support function of the
    coefficient image over an error set, ``(x_hat, error_set, v) -> float``.
    """

    h: Callable[[np.ndarray], np.ndarray]
    grad: Callable[[np.ndarray], np.ndarray]
    alpha: Callable = identity_alpha
    exact_support: Callable | None = field(default=None, repr=False)

    def __call__(self, x):
        return self.h(np.asarray(x, dtype=float))


@dataclass(frozen=True)
class CbfCoefficients:
    """``a = L_g h(xi)`` and ``b = L_f h(xi) + alpha(h(xi))``."""

    a: np.ndarray
    b: float

    def __post_init__(self):
        a = np.atleast_1d(np.asarray(self.a, dtype=float))
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "b", float(self.b))
        if not (np.all(np.isfinite(a)) and np.isfinite(self.b)):
            raise ValueError("CBF coefficients must be finite")

    def as_vector(self) -> np.ndarray:
        return np.append(self.a, self.b)

    def constraint(self, u) -> float:
        """Value of ``a.u + b`` (non-negative when the CBF condition holds)."""
        return float(self.a @ np.atleast_1d(u) + self.b)


def coefficients_batch(system: ControlAffineSystem, cbf: Cbf, xi) -> tuple[np.ndarray, np.ndarray]:
    """Coefficient arrays ``a (N, m)`` and ``b (N,)`` for states ``xi (N, n)``."""
    xi = np.atleast_2d(np.asarray(xi, dtype=float))
    system.check_domain(xi)
    dh = cbf.grad(xi)
    a = np.einsum("ni,nij->nj", dh, system.g(xi))
    b = np.einsum("ni,ni->n", dh, system.f(xi)) + cbf.alpha(cbf.h(xi))
    return a, np.asarray(b, dtype=float)


def coefficients(system: ControlAffineSystem, cbf: Cbf, xi) -> CbfCoefficients:
    xi = np.asarray(xi, dtype=float).reshape(system.state_dim)
    a, b = coefficients_batch(system, cbf, xi[None, :])
    return CbfCoefficients(a[0], b[0])


# ---------------------------------------------------------------------------
# benchmarks


def scalar_benchmark() -> tuple[ControlAffineSystem, Cbf]:
    """``xdot = x(x-1.05)(x+1.05) + (1-x^2) u`` with ``h = 1 - x^2``.

    The drift is the one consistent with ``b(x) = -2x^4 + 1.205x^2 + 1``;
    a commonly printed variant ``x(x-1.05)(1+1.05)`` does not reproduce it.
    """

    def f(x):
        s = x[..., 0]
        return (s * (s - 1.05) * (s + 1.05))[..., None]

    def g(x):
        s = x[..., 0]
        return (1.0 - s**2)[..., None, None]

    system = ControlAffineSystem(1, 1, f, g, domain=[[-2.0, 2.0]], name="scalar")
    cbf = Cbf(h=lambda x: 1.0 - x[..., 0] ** 2, grad=lambda x: -2.0 * x)
    return system, cbf


def double_integrator_benchmark() -> tuple[ControlAffineSystem, Cbf]:
    """Double integrator with ``h = 1 - x1^2 - x2^2 - x1 x2``."""

    def f(x):
        out = np.zeros_like(x)
        out[..., 0] = x[..., 1]
        return out

    def g(x):
        out = np.zeros(x.shape + (1,))
        out[..., 1, 0] = 1.0
        return out

    def h(x):
        x1, x2 = x[..., 0], x[..., 1]
        return 1.0 - x1**2 - x2**2 - x1 * x2

    def grad(x):
        x1, x2 = x[..., 0], x[..., 1]
        return np.stack([-2.0 * x1 - x2, -2.0 * x2 - x1], axis=-1)

    system = ControlAffineSystem(2, 1, f, g, domain=[[-2.0, 2.0], [-2.0, 2.0]], name="double_integrator")
    from .uncertainty import double_integrator_support

    return system, Cbf(h=h, grad=grad, exact_support=double_integrator_support)


@dataclass(frozen=True)
class SegwayParams:
    """Planar Segway: wheel plus inverted-pendulum body driven by a DC motor.

    Masses in kg, lengths in m, inertia in kg m^2. ``motor_gain`` converts
    volts to wheel torque and ``damping`` is the back-EMF/viscous coefficient
    acting on the wheel-body relative speed.
    """

    total_mass: float = 52.71
    body_mass: float = 44.798
    body_inertia: float = 5.108
    com_height: float = 0.169
    wheel_radius: float = 0.195
    motor_gain: float = 2.0
    damping: float = 0.05
    gravity: float = 9.81

    def __post_init__(self):
        for name in ("total_mass", "body_mass", "body_inertia", "com_height", "wheel_radius", "motor_gain", "gravity"):
            if not getattr(self, name) > 0:
                raise ValueError(f"Segway parameter {name} must be positive")
        if self.damping < 0:
            raise ValueError("Segway damping must be non-negative")
        if self.body_mass > self.total_mass:
            raise ValueError("body mass cannot exceed the total mass")
        # mass matrix must be positive definite for every pitch angle
        if self.total_mass * self.body_inertia <= (self.body_mass * self.com_height) ** 2:
            raise ValueError("Segway parameters give a singular mass matrix")


def segway_benchmark(params: SegwayParams | None = None) -> tuple[ControlAffineSystem, Cbf]:
    """Segway with state ``(p, phi, v, omega)`` and ``h = 1 - (3phi^2 + 2phi omega + omega^2)``.

    Equations of motion (``T = K u - b (v/R - omega)`` is the motor torque):

        m0 vdot + m L cos(phi) omegadot - m L sin(phi) omega^2 = T / R
        m L cos(phi) vdot + J0 omegadot - m g L sin(phi) = -T
    """
    prm = params or SegwayParams()
    m0, m, J0, L, R = prm.total_mass, prm.body_mass, prm.body_inertia, prm.com_height, prm.wheel_radius
    K, bt, grav = prm.motor_gain, prm.damping, prm.gravity

    def _inv_mass(phi):
        c = m * L * np.cos(phi)
        det = m0 * J0 - c * c
        return J0 / det, -c / det, m0 / det

    def f(x):
        phi, v, w = x[..., 1], x[..., 2], x[..., 3]
        i11, i12, i22 = _inv_mass(phi)
        slip = v / R - w
        r1 = m * L * np.sin(phi) * w**2 - bt * slip / R
        r2 = m * grav * L * np.sin(phi) + bt * slip
        out = np.zeros_like(x)
        out[..., 0] = v
        out[..., 1] = w
        out[..., 2] = i11 * r1 + i12 * r2
        out[..., 3] = i12 * r1 + i22 * r2
        return out

    def g(x):
        i11, i12, i22 = _inv_mass(x[..., 1])
        out = np.zeros(x.shape + (1,))
        out[..., 2, 0] = i11 * K / R - i12 * K
        out[..., 3, 0] = i12 * K / R - i22 * K
        return out

    def h(x):
        phi, w = x[..., 1], x[..., 3]
        return 1.0 - (3.0 * phi**2 + 2.0 * phi * w + w**2)

    def grad(x):
        phi, w = x[..., 1], x[..., 3]
        out = np.zeros_like(x)
        out[..., 1] = -(6.0 * phi + 2.0 * w)
        out[..., 3] = -(2.0 * phi + 2.0 * w)
        return out

    domain = [[-10.0, 10.0], [-np.pi / 2, np.pi / 2], [-5.0, 5.0], [-5.0, 5.0]]
    return ControlAffineSystem(4, 1, f, g, domain=domain, name="segway"), Cbf(h=h, grad=grad)


def linearize(system: ControlAffineSystem, x0, u0=None, step: float = 1e-6):
    """Central-difference Jacobians ``(A, B)`` of the dynamics at ``(x0, u0)``."""
    x0 = np.asarray(x0, dtype=float)
    u0 = np.zeros(system.input_dim) if u0 is None else np.asarray(u0, dtype=float)
    n = system.state_dim
    A = np.empty((n, n))
    for i in range(n):
        dx = np.zeros(n)
        dx[i] = step
        A[:, i] = (system.dynamics(x0 + dx, u0) - system.dynamics(x0 - dx, u0)) / (2 * step)
    B = system.g(x0)
    return A, B


def lqr_gain(system: ControlAffineSystem, Q, R, x0=None) -> np.ndarray:
    """Gain ``K`` (m x n) of the LQR law ``u = K x`` around an equilibrium."""
    x0 = np.zeros(system.state_dim) if x0 is None else x0
    A, B = linearize(system, x0)
    Q = np.asarray(Q, dtype=float)
    R = np.atleast_2d(np.asarray(R, dtype=float))
    S = sla.solve_continuous_are(A, B, Q, R)
    return -np.linalg.solve(R, B.T @ S)


BENCHMARKS = {
    "scalar": scalar_benchmark,
    "double_integrator": double_integrator_benchmark,
    "segway": segway_benchmark,
}


def get_benchmark(name: str, **kwargs) -> tuple[ControlAffineSystem, Cbf]:
    try:
        factory = BENCHMARKS[name]
    except KeyError:
        raise ValueError(f"unknown benchmark {name!r}; choose from {sorted(BENCHMARKS)}") from None
    if name == "segway":
        return factory(SegwayParams(**kwargs) if kwargs else None)
    return factory()
