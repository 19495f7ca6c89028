import numpy as np
import pytest
from hypothesis import given, strategies as st

from robustcbf.systems import (
    Cbf,
    CbfCoefficients,
    ControlAffineSystem,
    DomainError,
    LinearAlpha,
    SegwayParams,
    coefficients,
    coefficients_batch,
    get_benchmark,
    linearize,
    lqr_gain,
)


def scalar_a(x):
    return 2 * x * (x**2 - 1)


def scalar_b(x):
    return -2 * x**4 + 1.205 * x**2 + 1


def di_a(x1, x2):
    return -x1 - 2 * x2


def di_b(x1, x2):
    return 1 - x1**2 - 2 * x2**2 - 3 * x1 * x2


@pytest.fixture(scope="module")
def scalar():
    return get_benchmark("scalar")


@pytest.fixture(scope="module")
def di():
    return get_benchmark("double_integrator")


@pytest.fixture(scope="module")
def segway():
    return get_benchmark("segway")


# scalar plant


def test_scalar_upper_endpoint(scalar):
    c = coefficients(*scalar, [1.05])
    assert c.a[0] == pytest.approx(0.21525, abs=1e-12)
    assert c.b == pytest.approx(-0.1025, abs=1e-4)


def test_scalar_at_one(scalar):
    c = coefficients(*scalar, [1.0])
    assert c.a[0] == 0.0
    assert c.b == pytest.approx(0.205, abs=1e-12)


def test_scalar_b_lower_endpoint(scalar):
    assert coefficients(*scalar, [0.95]).b == pytest.approx(0.4585, abs=1e-4)


def test_u_equal_two_is_safe_on_dense_grid(scalar):
    xs = np.linspace(0.95, 1.05, 10_000)[:, None]
    a, b = coefficients_batch(*scalar, xs)
    assert np.min(a[:, 0] * 2 + b) >= 0


@given(st.floats(-2, 2))
def test_scalar_matches_closed_form(x):
    c = coefficients(*get_benchmark("scalar"), [x])
    assert c.a[0] == pytest.approx(scalar_a(x), abs=1e-10)
    assert c.b == pytest.approx(scalar_b(x), abs=1e-10)


# double integrator


def test_di_examples(di):
    assert coefficients(*di, [1.0, 0.0]).a[0] == -1.0
    c = coefficients(*di, [0.0, 0.0])
    assert c.a[0] == 0.0 and c.b == 1.0


def test_di_random_points_match_formula(di, rng):
    xs = rng.uniform(-2, 2, size=(1000, 2))
    a, b = coefficients_batch(*di, xs)
    np.testing.assert_allclose(a[:, 0], di_a(xs[:, 0], xs[:, 1]), atol=1e-12)
    np.testing.assert_allclose(b, di_b(xs[:, 0], xs[:, 1]), atol=1e-12)


# segway


def test_segway_h_values(segway):
    _, cbf = segway
    assert cbf([-4, -0.5, 0, 1]) == pytest.approx(0.25)
    assert cbf([0, 0, 0, 0]) == 1.0


def test_segway_input_matrix_finite_and_continuous(segway):
    sys_, _ = segway
    phi = np.linspace(-np.pi / 2, np.pi / 2, 2001)
    xs = np.zeros((phi.size, 4))
    xs[:, 1] = phi
    g = sys_.g(xs)[:, 2:, 0]
    assert np.all(np.isfinite(g))
    # neighbouring grid values differ by O(step): no jumps
    assert np.max(np.abs(np.diff(g, axis=0))) < 1e-2


def test_segway_coefficients_match_hand_formula(segway, rng):
    sys_, cbf = segway
    lo, hi = sys_.domain[:, 0], sys_.domain[:, 1]
    xs = rng.uniform(lo, hi, size=(1000, 4))
    a, b = coefficients_batch(sys_, cbf, xs)
    phi, w = xs[:, 1], xs[:, 3]
    dphi, dw = -(6 * phi + 2 * w), -(2 * phi + 2 * w)
    f, g = sys_.f(xs), sys_.g(xs)
    h = 1 - (3 * phi**2 + 2 * phi * w + w**2)
    np.testing.assert_allclose(a[:, 0], dphi * g[:, 1, 0] + dw * g[:, 3, 0], atol=1e-10)
    np.testing.assert_allclose(b, dphi * f[:, 1] + dw * f[:, 3] + h, atol=1e-10)


def test_segway_rejects_nonphysical_parameters():
    with pytest.raises(ValueError):
        SegwayParams(total_mass=-1.0)
    with pytest.raises(ValueError):
        SegwayParams(body_mass=60.0)
    with pytest.raises(ValueError):
        SegwayParams(damping=-0.1)


def test_segway_upright_is_equilibrium(segway):
    assert np.allclose(segway[0].f(np.zeros(4)), 0.0)


def test_lqr_gain_stabilizes_linearization(segway):
    sys_, _ = segway
    K = lqr_gain(sys_, np.diag([10.0, 1, 1, 1]), [[1.0]])
    A, B = linearize(sys_, np.zeros(4))
    assert K.shape == (1, 4)
    assert np.max(np.linalg.eigvals(A + B @ K).real) < 0


# shared properties


@pytest.mark.parametrize("name", ["scalar", "double_integrator", "segway"])
def test_gradient_matches_central_differences(name, rng):
    sys_, cbf = get_benchmark(name)
    lo, hi = sys_.domain[:, 0], sys_.domain[:, 1]
    step = 1e-6
    for x in rng.uniform(lo * 0.9, hi * 0.9, size=(50, sys_.state_dim)):
        num = np.array(
            [(cbf(x + step * e) - cbf(x - step * e)) / (2 * step) for e in np.eye(sys_.state_dim)]
        )
        grad = cbf.grad(x)
        assert np.linalg.norm(num - grad) <= 1e-6 * max(1.0, np.linalg.norm(grad))


@pytest.mark.parametrize("name", ["scalar", "double_integrator", "segway"])
def test_input_matrix_shape(name, rng):
    sys_, _ = get_benchmark(name)
    x = rng.uniform(sys_.domain[:, 0], sys_.domain[:, 1], size=(7, sys_.state_dim))
    assert sys_.g(x).shape == (7, sys_.state_dim, sys_.input_dim)
    assert sys_.g(x[0]).shape == (sys_.state_dim, sys_.input_dim)


@given(st.floats(-10, 10), st.floats(-10, 10))
def test_linear_alpha_is_class_k(s1, s2):
    alpha = LinearAlpha(2.5)
    assert alpha(0.0) == 0.0
    if s1 < s2:
        assert alpha(s1) < alpha(s2)


def test_linear_alpha_rejects_nonpositive_gain():
    with pytest.raises(ValueError):
        LinearAlpha(0.0)


def test_domain_violation_is_rejected(scalar):
    with pytest.raises(DomainError, match="outside the domain"):
        coefficients(*scalar, [2.5])


def test_unknown_benchmark():
    with pytest.raises(ValueError, match="unknown benchmark"):
        get_benchmark("pendulum")


def test_coefficients_reject_non_finite():
    with pytest.raises(ValueError):
        CbfCoefficients([np.nan], 1.0)


def test_custom_system_with_alpha_gain():
    sys_ = ControlAffineSystem(1, 1, lambda x: -x, lambda x: np.ones(x.shape + (1,)), domain=[[-1, 1]])
    cbf = Cbf(h=lambda x: 1 - x[..., 0], grad=lambda x: -np.ones_like(x), alpha=LinearAlpha(3.0))
    c = coefficients(sys_, cbf, [0.5])
    # dh.f = (-1)(-0.5) = 0.5, alpha(h) = 3 * 0.5
    assert c.a[0] == -1.0
    assert c.b == pytest.approx(2.0)


def test_bad_domain_and_bounds():
    with pytest.raises(ValueError):
        ControlAffineSystem(1, 1, lambda x: x, lambda x: x[..., None], domain=[[1, -1]])
    with pytest.raises(ValueError):
        ControlAffineSystem(1, 1, lambda x: x, lambda x: x[..., None], domain=[[-1, 1]], input_bounds=[[2, 1]])
