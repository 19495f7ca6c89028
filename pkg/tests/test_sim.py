import numpy as np
import pytest
from hypothesis import given, strategies as st

from robustcbf.filters import FilterStatus
from robustcbf.sim import (
    CorruptionModel,
    FilterSpec,
    Setup,
    Trajectory,
    desired_policy,
    min_h_sweep,
    rk4_step,
    simulate,
)
from robustcbf.systems import ControlAffineSystem, get_benchmark
from robustcbf.uncertainty import ErrorSet

DI = get_benchmark("double_integrator")
SCALAR = get_benchmark("scalar")
GROWTH = ControlAffineSystem(1, 1, lambda x: x.copy(), lambda x: np.zeros(x.shape + (1,)), domain=[[-10, 10]])


def zero_policy(t, x):
    return np.zeros(1)


# integration


def test_rk4_exact_on_double_integrator():
    np.testing.assert_array_equal(rk4_step(DI[0], [0.0, 1.0], [0.0], 0.1), [0.1, 1.0])


def test_rk4_exponential():
    assert rk4_step(GROWTH, [1.0], [0.0], 0.1)[0] == pytest.approx(np.exp(0.1), abs=1e-6)
    # fourth order: the local error is about dt^5 / 120
    assert abs(rk4_step(GROWTH, [1.0], [0.0], 0.1)[0] - np.exp(0.1)) < 1e-7


def test_rk4_consistency_order():
    sys_ = get_benchmark("segway")[0]
    x = np.array([0.1, 0.2, -0.3, 0.4])
    u = np.array([1.5])
    errs = []
    for dt in (1e-2, 5e-3):
        step = rk4_step(sys_, x, u, dt)
        errs.append(np.linalg.norm(step - x - dt * sys_.dynamics(x, u)))
    # O(dt^2): halving dt divides the error by about 4
    assert errs[0] / errs[1] == pytest.approx(4.0, rel=0.1)


# corruption


@pytest.mark.parametrize("B", [ErrorSet.box([0.1, 0.05]), ErrorSet.ball(0.08, 2)])
@pytest.mark.parametrize(
    "model",
    [CorruptionModel.none(), CorruptionModel.random_in_b(3), CorruptionModel.adversarial(), CorruptionModel.fixed_offset([0.02, -0.01])],
)
def test_estimates_stay_within_error_set(B, model, rng):
    est = model.estimator(DI[1], B)
    for x in rng.uniform(-1, 1, size=(30, 2)):
        assert B.contains(x - est(x), tol=1e-12)


def test_adversarial_estimate_is_optimistic(rng):
    B = ErrorSet.box([0.1, 0.1])
    est = CorruptionModel.adversarial(41).estimator(DI[1], B)
    for x in rng.uniform(-1, 1, size=(30, 2)):
        assert DI[1](est(x)) >= DI[1](x)


def test_adversarial_estimate_beats_random_draws(rng):
    B = ErrorSet.ball(0.1, 2)
    est = CorruptionModel.adversarial(41).estimator(DI[1], B)
    x = np.array([0.4, 0.6])
    e = rng.normal(size=(2000, 2))
    e = 0.1 * e / np.linalg.norm(e, axis=1, keepdims=True) * rng.uniform(size=(2000, 1)) ** 0.5
    assert DI[1](est(x)) >= np.max(DI[1](x - e)) - 1e-3


def test_fixed_offset_must_lie_in_set():
    est = CorruptionModel.fixed_offset([0.5, 0.0])
    with pytest.raises(ValueError):
        est.estimator(DI[1], ErrorSet.box([0.1, 0.1]))
    with pytest.raises(ValueError):
        CorruptionModel("fixed")


def test_random_corruption_is_seeded():
    B = ErrorSet.box([0.1, 0.1])
    a = CorruptionModel.random_in_b(7).estimator(DI[1], B)
    b = CorruptionModel.random_in_b(7).estimator(DI[1], B)
    x = np.array([0.1, 0.2])
    for _ in range(5):
        np.testing.assert_array_equal(a(x), b(x))


# desired inputs


def test_desired_policies():
    sys_ = DI[0]
    x = np.array([1.0, 2.0])
    assert desired_policy({"type": "zero"}, sys_)(0.0, x)[0] == 0.0
    assert desired_policy({"type": "constant", "value": [3.0]}, sys_)(0.0, x)[0] == 3.0
    assert desired_policy({"type": "linear", "gain": [[1.0, -1.0]]}, sys_)(0.0, x)[0] == -1.0
    k = desired_policy({"type": "lqr", "Q": [1.0, 1.0], "R": [1.0]}, sys_)(0.0, x)
    # LQR for the double integrator with unit weights: K = -[1, sqrt(3)]
    assert k[0] == pytest.approx(-(1.0 + np.sqrt(3.0) * 2.0), abs=1e-5)
    with pytest.raises(ValueError):
        desired_policy({"type": "mpc"}, sys_)


# closed loop


def short_run(spec, delta=0.05, horizon=1.0, corruption=None, dt=0.01):
    return simulate(
        *DI,
        spec,
        corruption or CorruptionModel.adversarial(),
        ErrorSet.box([delta, delta]),
        [0.4, 0.6],
        zero_policy,
        dt=dt,
        horizon=horizon,
        timing=False,
    )


def test_trajectory_invariants():
    tr = short_run(FilterSpec("duality"))
    k = tr.t.size
    assert tr.x.shape == (k, 2) and tr.u.shape == (k, 1) and len(tr.status) == k
    np.testing.assert_allclose(tr.h, DI[1](tr.x), atol=0)
    assert np.all(ErrorSet.box([0.05, 0.05]).contains(tr.x[:-1] - tr.x_hat[:-1]))
    assert tr.status[-1] == "Terminal"
    assert np.all(np.isnan(tr.u[-1]))


def test_duality_filter_stays_safe():
    tr = short_run(FilterSpec("duality"), horizon=2.0)
    assert tr.min_h >= -1e-6
    assert not tr.flagged


def test_standard_filter_unsafe_under_corruption():
    assert short_run(FilterSpec("standard"), horizon=3.0).min_h < 0


def test_standard_filter_safe_without_uncertainty():
    tr = short_run(FilterSpec("standard"), delta=0.0, horizon=3.0, dt=1e-3)
    assert tr.min_h >= -1e-6


def test_infeasible_steps_hold_previous_input():
    tr = short_run(FilterSpec("mr_cbf"), delta=0.2, horizon=2.0)
    bad = [i for i, s in enumerate(tr.status[:-1]) if s == FilterStatus.INFEASIBLE.value]
    assert bad and tr.flagged and tr.any_infeasible
    for i in bad:
        expected = tr.u[i - 1] if i > 0 else np.zeros(1)
        np.testing.assert_array_equal(tr.u[i], expected)


def test_domain_exit_ends_run():
    push = ControlAffineSystem(1, 1, lambda x: np.ones_like(x), lambda x: np.zeros(x.shape + (1,)), domain=[[-1, 1]])
    cbf = SCALAR[1]
    tr = simulate(push, cbf, FilterSpec("standard"), CorruptionModel.none(), ErrorSet.box([0.0]), [0.0], zero_policy, dt=0.1, horizon=5.0)
    assert tr.domain_exit
    assert tr.status[-1] == "DomainExit"
    assert tr.t.size < 50


def test_simulation_is_deterministic():
    spec = FilterSpec("duality", overapprox="ellipsoid", samples=200)
    a = short_run(spec, corruption=CorruptionModel.random_in_b(11))
    b = short_run(spec, corruption=CorruptionModel.random_in_b(11))
    assert a.to_csv() == b.to_csv()


def test_csv_round_trip():
    tr = short_run(FilterSpec("r_cbf"), horizon=0.3)
    text = tr.to_csv()
    assert text.splitlines()[0] == "t,x1,x2,xhat1,xhat2,u1,h,status,solve_ms"
    back = Trajectory.from_csv(text, 2, 1)
    np.testing.assert_array_equal(back.h, tr.h)
    np.testing.assert_array_equal(back.x, tr.x)
    assert back.status == tr.status


def test_simulate_validation():
    with pytest.raises(ValueError):
        short_run(FilterSpec("standard"), horizon=-1.0)
    with pytest.raises(ValueError):
        simulate(*DI, FilterSpec("standard"), CorruptionModel.none(), ErrorSet.box([0.1]), [0.0, 0.0], zero_policy)


def test_filter_spec_validation():
    with pytest.raises(ValueError):
        FilterSpec("magic")
    with pytest.raises(ValueError):
        FilterSpec("duality", overapprox="zonotope")
    assert FilterSpec("r_cbf").label == "r_cbf"


# sweeps


def test_sweep_rows_and_threads_agree():
    setup = Setup("double_integrator", (0.4, 0.6), dt=0.01, horizon=1.0, timing=False)
    filters = [FilterSpec("duality"), FilterSpec("standard")]
    one = min_h_sweep(setup, [0.0, 0.05, 0.1], filters)
    two = min_h_sweep(setup, [0.0, 0.05, 0.1], filters, threads=2)
    assert one.to_csv() == two.to_csv()
    assert all(v >= -1e-6 for v in one.min_h["duality"])
    assert one.min_h["standard"][0] >= -1e-6
    assert all(v < 0 for v in one.min_h["standard"][1:])
    header = one.to_csv().splitlines()[0].split(",")
    assert header[:3] == ["delta", "min_h_duality", "min_h_standard"]


def test_sweep_rejects_bad_magnitudes():
    setup = Setup("double_integrator", (0.4, 0.6))
    with pytest.raises(ValueError):
        min_h_sweep(setup, [0.2, 0.1], [FilterSpec("standard")])
    with pytest.raises(ValueError):
        min_h_sweep(setup, [0.1], [FilterSpec("standard"), FilterSpec("standard")])


def test_first_infeasible_marker():
    setup = Setup("double_integrator", (0.4, 0.6), dt=0.01, horizon=5.0, timing=False)
    table = min_h_sweep(setup, [0.05, 0.2], [FilterSpec("mr_cbf")])
    assert table.first_infeasible("mr_cbf") == 0.2


@given(st.floats(0.0, 0.3))
def test_setup_error_sets(delta):
    assert Setup("segway", (0, 0, 0, 0), error_kind="ball").error_set(delta, 4).radius == delta
    assert np.all(Setup("segway", (0, 0, 0, 0)).error_set(delta, 4).half_widths == delta)


def test_closed_loop_solves_are_certified():
    # tiny corrections near the epigraph apex once left the original QP's dual residual large
    from robustcbf.solvers import SolveStatus, check_certificate, observe_solves

    setup = Setup("double_integrator", (0.4, 0.6), dt=0.01, horizon=5.0, timing=False)
    bad, count = [], [0]

    def audit(problem, report):
        if report.status is SolveStatus.OPTIMAL:
            count[0] += 1
            if not check_certificate(problem, report):
                bad.append(report.dual_residual)

    with observe_solves(audit):
        setup.run(FilterSpec("duality", directions=16), 0.05)
    assert bad == []
    assert count[0] >= 500
