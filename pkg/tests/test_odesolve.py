import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from odernn import autodiff as ad
from odernn.errors import BudgetError, NumericError, UsageError
from odernn.odesolve import (OdeState, SolverConfig, euler_step, integrate, rk4_step,
                             substep_count)
from odernn.tensor import Tensor


def growth(s, t, p):
    return OdeState(s.y, ad.scale(s.h, 0.0))


def decay(s, t, p):
    return OdeState(ad.scale(s.y, -1.0), ad.scale(s.h, 0.0))


def zero(s, t, p):
    return OdeState.from_parts([ad.scale(x, 0.0) for x in s.parts()])


def linear(s, t, A):
    # dy/dt = A y, h untouched
    return OdeState(ad.matmul(A, s.y), ad.scale(s.h, 0.0))


def st1(y, h=0.0):
    return OdeState(Tensor([y]), Tensor([h]))


def test_euler_examples():
    assert euler_step(decay, st1(1.0), 0.0, 0.1).y.item() == pytest.approx(0.9, abs=1e-15)
    assert euler_step(growth, st1(1.0), 0.0, 0.5).y.item() == 1.5
    s = OdeState(Tensor([0.3, -2.0]), Tensor([1.0]))
    out = euler_step(zero, s, 0.0, 0.7)
    assert out.y == s.y and out.h == s.h


def test_rk4_examples():
    assert rk4_step(growth, st1(1.0), 0.0, 1.0).y.item() == pytest.approx(
        1 + 1 + 1 / 2 + 1 / 6 + 1 / 24, abs=1e-15)
    s = OdeState(Tensor([0.3, -2.0]), Tensor([1.0]))
    out = rk4_step(zero, s, 0.0, 0.7)
    assert out.y == s.y and out.h == s.h


def test_rk4_to_e():
    traj = integrate(growth, st1(1.0), [0.0, 1.0], SolverConfig("rk4", fixed_step=0.1))
    assert abs(traj[-1].y.item() - math.e) < 1e-5
    assert traj.steps == 10


def test_step_rejects_nonpositive_dt():
    with pytest.raises(UsageError):
        euler_step(growth, st1(1.0), 0.0, 0.0)


def test_integrate_decay_analytic():
    traj = integrate(decay, st1(1.0), [0.0, 1.0, 2.0], SolverConfig("rk4", fixed_step=0.01))
    got = [s.y.item() for s in traj]
    for g, want in zip(got, [1.0, math.exp(-1), math.exp(-2)]):
        assert abs(g - want) < 1e-6


def test_integrate_single_time_returns_s0():
    s0 = st1(0.42, 1.0)
    traj = integrate(decay, s0, [3.0])
    assert len(traj) == 1 and traj[0] is s0


def test_first_state_is_s0():
    s0 = st1(0.42, 1.0)
    assert integrate(decay, s0, [0.0, 0.5, 2.0])[0] is s0


def test_non_increasing_times_rejected():
    with pytest.raises(UsageError):
        integrate(decay, st1(1.0), [0.0, 1.0, 1.0])
    with pytest.raises(UsageError):
        integrate(decay, st1(1.0), [0.0, -1.0])


def test_budget_error():
    with pytest.raises(BudgetError):
        integrate(decay, st1(1.0), [0.0, 10.0], SolverConfig("rk4", fixed_step=0.01, max_steps=50))
    with pytest.raises(BudgetError):
        integrate(decay, st1(1.0), [0.0, 10.0],
                  SolverConfig("rk45", rtol=1e-10, atol=1e-12, max_steps=5))


def test_numeric_error_on_blowup():
    def explode(s, t, p):
        return OdeState(ad.exp(ad.scale(s.y, 400.0)), s.h)
    with pytest.raises(NumericError):
        integrate(explode, st1(1.0), [0.0, 1.0], SolverConfig("euler", fixed_step=0.5))


def test_solver_config_validation():
    with pytest.raises(UsageError):
        SolverConfig("midpoint")
    with pytest.raises(UsageError):
        SolverConfig(fixed_step=0.0)
    with pytest.raises(UsageError):
        SolverConfig(rtol=0.0)
    with pytest.raises(UsageError):
        SolverConfig(max_steps=0)


def test_substep_count():
    assert substep_count(0.3, 0.1) == 3
    assert substep_count(0.05, 0.1) == 1
    assert substep_count(0.25, 0.1) == 3


def test_default_step_quarter_of_min_gap():
    traj = integrate(growth, st1(1.0), [0.0, 0.1, 0.5], SolverConfig("euler"))
    # step 0.025: 4 substeps then 16 substeps
    assert traj.steps == 20


def _global_error(method, dt):
    traj = integrate(growth, st1(1.0), [0.0, 1.0], SolverConfig(method, fixed_step=dt))
    return abs(traj[-1].y.item() - math.e)


@pytest.mark.parametrize("method,order,tol", [("euler", 1.0, 0.1), ("rk4", 4.0, 0.2)])
def test_convergence_order(method, order, tol):
    dt = 0.05 if method == "euler" else 0.1
    measured = math.log2(_global_error(method, dt) / _global_error(method, dt / 2))
    assert abs(measured - order) <= tol


def test_grid_consistency_fixed():
    cfg = SolverConfig("rk4", fixed_step=0.125)
    direct = integrate(decay, st1(1.0), [0.0, 1.0], cfg)[-1]
    via = integrate(decay, st1(1.0), [0.0, 0.5, 1.0], cfg)[-1]
    assert direct.y == via.y


def test_grid_consistency_adaptive():
    cfg = SolverConfig("rk45", rtol=1e-6, atol=1e-8)
    direct = integrate(decay, st1(1.0), [0.0, 2.0], cfg)[-1].y.item()
    via = integrate(decay, st1(1.0), [0.0, 0.7, 2.0], cfg)[-1].y.item()
    assert abs(direct - via) <= 10 * (cfg.rtol * abs(direct) + cfg.atol)


def test_adaptive_accuracy_and_landing():
    cfg = SolverConfig("rk45", rtol=1e-8, atol=1e-10)
    times = [0.0, 0.3, 1.7, 2.0]
    traj = integrate(decay, st1(1.0), times, cfg)
    for s, t in zip(traj, times):
        assert abs(s.y.item() - math.exp(-t)) < 1e-7


@st.composite
def grids(draw):
    n = draw(st.integers(1, 40))
    gaps = draw(st.lists(st.floats(1e-3, 2.0), min_size=n - 1, max_size=n - 1))
    t0 = draw(st.floats(-5, 5))
    return list(np.cumsum([t0] + gaps))


@given(grids(), st.sampled_from(["euler", "rk4"]),
       st.lists(st.floats(-100, 100), min_size=1, max_size=4))
def test_zero_field_constancy(times, method, y):
    s0 = OdeState(Tensor(y), Tensor([0.5, -0.25]))
    cfg = SolverConfig(method, fixed_step=0.5)
    for s in integrate(zero, s0, times, cfg):
        assert s.y.array.tobytes() == s0.y.array.tobytes()
        assert s.h.array.tobytes() == s0.h.array.tobytes()


def test_zero_field_adaptive():
    s0 = st1(3.0, -1.0)
    for s in integrate(zero, s0, [0.0, 0.1, 5.0], SolverConfig("rk45")):
        assert s.y == s0.y


def test_gradient_through_integrate_matches_fd():
    A = Tensor([[-0.5, 1.0], [-1.0, -0.2]])
    y0 = np.array([1.0, 0.5])
    times = [0.0, 0.4, 1.1, 1.5]
    cfg = SolverConfig("rk4", fixed_step=0.1)
    w = Tensor([0.7, -1.3])

    def final(yv):
        s0 = OdeState(yv, Tensor([0.0]))
        return ad.sum_(ad.mul(integrate(linear, s0, times, cfg, params=A)[-1].y, w))

    tape = ad.Tape()
    yv = tape.var(Tensor(y0))
    tape.backward(final(yv))
    h = 1e-6
    for j in range(2):
        e = np.zeros(2)
        e[j] = h
        fd = (final(Tensor(y0 + e)).item() - final(Tensor(y0 - e)).item()) / (2 * h)
        assert abs(yv.grad.array[j] - fd) / max(1.0, abs(fd)) < 1e-5


def test_batched_columns_match_single_series():
    # Columns with proportional gaps share substep boundaries exactly.
    A = Tensor([[-0.5, 1.0], [-1.0, -0.2]])
    cfg = SolverConfig("rk4", fixed_step=0.1)
    t1 = np.array([0.0, 0.4, 1.0])
    t2 = np.array([1.0, 1.2, 1.5])   # gaps are half of t1's
    y = np.array([[1.0, -0.3], [0.5, 2.0]])
    s0 = OdeState(Tensor(y), Tensor(np.zeros((1, 2))))
    batched = integrate(linear, s0, np.stack([t1, t2], axis=1), cfg, params=A)
    single = integrate(linear, OdeState(Tensor(y[:, 0]), Tensor([0.0])), t1, cfg, params=A)
    for b, s in zip(batched, single):
        assert np.allclose(b.y.array[:, 0], s.y.array, rtol=0, atol=1e-14)
    # second column: analytic solution via eigen-decomposition
    w, V = np.linalg.eig(A.array)
    for b, t in zip(batched, t2):
        exact = (V @ np.diag(np.exp(w * (t - t2[0]))) @ np.linalg.inv(V) @ y[:, 1]).real
        assert np.allclose(b.y.array[:, 1], exact, atol=1e-6)


def test_batched_state_shape_checked():
    s0 = OdeState(Tensor(np.zeros((2, 3))), Tensor(np.zeros((1, 3))))
    with pytest.raises(UsageError):
        integrate(decay, s0, np.zeros((3, 2)) + np.arange(3)[:, None])
    with pytest.raises(UsageError):
        integrate(decay, st1(1.0), np.zeros((3, 2)) + np.arange(3)[:, None])
