import math

import numpy as np
import pytest
from scipy.linalg import expm

from phymotion import tensor as T
from phymotion.errors import DivergenceError, ParameterError, ShapeError
from phymotion.gradcheck import relative_error
from phymotion.ode import DynamicsFn, LinearDynamics, ZeroDynamics, ode_solve, rollout
from phymotion.tensor import Tensor


def identity_field(z, t):
    return z


def const_accel(a):
    def f(z, t):
        # z = [x, v]
        return T.concat([z[1:2], z[1:2] * 0.0 + a], axis=0)

    return f


def solve_exp(h, method="rk4"):
    return ode_solve(identity_field, np.array([1.0]), 1.0, h, method=method)[-1].item()


def test_rk4_exponential():
    assert abs(solve_exp(0.1) - math.e) < 5e-6
    assert solve_exp(0.1) == pytest.approx(2.718280, abs=5e-6)


def test_rk4_halving_step_cuts_error_sixteenfold():
    ratio = abs(solve_exp(0.1) - math.e) / abs(solve_exp(0.05) - math.e)
    assert 14 <= ratio <= 18


@pytest.mark.parametrize("method,lo,hi", [("rk4", 3.7, 4.3), ("euler", 0.8, 1.2)])
def test_empirical_order(method, lo, hi):
    h = 0.1 if method == "rk4" else 0.01
    order = math.log2(abs(solve_exp(h, method) - math.e) / abs(solve_exp(h / 2, method) - math.e))
    assert lo <= order <= hi


def test_rk4_exact_on_constant_acceleration():
    z = ode_solve(const_accel(-1.0), np.array([0.0, 2.0]), 2.0, 0.1)[-1].data
    np.testing.assert_allclose(z, [2.0, 0.0], atol=1e-12)
    z32 = ode_solve(const_accel(np.float32(-1.0)), np.array([0.0, 2.0], dtype=np.float32), 2.0, 0.1)[-1].data
    np.testing.assert_allclose(z32, [2.0, 0.0], atol=1e-5)


@pytest.mark.parametrize("method", ["rk4", "euler"])
@pytest.mark.parametrize("tau,h", [(1.0, 0.1), (0.3, 0.05), (2.0, 0.5)])
def test_zero_field_is_identity_flow(method, tau, h):
    z0 = np.array([0.3, -1.2, 5.0])
    np.testing.assert_array_equal(ode_solve(ZeroDynamics(), z0, tau, h, method)[-1].data, z0)


def test_returns_every_intermediate_state():
    states = ode_solve(identity_field, np.array([1.0]), 1.0, 0.25)
    assert len(states) == 5


def test_horizon_must_be_multiple_of_step():
    with pytest.raises(ParameterError):
        ode_solve(identity_field, np.array([1.0]), 1.0, 0.3)
    with pytest.raises(ParameterError):
        ode_solve(identity_field, np.array([1.0]), 1.0, 0.0)
    with pytest.raises(ParameterError):
        ode_solve(identity_field, np.array([1.0]), 1.0, 0.1, method="midpoint")


@pytest.mark.filterwarnings("ignore:overflow:RuntimeWarning")
def test_divergence_reports_step():
    def blowup(z, t):
        return z * z * 1e150

    with pytest.raises(DivergenceError) as info:
        ode_solve(blowup, np.array([1e150]), 1.0, 0.1)
    assert info.value.step == 0


def test_reversibility():
    rng = np.random.default_rng(3)
    f = DynamicsFn(4, 16, rng).astype(np.float64)
    z0 = rng.standard_normal(4)
    fwd = ode_solve(f, z0, 1.0, 0.01)[-1]
    back = ode_solve(lambda z, t: -f(z, t), fwd, 1.0, 0.01)[-1]
    assert np.abs(back.data - z0).max() < 1e-5


def test_identical_calls_are_bitwise_equal():
    f = DynamicsFn(6, 8, np.random.default_rng(1))
    z0 = np.random.default_rng(2).standard_normal((3, 6)).astype(np.float32)
    a = rollout(f, z0, 3, 0.1)[-1].data
    b = rollout(f, z0, 3, 0.1)[-1].data
    assert a.tobytes() == b.tobytes()


# -------------------------------------------------------------------- rollout
def test_rollout_single_step_equals_solve():
    f = DynamicsFn(4, 8, np.random.default_rng(0))
    z0 = np.ones(4, dtype=np.float32)
    one = rollout(f, z0, 1, 0.1, substeps=4)[0].data
    direct = ode_solve(f, z0, 0.1, 0.025)[-1].data
    assert one.tobytes() == direct.tobytes()


def test_rollout_prefix_consistency():
    f = DynamicsFn(4, 8, np.random.default_rng(0))
    z0 = np.random.default_rng(1).standard_normal(4).astype(np.float32)
    three = rollout(f, z0, 3, 0.1)
    two = rollout(f, z0, 2, 0.1)
    assert three[1].data.tobytes() == two[1].data.tobytes()


def test_rollout_linearity():
    rng = np.random.default_rng(7)
    f = LinearDynamics(rng.standard_normal((5, 5)) * 0.5)
    z0 = rng.standard_normal(5)
    plus = rollout(f, z0, 3, 0.1)
    minus = rollout(f, -z0, 3, 0.1)
    for p, m in zip(plus, minus):
        np.testing.assert_allclose(m.data, -p.data, atol=1e-14)


def test_rollout_rejects_zero_steps():
    with pytest.raises(ParameterError):
        rollout(ZeroDynamics(), np.ones(2), 0, 0.1)


def test_gradient_through_solver_matches_matrix_exponential():
    # loss = |z(tau)|^2 with z' = z A (row vector) => z(tau) = z0 expm(A tau)
    rng = np.random.default_rng(11)
    a = rng.standard_normal((4, 4)) * 0.4
    z0 = rng.standard_normal(4)
    tau = 1.0
    leaf = Tensor(z0.copy(), requires_grad=True)
    z = ode_solve(LinearDynamics(a), leaf, tau, 0.05)[-1]
    (z * z).sum().backward()
    m = expm(a * tau)
    closed_form = 2.0 * m @ (m.T @ z0)
    assert relative_error(leaf.grad, closed_form) < 1e-3


def test_gradient_wrt_dynamics_parameters_matches_finite_differences():
    from phymotion.gradcheck import check_module_grad

    rng = np.random.default_rng(4)
    f = DynamicsFn(4, 6, rng)
    z0 = Tensor(rng.standard_normal((2, 4)))

    def loss():
        zs = rollout(f, z0, 3, 0.1, substeps=2)
        return sum(((zk * zk).sum() for zk in zs), Tensor(np.zeros(())))

    assert check_module_grad(f, loss) < 1e-4


def test_structured_dynamics_copy_velocity_block():
    rng = np.random.default_rng(0)
    f = DynamicsFn(6, 8, rng, structured=True).astype(np.float64)
    z = rng.standard_normal((2, 6))
    out = f(Tensor(z)).data
    np.testing.assert_array_equal(out[:, :3], z[:, 3:])
    with pytest.raises(ShapeError):
        DynamicsFn(5, 8, rng, structured=True)


def test_time_input_changes_field():
    rng = np.random.default_rng(0)
    f = DynamicsFn(4, 8, rng, time_input=True).astype(np.float64)
    z = Tensor(np.ones((1, 4)))
    assert not np.allclose(f(z, 0.0).data, f(z, 0.5).data)
