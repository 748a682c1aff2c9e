import numpy as np
import pytest

from sipgains import PolicyForm, PolicyParams, Scenario, rollout, zoo
from sipgains.errors import InvalidInputError, RolloutDiverged
from sipgains.model import dynamics_residual, measurement_residual, policy_eval


def zero_scenario(spec, **over):
    m, T = spec.model, spec.T
    base = dict(x_init=np.zeros(m.n_x), rho_f=np.zeros(m.n_rho_f), rho_h=np.zeros(m.n_rho_h),
                W=np.zeros((T, m.n_w)), V=np.zeros((T + 1, m.n_v)))
    base.update(over)
    return Scenario(**base)


def test_policy_open_loop_passthrough():
    pol = PolicyForm(0, (0, 0), (-20, 20))
    p = PolicyParams(np.zeros((0, 2, 2)), np.array([[-20.0, 20.0]]))
    assert policy_eval(pol, p, [], 0).tolist() == [-20.0, 20.0]


def test_policy_zero_gain():
    pol = PolicyForm(1)
    p = PolicyParams(np.zeros((1, 2, 2)), np.array([[1.0, 1.0]]))
    assert policy_eval(pol, p, [np.array([5.0, -3.0])], 0).tolist() == [1.0, 1.0]


def test_policy_identity_gains():
    pol = PolicyForm(2)
    p = PolicyParams(np.stack([np.eye(2), np.eye(2)]), np.zeros((1, 2)))
    out = policy_eval(pol, p, [np.array([1.0, 0.0]), np.array([0.0, 2.0])], 0)
    assert out.tolist() == [1.0, 2.0]


def test_policy_window_dimension_error():
    pol = PolicyForm(1)
    p = PolicyParams(np.zeros((1, 2, 2)), np.zeros((1, 2)))
    with pytest.raises(InvalidInputError):
        policy_eval(pol, p, [np.zeros(3)], 0)


def test_policy_linearity(rng):
    pol = PolicyForm(2)
    a = PolicyParams(rng.normal(size=(2, 2, 3)), rng.normal(size=(4, 2)))
    b = PolicyParams(rng.normal(size=(2, 2, 3)), rng.normal(size=(4, 2)))
    win = [rng.normal(size=3), rng.normal(size=3)]
    al, be = 0.7, -1.3
    mix = PolicyParams(al * a.K + be * b.K, al * a.u_bar + be * b.u_bar)
    np.testing.assert_allclose(policy_eval(pol, mix, win, 2),
                               al * policy_eval(pol, a, win, 2) + be * policy_eval(pol, b, win, 2),
                               atol=1e-12)


def test_toy2d_first_step(toy2d):
    p = PolicyParams.zeros(1, 2, 2, toy2d.N)
    b = rollout(toy2d, p, zero_scenario(toy2d))
    assert b.X[1].tolist() == [1.0, 1.0]


def test_quadrotor_hover(quad):
    p = PolicyParams(np.zeros((2, 2, 3)), np.full((7, 2), 4.905))
    b = rollout(quad, p, zero_scenario(quad, rho_f=np.array([1.0, 0.00125])))
    assert np.max(np.abs(b.X)) < 1e-12


def test_quadrotor_heavy_sinks(quad):
    p = PolicyParams(np.zeros((2, 2, 3)), np.full((7, 2), 4.905))
    b = rollout(quad, p, zero_scenario(quad, rho_f=np.array([1.1, 0.00125])))
    expected = 0.1 * (9.81 / 1.1 - 9.81)
    assert b.X[1, 3] == pytest.approx(expected, abs=1e-12)
    assert b.X[1, 3] < 0


def test_quadrotor_torque_step():
    m = zoo.quadrotor_model(0.1)
    x = m.step(np.zeros((1, 6)), np.array([[5.0, 4.905]]), np.array([[1.0, 0.00125]]), np.zeros((1, 0)))
    assert x[0, 5] == pytest.approx(0.76, abs=1e-12)


def test_quadrotor_tilt_coupling():
    m = zoo.quadrotor_model(1.0)
    x0 = np.zeros((1, 6))
    x0[0, 4] = np.pi / 2
    x = m.step(x0, np.array([[4.905, 4.905]]), np.array([[1.0, 0.00125]]), np.zeros((1, 0)))
    assert x[0, 1] == pytest.approx(9.81, abs=1e-12)
    assert x[0, 3] == pytest.approx(-9.81, abs=1e-9)


def test_quadrotor_mass_range_hover_delta():
    m = zoo.quadrotor_model(0.1)
    x = m.step(np.zeros((1, 6)), np.full((1, 2), 4.905), np.array([[1.1, 0.00125]]), np.zeros((1, 0)))
    assert abs(x[0, 3]) == pytest.approx(0.1 * 9.81 * (1 - 1 / 1.1), abs=1e-12)


def test_quadrotor_bad_sampling_time():
    with pytest.raises(InvalidInputError):
        zoo.quadrotor_model(0.0)


def test_rollout_residual_duality(quad, rng):
    p = PolicyParams(rng.uniform(-1.5, 1.5, (2, 2, 3)), rng.uniform(4, 6, (7, 2)))
    s = zero_scenario(quad, x_init=rng.uniform(-0.1, 0.1, 6), rho_f=np.array([0.95, 0.0012]),
                      V=rng.uniform(-0.1, 0.1, (10, 3)))
    b = rollout(quad, p, s)
    R = dynamics_residual(quad.model, b.X, b.U, s.rho_f, s.W)
    assert np.max(np.abs(R)) <= 1e-12
    Rm = measurement_residual(quad.model, b.X, s.rho_h, s.V, b.Y)
    assert np.max(np.abs(Rm)) <= 1e-12


def test_rollout_deterministic(quad, rng):
    p = PolicyParams(rng.uniform(-1.5, 1.5, (2, 2, 3)), rng.uniform(4, 6, (7, 2)))
    s = zero_scenario(quad, rho_f=np.array([1.0, 0.001]), V=rng.uniform(-0.1, 0.1, (10, 3)))
    assert rollout(quad, p, s) == rollout(quad, p, s)


def test_rollout_diverged_reports_step(quad):
    p = PolicyParams(np.zeros((2, 2, 3)), np.full((7, 2), 1e308))
    with pytest.raises(RolloutDiverged) as exc:
        rollout(quad, p, zero_scenario(quad, rho_f=np.array([1.0, 0.001])))
    assert exc.value.step >= quad.M


def test_dynamics_residual_toy():
    m = zoo.integrator_model(2)
    r = dynamics_residual(m, np.array([[0.0, 0.0], [5.0, 5.0]]), np.array([[1.0, 1.0]]), [], np.zeros((1, 2)))
    assert r.tolist() == [[4.0, 4.0]]


def test_dynamics_residual_single_step_zero():
    m = zoo.integrator_model(2)
    x, u, w = np.array([0.3, -0.2]), np.array([1.0, 2.0]), np.array([0.1, 0.1])
    X = np.stack([x, m.step(x, u, np.zeros(0), w)])
    assert np.all(dynamics_residual(m, X, u[None], [], w[None]) == 0)


def test_dynamics_residual_length_mismatch():
    m = zoo.integrator_model(2)
    with pytest.raises(InvalidInputError):
        dynamics_residual(m, np.zeros((3, 2)), np.zeros((1, 2)), [], np.zeros((1, 2)))


def test_measurement_residual_offset():
    m = zoo.integrator_model(2)
    r = measurement_residual(m, np.zeros((1, 2)), [], np.zeros((1, 2)), np.array([[1.0, 2.0]]))
    assert r.tolist() == [[1.0, 2.0]]


def test_measurement_residual_quadrotor():
    m = zoo.quadrotor_model()
    X = np.zeros((1, 6))
    X[0, 0] = 0.05
    r = measurement_residual(m, X, [], np.array([[-0.05, 0.0, 0.0]]), np.zeros((1, 3)))
    assert np.max(np.abs(r)) == 0


def test_measurement_residual_length_mismatch():
    m = zoo.integrator_model(2)
    with pytest.raises(InvalidInputError):
        measurement_residual(m, np.zeros((2, 2)), [], np.zeros((1, 2)), np.zeros((2, 2)))


def test_spec_validation():
    with pytest.raises(InvalidInputError):
        zoo.toy2d_spec().replace(Y0=np.zeros((3, 2)))
    with pytest.raises(InvalidInputError):
        zoo.toy2d_spec().replace(policy=PolicyForm(2))


def test_parameter_counts():
    assert zoo.quadrotor_spec("two_step").n_params == 26
    assert zoo.quadrotor_spec("open_loop").n_params == 14
    assert zoo.quadrotor_spec("one_step").policy.gain_bounds == (-3.0, 3.0)


def test_toy2d_dimensions(toy2d):
    m = toy2d.model
    assert (m.n_x, m.n_u, m.n_y, m.n_w, m.n_v) == (2, 2, 2, 2, 2)
    assert (m.n_rho_f, m.n_rho_h) == (0, 0)


def test_spec_registry():
    assert zoo.get_spec("quadrotor", "one_step") == zoo.quadrotor_spec("one_step")
    with pytest.raises(InvalidInputError):
        zoo.get_spec("nope")
