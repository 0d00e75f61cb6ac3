import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lqisoc import (CostModel, DimensionError, GainSchedule, NoiseModel, NumericalError, SystemModel,
                    assemble_cost, build_reaching_model, lqg_control_gains, lqg_filter_gains, lqg_gains,
                    lqg_propagate_moments)
from lqisoc.lqg import control_gains, filter_gains, solve_sym

from conftest import rel_err

# E[p_y] at t = N for the reaching model, frozen from the least-squares oracle below
PY_FINAL = 0.09869158168223326


def lqr_oracle(problem):
    """Open-loop optimum of the noiseless problem by one big least-squares solve.

    Only valid for Q = 0, which is the reaching model's cost structure.
    """
    s = problem.system
    QN, Q, R = assemble_cost(problem.cost)
    assert not Q.any()
    A, B, N = s.A, s.B, s.N
    n, m = B.shape
    G = np.hstack([np.linalg.matrix_power(A, N - 1 - t) @ B for t in range(N)])
    AN = np.linalg.matrix_power(A, N)
    u = np.linalg.solve(G.T @ QN @ G + np.kron(np.eye(N), R), -G.T @ QN @ AN @ s.x0_mean)
    xs = [s.x0_mean]
    for t in range(N):
        xs.append(A @ xs[-1] + B @ u[t * m:(t + 1) * m])
    return np.array(xs)


def scalar(QN=1.0, R=1.0, N=1, Oxi=0.0, Oom=1.0, x0=0.0, P0=0.0):
    sys_ = SystemModel([[1.0]], [[1.0]], [[1.0]], [[1.0]], [x0], [[P0]], N)
    cost = CostModel([[1.0]], np.zeros((0, 1)), [[1.0]], [QN, R])
    noise = NoiseModel([[np.sqrt(Oxi)]], [[np.sqrt(Oom)]])
    return sys_, cost, noise


def test_scalar_control_gain():
    sys_, cost, _ = scalar()
    assert lqg_control_gains(sys_, cost)[0, 0, 0] == 0.5


def test_zero_cost_zero_gain():
    L = control_gains(np.eye(2), np.ones((2, 1)), np.zeros((2, 2)), np.zeros((2, 2)), np.eye(1), 5)
    assert np.all(L == 0)


def test_scalar_filter_gains():
    sys_, _, noise = scalar(N=2, Oxi=1.0, Oom=1.0, P0=0.0)
    K = lqg_filter_gains(sys_, noise)
    assert K[0, 0, 0] == 0.0
    assert K[1, 0, 0] == 0.5


def test_noiseless_filter_is_zero():
    K = filter_gains(np.eye(3), np.eye(3)[:2], np.zeros((3, 3)), np.zeros((2, 2)), np.zeros((3, 3)), 6)
    assert np.all(K == 0)


def test_riccati_minimiser_identity(reach_lqg):
    """R L_t = B' Z_{t+1} (A - B L_t) at every t, with Z from an independent sweep."""
    s = reach_lqg.system
    QN, Q, R = assemble_cost(reach_lqg.cost)
    L = lqg_control_gains(s, reach_lqg.cost)
    Z = QN
    for t in range(s.N - 1, -1, -1):
        lhs = R @ L[t]
        rhs = s.B.T @ Z @ (s.A - s.B @ L[t])
        assert np.abs(lhs - rhs).max() <= 1e-10 * np.abs(s.B.T @ Z @ s.A).max()
        Z = Q + s.A.T @ Z @ s.A - s.A.T @ Z @ s.B @ L[t]
        Z = 0.5 * (Z + Z.T)


def test_mean_matches_least_squares_oracle(reach_lqg, lqg_forward):
    traj = lqg_forward[1]
    xs = lqr_oracle(reach_lqg)
    assert np.abs(traj.state_mean - xs).max() < 1e-12
    assert np.abs(traj.mean[:, 10:] - xs).max() < 1e-12
    assert traj.state_mean[-1, 1] == pytest.approx(PY_FINAL, abs=1e-12)


def test_final_position_near_target(lqg_forward):
    # effort cost leaves a 1.3 mm undershoot; the target is reached to within 1.5 mm
    assert abs(lqg_forward[1].state_mean[-1, 1] - 0.1) < 1.5e-3


@pytest.mark.xfail(strict=True, reason="optimal trajectory undershoots the target by 1.31e-3 m; "
                                       "the 1e-3 band is tighter than the model allows")
def test_final_position_within_one_millimetre(lqg_forward):
    assert abs(lqg_forward[1].state_mean[-1, 1] - 0.1) <= 1e-3


def test_filter_gain_snapshot(lqg_forward):
    g = lqg_forward[0]
    assert np.all(np.isfinite(g.K))
    assert np.all(g.K[0] == 0)  # exact initial state, nothing to correct
    assert g.K[10][0, 0] == pytest.approx(0.002261628118389191, rel=1e-9)
    assert g.K[10][2, 2] == pytest.approx(0.0155358285294725, rel=1e-9)
    assert g.L[0][0, 0] == pytest.approx(72.96903835500329, rel=1e-9)


def test_separation(reach_lqg):
    L0 = lqg_control_gains(reach_lqg.system, reach_lqg.cost)
    rng = np.random.default_rng(4)
    for _ in range(3):
        sigma = rng.uniform(0, 3, reach_lqg.layout.n_free_sigma)
        q = reach_lqg.with_params(sigma=sigma)
        assert np.array_equal(lqg_gains(q.system, q.cost, q.noise).L, L0)


def test_scale_invariance(reach_lqg):
    g1 = lqg_gains(reach_lqg.system, reach_lqg.cost, reach_lqg.noise)
    q = reach_lqg.with_params(s=7 * reach_lqg.cost.s)
    g7 = lqg_gains(q.system, q.cost, q.noise)
    assert rel_err(g7.L, g1.L) < 1e-12
    assert np.array_equal(g7.K, g1.K)


def test_covariance_symmetric_psd_and_initial(lqg_forward):
    cov = lqg_forward[1].cov
    assert np.array_equal(cov, np.swapaxes(cov, 1, 2))
    for C in cov:
        w = np.linalg.eigvalsh(C)
        assert w.min() >= -1e-10 * max(w.max(), 1e-300)
    assert np.all(cov[0] == 0)  # Omega_x0 = 0 for the reaching model


def test_initial_covariance_block():
    sys_ = SystemModel(np.eye(2), np.ones((2, 1)), np.eye(2), np.eye(2), [1.0, 2.0], np.diag([0.3, 0.2]), 3)
    cost = CostModel(np.eye(2), np.zeros((0, 2)), [[1.0]], [1, 1, 1])
    noise = NoiseModel(0.1 * np.eye(2), 0.1 * np.eye(2))
    traj = lqg_propagate_moments(sys_, lqg_gains(sys_, cost, noise), noise)
    assert np.array_equal(traj.cov[0], np.diag([0.3, 0.2, 0, 0]))
    assert np.array_equal(traj.mean[0], [1, 2, 1, 2])


def test_noise_free_loop_has_zero_covariance(reach_lqg):
    q = reach_lqg.with_params(sigma=np.zeros(reach_lqg.layout.n_free_sigma))
    g = lqg_gains(q.system, q.cost, q.noise)
    traj = lqg_propagate_moments(q.system, g, q.noise)
    assert np.all(traj.cov == 0)


def test_zero_start_stays_at_rest():
    sys_, cost, noise = scalar(N=10, Oxi=0.0, Oom=1.0, x0=0.0)
    traj = lqg_propagate_moments(sys_, lqg_gains(sys_, cost, noise), noise)
    assert np.all(traj.mean == 0) and np.all(traj.cov == 0)


@settings(max_examples=25, deadline=None)
@given(st.floats(0.1, 2), st.floats(0.1, 3), st.floats(0.01, 2), st.floats(0, 2), st.integers(1, 15))
def test_scalar_moments_psd(a, q, r, oxi, N):
    sys_ = SystemModel([[a]], [[1.0]], [[1.0]], [[1.0]], [1.0], [[0.5]], N)
    cost = CostModel([[1.0]], [[1.0]], [[1.0]], [q, q, r])
    noise = NoiseModel([[oxi]], [[0.3]])
    traj = lqg_propagate_moments(sys_, lqg_gains(sys_, cost, noise), noise)
    for C in traj.cov:
        assert np.linalg.eigvalsh(C).min() >= -1e-8 * max(np.trace(C), 1e-300)


def test_gain_schedule_validation():
    with pytest.raises(NumericalError):
        GainSchedule(np.full((2, 1, 1), np.nan), np.zeros((2, 1, 1)))
    with pytest.raises(DimensionError):
        GainSchedule(np.zeros((2, 1, 1)), np.zeros((3, 1, 1)))
    g = GainSchedule(np.ones((2, 1, 1)), np.zeros((2, 1, 1)))
    back = GainSchedule.from_dict(g.to_dict())
    assert np.array_equal(back.L, g.L) and np.array_equal(back.K, g.K)


def test_horizon_mismatch(reach_lqg, lqg_forward):
    g = lqg_forward[0]
    short = GainSchedule(g.L[:-1], g.K[:-1])
    with pytest.raises(DimensionError):
        lqg_propagate_moments(reach_lqg.system, short, reach_lqg.noise)


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_divergence_raises():
    with pytest.raises(NumericalError):
        control_gains(np.array([[1e200]]), np.array([[1e-200]]), np.eye(1), np.eye(1), np.eye(1), 5)


def test_singular_solve_regularised():
    X = solve_sym(np.zeros((2, 2)), np.ones((2, 1)))
    assert np.all(np.isfinite(X))
