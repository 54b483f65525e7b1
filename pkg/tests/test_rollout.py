import math

import numpy as np
import pytest
from scipy.linalg import expm

from swarmdmd.dmd import InteractionModel, estimate_K
from swarmdmd.experiment import default_config, run_experiment
from swarmdmd.metrics import position_error
from swarmdmd.observables import FeatureLayout, SnapshotMatrices, assemble_matrices, default_layout, stack_positions
from swarmdmd.rollout import (
    RolloutConfig,
    elapsed_average,
    restart_indices,
    rollout,
    rollout_fo_cartesian,
    rollout_fo_polar,
    rollout_standard,
    rollout_with_reinit,
    run_rollout,
)
from swarmdmd.sim import simulate
from swarmdmd.trajectory import SwarmParams, SwarmTrajectory, TrajectoryError


def zero_model(n, dynamics):
    lay = default_layout(dynamics, n)
    return InteractionModel(np.zeros((2 * n, lay.total_width)), lay, 1, dynamics, 0.1)


def line_window(n=3, speed=1.0, theta=0.4, dt=0.1):
    start = np.random.default_rng(0).normal(size=(n, 2))
    step = speed * dt * np.array([math.cos(theta), math.sin(theta)])
    pos = np.stack([start, start + step])
    return SwarmTrajectory.from_arrays(pos, np.full((2, n), theta), dt)


def linear_truth(n=2, steps=200, seed=0):
    """Exact linear swarm x_{k+1} = (I + K0) x_k with a norm-preserving map."""
    r = np.random.default_rng(seed)
    G = r.normal(size=(2 * n, 2 * n))
    A = expm(0.05 * (G - G.T))
    x = np.empty((steps + 1, 2 * n))
    x[0] = r.normal(size=2 * n)
    for k in range(steps):
        x[k + 1] = A @ x[k]
    pos = np.stack([x[:, :n], x[:, n:]], axis=-1)
    v = np.diff(pos, axis=0, append=pos[-1:] + np.diff(pos, axis=0)[-1:])
    return SwarmTrajectory.from_arrays(pos, np.arctan2(v[..., 1], v[..., 0]), 0.1), A - np.eye(2 * n)


# -- K = 0 ---------------------------------------------------------------------


def test_zero_model_standard_freezes_agents():
    win = line_window()
    out = rollout_standard(zero_model(3, "standard"), win, 2.0)
    assert out.n_steps == 21
    assert np.all(out.positions == win.positions[-1])


@pytest.mark.parametrize("dynamics,fn", [("fo_cartesian", rollout_fo_cartesian), ("fo_polar", rollout_fo_polar)])
def test_zero_model_first_order_is_ballistic(dynamics, fn):
    win = line_window(speed=0.7, theta=-2.0)
    out = fn(zero_model(3, dynamics), win, 3.0)
    step = win.positions[1] - win.positions[0]
    k = np.arange(out.n_steps)[:, None, None]
    np.testing.assert_allclose(out.positions, win.positions[-1] + k * step, atol=1e-12)
    speed = np.linalg.norm(np.diff(out.positions, axis=0), axis=-1) / 0.1
    np.testing.assert_allclose(speed, 0.7, rtol=1e-12)


def test_wrong_dynamics_rejected():
    with pytest.raises(ValueError):
        rollout_standard(zero_model(3, "fo_polar"), line_window(), 1.0)
    with pytest.raises(TrajectoryError):
        rollout_standard(zero_model(3, "standard"), line_window().window(1), 1.0)


def test_divergence_is_truncated_and_reported():
    lay = FeatureLayout.parse("position", 1)
    model = InteractionModel(np.eye(2) * 1e200, lay, 2, "standard", 0.1)
    win = SwarmTrajectory.from_arrays(np.array([[[1.0, 1.0]], [[1.0, 1.0]]]), np.zeros((2, 1)), 0.1)
    out = rollout(model, win, 5.0)
    assert out.diverged_at is not None
    assert out.n_steps < 51
    assert np.all(np.isfinite(out.positions))
    assert out.diverged_at == pytest.approx(out.times[-1] + 0.1)


# -- linear oracle ---------------------------------------------------------------


def test_linear_swarm_rollout_reproduces_training_states():
    r = np.random.default_rng(3)
    lay = FeatureLayout.parse("position velocity", 2)
    K0 = 0.1 * r.normal(size=(4, 8))
    T = 50
    Y = r.normal(size=(8, T - 1))
    x = np.zeros((4, T))
    for k in range(T - 1):
        x[:, k + 1] = x[:, k] + K0 @ Y[:, k]
    mats = SnapshotMatrices(x[:, :-1], x[:, 1:], x[:, 1:] - x[:, :-1], Y, lay, 0.1)
    model = estimate_K(mats, None)
    pos = np.stack([x[:2].T, x[2:].T], axis=-1)
    traj = SwarmTrajectory.from_arrays(pos, np.zeros((T, 2)), 0.1)
    out = rollout(model, traj.window(0, 2), (T - 2) * 0.1, exogenous=Y[:, 1:])
    np.testing.assert_allclose(out.positions, pos[1:], atol=1e-6)


def test_displacement_equals_KY_columns():
    traj = simulate(SwarmParams.standard(n_agents=10, radius=0.5, seed=1), duration=3.0)
    mats = assemble_matrices(traj, default_layout("standard", 10))
    model = estimate_K(mats, None)
    out = run_rollout(model, traj, RolloutConfig(duration=3.0), observed=traj).trajectories[0]
    disp = np.stack([stack_positions(p) for p in np.diff(out.positions, axis=0)], axis=1)
    KY = model.K @ mats.Y
    np.testing.assert_allclose(disp[:, 1:], KY[:, 1:], rtol=0, atol=1e-13)


def test_reinit_linear_oracle_is_exact():
    truth, K0 = linear_truth(steps=200)
    lay = FeatureLayout.parse("position", 2)
    model = estimate_K(assemble_matrices(truth.window(0, 51), lay), None)
    np.testing.assert_allclose(model.K, K0, atol=1e-9)
    res = rollout_with_reinit(model, truth, RolloutConfig("reinit", 0.5, 10.0, 10.0))
    assert len(res.trajectories) == 20
    for traj in res.trajectories:
        start = truth.index_of(traj.start_time)
        np.testing.assert_allclose(traj.positions, truth.positions[start : start + traj.n_steps], atol=1e-6)


# -- reinit protocol ------------------------------------------------------------------


@pytest.fixture(scope="module")
def fitted():
    traj = simulate(SwarmParams.standard(radius=0.25, seed=0), duration=10.0)
    mats = assemble_matrices(traj.window(0, 51), default_layout("standard", 50))
    return estimate_K(mats), traj


def test_reinit_count_and_exact_restarts(fitted):
    model, truth = fitted
    res = rollout_with_reinit(model, truth, RolloutConfig("reinit", 0.5, 10.0, 10.0))
    assert len(res.trajectories) == 20
    assert res.start_times == pytest.approx([0.5 * i for i in range(20)])
    for traj in res.trajectories:
        i = truth.index_of(traj.start_time)
        assert traj.snapshots[0] == truth.snapshots[i]
        assert position_error(truth.window(i, i + 1), traj.window(0, 1)).values[0] == 0.0


def test_single_restart_equals_basic(fitted):
    model, truth = fitted
    reinit = rollout_with_reinit(model, truth, RolloutConfig("reinit", 10.0, 10.0, 10.0))
    basic = run_rollout(model, truth, RolloutConfig(duration=10.0))
    assert len(reinit.trajectories) == 1
    assert reinit.trajectories[0] == basic.trajectories[0]


def test_reinit_config_and_truth_checks(fitted):
    model, truth = fitted
    with pytest.raises(ValueError):
        RolloutConfig("reinit", 1.0, 0.5)
    with pytest.raises(ValueError):
        RolloutConfig("reinit", 0.0, 0.5)
    with pytest.raises(TrajectoryError):
        rollout_with_reinit(model, truth.window(0, 3), RolloutConfig("reinit", 0.5, 1.0))


def test_restart_indices_and_elapsed_average(fitted):
    _, truth = fitted
    assert restart_indices(truth, 2.0) == [0, 20, 40, 60, 80]
    assert restart_indices(truth, 2.0, until=5.0) == [0, 20, 40]
    avg = elapsed_average([np.array([1.0, 2.0, 3.0]), np.array([3.0])])
    np.testing.assert_allclose(avg, [2.0, 2.0, 3.0])


# -- scenario reproductions ------------------------------------------------------------


def train_error(radius, dynamics, seed=0):
    cfg = default_config(params=SwarmParams.standard(radius=radius, seed=seed), dynamics=dynamics, predict_duration=0.0)
    return run_experiment(cfg, write=False).summaries["x"].train_mean


def test_standard_r05_training_error():
    assert train_error(0.5, "standard") < 1e-4


def test_cartesian_r005_training_error_order():
    # reference 2.51e-4, one order of magnitude either way
    assert 2.51e-5 <= train_error(0.05, "fo_cartesian") <= 2.51e-3


def test_polar_r005_training_error_order():
    # reference 9.14e-4, one order of magnitude either way
    assert 9.14e-5 <= train_error(0.05, "fo_polar") <= 9.14e-3


@pytest.mark.xfail(strict=True, reason="observed-feature reconstruction keeps FO Cartesian error near 1e-4; see decisions ledger")
def test_cartesian_r05_training_error_is_large():
    assert train_error(0.5, "fo_cartesian") >= 1e-1
