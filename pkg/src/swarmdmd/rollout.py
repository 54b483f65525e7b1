"""Forward propagation of a learned interaction model.

The model input y_k is an observation. Where an observed trajectory covers
step k (the training window during reconstruction) its features are used;
elsewhere y_k is rebuilt from the predicted states, with velocity taken as
the backward difference of predicted positions and heading as its
direction. The state and the kinematic drift of the first-order
formulations always come from the predicted states. Rollouts are seeded
with two consecutive ground-truth snapshots.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from swarmdmd.dmd import InteractionModel
from swarmdmd.observables import differentiate, feature_matrix, heading_from_velocity
from swarmdmd.trajectory import SwarmSnapshot, SwarmTrajectory, TrajectoryError


@dataclass(frozen=True, eq=False)
class RolloutTrajectory(SwarmTrajectory):
    """Predicted trajectory; ``diverged_at`` is the time of the first non-finite state."""

    diverged_at: float | None = None
    start_time: float = field(default=0.0)


@dataclass(frozen=True)
class RolloutConfig:
    mode: str = "basic"
    reinit_period: float = 0.5
    reinit_horizon: float = 10.0
    duration: float = 10.0

    def __post_init__(self):
        if self.mode not in ("basic", "reinit"):
            raise ValueError(f"unknown rollout mode {self.mode!r}")
        if self.mode == "reinit":
            if not self.reinit_period > 0:
                raise ValueError("reinit_period must be > 0")
            if self.reinit_horizon < self.reinit_period:
                raise ValueError("reinit_horizon must be >= reinit_period")
        if self.duration < 0:
            raise ValueError("duration must be >= 0")


@dataclass(frozen=True)
class RolloutResult:
    trajectories: tuple[RolloutTrajectory, ...]
    dynamics: str
    mode: str = "basic"

    @property
    def start_times(self) -> list[float]:
        return [t.start_time for t in self.trajectories]


def _steps(duration: float, dt: float) -> int:
    n = round(duration / dt)
    if n < 0 or not math.isclose(n * dt, duration, rel_tol=1e-9, abs_tol=1e-12):
        raise TrajectoryError(f"duration {duration} is not a multiple of dt {dt}")
    return n


def propagate(
    model: InteractionModel,
    previous: np.ndarray,
    current: np.ndarray,
    steps: int,
    features: np.ndarray | None = None,
) -> tuple[np.ndarray, int | None]:
    """Iterate the model ``steps`` times from two seed position sets.

    Returns predicted positions of shape (steps, N, 2) and the index of the
    first non-finite step (``None`` when the rollout stayed finite). Columns
    of ``features`` are used as y_0, y_1, ... while they last; later steps
    rebuild y_k from the predicted states.
    """
    dt = model.dt
    dyn = model.dynamics
    n_given = 0 if features is None else features.shape[1]
    prev = np.array(previous, dtype=float)
    cur = np.array(current, dtype=float)
    out = np.empty((steps,) + cur.shape)
    for k in range(steps):
        vel = (cur - prev) / dt
        if k < n_given:
            y = features[:, k]
        else:
            y = feature_matrix(cur, vel, model.layout)[:, 0]
        with np.errstate(over="ignore", invalid="ignore"):
            dx = model.K @ y
        step = np.column_stack([dx[: model.n_agents], dx[model.n_agents :]])
        if dyn == "fo_cartesian":
            step = step + vel * dt
        elif dyn == "fo_polar":
            speed = np.hypot(vel[:, 0], vel[:, 1])
            theta = heading_from_velocity(vel)
            step = step + np.column_stack([speed * np.cos(theta), speed * np.sin(theta)]) * dt
        nxt = cur + step
        if not np.all(np.isfinite(nxt)):
            return out[:k], k
        out[k] = nxt
        prev, cur = cur, nxt
    return out, None


def observed_features(
    model: InteractionModel,
    observed: SwarmTrajectory,
    start_time: float,
    velocity_scheme: str = "forward",
) -> np.ndarray:
    """Observed y columns for the snapshots at ``start_time`` onwards.

    Only snapshots that also have a successor in ``observed`` contribute,
    matching the columns of Y built from the same window.
    """
    if observed.n_steps < 2:
        return np.empty((model.layout.total_width, 0))
    first = observed.index_of(start_time) if start_time >= observed.snapshots[0].time else None
    if first is None or first >= observed.n_steps - 1:
        return np.empty((model.layout.total_width, 0))
    vel = differentiate(observed.positions, observed.dt, velocity_scheme)
    return feature_matrix(observed.positions[first:-1], vel[first:-1], model.layout)


def rollout(
    model: InteractionModel,
    initial_window: SwarmTrajectory,
    duration: float,
    exogenous: np.ndarray | None = None,
    observed: SwarmTrajectory | None = None,
    velocity_scheme: str = "forward",
) -> RolloutTrajectory:
    """Roll any dynamics formulation forward from the last two window snapshots.

    The result starts with the last window snapshot (copied exactly) and
    covers ``duration`` seconds after it. ``exogenous`` supplies y columns
    directly; otherwise ``observed`` (if given) supplies them for the steps
    it covers.
    """
    if initial_window.n_steps < 2:
        raise TrajectoryError("initial window must supply at least two snapshots")
    if initial_window.agent_count != model.n_agents:
        raise ValueError(
            f"model is for {model.n_agents} agents, window has {initial_window.agent_count}"
        )
    if not math.isclose(initial_window.dt, model.dt, rel_tol=1e-9):
        raise ValueError(f"window dt {initial_window.dt} differs from model dt {model.dt}")
    dt = model.dt
    steps = _steps(duration, dt)
    a, b = initial_window.snapshots[-2], initial_window.snapshots[-1]
    feats = exogenous
    if feats is None and observed is not None:
        feats = observed_features(model, observed, b.time, velocity_scheme)
    pred, bad = propagate(model, a.positions, b.positions, steps, feats)
    snaps = [b]
    prev = b.positions
    for k, p in enumerate(pred, start=1):
        heading = heading_from_velocity(p - prev)
        snaps.append(SwarmSnapshot(b.time + k * dt, p, np.atleast_1d(heading)))
        prev = p
    diverged = None if bad is None else b.time + (bad + 1) * dt
    return RolloutTrajectory(dt, tuple(snaps), diverged_at=diverged, start_time=b.time)


def _check_dynamics(model: InteractionModel, expected: str) -> None:
    if model.dynamics != expected:
        raise ValueError(f"model dynamics is {model.dynamics!r}, expected {expected!r}")


def rollout_standard(model, initial_window, duration, **kw) -> RolloutTrajectory:
    """x_{k+1} = x_k + K y_k."""
    _check_dynamics(model, "standard")
    return rollout(model, initial_window, duration, **kw)


def rollout_fo_cartesian(model, initial_window, duration, **kw) -> RolloutTrajectory:
    """x_{k+1} = x_k + v_k dt + K y_k."""
    _check_dynamics(model, "fo_cartesian")
    return rollout(model, initial_window, duration, **kw)


def rollout_fo_polar(model, initial_window, duration, **kw) -> RolloutTrajectory:
    """x_{k+1} = x_k + speed_k (cos theta_k, sin theta_k) dt + K y_k."""
    _check_dynamics(model, "fo_polar")
    return rollout(model, initial_window, duration, **kw)


def rollout_from(
    model: InteractionModel,
    truth: SwarmTrajectory,
    start: int,
    duration: float,
    observed: SwarmTrajectory | None = None,
    velocity_scheme: str = "forward",
) -> RolloutTrajectory:
    """Rollout whose first snapshot is ground-truth snapshot ``start``.

    From ``start = 0`` the second ground-truth snapshot also seeds the
    velocity, so it is copied into the result as well.
    """
    kw = dict(observed=observed, velocity_scheme=velocity_scheme)
    t0 = truth.snapshots[start].time
    if start >= 1:
        return rollout(model, truth.window(start - 1, start + 1), duration, **kw)
    if truth.n_steps < 2:
        raise TrajectoryError("ground truth must supply at least two snapshots")
    if duration < truth.dt * (1 - 1e-9):
        return RolloutTrajectory(truth.dt, truth.snapshots[:1], start_time=t0)
    tail = rollout(model, truth.window(0, 2), duration - truth.dt, **kw)
    return RolloutTrajectory(
        truth.dt,
        truth.snapshots[:1] + tail.snapshots,
        diverged_at=tail.diverged_at,
        start_time=t0,
    )


def restart_indices(ground_truth: SwarmTrajectory, period: float, until: float | None = None) -> list[int]:
    """Snapshot indices at 0, g, 2g, ... strictly before ``until`` (default: the last snapshot)."""
    every = _steps(period, ground_truth.dt)
    if every < 1:
        raise ValueError("reinit period must be at least one time step")
    stop = ground_truth.n_steps - 1
    if until is not None:
        stop = min(stop, _steps(until, ground_truth.dt))
    return list(range(0, stop, every))


def rollout_with_reinit(model: InteractionModel, ground_truth: SwarmTrajectory, config: RolloutConfig) -> RolloutResult:
    """Restart from ground truth every ``g`` seconds and roll ``h`` seconds each time.

    Restarts cover the first ``config.duration`` seconds of the ground
    truth. Restarts are pure predictions: features are always rebuilt from
    the predicted states.
    """
    if ground_truth.duration < config.reinit_period * (1 - 1e-9):
        raise TrajectoryError("ground truth is shorter than one restart window")
    out = [
        rollout_from(model, ground_truth, idx, config.reinit_horizon)
        for idx in restart_indices(ground_truth, config.reinit_period, config.duration or None)
    ]
    return RolloutResult(tuple(out), model.dynamics, "reinit")


def run_rollout(
    model: InteractionModel,
    ground_truth: SwarmTrajectory,
    config: RolloutConfig,
    observed: SwarmTrajectory | None = None,
    velocity_scheme: str = "forward",
) -> RolloutResult:
    """Basic mode rolls once from the first truth snapshot; reinit restarts periodically.

    In basic mode ``observed`` (normally the training window) supplies the
    model inputs for the steps it covers.
    """
    if config.mode == "reinit":
        return rollout_with_reinit(model, ground_truth, config)
    traj = rollout_from(model, ground_truth, 0, config.duration, observed, velocity_scheme)
    return RolloutResult((traj,), model.dynamics, "basic")


def elapsed_average(values: list[np.ndarray]) -> np.ndarray:
    """Mean over rollouts aligned by elapsed time since each restart.

    Shorter series contribute only to the elapsed times they cover.
    """
    if not values:
        return np.empty(0)
    length = max(len(v) for v in values)
    total = np.zeros(length)
    count = np.zeros(length)
    for v in values:
        v = np.asarray(v, dtype=float)
        total[: len(v)] += v
        count[: len(v)] += 1
    return total / np.maximum(count, 1)
