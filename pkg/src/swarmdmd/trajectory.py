"""Trajectory containers, model parameters and preprocessing transforms.

Headings are kept in (-pi, pi]. Agent identity is the positional index and
is fixed for the lifetime of a trajectory.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Sequence

import numpy as np

TWO_PI = 2.0 * math.pi


class TrajectoryError(ValueError):
    """Raised when a trajectory or a transform request is malformed."""


def wrap_angle(theta):
    """Wrap angles into (-pi, pi].

    Works on scalars and arrays. ``pi`` maps to itself and ``-pi`` maps to ``pi``.
    """
    theta = np.asarray(theta, dtype=float)
    inside = (theta > -math.pi) & (theta <= math.pi)
    # values already in range pass through bit-exactly
    wrapped = np.where(inside, theta, math.pi - np.mod(math.pi - theta, TWO_PI))
    wrapped = np.where(wrapped <= -math.pi, math.pi, wrapped)
    if np.ndim(wrapped) == 0:
        return float(wrapped)
    return wrapped


@dataclass(frozen=True)
class AgentState:
    position: tuple[float, float]
    heading: float


@dataclass(frozen=True, eq=False)
class SwarmSnapshot:
    """State of every agent at one instant.

    ``positions`` has shape (N, 2), ``headings`` shape (N,).
    """

    time: float
    positions: np.ndarray
    headings: np.ndarray

    def __post_init__(self):
        pos = np.array(self.positions, dtype=float, copy=True)
        hdg = np.array(self.headings, dtype=float, copy=True)
        pos.setflags(write=False)
        hdg.setflags(write=False)
        object.__setattr__(self, "positions", pos)
        object.__setattr__(self, "headings", hdg)
        object.__setattr__(self, "time", float(self.time))

    @property
    def agent_count(self) -> int:
        return int(self.headings.shape[0])

    @property
    def agents(self) -> list[AgentState]:
        return [
            AgentState((float(p[0]), float(p[1])), float(h))
            for p, h in zip(self.positions, self.headings)
        ]

    @classmethod
    def from_agents(cls, time: float, agents: Sequence[AgentState]) -> "SwarmSnapshot":
        pos = np.array([a.position for a in agents], dtype=float).reshape(-1, 2)
        hdg = np.array([a.heading for a in agents], dtype=float)
        return cls(time, pos, hdg)

    def __eq__(self, other):
        if not isinstance(other, SwarmSnapshot):
            return NotImplemented
        return (
            self.time == other.time
            and self.positions.shape == other.positions.shape
            and self.headings.shape == other.headings.shape
            and bool(np.array_equal(self.positions, other.positions))
            and bool(np.array_equal(self.headings, other.headings))
        )

    __hash__ = None


@dataclass(frozen=True, eq=False)
class SwarmTrajectory:
    """Uniformly sampled sequence of swarm snapshots.

    Construction does not validate; call :func:`validate_trajectory` (the
    array accessors assume a valid trajectory).
    """

    dt: float
    snapshots: tuple[SwarmSnapshot, ...]

    def __post_init__(self):
        object.__setattr__(self, "dt", float(self.dt))
        object.__setattr__(self, "snapshots", tuple(self.snapshots))

    @classmethod
    def from_arrays(
        cls,
        positions: np.ndarray,
        headings: np.ndarray,
        dt: float,
        t0: float = 0.0,
    ) -> "SwarmTrajectory":
        positions = np.asarray(positions, dtype=float)
        headings = np.asarray(headings, dtype=float)
        if positions.ndim != 3 or positions.shape[2] != 2:
            raise TrajectoryError(f"positions must have shape (T, N, 2), got {positions.shape}")
        if headings.shape != positions.shape[:2]:
            raise TrajectoryError(
                f"headings shape {headings.shape} does not match positions {positions.shape[:2]}"
            )
        snaps = tuple(
            SwarmSnapshot(t0 + k * dt, positions[k], headings[k]) for k in range(positions.shape[0])
        )
        return cls(dt, snaps)

    def __len__(self) -> int:
        return len(self.snapshots)

    @property
    def n_steps(self) -> int:
        return len(self.snapshots)

    @property
    def agent_count(self) -> int:
        return self.snapshots[0].agent_count if self.snapshots else 0

    @cached_property
    def times(self) -> np.ndarray:
        t = np.array([s.time for s in self.snapshots], dtype=float)
        t.setflags(write=False)
        return t

    @cached_property
    def positions(self) -> np.ndarray:
        p = np.stack([s.positions for s in self.snapshots])
        p.setflags(write=False)
        return p

    @cached_property
    def headings(self) -> np.ndarray:
        h = np.stack([s.headings for s in self.snapshots])
        h.setflags(write=False)
        return h

    @property
    def duration(self) -> float:
        return self.n_steps and (self.n_steps - 1) * self.dt

    def window(self, start: int, stop: int | None = None) -> "SwarmTrajectory":
        """Snapshots ``start:stop`` as a new trajectory (times are kept)."""
        return SwarmTrajectory(self.dt, self.snapshots[start:stop])

    def index_of(self, time: float) -> int:
        """Index of the snapshot at ``time`` (nearest grid point)."""
        k = int(round((time - self.snapshots[0].time) / self.dt))
        if k < 0 or k >= self.n_steps or not math.isclose(
            self.snapshots[k].time, time, rel_tol=1e-9, abs_tol=1e-9 * self.dt
        ):
            raise TrajectoryError(f"time {time} is not on the trajectory grid")
        return k

    def shifted(self, t0: float = 0.0) -> "SwarmTrajectory":
        """Same states re-timed to start at ``t0``."""
        return SwarmTrajectory.from_arrays(self.positions, self.headings, self.dt, t0)

    def __eq__(self, other):
        if not isinstance(other, SwarmTrajectory):
            return NotImplemented
        return self.dt == other.dt and self.snapshots == other.snapshots

    __hash__ = None


@dataclass(frozen=True)
class SwarmParams:
    """Ground-truth model parameters.

    ``fov`` and ``max_turn_rate`` are ``None`` for the standard model
    (full circle of view, unbounded turning).
    """

    n_agents: int
    dt: float
    density: float
    radius: float
    noise: float
    speed: float
    fov: float | None = None
    max_turn_rate: float | None = None
    seed: int = 0

    def __post_init__(self):
        problems = []
        if self.n_agents < 1:
            problems.append("n_agents must be >= 1")
        if not self.dt > 0:
            problems.append("dt must be > 0")
        if not self.density > 0:
            problems.append("density must be > 0")
        if self.speed < 0:
            problems.append("speed must be >= 0")
        if self.radius < 0:
            problems.append("radius must be >= 0")
        if self.noise < 0:
            problems.append("noise must be >= 0")
        if self.fov is not None and not 0 <= self.fov <= TWO_PI:
            problems.append("fov must lie in [0, 2pi]")
        if self.max_turn_rate is not None and not (
            0 <= self.max_turn_rate <= math.pi / self.dt * (1 + 1e-12)
        ):
            problems.append("max_turn_rate must lie in [0, pi/dt]")
        if not 0 <= self.seed < 2**64:
            problems.append("seed must be an unsigned 64-bit integer")
        if problems:
            raise TrajectoryError("; ".join(problems))

    @property
    def is_milling(self) -> bool:
        return self.max_turn_rate is not None or (self.fov is not None and self.fov < TWO_PI)

    @classmethod
    def standard(cls, radius: float = 0.05, noise: float = 0.0, seed: int = 0, **kw) -> "SwarmParams":
        """Standard Vicsek flocking column of the ground-truth parameter table."""
        base = dict(n_agents=50, dt=0.1, density=16.0, speed=0.03)
        base.update(kw)
        return cls(radius=radius, noise=noise, seed=seed, **base)

    @classmethod
    def milling(cls, seed: int = 0, **kw) -> "SwarmParams":
        """Restricted field-of-view milling column of the ground-truth parameter table.

        The noise entry ``0.5 omega / dt`` is evaluated literally with the
        milling time step. The tabulated field of view ``pi / 2`` is read as
        the half-angle either side of the heading, so ``fov`` (a total
        angle) defaults to ``pi``; with a quarter-circle view the swarm
        flocks instead of milling.
        """
        dt = kw.pop("dt", 1.0)
        radius = kw.pop("radius", 1.0)
        omega = kw.pop("max_turn_rate", math.pi / 18)
        base = dict(
            n_agents=1000,
            density=2.5,
            fov=math.pi,
            noise=0.5 * omega / dt,
            speed=1.03 * radius * omega,
        )
        base.update(kw)
        return cls(dt=dt, radius=radius, max_turn_rate=omega, seed=seed, **base)


@dataclass
class ValidationReport:
    issues: list[tuple[int | None, str]] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.issues

    def __bool__(self) -> bool:
        return self.ok

    def add(self, index: int | None, message: str) -> None:
        self.issues.append((index, message))

    def __str__(self) -> str:
        if self.ok:
            return "ok"
        lines = []
        for idx, msg in self.issues:
            where = "trajectory" if idx is None else f"snapshot {idx}"
            lines.append(f"{where}: {msg}")
        return "\n".join(lines)

    def raise_if_invalid(self) -> None:
        if not self.ok:
            raise TrajectoryError(str(self))


def validate_trajectory(traj: SwarmTrajectory) -> ValidationReport:
    """Check every trajectory invariant and report all violations."""
    report = ValidationReport()
    if not traj.dt > 0 or not math.isfinite(traj.dt):
        report.add(None, f"dt must be finite and > 0, got {traj.dt}")
    if not traj.snapshots:
        report.add(None, "trajectory has no snapshots")
        return report
    n = traj.snapshots[0].agent_count
    t0 = traj.snapshots[0].time
    for k, snap in enumerate(traj.snapshots):
        if snap.positions.shape != (snap.agent_count, 2):
            report.add(k, f"positions have shape {snap.positions.shape}, expected ({snap.agent_count}, 2)")
        if snap.agent_count != n:
            report.add(k, f"agent count {snap.agent_count} differs from {n} in snapshot 0")
        if not np.all(np.isfinite(snap.positions)):
            report.add(k, "non-finite position")
        h = snap.headings
        if not np.all(np.isfinite(h)):
            report.add(k, "non-finite heading")
        elif np.any(h <= -math.pi) or np.any(h > math.pi):
            report.add(k, "heading outside (-pi, pi]")
        if traj.dt > 0:
            expected = t0 + k * traj.dt
            if not math.isclose(snap.time, expected, rel_tol=1e-9, abs_tol=1e-9 * traj.dt):
                report.add(k, f"time {snap.time!r} breaks uniform dt {traj.dt} (expected {expected!r})")
    return report


def interpolate_trajectory(traj: SwarmTrajectory, target_dt: float) -> SwarmTrajectory:
    """Refine the time grid by an integer factor.

    Positions are interpolated linearly; headings along the shortest arc.
    Original snapshots are copied unchanged at coincident times.
    """
    validate_trajectory(traj).raise_if_invalid()
    if not target_dt > 0:
        raise TrajectoryError("target_dt must be > 0")
    ratio = traj.dt / target_dt
    factor = int(round(ratio))
    if factor < 1 or not math.isclose(ratio, factor, rel_tol=1e-9):
        raise TrajectoryError(
            f"target_dt {target_dt} does not divide dt {traj.dt} evenly (ratio {ratio:.6g})"
        )
    if factor == 1:
        return traj
    t0 = traj.snapshots[0].time
    fracs = np.arange(1, factor) / factor
    out: list[SwarmSnapshot] = []
    for k in range(traj.n_steps - 1):
        a, b = traj.snapshots[k], traj.snapshots[k + 1]
        out.append(a)
        dp = b.positions - a.positions
        dh = wrap_angle(b.headings - a.headings)
        for m, s in enumerate(fracs, start=1):
            out.append(
                SwarmSnapshot(
                    t0 + (k * factor + m) * target_dt,
                    a.positions + s * dp,
                    wrap_angle(a.headings + s * dh),
                )
            )
    out.append(traj.snapshots[-1])
    return SwarmTrajectory(float(target_dt), tuple(out))


def subsample_agents(traj: SwarmTrajectory, target_n: int, seed: int) -> SwarmTrajectory:
    """Keep a seeded uniform random subset of agents, in their original order."""
    validate_trajectory(traj).raise_if_invalid()
    n = traj.agent_count
    if target_n > n or target_n < 1:
        raise TrajectoryError(f"cannot keep {target_n} agents out of {n}")
    idx = choose_agents(n, target_n, seed)
    return SwarmTrajectory(
        traj.dt,
        tuple(SwarmSnapshot(s.time, s.positions[idx], s.headings[idx]) for s in traj.snapshots),
    )


def choose_agents(n: int, target_n: int, seed: int) -> np.ndarray:
    rng = np.random.default_rng(seed)
    return np.sort(rng.choice(n, size=target_n, replace=False))

