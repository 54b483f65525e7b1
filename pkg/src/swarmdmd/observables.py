"""Derived quantities and snapshot-matrix assembly.

Layout convention: a block for one feature kind is ordered component-major,
agent-minor. Row ``c * N + i`` of a block holds component ``c`` of agent
``i``. For pairwise kinds the components are (axis, neighbour j), so
``rel_distance`` row ``j * N + i`` is the distance from agent i to agent j.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

from swarmdmd.trajectory import SwarmTrajectory, TrajectoryError, wrap_angle


class FeatureKind(str, enum.Enum):
    POSITION = "position"
    VELOCITY = "velocity"
    HEADING = "heading"
    REL_POSITION = "rel_position"
    REL_DISTANCE = "rel_distance"
    REL_HEADING = "rel_heading"
    REL_VELOCITY = "rel_velocity"
    REL_SPEED = "rel_speed"
    # sign-preserving variants of the componentwise relative kinds
    REL_POSITION_SIGNED = "rel_position_signed"
    REL_VELOCITY_SIGNED = "rel_velocity_signed"

    def width(self, n_agents: int) -> int:
        """Number of entries per agent."""
        return {
            FeatureKind.POSITION: 2,
            FeatureKind.VELOCITY: 2,
            FeatureKind.HEADING: 1,
            FeatureKind.REL_POSITION: 2 * n_agents,
            FeatureKind.REL_DISTANCE: n_agents,
            FeatureKind.REL_HEADING: n_agents,
            FeatureKind.REL_VELOCITY: 2 * n_agents,
            FeatureKind.REL_SPEED: n_agents,
            FeatureKind.REL_POSITION_SIGNED: 2 * n_agents,
            FeatureKind.REL_VELOCITY_SIGNED: 2 * n_agents,
        }[self]

    @property
    def pairwise(self) -> bool:
        return self.value.startswith("rel_")


@dataclass(frozen=True)
class FeatureLayout:
    kinds: tuple[FeatureKind, ...]
    n_agents: int
    block_index: dict = field(init=False, compare=False, repr=False)

    def __post_init__(self):
        kinds = tuple(FeatureKind(k) for k in self.kinds)
        if not kinds:
            raise ValueError("layout needs at least one feature kind")
        if len(set(kinds)) != len(kinds):
            raise ValueError("duplicate feature kind in layout")
        if self.n_agents < 1:
            raise ValueError("n_agents must be >= 1")
        object.__setattr__(self, "kinds", kinds)
        blocks = {}
        start = 0
        for k in kinds:
            stop = start + self.n_agents * k.width(self.n_agents)
            blocks[k] = range(start, stop)
            start = stop
        object.__setattr__(self, "block_index", blocks)

    @classmethod
    def parse(cls, names, n_agents: int) -> "FeatureLayout":
        if isinstance(names, str):
            names = [s for s in names.replace(",", " ").split() if s]
        try:
            return cls(tuple(FeatureKind(n) for n in names), n_agents)
        except ValueError as exc:
            raise ValueError(f"bad layout {list(names)!r}: {exc}") from None

    @property
    def names(self) -> list[str]:
        return [k.value for k in self.kinds]

    @property
    def per_agent_width(self) -> int:
        return sum(k.width(self.n_agents) for k in self.kinds)

    @property
    def total_width(self) -> int:
        return self.n_agents * self.per_agent_width

    def row_of(self, kind, component: int, agent: int) -> int:
        """Row in y of ``component`` of ``kind`` for ``agent``."""
        kind = FeatureKind(kind)
        return self.block_index[kind].start + component * self.n_agents + agent

    def with_agents(self, n_agents: int) -> "FeatureLayout":
        return FeatureLayout(self.kinds, n_agents)


DEFAULT_LAYOUTS = {
    "standard": ("position", "velocity", "heading", "rel_distance"),
    "fo_cartesian": ("rel_position", "rel_velocity"),
    "fo_polar": ("rel_distance", "rel_speed", "rel_heading"),
}


def default_layout(dynamics: str, n_agents: int) -> FeatureLayout:
    return FeatureLayout.parse(DEFAULT_LAYOUTS[dynamics], n_agents)


@dataclass(frozen=True)
class SnapshotMatrices:
    X: np.ndarray
    Xp: np.ndarray
    S: np.ndarray
    Y: np.ndarray
    layout: FeatureLayout
    dt: float

    @property
    def n_columns(self) -> int:
        return self.X.shape[1]


def stack_positions(positions: np.ndarray) -> np.ndarray:
    """(T, N, 2) positions -> (2N, T) state matrix, x-components first."""
    positions = np.asarray(positions, dtype=float)
    return np.concatenate([positions[..., 0], positions[..., 1]], axis=-1).T


def unstack_positions(X: np.ndarray) -> np.ndarray:
    """Inverse of :func:`stack_positions`."""
    X = np.asarray(X, dtype=float)
    n = X.shape[0] // 2
    return np.stack([X[:n].T, X[n:].T], axis=-1)


def velocity_from_positions(traj: SwarmTrajectory, scheme: str = "forward") -> np.ndarray:
    """Finite-difference velocities, shape (T, N, 2).

    ``forward``: v_k = (p_{k+1} - p_k) / dt with the last value held.
    ``backward``: v_k = (p_k - p_{k-1}) / dt with the first value held.
    """
    if traj.n_steps < 2:
        raise TrajectoryError("need at least two snapshots to estimate velocity")
    return differentiate(traj.positions, traj.dt, scheme)


def differentiate(positions: np.ndarray, dt: float, scheme: str = "forward") -> np.ndarray:
    d = np.diff(positions, axis=0) / dt
    if scheme == "forward":
        return np.concatenate([d, d[-1:]], axis=0)
    if scheme == "backward":
        return np.concatenate([d[:1], d], axis=0)
    raise ValueError(f"unknown difference scheme {scheme!r}")


def heading_from_velocity(v) -> np.ndarray | float:
    """atan2(v_y, v_x); the zero vector maps to 0."""
    v = np.asarray(v, dtype=float)
    out = np.arctan2(v[..., 1], v[..., 0])
    # arctan2(+-0, -0) is +-pi; pin every zero vector to 0
    out = np.where((v[..., 0] == 0) & (v[..., 1] == 0), 0.0, out)
    return float(out) if out.ndim == 0 else out


def pairwise_features(positions: np.ndarray, velocities: np.ndarray, kind) -> np.ndarray:
    """Per-agent pairwise block for one snapshot.

    Returns shape (N, c, N): entry ``[i, c, j]`` is component ``c`` of the
    feature of agent i relative to agent j. Self pairs are zero.
    """
    kind = FeatureKind(kind)
    p = np.asarray(positions, dtype=float)
    v = np.asarray(velocities, dtype=float)
    return _pairwise(p[None], v[None], kind)[0]


def _pairwise(p: np.ndarray, v: np.ndarray, kind: FeatureKind) -> np.ndarray:
    """Batched over time: p, v have shape (K, N, 2); result (K, N, c, N)."""
    if kind in (FeatureKind.REL_POSITION, FeatureKind.REL_POSITION_SIGNED):
        d = p[:, :, None, :] - p[:, None, :, :]
        d = np.moveaxis(d, -1, 2)
        return np.abs(d) if kind is FeatureKind.REL_POSITION else d
    if kind is FeatureKind.REL_DISTANCE:
        d = p[:, :, None, :] - p[:, None, :, :]
        return np.sqrt(np.sum(d * d, axis=-1))[:, :, None, :]
    if kind is FeatureKind.REL_HEADING:
        th = heading_from_velocity(v)
        return np.abs(wrap_angle(th[:, :, None] - th[:, None, :]))[:, :, None, :]
    if kind in (FeatureKind.REL_VELOCITY, FeatureKind.REL_VELOCITY_SIGNED):
        d = v[:, :, None, :] - v[:, None, :, :]
        d = np.moveaxis(d, -1, 2)
        return np.abs(d) if kind is FeatureKind.REL_VELOCITY else d
    if kind is FeatureKind.REL_SPEED:
        s = np.sqrt(np.sum(v * v, axis=-1))
        return np.abs(s[:, :, None] - s[:, None, :])[:, :, None, :]
    raise ValueError(f"{kind.value} is not a pairwise feature")


def _per_agent(p: np.ndarray, v: np.ndarray, kind: FeatureKind) -> np.ndarray:
    """(K, N, 2) inputs -> (K, N, c) per-agent components."""
    if kind is FeatureKind.POSITION:
        return p
    if kind is FeatureKind.VELOCITY:
        return v
    if kind is FeatureKind.HEADING:
        return heading_from_velocity(v)[..., None]
    pw = _pairwise(p, v, kind)
    k, n, c, _ = pw.shape
    return pw.reshape(k, n, c * n)


def feature_matrix(positions: np.ndarray, velocities: np.ndarray, layout: FeatureLayout) -> np.ndarray:
    """Augmented feature columns, shape (Nm, K), for (K, N, 2) inputs."""
    p = np.asarray(positions, dtype=float)
    v = np.asarray(velocities, dtype=float)
    if p.ndim == 2:
        p, v = p[None], v[None]
    if p.shape[1] != layout.n_agents:
        raise ValueError(f"layout is for {layout.n_agents} agents, data has {p.shape[1]}")
    blocks = []
    for kind in layout.kinds:
        comp = _per_agent(p, v, kind)  # (K, N, c)
        # component-major, agent-minor rows
        blocks.append(np.swapaxes(comp, 1, 2).reshape(comp.shape[0], -1).T)
    return np.concatenate(blocks, axis=0)


def assemble_matrices(
    traj: SwarmTrajectory,
    layout: FeatureLayout,
    velocity_scheme: str = "forward",
) -> SnapshotMatrices:
    """Build X, X', S = X' - X and Y from a trajectory window.

    Column k of X and of Y both come from snapshot k, for k = 0..T-2.
    """
    if traj.n_steps < 3:
        raise TrajectoryError("need at least three snapshots to assemble matrices")
    if layout.n_agents != traj.agent_count:
        raise ValueError(
            f"layout is for {layout.n_agents} agents but trajectory has {traj.agent_count}"
        )
    pos = traj.positions
    vel = velocity_from_positions(traj, velocity_scheme)
    full = stack_positions(pos)
    X = full[:, :-1]
    Xp = full[:, 1:]
    Y = feature_matrix(pos[:-1], vel[:-1], layout)
    return SnapshotMatrices(X, Xp, Xp - X, Y, layout, traj.dt)
