"""Vicsek flocking and restricted field-of-view milling simulators.

Boundaries are open by default. A periodic box is available (the milling
preset uses one); interactions then use minimum-image displacements while
the recorded positions stay unwrapped so trajectories remain continuous.
Each step draws exactly one uniform noise value per agent, in agent-index
order, from a single generator seeded once per run.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from swarmdmd.trajectory import (
    TWO_PI,
    SwarmParams,
    SwarmSnapshot,
    SwarmTrajectory,
    TrajectoryError,
    wrap_angle,
)

STANDARD = "standard"
MILLING = "milling"


@dataclass(frozen=True)
class SimDomain:
    """Initialisation square of width ``init_width`` centred on the origin.

    With ``boundary="open"`` the ``sim_width`` is for reporting only; with
    ``boundary="periodic"`` it is the width of the periodic box.
    """

    init_width: float
    sim_width: float
    boundary: str = "open"

    def __post_init__(self):
        if not self.init_width > 0:
            raise TrajectoryError("init_width must be > 0")
        if self.sim_width < self.init_width:
            raise TrajectoryError("sim_width must be >= init_width")
        if self.boundary not in ("open", "periodic"):
            raise TrajectoryError(f"unknown boundary {self.boundary!r}")

    @property
    def box(self) -> float | None:
        return self.sim_width if self.boundary == "periodic" else None

    @classmethod
    def for_params(
        cls,
        params: SwarmParams,
        sim_width: float | None = None,
        boundary: str = "open",
    ) -> "SimDomain":
        """Init width from the density, ``l = sqrt(N / rho)``.

        The reporting width defaults to ``2 l``; a periodic box defaults to
        ``l`` so that the density holds over the whole box.
        """
        l = math.sqrt(params.n_agents / params.density)
        if sim_width is None:
            sim_width = l if boundary == "periodic" else 2.0 * l
        return cls(l, sim_width, boundary)


def wrap_positions(positions: np.ndarray, box: float) -> np.ndarray:
    """Map positions into the periodic box ``[-box/2, box/2)``."""
    return np.mod(np.asarray(positions, dtype=float) + box / 2.0, box) - box / 2.0


def rewrap_window(traj: SwarmTrajectory, box: float) -> SwarmTrajectory:
    """Shift each agent by a whole number of boxes so it starts inside the box.

    The per-agent shift is constant over the window, so displacements are
    unchanged.
    """
    first = traj.snapshots[0].positions
    offset = wrap_positions(first, box) - first
    offset = np.round(offset / box) * box
    return SwarmTrajectory(
        traj.dt,
        tuple(SwarmSnapshot(s.time, s.positions + offset, s.headings) for s in traj.snapshots),
    )


def init_swarm(params: SwarmParams, domain: SimDomain, rng: np.random.Generator | None = None) -> SwarmSnapshot:
    """Uniform positions on the centred init square, uniform headings on (-pi, pi]."""
    if rng is None:
        rng = np.random.default_rng(params.seed)
    half = domain.init_width / 2.0
    pos = rng.uniform(-half, half, size=(params.n_agents, 2))
    hdg = wrap_angle(rng.uniform(-math.pi, math.pi, size=params.n_agents))
    return SwarmSnapshot(0.0, pos, np.atleast_1d(hdg))


def _neighbor_pairs(
    positions: np.ndarray, radius: float, box: float | None = None
) -> tuple[np.ndarray, np.ndarray]:
    """Directed pairs (i, j), i != j, with ``|p_j - p_i| <= radius``."""
    empty = np.empty(0, dtype=np.intp)
    if radius <= 0 or positions.shape[0] < 2:
        return empty, empty
    if box is None:
        tree = cKDTree(positions)
    else:
        tree = cKDTree(np.mod(positions + box / 2.0, box), boxsize=box)
    pairs = tree.query_pairs(radius, output_type="ndarray")
    if pairs.size == 0:
        return empty, empty
    src = np.concatenate([pairs[:, 0], pairs[:, 1]])
    dst = np.concatenate([pairs[:, 1], pairs[:, 0]])
    return src, dst


def _displacement(positions: np.ndarray, src, dst, box: float | None) -> np.ndarray:
    d = positions[dst] - positions[src]
    if box is not None:
        d = d - box * np.round(d / box)
    return d


def neighbor_mean_headings(
    positions: np.ndarray,
    headings: np.ndarray,
    radius: float,
    fov: float = TWO_PI,
    box: float | None = None,
) -> np.ndarray:
    """Circular-mean heading of each agent's neighbourhood (self included).

    Neighbour j of agent i must lie within ``radius`` and, when ``fov < 2 pi``,
    at a bearing within ``fov / 2`` of agent i's heading. The mean is taken
    relative to agent i's own heading, which is algebraically the same as
    ``atan2(sum sin, sum cos)`` but keeps aligned neighbourhoods exact.
    """
    positions = np.asarray(positions, dtype=float)
    headings = np.asarray(headings, dtype=float)
    n = headings.shape[0]
    src, dst = _neighbor_pairs(positions, radius, box)
    if src.size and fov < TWO_PI:
        d = _displacement(positions, src, dst, box)
        bearing = np.arctan2(d[:, 1], d[:, 0])
        keep = np.abs(wrap_angle(bearing - headings[src])) <= fov / 2.0
        src, dst = src[keep], dst[keep]
    rel = headings[dst] - headings[src]
    # self contributes sin 0 = 0 and cos 0 = 1
    s = np.bincount(src, weights=np.sin(rel), minlength=n)
    c = 1.0 + np.bincount(src, weights=np.cos(rel), minlength=n)
    return wrap_angle(headings + np.arctan2(s, c))


def mean_neighbor_heading(
    snapshot: SwarmSnapshot, i: int, r: float, fov: float = TWO_PI, box: float | None = None
) -> float:
    """Circular-mean heading around agent ``i``; see :func:`neighbor_mean_headings`."""
    if r < 0:
        raise ValueError("radius must be >= 0")
    p, h = snapshot.positions, snapshot.headings
    d = p - p[i]
    if box is not None:
        d = d - box * np.round(d / box)
    dist = np.hypot(d[:, 0], d[:, 1])
    mask = dist <= r
    if fov < TWO_PI:
        bearing = np.arctan2(d[:, 1], d[:, 0])
        mask &= np.abs(wrap_angle(bearing - h[i])) <= fov / 2.0
    mask[i] = False
    rel = h[mask] - h[i]
    s = float(np.sum(np.sin(rel)))
    c = 1.0 + float(np.sum(np.cos(rel)))
    return wrap_angle(h[i] + math.atan2(s, c))


def _advance(snapshot: SwarmSnapshot, headings: np.ndarray, params: SwarmParams) -> SwarmSnapshot:
    step = params.speed * params.dt
    vel = np.column_stack([np.cos(headings), np.sin(headings)])
    return SwarmSnapshot(snapshot.time + params.dt, snapshot.positions + step * vel, headings)


def _noise(params: SwarmParams, n: int, rng: np.random.Generator) -> np.ndarray:
    half = params.noise / 2.0
    return rng.uniform(-half, half, size=n)


def step_standard(
    snapshot: SwarmSnapshot, params: SwarmParams, rng: np.random.Generator, box: float | None = None
) -> SwarmSnapshot:
    """Align with the full-circle neighbourhood mean, add noise, move at constant speed."""
    target = neighbor_mean_headings(snapshot.positions, snapshot.headings, params.radius, box=box)
    new = wrap_angle(target + _noise(params, snapshot.agent_count, rng))
    return _advance(snapshot, np.atleast_1d(new), params)


def step_milling(
    snapshot: SwarmSnapshot, params: SwarmParams, rng: np.random.Generator, box: float | None = None
) -> SwarmSnapshot:
    """Turn-rate limited alignment with a restricted field of view.

    Agents adopt the field-of-view mean when it is within ``omega dt`` of their
    heading and otherwise turn by exactly ``omega dt`` towards it; noise is
    added after the saturation.
    """
    fov = TWO_PI if params.fov is None else params.fov
    theta = snapshot.headings
    target = neighbor_mean_headings(snapshot.positions, theta, params.radius, fov, box)
    noise = _noise(params, snapshot.agent_count, rng)
    if params.max_turn_rate is None:
        return _advance(snapshot, np.atleast_1d(wrap_angle(target + noise)), params)
    max_turn = params.max_turn_rate * params.dt
    delta = wrap_angle(target - theta)
    turned = np.where(
        np.abs(delta) < max_turn,
        target,
        np.where(delta >= max_turn, theta + max_turn, theta - max_turn),
    )
    return _advance(snapshot, np.atleast_1d(wrap_angle(turned + noise)), params)


def simulate(
    params: SwarmParams,
    domain: SimDomain | None = None,
    model: str = STANDARD,
    duration: float = 0.0,
    initial: SwarmSnapshot | None = None,
) -> SwarmTrajectory:
    """Run ``duration / dt`` steps from a seeded uniform initial swarm."""
    steps = round(duration / params.dt)
    if steps < 0 or not math.isclose(steps * params.dt, duration, rel_tol=1e-9, abs_tol=1e-12):
        raise TrajectoryError(f"duration {duration} is not a multiple of dt {params.dt}")
    if model == STANDARD:
        step = step_standard
    elif model == MILLING:
        step = step_milling
    else:
        raise ValueError(f"unknown model {model!r}")
    if domain is None:
        domain = SimDomain.for_params(params)
    rng = np.random.default_rng(params.seed)
    snap = init_swarm(params, domain, rng) if initial is None else initial
    snaps = [snap]
    for k in range(1, steps + 1):
        nxt = step(snap, params, rng, domain.box)
        # keep times on the exact k*dt grid instead of accumulating sums
        snap = SwarmSnapshot(snaps[0].time + k * params.dt, nxt.positions, nxt.headings)
        snaps.append(snap)
    return SwarmTrajectory(params.dt, tuple(snaps))
