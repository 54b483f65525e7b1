"""Error series, swarm order parameters, neighbour-density grids and summaries.

Velocities of both ground-truth and predicted trajectories are taken as
backward differences of positions (the first snapshot holds the first
difference), so the two are scored the same way.
"""

from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass

import numpy as np

from swarmdmd.observables import differentiate
from swarmdmd.trajectory import SwarmTrajectory, wrap_angle

TIME_TOL = 1e-9
TABLE_COLUMNS = ("e_x", "e_theta", "e_P", "e_M", "t_x", "t_theta", "t_P", "t_M")
METRICS = ("x", "theta", "P", "M")


class MisalignedError(ValueError):
    pass


@dataclass(frozen=True)
class MetricSeries:
    """Finite values on strictly increasing times; missing samples are omitted."""

    times: np.ndarray
    values: np.ndarray
    metric: str = ""

    def __post_init__(self):
        t = np.array(self.times, dtype=float).reshape(-1)
        v = np.array(self.values, dtype=float).reshape(-1)
        if t.shape != v.shape:
            raise ValueError("times and values must have the same length")
        if not np.all(np.isfinite(v)):
            raise ValueError("metric values must be finite")
        if t.size > 1 and not np.all(np.diff(t) > 0):
            raise ValueError("times must be strictly increasing")
        t.setflags(write=False)
        v.setflags(write=False)
        object.__setattr__(self, "times", t)
        object.__setattr__(self, "values", v)

    def __len__(self) -> int:
        return self.times.size

    def restrict(self, times) -> "MetricSeries":
        """Samples at the given times (matched within a small tolerance)."""
        times = np.asarray(times, dtype=float)
        if len(self) == 0:
            return self
        idx = np.clip(np.searchsorted(self.times, times - TIME_TOL), 0, len(self) - 1)
        hit = np.abs(self.times[idx] - times) <= TIME_TOL * np.maximum(1.0, np.abs(times))
        idx = idx[hit]
        return MetricSeries(self.times[idx], self.values[idx], self.metric)


def _check_aligned(truth: SwarmTrajectory, test: SwarmTrajectory) -> None:
    if truth.agent_count != test.agent_count:
        raise MisalignedError(f"agent counts differ: {truth.agent_count} vs {test.agent_count}")
    if truth.n_steps != test.n_steps:
        raise MisalignedError(f"snapshot counts differ: {truth.n_steps} vs {test.n_steps}")
    if not np.allclose(truth.times, test.times, rtol=0, atol=TIME_TOL * max(1.0, truth.times[-1])):
        raise MisalignedError("snapshot times differ")


def position_error(truth: SwarmTrajectory, test: SwarmTrajectory) -> MetricSeries:
    """Mean over agents of the Euclidean position error at each time."""
    _check_aligned(truth, test)
    d = test.positions - truth.positions
    return MetricSeries(truth.times, np.mean(np.hypot(d[..., 0], d[..., 1]), axis=1), "x")


def heading_error(truth: SwarmTrajectory, test: SwarmTrajectory) -> MetricSeries:
    """Mean over agents of the wrapped absolute heading difference, in [0, pi]."""
    _check_aligned(truth, test)
    d = np.abs(wrap_angle(test.headings - truth.headings))
    return MetricSeries(truth.times, np.mean(d, axis=1), "theta")


def polarisation(velocities) -> float:
    """``|sum v_i| / sum |v_i|``; NaN when every velocity is zero."""
    v = np.asarray(velocities, dtype=float).reshape(-1, 2)
    den = float(np.sum(np.hypot(v[:, 0], v[:, 1])))
    if den == 0:
        return math.nan
    return float(np.hypot(*v.sum(axis=0))) / den


def angular_momentum(positions, velocities, centered: bool = False) -> float:
    """``|sum p_i x v_i| / sum |p_i||v_i|``.

    Positions are used as given unless ``centered`` is set, in which case
    they are taken relative to the centroid. NaN when the denominator is 0.
    """
    p = np.asarray(positions, dtype=float).reshape(-1, 2)
    v = np.asarray(velocities, dtype=float).reshape(-1, 2)
    if centered:
        p = p - p.mean(axis=0)
    cross = p[:, 0] * v[:, 1] - p[:, 1] * v[:, 0]
    den = float(np.sum(np.hypot(p[:, 0], p[:, 1]) * np.hypot(v[:, 0], v[:, 1])))
    if den == 0:
        return math.nan
    return abs(float(np.sum(cross))) / den


def group_angular_momentum(
    positions, velocities, radius: float, box: float | None = None, min_size: int = 10
) -> float:
    """Size-weighted mean of centroid angular momentum over spatial groups.

    Groups are connected components of the ``radius`` neighbour graph
    (minimum-image when ``box`` is given); groups smaller than ``min_size``
    are ignored. NaN when no group qualifies. A swarm split into several
    mills scores near 1 even when the mills cancel about the global centroid.
    """
    from scipy.sparse import coo_matrix
    from scipy.sparse.csgraph import connected_components
    from scipy.spatial import cKDTree

    p = np.asarray(positions, dtype=float).reshape(-1, 2)
    v = np.asarray(velocities, dtype=float).reshape(-1, 2)
    n = p.shape[0]
    if box is None:
        tree = cKDTree(p)
    else:
        tree = cKDTree(np.mod(p + box / 2.0, box), boxsize=box)
    pairs = tree.query_pairs(radius, output_type="ndarray")
    graph = coo_matrix((np.ones(len(pairs)), (pairs[:, 0], pairs[:, 1])), shape=(n, n))
    _, labels = connected_components(graph, directed=False)
    total = weight = 0.0
    for g in np.unique(labels):
        members = np.flatnonzero(labels == g)
        if members.size < min_size:
            continue
        d = p[members] - p[members[0]]
        if box is not None:
            d = d - box * np.round(d / box)
        value = angular_momentum(d, v[members], centered=True)
        if np.isfinite(value):
            total += members.size * value
            weight += members.size
    return total / weight if weight else math.nan


def trajectory_velocities(traj: SwarmTrajectory) -> np.ndarray:
    """Backward-difference velocities, shape (T, N, 2); zeros for a single snapshot."""
    if traj.n_steps < 2:
        return np.zeros_like(traj.positions)
    return differentiate(traj.positions, traj.dt, "backward")


def _order_series(traj: SwarmTrajectory, fn, metric: str) -> MetricSeries:
    vals = np.array([fn(p, v) for p, v in zip(traj.positions, trajectory_velocities(traj))])
    ok = np.isfinite(vals)
    return MetricSeries(traj.times[ok], vals[ok], metric)


def polarisation_series(traj: SwarmTrajectory) -> MetricSeries:
    return _order_series(traj, lambda p, v: polarisation(v), "P")


def angular_momentum_series(traj: SwarmTrajectory, centered: bool = False) -> MetricSeries:
    return _order_series(traj, lambda p, v: angular_momentum(p, v, centered), "M")


def metric_error_series(truth: MetricSeries, test: MetricSeries) -> MetricSeries:
    """Absolute difference of two series sampled at the same times."""
    if truth.times.shape != test.times.shape or not np.allclose(
        truth.times, test.times, rtol=0, atol=TIME_TOL * max(1.0, float(np.max(np.abs(truth.times), initial=0)))
    ):
        raise MisalignedError("metric series are sampled at different times")
    return MetricSeries(truth.times, np.abs(truth.values - test.values), truth.metric)


def common_error_series(truth: MetricSeries, test: MetricSeries) -> MetricSeries:
    """:func:`metric_error_series` on the times where both series have samples."""
    shared = test.restrict(truth.times).times
    return metric_error_series(truth.restrict(shared), test.restrict(shared))


@dataclass(frozen=True)
class GridSpec:
    """Square grid of ``bins`` x ``bins`` cells centred on the focal agent.

    Cell centres are ``spacing`` apart and each cell is ``width`` wide, so
    ``width < spacing`` leaves gaps between cells.
    """

    bins: int = 21
    spacing: float = 4.0 / 21
    width: float | None = None

    def __post_init__(self):
        if self.bins < 1:
            raise ValueError("bins must be >= 1")
        if not self.spacing > 0:
            raise ValueError("spacing must be > 0")
        w = self.spacing if self.width is None else self.width
        if not 0 < w <= self.spacing:
            raise ValueError("bin width must be in (0, spacing]")
        object.__setattr__(self, "width", float(w))

    @classmethod
    def for_radius(cls, radius: float, bins: int = 21, half_width_factor: float = 2.0, width=None) -> "GridSpec":
        """Contiguous grid whose half-width is ``half_width_factor * radius``."""
        spacing = 2.0 * half_width_factor * radius / bins
        return cls(bins, spacing, width)

    @property
    def half_width(self) -> float:
        """Half-width of the neighbourhood square (outer edge of the outer cells)."""
        return (self.bins - 1) / 2.0 * self.spacing + self.width / 2.0

    @property
    def centers(self) -> np.ndarray:
        return (np.arange(self.bins) - (self.bins - 1) / 2.0) * self.spacing


@dataclass(frozen=True)
class DensityGrid:
    """Occupancy fractions; ``grid[iy, ix]`` with y increasing with the row index."""

    spacing: float
    width: float
    grid: np.ndarray

    def __post_init__(self):
        g = np.array(self.grid, dtype=float)
        if g.ndim != 2 or g.shape[0] != g.shape[1]:
            raise ValueError("density grid must be square")
        if np.any(g < -1e-15) or np.any(g > 1 + 1e-12):
            raise ValueError("density cells must lie in [0, 1]")
        g.setflags(write=False)
        object.__setattr__(self, "grid", g)

    @property
    def centers(self) -> np.ndarray:
        n = self.grid.shape[0]
        return (np.arange(n) - (n - 1) / 2.0) * self.spacing

    def radial_profile(self, edges) -> np.ndarray:
        """Mean cell value in each annulus ``edges[k] <= |c| < edges[k+1]``."""
        c = self.centers
        rad = np.hypot(*np.meshgrid(c, c))
        edges = np.asarray(edges, dtype=float)
        out = np.full(edges.size - 1, np.nan)
        for k in range(out.size):
            m = (rad >= edges[k]) & (rad < edges[k + 1])
            if m.any():
                out[k] = self.grid[m].mean()
        return out


def _bin_index(offset: np.ndarray, spec: GridSpec) -> np.ndarray:
    """Cell index along one axis, or -1 for offsets in a gap or outside the grid."""
    shifted = offset / spec.spacing + (spec.bins - 1) / 2.0
    k = np.rint(shifted).astype(np.intp)
    inside = (k >= 0) & (k < spec.bins)
    inside &= np.abs(shifted - k) * spec.spacing <= spec.width / 2.0
    return np.where(inside, k, -1)


def neighbor_density(
    traj: SwarmTrajectory,
    window: tuple[float, float] | None = None,
    spec: GridSpec | None = None,
    frame: str = "world",
    box: float | None = None,
) -> DensityGrid:
    """Average neighbour occupancy of a grid around each focal agent.

    Per time step and focal agent the neighbours inside the neighbourhood
    square are binned and divided by their count. Grids are averaged over
    focal agents with at least one neighbour, then over the time steps in
    ``window`` (inclusive). ``frame="heading"`` rotates offsets so the
    focal heading points along +x. ``box`` applies minimum-image offsets.
    """
    if frame not in ("world", "heading"):
        raise ValueError(f"unknown frame {frame!r}")
    spec = spec or GridSpec()
    t = traj.times
    if window is None:
        sel = np.arange(traj.n_steps)
    else:
        lo, hi = window
        sel = np.flatnonzero((t >= lo - TIME_TOL) & (t <= hi + TIME_TOL))
    n = traj.agent_count
    nb = spec.bins
    total = np.zeros(nb * nb)
    used = 0
    for k in sel:
        p = traj.positions[k]
        d = p[None, :, :] - p[:, None, :]  # d[i, j] = p_j - p_i
        if box is not None:
            d = d - box * np.round(d / box)
        if frame == "heading":
            th = traj.headings[k]
            c, s = np.cos(th)[:, None], np.sin(th)[:, None]
            d = np.stack([c * d[..., 0] + s * d[..., 1], -s * d[..., 0] + c * d[..., 1]], axis=-1)
        hw = spec.half_width
        inside = (np.abs(d[..., 0]) <= hw) & (np.abs(d[..., 1]) <= hw)
        inside[np.arange(n), np.arange(n)] = False
        counts = inside.sum(axis=1)
        focal = counts > 0
        if not focal.any():
            continue
        ix = _bin_index(d[..., 0], spec)
        iy = _bin_index(d[..., 1], spec)
        hit = inside & (ix >= 0) & (iy >= 0)
        rows, cols = np.nonzero(hit)
        weights = 1.0 / counts[rows]
        step = np.bincount(iy[rows, cols] * nb + ix[rows, cols], weights=weights, minlength=nb * nb)
        total += step / focal.sum()
        used += 1
    if used == 0:
        warnings.warn("no focal agent has a neighbour in the grid; returning an all-zero grid", stacklevel=2)
        return DensityGrid(spec.spacing, spec.width, np.zeros((nb, nb)))
    # clip rounding excess so cells stay exactly within [0, 1]
    return DensityGrid(spec.spacing, spec.width, np.clip(total.reshape(nb, nb) / len(sel), 0.0, 1.0))


@dataclass(frozen=True)
class Summary:
    train_mean: float
    time_below: float  # inf if never exceeded, NaN with no post-training samples

    @property
    def unbounded(self) -> bool:
        return math.isinf(self.time_below)


def summarize(series: MetricSeries, train_end: float, threshold: float = 1e-1) -> Summary:
    """Training-window mean and time from ``train_end`` to the first threshold crossing."""
    tol = TIME_TOL * max(1.0, abs(train_end))
    train = series.values[series.times <= train_end + tol]
    mean = float(np.mean(train)) if train.size else math.nan
    post = series.times > train_end + tol
    if not post.any():
        return Summary(mean, math.nan)
    over = np.flatnonzero(post & (series.values > threshold))
    below = math.inf if over.size == 0 else round(float(series.times[over[0]] - train_end), 9)
    return Summary(mean, below)


def format_time_below(value: float) -> str:
    if math.isnan(value):
        return ""
    return "unbounded" if math.isinf(value) else f"{value:.1f}"


@dataclass(frozen=True)
class SummaryRow:
    """One row of the summary tables, keyed by ``name``; ``failure`` marks a failed run."""

    name: str
    summaries: dict
    failure: str | None = None

    def cells(self) -> dict[str, str]:
        out = {}
        for m in METRICS:
            s = self.summaries.get(m)
            out[f"e_{m}"] = "" if s is None or math.isnan(s.train_mean) else f"{s.train_mean:.2e}"
            out[f"t_{m}"] = "" if s is None else format_time_below(s.time_below)
        return out


def format_table(rows: list[SummaryRow]) -> str:
    """Aligned plain-text table; failed rows carry their annotation."""
    header = ["name", *TABLE_COLUMNS]
    body = []
    for r in rows:
        if r.failure is not None:
            body.append([r.name, f"FAILED: {r.failure}"])
        else:
            c = r.cells()
            body.append([r.name, *(c[k] for k in TABLE_COLUMNS)])
    widths = [len(h) for h in header]
    for line in body:
        if len(line) == len(header):
            widths = [max(w, len(x)) for w, x in zip(widths, line)]
    fmt = lambda line: "  ".join(x.ljust(w) for x, w in zip(line, widths)).rstrip()
    out = [fmt(header)]
    for line in body:
        out.append(fmt(line) if len(line) == len(header) else f"{line[0].ljust(widths[0])}  {line[1]}")
    return "\n".join(out) + "\n"


def write_table_csv(rows: list[SummaryRow], path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["name", *TABLE_COLUMNS, "failure"])
        for r in rows:
            c = r.cells() if r.failure is None else {k: "" for k in TABLE_COLUMNS}
            w.writerow([r.name, *(c[k] for k in TABLE_COLUMNS), r.failure or ""])


def write_series_csv(series: MetricSeries, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t", "value"])
        for t, v in zip(series.times, series.values):
            w.writerow([f"{t:.17g}", f"{v:.17g}"])


def read_series_csv(path, metric: str = "") -> MetricSeries:
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows or rows[0] != ["t", "value"]:
        raise ValueError(f"{path}: expected header 't,value'")
    data = np.array([[float(a), float(b)] for a, b in rows[1:]]).reshape(-1, 2)
    return MetricSeries(data[:, 0], data[:, 1], metric)


def write_grid_csv(grid: DensityGrid, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["spacing", f"{grid.spacing:.17g}"])
        w.writerow(["width", f"{grid.width:.17g}"])
        for row in grid.grid:
            w.writerow([f"{v:.17g}" for v in row])


def read_grid_csv(path) -> DensityGrid:
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if len(rows) < 3 or rows[0][0] != "spacing" or rows[1][0] != "width":
        raise ValueError(f"{path}: expected 'spacing' and 'width' header lines")
    return DensityGrid(float(rows[0][1]), float(rows[1][1]), np.array(rows[2:], dtype=float))


__all__ = [
    "DensityGrid",
    "GridSpec",
    "MetricSeries",
    "MisalignedError",
    "Summary",
    "SummaryRow",
    "angular_momentum",
    "angular_momentum_series",
    "common_error_series",
    "format_table",
    "group_angular_momentum",
    "heading_error",
    "metric_error_series",
    "neighbor_density",
    "polarisation",
    "polarisation_series",
    "position_error",
    "summarize",
    "trajectory_velocities",
]
