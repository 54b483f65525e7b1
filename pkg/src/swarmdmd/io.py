"""Trajectory CSV and interaction-model text files.

Trajectory files have the header ``t,agent,x,y,theta`` and one row per
(time, agent), written at 17 significant digits so a save/load round trip
is lossless. The loader accepts rows in any order.
"""

from __future__ import annotations

import csv
import math
from pathlib import Path

import numpy as np

from swarmdmd.dmd import InteractionModel
from swarmdmd.observables import FeatureLayout
from swarmdmd.trajectory import SwarmSnapshot, SwarmTrajectory, TrajectoryError

HEADER = ["t", "agent", "x", "y", "theta"]
MODEL_MAGIC = "swarmdmd-k"
MODEL_VERSION = "v1"


class FormatError(TrajectoryError):
    pass


def _g(x: float) -> str:
    return f"{x:.17g}"


def save_trajectory(traj: SwarmTrajectory, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(HEADER)
        for snap in traj.snapshots:
            t = _g(snap.time)
            for i, ((x, y), th) in enumerate(zip(snap.positions, snap.headings)):
                w.writerow([t, i, _g(x), _g(y), _g(th)])


def load_trajectory(path, dt: float | None = None) -> SwarmTrajectory:
    """Read a trajectory CSV; ``dt`` defaults to the spacing of the first two times."""
    rows = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != HEADER:
            raise FormatError(f"{path}:1: expected header {','.join(HEADER)}")
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(HEADER):
                raise FormatError(f"{path}:{lineno}: expected {len(HEADER)} fields, got {len(row)}")
            try:
                t, x, y, th = (float(row[k]) for k in (0, 2, 3, 4))
                agent = int(row[1])
            except ValueError:
                raise FormatError(f"{path}:{lineno}: malformed row {row!r}") from None
            if agent < 0 or not all(math.isfinite(v) for v in (t, x, y, th)):
                raise FormatError(f"{path}:{lineno}: malformed row {row!r}")
            rows.append((t, agent, x, y, th))
    if not rows:
        raise FormatError(f"{path}: no data rows")
    rows.sort(key=lambda r: (r[0], r[1]))
    times = sorted({r[0] for r in rows})
    agents = sorted({r[1] for r in rows})
    n = len(agents)
    if agents != list(range(n)):
        missing = sorted(set(range(max(agents) + 1)) - set(agents))
        raise FormatError(f"{path}: agent indices must be 0..N-1; missing agent {missing[0]} at every time")
    by_time: dict[float, dict[int, tuple]] = {t: {} for t in times}
    for t, a, x, y, th in rows:
        if a in by_time[t]:
            raise FormatError(f"{path}: duplicate row for (t={t!r}, agent={a})")
        by_time[t][a] = (x, y, th)
    snaps = []
    for t in times:
        got = by_time[t]
        if len(got) != n:
            missing = next(a for a in range(n) if a not in got)
            raise FormatError(f"{path}: missing row for (t={t!r}, agent={missing})")
        arr = np.array([got[a] for a in range(n)])
        snaps.append(SwarmSnapshot(t, arr[:, :2], arr[:, 2]))
    if dt is None:
        dt = times[1] - times[0] if len(times) > 1 else 1.0
    return SwarmTrajectory(dt, tuple(snaps))


def save_model(model: InteractionModel, path) -> None:
    """Header line, then one line per row of K, then the layout kinds."""
    rows, cols = model.K.shape
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"{MODEL_MAGIC} {MODEL_VERSION} {rows} {cols} {model.rank} {model.dynamics} {_g(model.dt)}\n")
        np.savetxt(fh, model.K, fmt="%.17g", delimiter=" ")
        fh.write("layout " + " ".join(model.layout.names) + "\n")


def load_model(path) -> InteractionModel:
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    if not lines:
        raise FormatError(f"{path}: empty model file")
    head = lines[0].split()
    if len(head) != 7 or head[0] != MODEL_MAGIC or head[1] != MODEL_VERSION:
        raise FormatError(f"{path}:1: not a {MODEL_MAGIC} {MODEL_VERSION} file")
    rows, cols, rank = int(head[2]), int(head[3]), int(head[4])
    dynamics, dt = head[5], float(head[6])
    if len(lines) < rows + 2:
        raise FormatError(f"{path}: expected {rows} matrix rows and a layout line")
    K = np.empty((rows, cols))
    for i in range(rows):
        try:
            vals = np.array(lines[1 + i].split(), dtype=float)
        except ValueError:
            raise FormatError(f"{path}:{i + 2}: malformed matrix row") from None
        if vals.size != cols:
            raise FormatError(f"{path}:{i + 2}: expected {cols} values, got {vals.size}")
        K[i] = vals
    tail = lines[1 + rows].split()
    if not tail or tail[0] != "layout":
        raise FormatError(f"{path}:{rows + 2}: expected layout line")
    layout = FeatureLayout.parse(tail[1:], rows // 2)
    return InteractionModel(K, layout, rank, dynamics, dt)


def rollout_filename(start_time: float) -> str:
    return f"rollout_{int(round(start_time * 1000)):06d}.csv"


def save_rollouts(trajectories, directory) -> list[Path]:
    """One CSV per rollout plus ``index.csv`` listing start times and divergence."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    paths = []
    with open(d / "index.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["start_time", "file", "diverged_at"])
        for traj in trajectories:
            name = rollout_filename(traj.start_time)
            save_trajectory(traj, d / name)
            div = "" if traj.diverged_at is None else _g(traj.diverged_at)
            w.writerow([_g(traj.start_time), name, div])
            paths.append(d / name)
    return paths
