"""Rank-truncated SVD regression, classic DMD modes and K-row diagnostics."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from swarmdmd.observables import FeatureKind, FeatureLayout, SnapshotMatrices

DEFAULT_RANK = 8
SIGMA_FLOOR = 1e-12
DYNAMICS = ("standard", "fo_cartesian", "fo_polar")


class RankDeficientError(ValueError):
    pass


class NoSignalError(ValueError):
    pass


class InternalConsistencyError(RuntimeError):
    pass


@dataclass(frozen=True)
class TruncatedSVD:
    U: np.ndarray
    s: np.ndarray
    V: np.ndarray

    @property
    def rank(self) -> int:
        return int(self.s.shape[0])

    def reconstruct(self) -> np.ndarray:
        return (self.U * self.s) @ self.V.T

    def pinv(self) -> np.ndarray:
        return (self.V / self.s) @ self.U.T


def truncated_svd(M: np.ndarray, r: int | float | None = DEFAULT_RANK) -> TruncatedSVD:
    """Economy SVD keeping at most ``r`` triplets.

    ``r`` may be an integer rank, a float in (0, 1) read as the fraction of
    squared singular-value energy to retain, or ``None`` for full rank.
    Singular values below ``1e-12 * sigma_1`` are always dropped.
    """
    M = np.asarray(M, dtype=float)
    U, s, Vt = np.linalg.svd(M, full_matrices=False)
    if s.size == 0 or not s[0] > 0:
        raise RankDeficientError("rank-deficient input")
    keep = int(np.count_nonzero(s >= SIGMA_FLOOR * s[0]))
    if r is None:
        target = keep
    elif isinstance(r, float) and 0 < r < 1:
        energy = np.cumsum(s**2) / np.sum(s**2)
        target = int(np.searchsorted(energy, r) + 1)
    else:
        r = int(r)
        if r < 1:
            raise RankDeficientError("rank-deficient input")
        if r > min(M.shape):
            raise ValueError(f"rank {r} exceeds min(shape) = {min(M.shape)}")
        target = r
    k = min(target, keep)
    return TruncatedSVD(U[:, :k], s[:k], Vt[:k].T)


@dataclass(frozen=True)
class InteractionModel:
    K: np.ndarray
    layout: FeatureLayout
    rank: int
    dynamics: str = "standard"
    dt: float = 0.1

    def __post_init__(self):
        if self.dynamics not in DYNAMICS:
            raise ValueError(f"unknown dynamics {self.dynamics!r}")
        rows, cols = self.K.shape
        if rows != 2 * self.layout.n_agents or cols != self.layout.total_width:
            raise ValueError(
                f"K has shape {self.K.shape}, layout needs "
                f"({2 * self.layout.n_agents}, {self.layout.total_width})"
            )

    @property
    def n_agents(self) -> int:
        return self.layout.n_agents


def estimate_K(
    mats: SnapshotMatrices,
    r: int | float | None = DEFAULT_RANK,
    dynamics: str = "standard",
) -> InteractionModel:
    """Fit ``K = S V Sigma^-1 U^T`` from the rank-r SVD of Y.

    For the first-order formulations the drift term is removed from S before
    the regression, so K only explains the residual displacement.
    """
    S = residual_displacement(mats, dynamics)
    try:
        svd = truncated_svd(mats.Y, r)
    except RankDeficientError:
        raise NoSignalError("no observable signal: feature matrix Y is numerically zero") from None
    K = ((S @ svd.V) / svd.s) @ svd.U.T
    return InteractionModel(K, mats.layout, svd.rank, dynamics, mats.dt)


def residual_displacement(mats: SnapshotMatrices, dynamics: str) -> np.ndarray:
    """Part of S that K must explain under each dynamics formulation."""
    if dynamics == "standard":
        return mats.S
    drift = drift_matrix(mats.X, mats.dt, dynamics)
    return mats.S - drift


def drift_matrix(X: np.ndarray, dt: float, dynamics: str) -> np.ndarray:
    """Kinematic drift columns ``v_k dt`` for the first-order formulations.

    Velocities are backward differences of the state columns; the first
    column reuses the first available difference.
    """
    if dynamics == "standard":
        return np.zeros_like(X)
    n = X.shape[0] // 2
    d = np.diff(X, axis=1)
    if d.shape[1] == 0:
        return np.zeros_like(X)
    back = np.concatenate([d[:, :1], d], axis=1)
    if dynamics == "fo_cartesian":
        return back
    if dynamics == "fo_polar":
        speed = np.hypot(back[:n], back[n:])
        theta = np.arctan2(back[n:], back[:n])
        theta = np.where(speed == 0, 0.0, theta)
        return np.concatenate([speed * np.cos(theta), speed * np.sin(theta)])
    raise ValueError(f"unknown dynamics {dynamics!r}")


def training_residual(model: InteractionModel, mats: SnapshotMatrices) -> float:
    S = residual_displacement(mats, model.dynamics)
    return float(np.linalg.norm(S - model.K @ mats.Y))


@dataclass(frozen=True)
class DmdModes:
    eigenvalues: np.ndarray
    modes: np.ndarray
    reduced_operator: np.ndarray
    reduced_modes: np.ndarray
    projection: np.ndarray

    def predict(self, x0: np.ndarray, steps: int) -> np.ndarray:
        """States x_0..x_steps as columns, using discrete eigenvalue powers."""
        b, *_ = np.linalg.lstsq(self.modes, np.asarray(x0, dtype=complex), rcond=None)
        powers = self.eigenvalues[:, None] ** np.arange(steps + 1)[None, :]
        return (self.modes @ (b[:, None] * powers)).real


def dmd_modes(X: np.ndarray, Xp: np.ndarray, r: int | float | None = DEFAULT_RANK) -> DmdModes:
    """Exact DMD: reduced operator, its eigenpairs, and the lifted modes."""
    X = np.asarray(X, dtype=float)
    Xp = np.asarray(Xp, dtype=float)
    if X.shape != Xp.shape:
        raise ValueError(f"X {X.shape} and X' {Xp.shape} must have the same shape")
    svd = truncated_svd(X, r)
    B = (Xp @ svd.V) / svd.s
    A_tilde = svd.U.T @ B
    lam, W_tilde = np.linalg.eig(A_tilde)
    W = B @ W_tilde
    return DmdModes(lam, W, A_tilde, W_tilde, svd.U)


def influence_rows(model: InteractionModel, mats: SnapshotMatrices, rtol: float = 1e-9) -> np.ndarray:
    """Rebuild every row of K entry by entry from the singular triplets of Y.

    Entry ``(i, j)`` is ``u_j^T Sigma^-1 V^T s_i`` with ``u_j`` the j-th row of
    U. Raises :class:`InternalConsistencyError` when the rebuilt rows disagree
    with ``model.K``.
    """
    S = residual_displacement(mats, model.dynamics)
    svd = truncated_svd(mats.Y, model.rank)
    # time-weighted projections, one r-vector per state row
    proj = (S @ svd.V) / svd.s  # (Nw, r)
    rows = np.empty_like(model.K)
    for i in range(S.shape[0]):
        rows[i] = svd.U @ proj[i]
    scale = max(float(np.max(np.abs(model.K))), np.finfo(float).tiny)
    err = float(np.max(np.abs(rows - model.K))) / scale if model.K.size else 0.0
    if err > rtol:
        raise InternalConsistencyError(f"K-row reconstruction mismatch: relative error {err:.3e}")
    return rows


def influence_by_block(model: InteractionModel, rows: np.ndarray | None = None) -> dict[str, np.ndarray]:
    """Per state row, the L2 norm of K restricted to each feature block."""
    K = model.K if rows is None else rows
    return {
        kind.value: np.linalg.norm(K[:, idx.start:idx.stop], axis=1)
        for kind, idx in model.layout.block_index.items()
    }


def top_influences(model: InteractionModel, state_row: int, count: int = 5) -> list[tuple[str, int, int, float]]:
    """Largest-magnitude entries of one K row as (kind, component, agent, value)."""
    row = model.K[state_row]
    order = np.argsort(-np.abs(row), kind="stable")[:count]
    n = model.layout.n_agents
    out = []
    for j in order:
        for kind, idx in model.layout.block_index.items():
            if j in idx:
                off = j - idx.start
                out.append((kind.value, off // n, off % n, float(row[j])))
                break
    return out


def state_row(agent: int, axis: int, n_agents: int) -> int:
    """Row of S / K for ``axis`` (0 = x, 1 = y) of ``agent``."""
    return axis * n_agents + agent


__all__ = [
    "DEFAULT_RANK",
    "DmdModes",
    "FeatureKind",
    "InteractionModel",
    "InternalConsistencyError",
    "NoSignalError",
    "RankDeficientError",
    "TruncatedSVD",
    "dmd_modes",
    "estimate_K",
    "influence_by_block",
    "influence_rows",
    "top_influences",
    "truncated_svd",
]
