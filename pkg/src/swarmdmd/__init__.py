"""Swarm simulation and linear interaction-model identification from snapshots."""

from swarmdmd.trajectory import (
    AgentState,
    SwarmParams,
    SwarmSnapshot,
    SwarmTrajectory,
    TrajectoryError,
    ValidationReport,
    interpolate_trajectory,
    subsample_agents,
    validate_trajectory,
    wrap_angle,
)

__version__ = "0.1.0"

__all__ = [
    "AgentState",
    "SwarmParams",
    "SwarmSnapshot",
    "SwarmTrajectory",
    "TrajectoryError",
    "ValidationReport",
    "interpolate_trajectory",
    "subsample_agents",
    "validate_trajectory",
    "wrap_angle",
    "__version__",
]
