"""Labeled point clouds and rigid-frame bookkeeping."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import FrameMismatchError, GeometryError
from .geometry import SE3Pose

WORLD_FRAME = "world"


def ego_frame(timestamp: float) -> str:
    """Frame tag for the ego frame at a given time."""
    return f"ego@{float(timestamp)!r}"


@dataclass
class PointCloud:
    """Points with per-point semantic label and dynamic flag.

    ``velocities`` (world-frame m/s, one row per point) is optional extra
    state produced by the simulator; it survives rigid transforms unchanged
    and is what makes motion-compensated fusion possible.  Points loaded
    from disk do not carry it.
    """

    positions: np.ndarray            # (N, 3) float64
    labels: np.ndarray               # (N,) uint8
    dynamic: np.ndarray              # (N,) bool
    frame: str
    velocities: np.ndarray | None = field(default=None)

    def __post_init__(self):
        self.positions = np.asarray(self.positions, dtype=np.float64).reshape(-1, 3)
        self.labels = np.asarray(self.labels, dtype=np.uint8).reshape(-1)
        self.dynamic = np.asarray(self.dynamic, dtype=bool).reshape(-1)
        n = len(self.positions)
        if len(self.labels) != n or len(self.dynamic) != n:
            raise GeometryError("positions, labels and dynamic must have equal length")
        if not np.all(np.isfinite(self.positions)):
            raise GeometryError("point positions must be finite")
        if self.velocities is not None:
            self.velocities = np.asarray(self.velocities, dtype=np.float64).reshape(-1, 3)
            if len(self.velocities) != n:
                raise GeometryError("velocities must match point count")

    def __len__(self) -> int:
        return len(self.positions)

    @staticmethod
    def empty(frame: str) -> "PointCloud":
        return PointCloud(np.zeros((0, 3)), np.zeros(0, dtype=np.uint8),
                          np.zeros(0, dtype=bool), frame)

    def select(self, mask: np.ndarray) -> "PointCloud":
        vel = self.velocities[mask] if self.velocities is not None else None
        return PointCloud(self.positions[mask], self.labels[mask],
                          self.dynamic[mask], self.frame, vel)


def transform_points(cloud: PointCloud, pose: SE3Pose, source_frame: str,
                     target_frame: str) -> PointCloud:
    """Map a cloud through a rigid transform, retagging its frame.

    The cloud must currently be expressed in ``source_frame``; labels,
    flags and (world-frame) velocities are preserved.
    """
    if cloud.frame != source_frame:
        raise FrameMismatchError(
            f"cloud is in frame {cloud.frame!r}, transform expects {source_frame!r}")
    return PointCloud(pose.apply(cloud.positions), cloud.labels.copy(),
                      cloud.dynamic.copy(), target_frame,
                      None if cloud.velocities is None else cloud.velocities.copy())


def concatenate(clouds: list[PointCloud], frame: str) -> PointCloud:
    """Concatenate clouds that all share ``frame`` (order preserved)."""
    for c in clouds:
        if c.frame != frame:
            raise FrameMismatchError(f"cannot concatenate {c.frame!r} into {frame!r}")
    if not clouds:
        return PointCloud.empty(frame)
    vel = None
    if all(c.velocities is not None for c in clouds):
        vel = np.concatenate([c.velocities for c in clouds], axis=0)
    return PointCloud(
        np.concatenate([c.positions for c in clouds], axis=0),
        np.concatenate([c.labels for c in clouds], axis=0),
        np.concatenate([c.dynamic for c in clouds], axis=0),
        frame, vel)
