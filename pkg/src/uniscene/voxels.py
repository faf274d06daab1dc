"""Voxel grids and point-cloud fusion into occupancy / semantic targets.

Voxel cells are half-open boxes [low, high) along every axis and are indexed
(d, h, w) over (Z, Y, X); a point on a shared face belongs to the
higher-index cell.  Points outside the grid extent are dropped, never
clamped.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import FrameMismatchError, GeometryError
from .pointcloud import PointCloud, concatenate, ego_frame, transform_points

FUSE_KEEP_ALL = "keep_all"
FUSE_DROP_DYNAMIC = "drop_dynamic"
FUSE_COMPENSATE = "compensate"
FUSION_MODES = (FUSE_KEEP_ALL, FUSE_DROP_DYNAMIC, FUSE_COMPENSATE)


@dataclass(frozen=True)
class VoxelGridSpec:
    """Discretization contract: minimum corner, cell sizes, cell counts.

    ``voxel_size`` and ``dims`` are ordered (Z, Y, X) = (D, H, W);
    ``origin`` is an (x, y, z) point in the ego frame of the target keyframe.
    """

    origin: tuple[float, float, float]
    voxel_size: tuple[float, float, float]   # (v_Z, v_H, v_W)
    dims: tuple[int, int, int]               # (D, H, W)

    def __post_init__(self):
        if any(v <= 0 for v in self.voxel_size):
            raise GeometryError("voxel sizes must be positive")
        if any(d < 1 for d in self.dims):
            raise GeometryError("grid dims must be >= 1")

    @property
    def n_cells(self) -> int:
        d, h, w = self.dims
        return d * h * w

    @property
    def extent(self) -> tuple[float, float, float]:
        return tuple(d * v for d, v in zip(self.dims, self.voxel_size))

    def cell_indices(self, positions: np.ndarray):
        """(d, h, w) index per point plus an in-bounds mask."""
        p = np.asarray(positions, dtype=np.float64).reshape(-1, 3)
        ox, oy, oz = self.origin
        vz, vy, vx = self.voxel_size
        d = np.floor((p[:, 2] - oz) / vz)
        h = np.floor((p[:, 1] - oy) / vy)
        w = np.floor((p[:, 0] - ox) / vx)
        idx = np.stack([d, h, w], axis=1)
        dims = np.asarray(self.dims, dtype=np.float64)
        inside = np.all((idx >= 0) & (idx < dims), axis=1)
        # zero out-of-range rows before the integer cast to avoid overflow
        return np.where(inside[:, None], idx, 0.0).astype(np.int64), inside


@dataclass
class OccupancyGrid:
    spec: VoxelGridSpec
    data: np.ndarray   # (D, H, W) uint8 in {0, 1}

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.uint8)
        if self.data.shape != self.spec.dims:
            raise GeometryError("grid data shape must match spec dims")
        if np.any(self.data > 1):
            raise GeometryError("occupancy values must be 0 or 1")

    def occupied_count(self) -> int:
        return int(self.data.sum())


@dataclass
class SemanticGrid:
    spec: VoxelGridSpec
    data: np.ndarray   # (D, H, W) uint8 class ids, 0 = free

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.uint8)
        if self.data.shape != self.spec.dims:
            raise GeometryError("grid data shape must match spec dims")


def voxelize_occupancy(cloud: PointCloud, spec: VoxelGridSpec) -> OccupancyGrid:
    """Mark each cell containing at least one point."""
    data = np.zeros(spec.dims, dtype=np.uint8)
    if len(cloud):
        idx, inside = spec.cell_indices(cloud.positions)
        idx = idx[inside]
        data[idx[:, 0], idx[:, 1], idx[:, 2]] = 1
    return OccupancyGrid(spec, data)


def voxelize_semantic(cloud: PointCloud, spec: VoxelGridSpec) -> SemanticGrid:
    """Majority label per occupied cell; ties go to the smaller class id."""
    data = np.zeros(spec.dims, dtype=np.uint8)
    if len(cloud):
        idx, inside = spec.cell_indices(cloud.positions)
        idx = idx[inside]
        labels = cloud.labels[inside].astype(np.int64)
        if len(idx):
            _, h, w = spec.dims
            flat = (idx[:, 0] * h + idx[:, 1]) * w + idx[:, 2]
            codes, counts = np.unique(flat * 256 + labels, return_counts=True)
            cells = codes // 256
            labs = codes % 256
            # per cell: highest count wins, smaller label breaks ties
            order = np.lexsort((labs, -counts, cells))
            cells, labs = cells[order], labs[order]
            first = np.ones(len(cells), dtype=bool)
            first[1:] = cells[1:] != cells[:-1]
            data.reshape(-1)[cells[first]] = labs[first].astype(np.uint8)
    return SemanticGrid(spec, data)


def fuse_frames(frames, target_index: int, num_frames: int,
                dynamic_mode: str = FUSE_KEEP_ALL) -> PointCloud:
    """Fuse a centered window of keyframe clouds into the target ego frame.

    ``frames`` is a sequence of objects exposing ``point_cloud`` (in the ego
    frame of their timestamp), ``ego_pose`` (ego->world) and ``timestamp``.
    The window spans num_frames keyframes centered on target_index, clipped
    at the sequence ends.  The target frame's own cloud passes through
    untouched; contributing clouds are mapped ego(t_k) -> world -> ego(t_T).

    Modes: keep_all concatenates everything; drop_dynamic removes
    dynamic-flagged points of non-target frames; compensate moves dynamic
    points of non-target frames along their known world-frame velocity to
    the target time (requires clouds with velocities).
    """
    if num_frames < 1:
        raise GeometryError("num_frames must be >= 1")
    if num_frames % 2 != 1:
        raise GeometryError("fusion window must be an odd frame count")
    if dynamic_mode not in FUSION_MODES:
        raise GeometryError(f"unknown dynamic_mode {dynamic_mode!r}")
    if not (0 <= target_index < len(frames)):
        raise GeometryError("target_index out of range")

    target = frames[target_index]
    target_frame = ego_frame(target.timestamp)
    world_from_target = target.ego_pose
    target_from_world = world_from_target.inverse()

    reach = num_frames // 2
    lo = max(0, target_index - reach)
    hi = min(len(frames), target_index + reach + 1)

    parts = []
    for k in range(lo, hi):
        f = frames[k]
        cloud = f.point_cloud
        source_frame = ego_frame(f.timestamp)
        if cloud.frame != source_frame:
            raise FrameMismatchError(
                f"frame {k} cloud tagged {cloud.frame!r}, expected {source_frame!r}")
        if k == target_index:
            parts.append(cloud)
            continue
        if dynamic_mode == FUSE_DROP_DYNAMIC:
            cloud = cloud.select(~cloud.dynamic)
        world = transform_points(cloud, f.ego_pose, source_frame, "world")
        if dynamic_mode == FUSE_COMPENSATE and np.any(world.dynamic):
            if world.velocities is None:
                raise GeometryError(
                    "compensate fusion needs per-point velocities")
            dt = target.timestamp - f.timestamp
            moved = world.positions.copy()
            moved[world.dynamic] += world.velocities[world.dynamic] * dt
            world = PointCloud(moved, world.labels, world.dynamic, "world",
                               world.velocities)
        parts.append(transform_points(world, target_from_world, "world",
                                      target_frame))
    return concatenate(parts, target_frame)
