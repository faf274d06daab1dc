"""Simulated LiDAR scans and geometry-derived camera rasters.

Camera images are not RGB: channel 0 holds the inverse Euclidean range of
the nearest hit along each pixel ray (0 where nothing is hit within range)
and channels 1..3 hold a one-hot encoding of the hit primitive's semantic
label.  That keeps the learning signal purely geometric while exercising a
real multi-view pipeline.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import GeometryError
from .geometry import CameraRig, SE3Pose
from .pointcloud import PointCloud, ego_frame
from .scene import LABEL_DYNAMIC, EgoTrajectory, Scene, raycast

NUM_SEMANTIC_PLANES = 3  # labels 1..3; free/unknown has no plane
IMAGE_CHANNELS = 1 + NUM_SEMANTIC_PLANES


@dataclass(frozen=True)
class LidarSpec:
    elevation_channels: int
    azimuth_steps: int
    max_range: float
    elevation_min: float
    elevation_max: float

    def __post_init__(self):
        if self.elevation_channels < 1:
            raise GeometryError("need at least one elevation channel")
        if self.azimuth_steps < 4:
            raise GeometryError("need at least 4 azimuth steps")
        if self.max_range <= 0:
            raise GeometryError("max_range must be positive")


@dataclass
class MultiCameraFrame:
    images: np.ndarray          # (N_view, C, h, w) float64
    rig: CameraRig
    ego_pose: SE3Pose           # ego -> world
    timestamp: float
    point_cloud: PointCloud     # ego frame at `timestamp`
    is_keyframe: bool

    def __post_init__(self):
        if self.images.shape[0] != len(self.rig):
            raise GeometryError("one image per rig camera required")
        if np.any(self.images[:, 0] < 0):
            raise GeometryError("inverse-depth channel must be non-negative")


def lidar_directions(spec: LidarSpec) -> np.ndarray:
    """Unit ray directions in the ego frame, channel-major order."""
    elevations = np.linspace(spec.elevation_min, spec.elevation_max,
                             spec.elevation_channels)
    azimuths = 2.0 * np.pi * np.arange(spec.azimuth_steps) / spec.azimuth_steps
    e, a = np.meshgrid(elevations, azimuths, indexing="ij")
    dirs = np.stack([np.cos(e) * np.cos(a), np.cos(e) * np.sin(a), np.sin(e)],
                    axis=-1)
    return dirs.reshape(-1, 3)


def simulate_lidar(scene: Scene, ego_pose: SE3Pose, t: float,
                   spec: LidarSpec) -> PointCloud:
    """One scan: nearest hits within max_range, expressed in the ego frame.

    Points carry the hit primitive's semantic label, dynamic flag and
    world-frame velocity.
    """
    dirs_ego = lidar_directions(spec)
    dirs_world = dirs_ego @ ego_pose.rotation.T
    origins = np.broadcast_to(ego_pose.translation, dirs_world.shape)
    hit, _, t_param, idx = raycast(scene, t, origins, dirs_world, spec.max_range)

    pts_world = origins[hit] + t_param[hit, None] * dirs_world[hit]
    pts_ego = ego_pose.inverse().apply(pts_world)
    hit_idx = idx[hit]
    labels = np.array([scene.primitives[i].semantic_label for i in hit_idx],
                      dtype=np.uint8)
    dynamic = np.array([scene.primitives[i].is_dynamic for i in hit_idx],
                       dtype=bool)
    velocities = (np.stack([scene.primitives[i].velocity for i in hit_idx])
                  if len(hit_idx) else np.zeros((0, 3)))
    return PointCloud(pts_ego, labels, dynamic, ego_frame(t), velocities)


def render_views(scene: Scene, ego_pose: SE3Pose, t: float, rig: CameraRig,
                 max_range: float) -> np.ndarray:
    """Ray-cast every camera; returns (N_view, C, h, w) feature rasters."""
    images = []
    for cam in rig:
        intr = cam.intrinsics
        h, w = intr.height, intr.width
        cols, rows = np.meshgrid(np.arange(w), np.arange(h))
        dirs_cam = np.stack([(cols - intr.cx) / intr.fx,
                             (rows - intr.cy) / intr.fy,
                             np.ones_like(cols, dtype=np.float64)], axis=-1)
        dirs_cam = dirs_cam.reshape(-1, 3)
        rot = ego_pose.rotation @ cam.extrinsic.rotation
        dirs_world = dirs_cam @ rot.T
        origin = ego_pose.apply(cam.extrinsic.translation)
        origins = np.broadcast_to(origin, dirs_world.shape)
        hit, ranges, _, idx = raycast(scene, t, origins, dirs_world, max_range)

        img = np.zeros((IMAGE_CHANNELS, h * w))
        hit_pixels = np.nonzero(hit)[0]
        img[0, hit_pixels] = 1.0 / ranges[hit_pixels]
        labels = np.array([scene.primitives[i].semantic_label for i in idx[hit_pixels]],
                          dtype=np.int64)
        img[labels, hit_pixels] = 1.0
        images.append(img.reshape(IMAGE_CHANNELS, h, w))
    return np.stack(images)


def generate_sequence(scene: Scene, trajectory: EgoTrajectory, rig: CameraRig,
                      lidar: LidarSpec, keyframe_stride: int,
                      camera_max_range: float) -> list[MultiCameraFrame]:
    """One frame per trajectory pose; every stride-th frame is a keyframe."""
    if keyframe_stride < 1:
        raise GeometryError("keyframe_stride must be >= 1")
    frames = []
    for k, (t, pose) in enumerate(trajectory):
        frames.append(MultiCameraFrame(
            images=render_views(scene, pose, t, rig, camera_max_range),
            rig=rig,
            ego_pose=pose,
            timestamp=t,
            point_cloud=simulate_lidar(scene, pose, t, lidar),
            is_keyframe=(k % keyframe_stride == 0),
        ))
    return frames


def recover_velocities(cloud: PointCloud, scene: Scene, t: float,
                       ego_pose: SE3Pose, surface_tol: float = 1e-5) -> PointCloud:
    """Re-attach world-frame velocities to a cloud loaded from disk.

    Dynamic points are matched to the dynamic primitive whose surface (at
    time t) they lie on; static points get zero velocity.  Used by the CLI
    for motion-compensated fusion, where the binary cloud format does not
    store velocities.
    """
    velocities = np.zeros((len(cloud), 3))
    dyn_idx = np.nonzero(cloud.dynamic)[0]
    if len(dyn_idx):
        world = ego_pose.apply(cloud.positions[dyn_idx])
        for j, p in zip(dyn_idx, world):
            for prim in scene.primitives:
                if not prim.is_dynamic:
                    continue
                d = np.abs(p - prim.center_at(t)) - prim.half_extents
                # on an AABB surface: inside (or on) every slab, on >= 1 face
                if np.all(d <= surface_tol) and np.any(np.abs(d) <= surface_tol):
                    velocities[j] = prim.velocity
                    break
    return PointCloud(cloud.positions.copy(), cloud.labels.copy(),
                      cloud.dynamic.copy(), cloud.frame, velocities)
