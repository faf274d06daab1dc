"""Rigid transforms and pinhole camera geometry.

Conventions used throughout the package:

* ego frame: x forward, y left, z up; the sensor origin sits at the ego
  origin, ``trajectory.height`` metres above the ground plane.
* camera frame: x right, y down, z along the optical axis (OpenCV style).
* pixel (col, row) sees the ray ((col - cx) / fx, (row - cy) / fy, 1) in
  camera coordinates, i.e. pixel centres sit at integer coordinates.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import GeometryError

ORTHONORMAL_TOL = 1e-9


def _as_vec3(v) -> np.ndarray:
    a = np.asarray(v, dtype=np.float64).reshape(3).copy()
    if not np.all(np.isfinite(a)):
        raise GeometryError("vector components must be finite")
    return a


@dataclass(frozen=True)
class SE3Pose:
    """Rigid transform p -> rotation @ p + translation."""

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        r = np.asarray(self.rotation, dtype=np.float64).reshape(3, 3).copy()
        t = _as_vec3(self.translation)
        err = np.abs(r.T @ r - np.eye(3)).max()
        if err > ORTHONORMAL_TOL:
            raise GeometryError(f"rotation is not orthonormal (|R^T R - I| = {err:.3g})")
        if abs(np.linalg.det(r) - 1.0) > 1e-6:
            raise GeometryError("rotation must be proper (det = +1)")
        r.flags.writeable = False
        t.flags.writeable = False
        object.__setattr__(self, "rotation", r)
        object.__setattr__(self, "translation", t)

    @staticmethod
    def identity() -> "SE3Pose":
        return SE3Pose(np.eye(3), np.zeros(3))

    @staticmethod
    def from_yaw(yaw: float, translation=(0.0, 0.0, 0.0)) -> "SE3Pose":
        c, s = np.cos(yaw), np.sin(yaw)
        r = np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])
        return SE3Pose(r, translation)

    def compose(self, other: "SE3Pose") -> "SE3Pose":
        """self after other: (self . other)(p) = self(other(p))."""
        return SE3Pose(self.rotation @ other.rotation,
                       self.rotation @ other.translation + self.translation)

    def inverse(self) -> "SE3Pose":
        rt = self.rotation.T.copy()
        return SE3Pose(rt, -(rt @ self.translation))

    def apply(self, points: np.ndarray) -> np.ndarray:
        """Transform one (3,) point or an (N, 3) batch."""
        p = np.asarray(points, dtype=np.float64)
        if p.ndim == 1:
            return self.rotation @ p + self.translation
        return p @ self.rotation.T + self.translation


@dataclass(frozen=True)
class CameraIntrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise GeometryError("focal lengths must be positive")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise GeometryError("principal point must lie inside the image")


@dataclass(frozen=True)
class Camera:
    intrinsics: CameraIntrinsics
    extrinsic: SE3Pose  # camera -> ego


@dataclass(frozen=True)
class CameraRig:
    cameras: tuple[Camera, ...]

    def __post_init__(self):
        if len(self.cameras) < 1:
            raise GeometryError("rig needs at least one camera")

    def __len__(self) -> int:
        return len(self.cameras)

    def __iter__(self):
        return iter(self.cameras)


def project(point, intr: CameraIntrinsics) -> tuple[float, float, float]:
    """Pinhole projection of a camera-frame point; returns (u, v, depth)."""
    x, y, z = _as_vec3(point)
    if z <= 0:
        raise GeometryError(f"cannot project point with non-positive depth z={z}")
    return intr.fx * x / z + intr.cx, intr.fy * y / z + intr.cy, z


def unproject(u: float, v: float, depth: float, intr: CameraIntrinsics,
              ext: SE3Pose) -> np.ndarray:
    """Lift a pixel at a given depth back to a 3D point in the ego frame."""
    if depth <= 0:
        raise GeometryError(f"cannot unproject non-positive depth {depth}")
    cam = np.array([(u - intr.cx) * depth / intr.fx,
                    (v - intr.cy) * depth / intr.fy,
                    depth])
    return ext.apply(cam)


# Camera axes expressed in the ego frame for yaw 0, pitch 0:
# x_cam -> -y_ego (right), y_cam -> -z_ego (down), z_cam -> +x_ego (forward).
_CAM_TO_EGO_AXES = np.array([[0.0, 0.0, 1.0],
                             [-1.0, 0.0, 0.0],
                             [0.0, -1.0, 0.0]])


def camera_extrinsic(yaw: float, pitch: float = 0.0,
                     translation=(0.0, 0.0, 0.0)) -> SE3Pose:
    """Camera->ego pose for a camera at the given heading, pitched down."""
    c, s = np.cos(-pitch), np.sin(-pitch)
    rx = np.array([[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]])
    yaw_rot = SE3Pose.from_yaw(yaw).rotation
    return SE3Pose(yaw_rot @ _CAM_TO_EGO_AXES @ rx, translation)


def make_surround_rig(n_cameras: int, intr: CameraIntrinsics,
                      pitch: float = 0.0) -> CameraRig:
    """Rig of n cameras at evenly spaced yaw headings (surround coverage)."""
    cams = tuple(
        Camera(intr, camera_extrinsic(2.0 * np.pi * i / n_cameras, pitch))
        for i in range(n_cameras)
    )
    return CameraRig(cams)
