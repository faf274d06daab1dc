"""Procedural dynamic worlds: ground plane plus static and moving boxes.

A scene is immutable once built; moving primitives are advanced analytically
(center + velocity * t), so frame generation at any timestamp is a pure
function of the scene.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import GeometryError, SceneGenerationError
from .geometry import SE3Pose

LABEL_FREE = 0
LABEL_GROUND = 1
LABEL_STATIC = 2
LABEL_DYNAMIC = 3

KIND_GROUND = "ground-plane"
KIND_BOX = "box"

_RAY_EPS = 1e-9


@dataclass(frozen=True)
class ScenePrimitive:
    kind: str
    center: np.ndarray        # (3,) world frame, at t = 0
    half_extents: np.ndarray  # (3,); ground plane stores (inf, inf, 0)
    velocity: np.ndarray      # (3,) m/s, zero for static primitives
    semantic_label: int

    def __post_init__(self):
        c = np.asarray(self.center, dtype=np.float64).reshape(3).copy()
        h = np.asarray(self.half_extents, dtype=np.float64).reshape(3).copy()
        v = np.asarray(self.velocity, dtype=np.float64).reshape(3).copy()
        if self.kind == KIND_BOX:
            if not np.all(h > 0):
                raise GeometryError("box half extents must be positive")
        elif self.kind == KIND_GROUND:
            h = np.array([np.inf, np.inf, 0.0])
        else:
            raise GeometryError(f"unknown primitive kind {self.kind!r}")
        if self.semantic_label == LABEL_DYNAMIC and np.linalg.norm(v) == 0:
            raise GeometryError("dynamic primitives need nonzero velocity")
        for a in (c, h, v):
            a.flags.writeable = False
        object.__setattr__(self, "center", c)
        object.__setattr__(self, "half_extents", h)
        object.__setattr__(self, "velocity", v)

    @property
    def is_dynamic(self) -> bool:
        return bool(np.linalg.norm(self.velocity) > 0)

    def center_at(self, t: float) -> np.ndarray:
        return self.center + self.velocity * t


@dataclass(frozen=True)
class Scene:
    primitives: tuple[ScenePrimitive, ...]

    def __len__(self) -> int:
        return len(self.primitives)


@dataclass(frozen=True)
class SceneConfig:
    n_static: int = 6
    n_dynamic: int = 2
    x_min: float = -12.0
    x_max: float = 12.0
    y_min: float = -12.0
    y_max: float = 12.0
    ground_z: float = 0.0
    box_half_min: float = 0.4
    box_half_max: float = 1.2
    speed_min: float = 0.5
    speed_max: float = 1.5
    clear_radius: float = 4.5   # keep box centres this far from the ego start
    max_place_tries: int = 100
    max_objects: int = 64


def _boxes_overlap(c1, h1, c2, h2) -> bool:
    """Strict AABB overlap; touching faces do not count."""
    return bool(np.all(np.abs(c1 - c2) < h1 + h2))


def build_scene(seed: int, config: SceneConfig) -> Scene:
    """Deterministically place one ground plane plus boxes without overlap.

    Raises SceneGenerationError when the configured density cannot be
    realized within ``max_place_tries`` rejection-sampling attempts per box.
    """
    if config.n_static < 0 or config.n_dynamic < 0:
        raise SceneGenerationError("object counts must be non-negative")
    if config.n_static + config.n_dynamic > config.max_objects:
        raise SceneGenerationError(
            f"requested {config.n_static + config.n_dynamic} boxes exceeds "
            f"max_objects={config.max_objects}")

    rng = np.random.default_rng(seed)  # int or SeedSequence
    prims = [ScenePrimitive(KIND_GROUND, (0.0, 0.0, config.ground_z),
                            (np.inf, np.inf, 0.0), (0.0, 0.0, 0.0), LABEL_GROUND)]
    placed: list[tuple[np.ndarray, np.ndarray]] = []

    def place_box(dynamic: bool) -> ScenePrimitive:
        for _ in range(config.max_place_tries):
            half = rng.uniform(config.box_half_min, config.box_half_max, size=3)
            cx = rng.uniform(config.x_min + half[0], config.x_max - half[0])
            cy = rng.uniform(config.y_min + half[1], config.y_max - half[1])
            center = np.array([cx, cy, config.ground_z + half[2]])
            if np.hypot(cx, cy) < config.clear_radius:
                continue
            if any(_boxes_overlap(center, half, c, h) for c, h in placed):
                continue
            vel = np.zeros(3)
            if dynamic:
                heading = rng.uniform(0.0, 2.0 * np.pi)
                speed = rng.uniform(config.speed_min, config.speed_max)
                vel = np.array([speed * np.cos(heading), speed * np.sin(heading), 0.0])
            placed.append((center, half))
            label = LABEL_DYNAMIC if dynamic else LABEL_STATIC
            return ScenePrimitive(KIND_BOX, center, half, vel, label)
        raise SceneGenerationError(
            f"could not place a box after {config.max_place_tries} tries "
            "(scene too dense)")

    for _ in range(config.n_static):
        prims.append(place_box(dynamic=False))
    for _ in range(config.n_dynamic):
        prims.append(place_box(dynamic=True))
    return Scene(tuple(prims))


@dataclass(frozen=True)
class EgoTrajectory:
    """Timestamped ego->world poses with strictly increasing timestamps."""

    poses: tuple[tuple[float, SE3Pose], ...]

    def __post_init__(self):
        if len(self.poses) < 1:
            raise GeometryError("trajectory needs at least one pose")
        times = [t for t, _ in self.poses]
        if any(b <= a for a, b in zip(times, times[1:])):
            raise GeometryError("trajectory timestamps must strictly increase")

    def __len__(self) -> int:
        return len(self.poses)

    def __iter__(self):
        return iter(self.poses)


def make_trajectory(n_frames: int, dt: float, speed: float, height: float,
                    yaw0: float = 0.0, yaw_rate: float = 0.0,
                    start_xy=(0.0, 0.0)) -> EgoTrajectory:
    """Constant-speed planar trajectory, integrated frame to frame."""
    if n_frames < 1 or dt <= 0:
        raise GeometryError("need n_frames >= 1 and dt > 0")
    x, y = float(start_xy[0]), float(start_xy[1])
    poses = []
    for k in range(n_frames):
        t = k * dt
        yaw = yaw0 + yaw_rate * t
        poses.append((t, SE3Pose.from_yaw(yaw, (x, y, height))))
        x += speed * dt * np.cos(yaw)
        y += speed * dt * np.sin(yaw)
    return EgoTrajectory(tuple(poses))


def raycast(scene: Scene, t: float, origins: np.ndarray, dirs: np.ndarray,
            max_range: float):
    """Nearest ray-primitive intersections at scene time t.

    origins/dirs are (R, 3) world-frame arrays; dirs need not be unit length
    (ranges are measured as Euclidean distance along the ray).  Returns
    ``(hit, ranges, t_param, prim_index)`` where ``hit`` marks rays whose
    nearest intersection lies within max_range.  Ties on distance go to the
    lower primitive index.
    """
    origins = np.asarray(origins, dtype=np.float64)
    dirs = np.asarray(dirs, dtype=np.float64)
    n_rays = len(origins)
    best_t = np.full(n_rays, np.inf)
    best_idx = np.full(n_rays, -1, dtype=np.int64)

    for i, prim in enumerate(scene.primitives):
        c = prim.center_at(t)
        if prim.kind == KIND_GROUND:
            dz = dirs[:, 2]
            with np.errstate(divide="ignore", invalid="ignore"):
                ti = (c[2] - origins[:, 2]) / dz
            ti = np.where((dz != 0) & (ti > _RAY_EPS), ti, np.inf)
        else:
            lo = c - prim.half_extents
            hi = c + prim.half_extents
            with np.errstate(divide="ignore", invalid="ignore"):
                t1 = (lo - origins) / dirs
                t2 = (hi - origins) / dirs
            ta = np.minimum(t1, t2)
            tb = np.maximum(t1, t2)
            zero = dirs == 0
            inside = (origins >= lo) & (origins <= hi)
            ta = np.where(zero, np.where(inside, -np.inf, np.inf), ta)
            tb = np.where(zero, np.where(inside, np.inf, -np.inf), tb)
            tnear = ta.max(axis=1)
            tfar = tb.min(axis=1)
            ti = np.where(tnear > _RAY_EPS, tnear, tfar)
            ti = np.where((tnear <= tfar) & (ti > _RAY_EPS), ti, np.inf)
        closer = ti < best_t
        best_t[closer] = ti[closer]
        best_idx[closer] = i

    norms = np.linalg.norm(dirs, axis=1)
    ranges = best_t * norms
    hit = np.isfinite(best_t) & (ranges <= max_range)
    return hit, ranges, best_t, best_idx
