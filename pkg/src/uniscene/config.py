"""Run configuration: parsing, validation, canonical text and hashing.

Config files are plain text, one ``section.key = value`` per line; ``#``
starts a comment.  Unknown keys are errors.  Every key has a default, so
any file (including an empty one) resolves to a complete configuration.
The canonical serialization lists all keys sorted, which makes config
hashes stable and checkpoint provenance reproducible.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError
from .geometry import CameraIntrinsics, CameraRig, make_surround_rig
from .lift_splat import FrustumSpec
from .scene import SceneConfig
from .sensors import IMAGE_CHANNELS, LidarSpec
from .voxels import FUSION_MODES, VoxelGridSpec

# seed-stream ids: every RNG in the pipeline derives from (run.seed, stream, ...)
STREAM_SCENE = 1
STREAM_TRAJECTORY = 2
STREAM_INIT = 3
STREAM_SHUFFLE = 4
STREAM_SUBSET = 5


def rng_seed(seed: int, stream: int, *extra: int) -> np.random.SeedSequence:
    return np.random.SeedSequence((int(seed), int(stream)) + tuple(int(e) for e in extra))


SCHEMA: dict[str, tuple[type, object]] = {
    "run.seed": (int, 0),
    "scene.n_static": (int, 6),
    "scene.n_dynamic": (int, 2),
    "scene.x_min": (float, -12.0),
    "scene.x_max": (float, 12.0),
    "scene.y_min": (float, -12.0),
    "scene.y_max": (float, 12.0),
    "scene.ground_z": (float, 0.0),
    "scene.box_half_min": (float, 0.4),
    "scene.box_half_max": (float, 1.2),
    "scene.speed_min": (float, 0.5),
    "scene.speed_max": (float, 1.5),
    "scene.clear_radius": (float, 4.5),
    "scene.max_place_tries": (int, 100),
    "scene.max_objects": (int, 64),
    "trajectory.n_frames": (int, 5),
    "trajectory.dt": (float, 0.5),
    "trajectory.speed": (float, 2.0),
    "trajectory.yaw_rate": (float, 0.0),
    "trajectory.height": (float, 1.5),
    "trajectory.random_yaw": (int, 1),
    "sequence.keyframe_stride": (int, 1),
    "dataset.n_sequences": (int, 8),
    "dataset.holdout_fraction": (float, 0.2),
    "rig.n_cameras": (int, 6),
    "rig.width": (int, 16),
    "rig.height": (int, 12),
    "rig.fx": (float, 8.0),
    "rig.fy": (float, 8.0),
    "rig.cx": (float, 8.0),
    "rig.cy": (float, 6.0),
    "rig.pitch": (float, 0.3),
    "rig.max_range": (float, 25.0),
    "lidar.channels": (int, 8),
    "lidar.azimuth_steps": (int, 64),
    "lidar.elev_min": (float, -0.6),
    "lidar.elev_max": (float, 0.05),
    "lidar.max_range": (float, 30.0),
    "grid.d": (int, 8),
    "grid.h": (int, 16),
    "grid.w": (int, 16),
    "grid.voxel_z": (float, 0.5),
    "grid.voxel_y": (float, 1.0),
    "grid.voxel_x": (float, 1.0),
    "grid.origin_x": (float, -8.0),
    "grid.origin_y": (float, -8.0),
    "grid.origin_z": (float, -2.0),
    "frustum.depth_bins": (int, 16),
    "frustum.depth_min": (float, 0.5),
    "frustum.depth_max": (float, 12.0),
    "model.encoder_channels": (int, 16),
    "model.decoder_channels": (int, 16),
    "model.semantic_channels": (int, 16),
    "model.num_classes": (int, 4),
    "train.epochs": (int, 24),
    "train.finetune_epochs": (int, 12),
    "train.batch": (int, 2),
    "train.lr": (float, 0.001),
    "train.optimizer": (str, "adam"),
    "train.beta1": (float, 0.9),
    "train.beta2": (float, 0.999),
    "train.eps": (float, 1e-08),
    "train.fusion_frames": (int, 3),
    "train.dynamic_mode": (str, "keep_all"),
    "train.finetune_fusion_frames": (int, 3),
    "train.finetune_dynamic_mode": (str, "drop_dynamic"),
    "train.label_fraction": (float, 1.0),
    "train.free_class_weight": (float, 0.25),
    "loss.alpha_pos": (float, 2.0),
    "loss.alpha_neg": (float, 1.0),
    "loss.gamma": (float, 0.25),
}


def parse_kv_text(text: str) -> dict[str, str]:
    """Parse ``key = value`` lines into raw strings (shared line format)."""
    out: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {raw!r}")
        key, value = line.split("=", 1)
        key = key.strip()
        if not key or "." not in key:
            raise ConfigError(f"line {lineno}: keys must look like section.key")
        if key in out:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        out[key] = value.strip()
    return out


def format_value(value) -> str:
    if isinstance(value, bool):
        raise ConfigError("booleans are spelled as 0/1 ints")
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, float):
        return repr(float(value))
    return str(value)


@dataclass(frozen=True)
class RunConfig:
    values: tuple[tuple[str, object], ...]

    @staticmethod
    def from_dict(overrides: dict[str, object] | None = None) -> "RunConfig":
        resolved = {}
        overrides = dict(overrides or {})
        for key in overrides:
            if key not in SCHEMA:
                raise ConfigError(f"unknown config key {key!r}")
        for key, (typ, default) in SCHEMA.items():
            raw = overrides.get(key, default)
            try:
                resolved[key] = typ(raw)
            except (TypeError, ValueError) as exc:
                raise ConfigError(f"{key}: cannot parse {raw!r} as {typ.__name__}") from exc
        cfg = RunConfig(tuple(sorted(resolved.items())))
        cfg.validate()
        return cfg

    @staticmethod
    def from_text(text: str) -> "RunConfig":
        raw = parse_kv_text(text)
        return RunConfig.from_dict(raw)

    def get(self, key: str):
        return dict(self.values)[key]

    def with_overrides(self, overrides: dict[str, object]) -> "RunConfig":
        merged = dict(self.values)
        for key, value in overrides.items():
            if key not in SCHEMA:
                raise ConfigError(f"unknown config key {key!r}")
            merged[key] = value
        return RunConfig.from_dict(merged)

    def canonical_text(self) -> str:
        return "".join(f"{k} = {format_value(v)}\n" for k, v in self.values)

    def config_hash(self) -> str:
        return hashlib.sha256(self.canonical_text().encode("utf-8")).hexdigest()

    def validate(self) -> None:
        g = self.get
        checks = [
            (g("train.epochs") >= 1, "train.epochs must be >= 1"),
            (g("train.finetune_epochs") >= 1, "train.finetune_epochs must be >= 1"),
            (g("train.batch") >= 1, "train.batch must be >= 1"),
            (0.0 < g("train.label_fraction") <= 1.0,
             "train.label_fraction must lie in (0, 1]"),
            (g("train.optimizer") in ("sgd", "adam"), "optimizer must be sgd or adam"),
            (g("train.dynamic_mode") in FUSION_MODES, "unknown train.dynamic_mode"),
            (g("train.finetune_dynamic_mode") in FUSION_MODES,
             "unknown train.finetune_dynamic_mode"),
            (g("train.fusion_frames") >= 1 and g("train.fusion_frames") % 2 == 1,
             "train.fusion_frames must be odd"),
            (g("train.finetune_fusion_frames") >= 1
             and g("train.finetune_fusion_frames") % 2 == 1,
             "train.finetune_fusion_frames must be odd"),
            (g("model.encoder_channels") % g("grid.d") == 0,
             "model.encoder_channels must be divisible by grid.d"),
            (g("model.num_classes") >= 2, "need at least 2 semantic classes"),
            (0.0 < g("dataset.holdout_fraction") < 1.0,
             "dataset.holdout_fraction must lie in (0, 1)"),
            (g("dataset.n_sequences") >= 2, "need at least 2 sequences"),
            (g("sequence.keyframe_stride") >= 1, "keyframe_stride must be >= 1"),
        ]
        for ok, message in checks:
            if not ok:
                raise ConfigError(message)

    # --- derived domain objects -------------------------------------------

    def scene_config(self) -> SceneConfig:
        g = self.get
        return SceneConfig(
            n_static=g("scene.n_static"), n_dynamic=g("scene.n_dynamic"),
            x_min=g("scene.x_min"), x_max=g("scene.x_max"),
            y_min=g("scene.y_min"), y_max=g("scene.y_max"),
            ground_z=g("scene.ground_z"),
            box_half_min=g("scene.box_half_min"),
            box_half_max=g("scene.box_half_max"),
            speed_min=g("scene.speed_min"), speed_max=g("scene.speed_max"),
            clear_radius=g("scene.clear_radius"),
            max_place_tries=g("scene.max_place_tries"),
            max_objects=g("scene.max_objects"))

    def rig(self) -> CameraRig:
        g = self.get
        intr = CameraIntrinsics(fx=g("rig.fx"), fy=g("rig.fy"), cx=g("rig.cx"),
                                cy=g("rig.cy"), width=g("rig.width"),
                                height=g("rig.height"))
        return make_surround_rig(g("rig.n_cameras"), intr, pitch=g("rig.pitch"))

    def lidar_spec(self) -> LidarSpec:
        g = self.get
        return LidarSpec(elevation_channels=g("lidar.channels"),
                         azimuth_steps=g("lidar.azimuth_steps"),
                         max_range=g("lidar.max_range"),
                         elevation_min=g("lidar.elev_min"),
                         elevation_max=g("lidar.elev_max"))

    def grid_spec(self) -> VoxelGridSpec:
        g = self.get
        return VoxelGridSpec(
            origin=(g("grid.origin_x"), g("grid.origin_y"), g("grid.origin_z")),
            voxel_size=(g("grid.voxel_z"), g("grid.voxel_y"), g("grid.voxel_x")),
            dims=(g("grid.d"), g("grid.h"), g("grid.w")))

    def frustum_spec(self) -> FrustumSpec:
        g = self.get
        return FrustumSpec(depth_bins=g("frustum.depth_bins"),
                           depth_min=g("frustum.depth_min"),
                           depth_max=g("frustum.depth_max"))

    def model_dims(self):
        from .model import ModelDims
        g = self.get
        return ModelDims(in_channels=IMAGE_CHANNELS,
                         encoder_channels=g("model.encoder_channels"),
                         depth_bins=g("frustum.depth_bins"),
                         grid_dims=(g("grid.d"), g("grid.h"), g("grid.w")),
                         decoder_channels=g("model.decoder_channels"),
                         semantic_channels=g("model.semantic_channels"),
                         num_classes=g("model.num_classes"))

    def focal_params(self):
        from .model import FocalLossParams
        g = self.get
        return FocalLossParams(alpha_pos=g("loss.alpha_pos"),
                               alpha_neg=g("loss.alpha_neg"),
                               gamma=g("loss.gamma"))

    def class_weights(self) -> np.ndarray:
        k = self.get("model.num_classes")
        w = np.ones(k)
        w[0] = self.get("train.free_class_weight")
        return w
