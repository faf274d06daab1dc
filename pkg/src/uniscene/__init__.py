"""Multi-camera occupancy pre-training on synthetic image-LiDAR sequences.

The package covers the full pipeline: procedural scene + sensor simulation,
LiDAR fusion into voxel occupancy labels, a differentiable lift-splat view
transform with a small multi-view network, and the pretrain/finetune
experiment harness with bit-exact file formats.
"""

from . import _kernels
from .autodiff import Tensor, no_grad
from .checkpoint import Checkpoint, load_checkpoint, strip_decoder
from .config import RunConfig
from .errors import UniSceneError
from .geometry import CameraIntrinsics, CameraRig, SE3Pose, project, unproject
from .lift_splat import FrustumSpec, bev_to_voxel, lift_splat
from .model import (FocalLossParams, ModelParams, focal_loss,
                    forward_occupancy, forward_semantic, grad_check,
                    semantic_loss)
from .pointcloud import PointCloud, transform_points
from .scene import EgoTrajectory, Scene, SceneConfig, ScenePrimitive, build_scene
from .sensors import LidarSpec, MultiCameraFrame, generate_sequence, render_views, simulate_lidar
from .training import (EvalReport, SyntheticDataset, TrainConfig, ablate,
                       build_dataset, evaluate, finetune, optimizer_step,
                       pretrain)
from .voxels import (OccupancyGrid, SemanticGrid, VoxelGridSpec, fuse_frames,
                     voxelize_occupancy, voxelize_semantic)

__version__ = "0.1.0"

kernel_backend = _kernels.get_backend
