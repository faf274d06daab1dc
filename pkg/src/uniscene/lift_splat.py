"""Differentiable camera-to-BEV view transform.

Each pixel is lifted into a frustum of depth-bin centre points weighted by
a per-pixel depth distribution; the weighted features are splatted (sum
pooled) into the xy cells of the voxel grid, ignoring z.  Height structure
is recovered afterwards by reshaping the BEV channel axis into
(channels', depth), so C = C' * D.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _kernels as kernels
from .autodiff import Tensor, _op, reshape
from .errors import GeometryError, ShapeError
from .geometry import CameraRig
from .voxels import VoxelGridSpec


@dataclass(frozen=True)
class FrustumSpec:
    depth_bins: int
    depth_min: float
    depth_max: float
    spacing: str = "uniform"

    def __post_init__(self):
        if self.depth_bins < 2:
            raise GeometryError("need at least 2 depth bins")
        if not (0 < self.depth_min < self.depth_max):
            raise GeometryError("need 0 < depth_min < depth_max")
        if self.spacing != "uniform":
            raise GeometryError(f"unsupported spacing {self.spacing!r}")

    def bin_centers(self) -> np.ndarray:
        step = (self.depth_max - self.depth_min) / self.depth_bins
        return self.depth_min + (np.arange(self.depth_bins) + 0.5) * step


@dataclass
class BevFeature:
    data: Tensor               # (C, H, W)
    spec: VoxelGridSpec

    def __post_init__(self):
        _, h, w = self.spec.dims
        if self.data.shape[1:] != (h, w):
            raise ShapeError("BEV feature spatial dims must match grid spec")


@dataclass
class VoxelFeature:
    data: Tensor               # (C', D, H, W)


def frustum_cells(rig: CameraRig, frustum: FrustumSpec, spec: VoxelGridSpec,
                  image_hw: tuple[int, int]) -> list[np.ndarray]:
    """Per view: xy cell index of every (depth bin, pixel) frustum point.

    Returns (depth_bins, h*w) int64 arrays with -1 marking points that fall
    outside the grid.  Cells use the same half-open floor indexing as the
    voxelizer; the lifted point's z is ignored.
    """
    h, w = image_hw
    depths = frustum.bin_centers()
    _, grid_h, grid_w = spec.dims
    ox, oy, _ = spec.origin
    _, vy, vx = spec.voxel_size
    out = []
    for cam in rig:
        intr = cam.intrinsics
        cols, rows = np.meshgrid(np.arange(w), np.arange(h))
        ray = np.stack([(cols.reshape(-1) - intr.cx) / intr.fx,
                        (rows.reshape(-1) - intr.cy) / intr.fy,
                        np.ones(h * w)], axis=0)          # (3, P)
        pts = depths[:, None, None] * ray[None, :, :]     # (D_depth, 3, P)
        r, t = cam.extrinsic.rotation, cam.extrinsic.translation
        ego = np.einsum("ij,djp->dip", r, pts) + t[None, :, None]
        wi = np.floor((ego[:, 0, :] - ox) / vx)
        hi = np.floor((ego[:, 1, :] - oy) / vy)
        inside = (wi >= 0) & (wi < grid_w) & (hi >= 0) & (hi < grid_h)
        cell = np.where(inside, hi * grid_w + wi, -1.0)
        out.append(cell.astype(np.int64))
    return out


def lift_splat(features: list[Tensor], depth_dists: list[Tensor],
               rig: CameraRig, frustum: FrustumSpec,
               spec: VoxelGridSpec) -> BevFeature:
    """Splat depth-weighted per-view features into the BEV grid.

    ``features[i]`` is (C, h, w) and ``depth_dists[i]`` is (D_depth, h, w)
    for camera i (normally a softmax over depth bins).  Sum pooling; points
    outside the grid contribute nothing.  Differentiable with respect to
    both features and depth distributions.

    Per-view partial grids are reduced in a content-determined order, so the
    output is bit-identical under any permutation of the rig.
    """
    if not (len(features) == len(depth_dists) == len(rig)):
        raise ShapeError("need one feature and depth raster per camera")
    c = features[0].shape[0]
    hw = features[0].shape[1:]
    for f, dd in zip(features, depth_dists):
        if f.shape != (c, *hw):
            raise ShapeError(f"feature raster shape {f.shape} != {(c, *hw)}")
        if dd.shape != (frustum.depth_bins, *hw):
            raise ShapeError(
                f"depth raster shape {dd.shape} != {(frustum.depth_bins, *hw)}")
    _, grid_h, grid_w = spec.dims
    n_cells = grid_h * grid_w
    p = hw[0] * hw[1]
    cells = frustum_cells(rig, frustum, spec, hw)

    partials = []
    for f, dd, cell in zip(features, depth_dists, cells):
        partials.append(kernels.splat_forward(
            f.data.reshape(c, p), dd.data.reshape(frustum.depth_bins, p),
            cell, n_cells))
    order = sorted(range(len(partials)), key=lambda i: partials[i].tobytes())
    acc = np.zeros((c, n_cells))
    for i in order:
        acc += partials[i]

    def feat_vjp(cell, dd):
        def vjp(g):
            gf = kernels.splat_grad_feat(dd.data.reshape(frustum.depth_bins, p),
                                         cell, g.reshape(c, n_cells))
            return gf.reshape(c, *hw)
        return vjp

    def depth_vjp(cell, f):
        def vjp(g):
            gd = kernels.splat_grad_weight(f.data.reshape(c, p), cell,
                                           g.reshape(c, n_cells))
            return gd.reshape(frustum.depth_bins, *hw)
        return vjp

    parents = tuple(features) + tuple(depth_dists)
    vjps = tuple(feat_vjp(cell, dd) for cell, dd in zip(cells, depth_dists)) + \
        tuple(depth_vjp(cell, f) for cell, f in zip(cells, features))
    bev = _op(acc.reshape(c, grid_h, grid_w), parents, vjps)
    return BevFeature(bev, spec)


def bev_to_voxel(bev: BevFeature, d: int) -> VoxelFeature:
    """Split the BEV channel axis into (C', D): channel c -> (c // d, c % d).

    A pure reshape; ``voxel_to_bev`` restores the input bit for bit.
    """
    c = bev.data.shape[0]
    if d < 1 or c % d != 0:
        raise ShapeError(f"channel count {c} not divisible by depth {d}")
    _, h, w = bev.data.shape
    return VoxelFeature(reshape(bev.data, (c // d, d, h, w)))


def voxel_to_bev(vox: VoxelFeature, spec: VoxelGridSpec) -> BevFeature:
    """Inverse of bev_to_voxel."""
    cp, d, h, w = vox.data.shape
    return BevFeature(reshape(vox.data, (cp * d, h, w)), spec)
