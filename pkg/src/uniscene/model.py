"""The multi-view network: encoder, depth head, occupancy decoder, semantic
head, and the training losses.

Pipeline per frame: each view runs through two 2D convolutions (relu), a
1x1 depth head produces per-pixel depth-bin logits, lift-splat fuses views
into a BEV feature map, the channel axis is reshaped into height slices,
and a two-layer 3D convolution head decodes either occupancy probabilities
(pre-training) or per-class logits (fine-tuning).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor, _op
from .errors import ShapeError
from .lift_splat import FrustumSpec, bev_to_voxel, lift_splat
from .voxels import OccupancyGrid, SemanticGrid, VoxelGridSpec

PROB_EPS = 1e-7          # probability clamp inside losses only
ENCODER_PREFIXES = ("encoder.", "depth_head.")
DECODER_PREFIX = "decoder."
SEMANTIC_PREFIX = "semantic."


@dataclass(frozen=True)
class ModelDims:
    in_channels: int
    encoder_channels: int
    depth_bins: int
    grid_dims: tuple[int, int, int]     # (D, H, W)
    decoder_channels: int
    semantic_channels: int
    num_classes: int

    def __post_init__(self):
        d = self.grid_dims[0]
        if self.encoder_channels % d != 0:
            raise ShapeError(
                f"encoder channels {self.encoder_channels} must divide into "
                f"{d} height slices (C = C' x D)")

    @property
    def voxel_channels(self) -> int:
        return self.encoder_channels // self.grid_dims[0]


def parameter_shapes(dims: ModelDims) -> list[tuple[str, tuple[int, ...]]]:
    """Declaration order fixes the RNG draw order at initialization."""
    e, dd = dims.encoder_channels, dims.depth_bins
    cp = dims.voxel_channels
    dc, sc, k = dims.decoder_channels, dims.semantic_channels, dims.num_classes
    return [
        ("encoder.conv1.weight", (e, dims.in_channels, 3, 3)),
        ("encoder.conv1.bias", (e,)),
        ("encoder.conv2.weight", (e, e, 3, 3)),
        ("encoder.conv2.bias", (e,)),
        ("depth_head.conv.weight", (dd, e, 1, 1)),
        ("depth_head.conv.bias", (dd,)),
        ("decoder.conv1.weight", (dc, cp, 3, 3, 3)),
        ("decoder.conv1.bias", (dc,)),
        ("decoder.conv2.weight", (1, dc, 3, 3, 3)),
        ("decoder.conv2.bias", (1,)),
        ("semantic.conv1.weight", (sc, cp, 3, 3, 3)),
        ("semantic.conv1.bias", (sc,)),
        ("semantic.conv2.weight", (k, sc, 3, 3, 3)),
        ("semantic.conv2.bias", (k,)),
    ]


@dataclass
class ModelParams:
    dims: ModelDims
    params: dict[str, Tensor] = field(default_factory=dict)

    @staticmethod
    def initialize(dims: ModelDims, seed_sequence) -> "ModelParams":
        """Glorot-uniform weights, zero biases, deterministic given the seed."""
        rng = np.random.default_rng(seed_sequence)
        params = {}
        for name, shape in parameter_shapes(dims):
            if name.endswith(".bias"):
                data = np.zeros(shape)
            else:
                fan_in = int(np.prod(shape[1:]))
                fan_out = shape[0] * int(np.prod(shape[2:]))
                limit = np.sqrt(6.0 / (fan_in + fan_out))
                data = rng.uniform(-limit, limit, size=shape)
            params[name] = Tensor(data, requires_grad=True)
        return ModelParams(dims, params)

    def names(self) -> list[str]:
        return sorted(self.params)

    def zero_grad(self) -> None:
        for t in self.params.values():
            t.grad = None

    def load_arrays(self, arrays: dict[str, np.ndarray]) -> None:
        """Overwrite matching parameter values in place (warm start)."""
        for name, value in arrays.items():
            if name in self.params:
                if self.params[name].shape != value.shape:
                    raise ShapeError(f"checkpoint tensor {name} has shape "
                                     f"{value.shape}, model expects "
                                     f"{self.params[name].shape}")
                self.params[name].data = np.asarray(value, dtype=np.float64).copy()


@dataclass(frozen=True)
class FocalLossParams:
    alpha_pos: float = 2.0
    alpha_neg: float = 1.0
    gamma: float = 0.25

    def __post_init__(self):
        if self.alpha_pos < 0 or self.alpha_neg < 0 or self.gamma < 0:
            raise ShapeError("focal loss weights must be non-negative")


@dataclass
class OccupancyPrediction:
    probs: Tensor   # (D, H, W), sigmoid output in (0, 1)


def _encode_views(images: np.ndarray, mp: ModelParams):
    """Per-view feature and depth rasters from (N, C, h, w) input images."""
    p = mp.params
    feats, dists = [], []
    for view in images:
        x = Tensor(view)
        h1 = ad.relu(ad.conv2d(x, p["encoder.conv1.weight"], p["encoder.conv1.bias"]))
        h2 = ad.relu(ad.conv2d(h1, p["encoder.conv2.weight"], p["encoder.conv2.bias"]))
        logits = ad.conv2d(h2, p["depth_head.conv.weight"], p["depth_head.conv.bias"])
        feats.append(h2)
        dists.append(ad.softmax_over_depth(logits))
    return feats, dists


def _voxel_features(frame, mp: ModelParams, frustum: FrustumSpec,
                    spec: VoxelGridSpec):
    feats, dists = _encode_views(frame.images, mp)
    bev = lift_splat(feats, dists, frame.rig, frustum, spec)
    return bev_to_voxel(bev, spec.dims[0])


def forward_occupancy(frame, mp: ModelParams, frustum: FrustumSpec,
                      spec: VoxelGridSpec) -> OccupancyPrediction:
    """Per-voxel occupancy probability for one multi-camera frame."""
    vox = _voxel_features(frame, mp, frustum, spec)
    p = mp.params
    h = ad.relu(ad.conv3d(vox.data, p["decoder.conv1.weight"], p["decoder.conv1.bias"]))
    logits = ad.conv3d(h, p["decoder.conv2.weight"], p["decoder.conv2.bias"])
    return OccupancyPrediction(ad.sigmoid(ad.reshape(logits, spec.dims)))


def forward_semantic(frame, mp: ModelParams, frustum: FrustumSpec,
                     spec: VoxelGridSpec) -> Tensor:
    """(K, D, H, W) class logits for one multi-camera frame."""
    vox = _voxel_features(frame, mp, frustum, spec)
    p = mp.params
    h = ad.relu(ad.conv3d(vox.data, p["semantic.conv1.weight"], p["semantic.conv1.bias"]))
    return ad.conv3d(h, p["semantic.conv2.weight"], p["semantic.conv2.bias"])


def focal_loss(predictions, targets, params: FocalLossParams) -> Tensor:
    """Binary focal loss averaged over the batch and all voxels.

    loss = -(1/batch)(1/n) sum_i sum_j alpha_t (1 - p_t)^gamma log(p_t)
    with p_t = p, alpha_t = alpha_pos where the target is occupied and
    p_t = 1 - p, alpha_t = alpha_neg where it is free.
    """
    preds = [p.probs if isinstance(p, OccupancyPrediction) else p
             for p in predictions]
    targs = [t.data if isinstance(t, OccupancyGrid) else np.asarray(t)
             for t in targets]
    if len(preds) != len(targs) or not preds:
        raise ShapeError("focal_loss needs matching non-empty batches")
    total = None
    n = None
    for pred, targ in zip(preds, targs):
        t = targ.astype(np.float64)
        if pred.shape != t.shape:
            raise ShapeError(f"prediction {pred.shape} vs target {t.shape}")
        if n is None:
            n = t.size
        # p_t = t * p + (1 - t) * (1 - p), written as an affine map of p
        pt = ad.add_const(ad.mul_const(pred, 2.0 * t - 1.0), 1.0 - t)
        pt = ad.clamp(pt, PROB_EPS, 1.0 - PROB_EPS)
        focus = ad.power(ad.add_const(ad.mul_const(pt, -1.0), 1.0), params.gamma)
        alpha_t = np.where(t == 1.0, params.alpha_pos, params.alpha_neg)
        term = ad.mul_const(ad.mul(focus, ad.log(pt)), -alpha_t)
        sample = ad.tensor_sum(term)
        total = sample if total is None else ad.add(total, sample)
    return ad.scale(total, 1.0 / (len(preds) * n))


def semantic_loss(logits_batch, grids, class_weights) -> Tensor:
    """Weighted cross-entropy over softmaxed class logits, free class included.

    ``class_weights`` has one non-negative weight per class id; the loss is
    the weighted negative log-likelihood averaged over batch and voxels.
    """
    logits_list = list(logits_batch)
    labels_list = [g.data if isinstance(g, SemanticGrid) else np.asarray(g)
                   for g in grids]
    if len(logits_list) != len(labels_list) or not logits_list:
        raise ShapeError("semantic_loss needs matching non-empty batches")
    weights = np.asarray(class_weights, dtype=np.float64)
    k = logits_list[0].shape[0]
    if weights.shape != (k,):
        raise ShapeError(f"need {k} class weights, got {weights.shape}")
    total = None
    n = None
    for logits, labels in zip(logits_list, labels_list):
        lab = labels.astype(np.int64).reshape(-1)
        if logits.shape[1:] != labels.shape:
            raise ShapeError(f"logits {logits.shape} vs labels {labels.shape}")
        if lab.min(initial=0) < 0 or lab.max(initial=0) >= k:
            raise ShapeError(f"labels must lie in [0, {k})")
        if n is None:
            n = lab.size
        z = logits.data.reshape(k, -1)
        zmax = z.max(axis=0, keepdims=True)
        ez = np.exp(z - zmax)
        sez = ez.sum(axis=0, keepdims=True)
        logp = z - zmax - np.log(sez)
        cols = np.arange(lab.size)
        w = weights[lab]
        value = -(w * logp[lab, cols]).sum()

        def vjp(g, softmax=ez / sez, lab=lab, cols=cols, w=w, shape=logits.shape):
            gz = softmax * w
            gz[lab, cols] -= w
            return float(g) * gz.reshape(shape)

        sample = _op(np.asarray(value), (logits,), (vjp,))
        total = sample if total is None else ad.add(total, sample)
    return ad.scale(total, 1.0 / (len(logits_list) * n))


@dataclass
class GradCheckReport:
    """Max relative error per parameter block, from central differences."""

    errors: dict[str, float]
    step: float

    @property
    def max_error(self) -> float:
        return max(self.errors.values())

    def ok(self, tol: float) -> bool:
        return self.max_error < tol


def grad_check(fn, inputs: dict[str, np.ndarray], step: float = 1e-5) -> GradCheckReport:
    """Compare analytic gradients of ``fn`` against central differences.

    ``fn`` maps a dict of Tensors to a scalar Tensor.  The relative error
    uses |a - n| / max(1, |a|, |n|) per element, so it degrades to an
    absolute error for tiny gradients.
    """
    tensors = {k: Tensor(np.asarray(v, dtype=np.float64), requires_grad=True)
               for k, v in inputs.items()}
    out = fn(tensors)
    out.backward()
    errors = {}
    for name, t in tensors.items():
        analytic = np.zeros(t.shape) if t.grad is None else t.grad
        numeric = np.zeros(t.shape)
        flat = t.data.reshape(-1)
        num_flat = numeric.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            hi = fn({k: Tensor(v.data) for k, v in tensors.items()}).item()
            flat[i] = orig - step
            lo = fn({k: Tensor(v.data) for k, v in tensors.items()}).item()
            flat[i] = orig
            num_flat[i] = (hi - lo) / (2.0 * step)
        denom = np.maximum(1.0, np.maximum(np.abs(analytic), np.abs(numeric)))
        errors[name] = float((np.abs(analytic - numeric) / denom).max())
    return GradCheckReport(errors, step)
