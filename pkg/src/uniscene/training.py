"""Pre-training, fine-tuning, evaluation and the ablation harness.

Protocol: pre-train encoder + depth head + occupancy decoder on fused-LiDAR
binary occupancy (label-free), discard the decoder, warm-start the encoder
and depth head, then fine-tune everything (nothing frozen) on semantic
scene completion with a randomly initialized semantic head.

Each run is a pure function of (seed, config, dataset): parameter init,
epoch shuffling and label-subset selection draw from separate seed streams,
and optimizer updates walk parameters in sorted-name order.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .checkpoint import (STAGE_FINETUNED, STAGE_PRETRAINED, STAGE_SCRATCH,
                         Checkpoint, strip_decoder)
from .config import (STREAM_INIT, STREAM_SCENE, STREAM_SHUFFLE, STREAM_SUBSET,
                     STREAM_TRAJECTORY, RunConfig, rng_seed)
from .errors import NonFiniteError, TrainingDivergedError, UniSceneError
from .model import (ModelParams, focal_loss, forward_occupancy,
                    forward_semantic, semantic_loss)
from .scene import build_scene, make_trajectory
from .sensors import generate_sequence
from .voxels import fuse_frames, voxelize_occupancy, voxelize_semantic

__all__ = [
    "TrainConfig", "EvalReport", "SyntheticDataset", "build_dataset",
    "pretrain", "finetune", "evaluate", "ablate", "strip_decoder",
    "scratch_checkpoint", "optimizer_step", "OptimizerState",
    "report_to_csv", "ablation_to_csv",
]


@dataclass(frozen=True)
class TrainConfig:
    """Trainer-facing slice of the run configuration."""

    epochs: int
    batch: int
    learning_rate: float
    optimizer: str
    beta1: float
    beta2: float
    eps: float
    seed: int
    num_fusion_frames: int
    dynamic_mode: str
    label_fraction: float
    finetune_epochs: int
    finetune_fusion_frames: int
    finetune_dynamic_mode: str
    run: RunConfig

    @staticmethod
    def from_run(run: RunConfig) -> "TrainConfig":
        g = run.get
        return TrainConfig(
            epochs=g("train.epochs"), batch=g("train.batch"),
            learning_rate=g("train.lr"), optimizer=g("train.optimizer"),
            beta1=g("train.beta1"), beta2=g("train.beta2"), eps=g("train.eps"),
            seed=g("run.seed"),
            num_fusion_frames=g("train.fusion_frames"),
            dynamic_mode=g("train.dynamic_mode"),
            label_fraction=g("train.label_fraction"),
            finetune_epochs=g("train.finetune_epochs"),
            finetune_fusion_frames=g("train.finetune_fusion_frames"),
            finetune_dynamic_mode=g("train.finetune_dynamic_mode"),
            run=run)


@dataclass
class EvalReport:
    binary_iou: float | None
    per_class_iou: list[tuple[int, float]]
    miou: float | None
    loss_curve: list[float] = field(default_factory=list)


@dataclass
class SyntheticDataset:
    """Generated sequences plus the train/held-out split by sequence index."""

    sequences: list
    holdout_fraction: float

    def keyframes(self, s: int) -> list:
        return [f for f in self.sequences[s] if f.is_keyframe]

    def _split(self) -> int:
        n = len(self.sequences)
        n_hold = max(1, int(round(n * self.holdout_fraction)))
        return n - n_hold

    def train_sample_ids(self) -> list[tuple[int, int]]:
        cut = self._split()
        return [(s, j) for s in range(cut)
                for j in range(len(self.keyframes(s)))]

    def eval_sample_ids(self) -> list[tuple[int, int]]:
        cut = self._split()
        return [(s, j) for s in range(cut, len(self.sequences))
                for j in range(len(self.keyframes(s)))]


def build_dataset(run: RunConfig) -> SyntheticDataset:
    """Generate all sequences for a run; pure function of the config."""
    g = run.get
    scene_cfg = run.scene_config()
    rig = run.rig()
    lidar = run.lidar_spec()
    sequences = []
    for s in range(g("dataset.n_sequences")):
        scene = build_scene(rng_seed(g("run.seed"), STREAM_SCENE, s), scene_cfg)
        yaw0 = 0.0
        if g("trajectory.random_yaw"):
            traj_rng = np.random.default_rng(
                rng_seed(g("run.seed"), STREAM_TRAJECTORY, s))
            yaw0 = float(traj_rng.uniform(0.0, 2.0 * np.pi))
        trajectory = make_trajectory(
            n_frames=g("trajectory.n_frames"), dt=g("trajectory.dt"),
            speed=g("trajectory.speed"), height=g("trajectory.height"),
            yaw0=yaw0, yaw_rate=g("trajectory.yaw_rate"))
        sequences.append(generate_sequence(
            scene, trajectory, rig, lidar,
            keyframe_stride=g("sequence.keyframe_stride"),
            camera_max_range=g("rig.max_range")))
    return SyntheticDataset(sequences, g("dataset.holdout_fraction"))


def occupancy_targets(dataset: SyntheticDataset, sample_ids, num_frames: int,
                      mode: str, grid_spec) -> dict:
    out = {}
    for s, j in sample_ids:
        fused = fuse_frames(dataset.keyframes(s), j, num_frames, mode)
        out[(s, j)] = voxelize_occupancy(fused, grid_spec)
    return out


def semantic_targets(dataset: SyntheticDataset, sample_ids, num_frames: int,
                     mode: str, grid_spec) -> dict:
    out = {}
    for s, j in sample_ids:
        fused = fuse_frames(dataset.keyframes(s), j, num_frames, mode)
        out[(s, j)] = voxelize_semantic(fused, grid_spec)
    return out


# --- optimizer --------------------------------------------------------------

@dataclass
class OptimizerState:
    step_count: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def optimizer_step(params: dict, grads: dict, state: OptimizerState,
                   config: TrainConfig) -> None:
    """One in-place update over all parameters, in sorted-name order."""
    state.step_count += 1
    t = state.step_count
    for name in sorted(params):
        p = params[name]
        g = grads.get(name)
        if g is None:
            g = np.zeros_like(p)
        if config.optimizer == "sgd":
            update = config.learning_rate * g
        else:
            m = state.m.get(name)
            if m is None:
                m = np.zeros_like(p)
                state.v[name] = np.zeros_like(p)
            v = state.v[name]
            m = config.beta1 * m + (1.0 - config.beta1) * g
            v = config.beta2 * v + (1.0 - config.beta2) * g * g
            state.m[name], state.v[name] = m, v
            m_hat = m / (1.0 - config.beta1 ** t)
            v_hat = v / (1.0 - config.beta2 ** t)
            update = config.learning_rate * m_hat / (np.sqrt(v_hat) + config.eps)
        if not np.all(np.isfinite(update)):
            raise TrainingDivergedError(f"non-finite update for {name}")
        p -= update


# --- training loops ---------------------------------------------------------

def _train_loop(mp: ModelParams, dataset: SyntheticDataset, sample_ids,
                targets: dict, loss_fn, forward_fn, epochs: int,
                config: TrainConfig) -> list[float]:
    frustum = config.run.frustum_spec()
    grid = config.run.grid_spec()
    shuffle_rng = np.random.default_rng(rng_seed(config.seed, STREAM_SHUFFLE))
    state = OptimizerState()
    curve = []
    kf_cache = {s: dataset.keyframes(s) for s, _ in sample_ids}
    for epoch in range(epochs):
        order = shuffle_rng.permutation(len(sample_ids))
        epoch_loss = 0.0
        for start in range(0, len(order), config.batch):
            chunk = [sample_ids[i] for i in order[start:start + config.batch]]
            mp.zero_grad()
            try:
                preds = [forward_fn(kf_cache[s][j], mp, frustum, grid)
                         for s, j in chunk]
                loss = loss_fn(preds, [targets[sid] for sid in chunk])
                loss.backward()
            except NonFiniteError as exc:
                raise TrainingDivergedError(
                    f"non-finite loss at epoch {epoch}: {exc}") from exc
            grads = {name: t.grad for name, t in mp.params.items()
                     if t.grad is not None}
            optimizer_step({n: t.data for n, t in mp.params.items()}, grads,
                           state, config)
            epoch_loss += loss.item() * len(chunk)
        curve.append(epoch_loss / len(sample_ids))
    return curve


def pretrain(dataset: SyntheticDataset, config: TrainConfig) -> Checkpoint:
    """Occupancy pre-training on LiDAR-fused labels (no semantics consulted)."""
    ids = dataset.train_sample_ids()
    if not ids:
        raise UniSceneError("dataset has no training samples")
    grid = config.run.grid_spec()
    targets = occupancy_targets(dataset, ids, config.num_fusion_frames,
                                config.dynamic_mode, grid)
    mp = ModelParams.initialize(config.run.model_dims(),
                                rng_seed(config.seed, STREAM_INIT))
    focal = config.run.focal_params()
    curve = _train_loop(mp, dataset, ids, targets,
                        lambda preds, targs: focal_loss(preds, targs, focal),
                        forward_occupancy, config.epochs, config)
    return Checkpoint(
        tensors={n: t.data.astype(np.float32) for n, t in mp.params.items()},
        stage=STAGE_PRETRAINED, epoch=config.epochs,
        config_text=config.run.canonical_text(), loss_curve=curve)


def scratch_checkpoint(run: RunConfig) -> Checkpoint:
    """Fresh random parameters, tagged scratch (the no-pre-training baseline)."""
    config = TrainConfig.from_run(run)
    mp = ModelParams.initialize(run.model_dims(), rng_seed(config.seed, STREAM_INIT))
    return Checkpoint(
        tensors={n: t.data.astype(np.float32) for n, t in mp.params.items()},
        stage=STAGE_SCRATCH, epoch=0, config_text=run.canonical_text())


def _label_subset(ids, fraction: float, seed: int):
    """Seeded nested subsets: smaller fractions are prefixes of larger ones."""
    rng = np.random.default_rng(rng_seed(seed, STREAM_SUBSET))
    order = rng.permutation(len(ids))
    count = min(len(ids), int(math.ceil(fraction * len(ids))))
    return [ids[i] for i in sorted(order[:count])]


def finetune(init: Checkpoint | None, dataset: SyntheticDataset,
             config: TrainConfig) -> tuple[Checkpoint, EvalReport]:
    """Semantic fine-tuning; warm-starts from ``init`` when given.

    The semantic head is always freshly initialized and no parameters are
    frozen.  ``label_fraction`` selects a seeded nested subset of training
    samples.  Returns the fine-tuned checkpoint and the held-out report.
    """
    ids = _label_subset(dataset.train_sample_ids(), config.label_fraction,
                        config.seed)
    if not ids:
        raise UniSceneError("label fraction selected no training samples")
    grid = config.run.grid_spec()
    targets = semantic_targets(dataset, ids, config.finetune_fusion_frames,
                               config.finetune_dynamic_mode, grid)
    mp = ModelParams.initialize(config.run.model_dims(),
                                rng_seed(config.seed, STREAM_INIT))
    if init is not None:
        mp.load_arrays(init.tensors)
    weights = config.run.class_weights()
    curve = _train_loop(mp, dataset, ids, targets,
                        lambda preds, targs: semantic_loss(preds, targs, weights),
                        forward_semantic, config.finetune_epochs, config)
    ck = Checkpoint(
        tensors={n: t.data.astype(np.float32) for n, t in mp.params.items()},
        stage=STAGE_FINETUNED, epoch=config.finetune_epochs,
        config_text=config.run.canonical_text(),
        parent_digest=init.digest() if init is not None else None,
        loss_curve=curve)
    report = _evaluate_semantic(mp, dataset, config)
    report.loss_curve = curve
    return ck, report


def _evaluate_semantic(mp: ModelParams, dataset: SyntheticDataset,
                       config: TrainConfig) -> EvalReport:
    grid = config.run.grid_spec()
    frustum = config.run.frustum_spec()
    ids = dataset.eval_sample_ids()
    if not ids:
        raise UniSceneError("dataset has no held-out samples")
    targets = semantic_targets(dataset, ids, config.finetune_fusion_frames,
                               config.finetune_dynamic_mode, grid)
    k = config.run.get("model.num_classes")
    tp = np.zeros(k)
    fp = np.zeros(k)
    fn = np.zeros(k)
    btp = bfp = bfn = 0
    with ad.no_grad():
        for s, j in ids:
            frame = dataset.keyframes(s)[j]
            logits = forward_semantic(frame, mp, frustum, grid)
            pred = logits.data.argmax(axis=0)
            gt = targets[(s, j)].data.astype(np.int64)
            for c in range(k):
                tp[c] += np.sum((pred == c) & (gt == c))
                fp[c] += np.sum((pred == c) & (gt != c))
                fn[c] += np.sum((pred != c) & (gt == c))
            btp += int(np.sum((pred != 0) & (gt != 0)))
            bfp += int(np.sum((pred != 0) & (gt == 0)))
            bfn += int(np.sum((pred == 0) & (gt != 0)))
    per_class = []
    for c in range(1, k):
        denom = tp[c] + fp[c] + fn[c]
        if denom > 0:
            per_class.append((c, float(tp[c] / denom)))
    miou = float(np.mean([iou for _, iou in per_class])) if per_class else 0.0
    denom_b = btp + bfp + bfn
    binary = float(btp / denom_b) if denom_b > 0 else 1.0
    return EvalReport(binary_iou=binary, per_class_iou=per_class, miou=miou)


def _evaluate_binary(mp: ModelParams, dataset: SyntheticDataset,
                     config: TrainConfig) -> EvalReport:
    grid = config.run.grid_spec()
    frustum = config.run.frustum_spec()
    ids = dataset.eval_sample_ids()
    if not ids:
        raise UniSceneError("dataset has no held-out samples")
    targets = occupancy_targets(dataset, ids, config.num_fusion_frames,
                                config.dynamic_mode, grid)
    tp = fp = fn = 0
    with ad.no_grad():
        for s, j in ids:
            frame = dataset.keyframes(s)[j]
            pred = forward_occupancy(frame, mp, frustum, grid).probs.data >= 0.5
            gt = targets[(s, j)].data.astype(bool)
            tp += int(np.sum(pred & gt))
            fp += int(np.sum(pred & ~gt))
            fn += int(np.sum(~pred & gt))
    denom = tp + fp + fn
    binary = float(tp / denom) if denom > 0 else 1.0
    return EvalReport(binary_iou=binary, per_class_iou=[], miou=None)


def evaluate(ck: Checkpoint, dataset: SyntheticDataset) -> EvalReport:
    """Deterministic held-out metrics for a checkpoint on a dataset.

    Fine-tuned checkpoints get semantic per-class IoU / mIoU; pre-trained
    ones get binary occupancy IoU at threshold 0.5.  The evaluation config
    (grid, frustum, fusion settings) comes from the checkpoint provenance.
    """
    run = RunConfig.from_text(ck.config_text)
    config = TrainConfig.from_run(run)
    mp = ModelParams.initialize(run.model_dims(), rng_seed(config.seed, STREAM_INIT))
    required = ("encoder.", "depth_head.", "semantic.") \
        if ck.stage == STAGE_FINETUNED else ("encoder.", "depth_head.", "decoder.")
    have = set(ck.tensors)
    missing = [n for n in mp.params if n.startswith(required) and n not in have]
    if missing:
        raise UniSceneError(
            f"checkpoint (stage {ck.stage}) lacks tensors: {missing[:3]} ...")
    mp.load_arrays(ck.tensors)
    if ck.stage == STAGE_FINETUNED:
        return _evaluate_semantic(mp, dataset, config)
    return _evaluate_binary(mp, dataset, config)


# --- reports ----------------------------------------------------------------

def report_to_csv(report: EvalReport) -> str:
    lines = ["metric,value"]
    lines.append("binary_iou," + ("" if report.binary_iou is None
                                  else repr(report.binary_iou)))
    lines.append("miou," + ("" if report.miou is None else repr(report.miou)))
    for c, iou in report.per_class_iou:
        lines.append(f"iou_class_{c},{iou!r}")
    for i, loss in enumerate(report.loss_curve, start=1):
        lines.append(f"loss_epoch_{i:03d},{loss!r}")
    return "\n".join(lines) + "\n"


# --- ablation harness -------------------------------------------------------

ABLATION_GRIDS = {
    "frames": [1, 3, 5],
    "fraction": [0.25, 0.5, 0.75, 1.0],
    "loss": [(2.0, 0.25), (2.0, 2.0), (1.0, 2.0)],
    "supervision": ["pretext", "supervised"],
}


def _full_pipeline_miou(run: RunConfig, init_from_pretrain: bool = True) -> float:
    dataset = build_dataset(run)
    config = TrainConfig.from_run(run)
    init = None
    if init_from_pretrain:
        init = strip_decoder(pretrain(dataset, config))
    _, report = finetune(init, dataset, config)
    return report.miou


def ablate(kind: str, base: RunConfig, seeds: list[int]) -> list[tuple[str, str, str, float]]:
    """Run the pretrain->strip->finetune->evaluate pipeline over one grid.

    Returns rows (grid, point, seed, miou) sorted by (point, seed), with a
    mean row per grid point appended (seed column = "mean").
    """
    if kind not in ABLATION_GRIDS:
        raise UniSceneError(f"unknown ablation grid {kind!r} "
                            f"(have: {', '.join(sorted(ABLATION_GRIDS))})")
    if not seeds:
        raise UniSceneError("need at least one seed")
    rows = []
    for seed in seeds:
        seeded = base.with_overrides({"run.seed": seed})
        if kind == "fraction":
            # one pre-training per seed serves every fraction
            dataset = build_dataset(seeded)
            config = TrainConfig.from_run(seeded)
            init = strip_decoder(pretrain(dataset, config))
            for frac in ABLATION_GRIDS[kind]:
                cfg = TrainConfig.from_run(
                    seeded.with_overrides({"train.label_fraction": frac}))
                _, report = finetune(init, dataset, cfg)
                rows.append((kind, repr(float(frac)), str(seed), report.miou))
        elif kind == "frames":
            for frames in ABLATION_GRIDS[kind]:
                run = seeded.with_overrides({"train.fusion_frames": frames})
                rows.append((kind, str(frames), str(seed),
                             _full_pipeline_miou(run)))
        elif kind == "loss":
            for alpha, gamma in ABLATION_GRIDS[kind]:
                run = seeded.with_overrides({"loss.alpha_pos": alpha,
                                             "loss.gamma": gamma})
                point = f"alpha{alpha!r}-gamma{gamma!r}"
                rows.append((kind, point, str(seed), _full_pipeline_miou(run)))
        else:  # supervision: does annotation-aware fusion of pretext labels help
            for point in ABLATION_GRIDS[kind]:
                mode = "keep_all" if point == "pretext" else "drop_dynamic"
                run = seeded.with_overrides({"train.dynamic_mode": mode})
                rows.append((kind, point, str(seed), _full_pipeline_miou(run)))
    rows.sort(key=lambda r: (r[1], r[2]))
    means = []
    for point in sorted({r[1] for r in rows}):
        vals = [r[3] for r in rows if r[1] == point]
        means.append((kind, point, "mean", float(np.mean(vals))))
    return rows + means


def ablation_to_csv(rows) -> str:
    lines = ["grid,point,seed,miou"]
    for grid, point, seed, miou in rows:
        lines.append(f"{grid},{point},{seed},{miou!r}")
    return "\n".join(lines) + "\n"
