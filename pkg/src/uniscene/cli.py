"""Command-line front end.

Subcommands: synth, gen-labels, pretrain, finetune, eval, ablate, dump-grid.
Every command is a pure function of its inputs plus the seed; the
UNISCENE_SEED environment variable overrides the config seed.  Exit codes:
0 success, 1 usage error, 2 data/contract error.
"""

from __future__ import annotations

import argparse
import os
import sys
from pathlib import Path

from . import dataio
from .checkpoint import load_checkpoint, strip_decoder
from .config import RunConfig
from .errors import UniSceneError, UsageError
from .pointcloud import ego_frame
from .scene import build_scene
from .sensors import recover_velocities
from .training import (SyntheticDataset, TrainConfig, ablate, ablation_to_csv,
                       build_dataset, evaluate, finetune, pretrain,
                       report_to_csv)
from .voxels import (FUSE_COMPENSATE, fuse_frames, voxelize_occupancy,
                     voxelize_semantic)


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _load_config(path: str | None, overrides=None) -> RunConfig:
    if path is None:
        cfg = RunConfig.from_dict({})
    else:
        cfg = RunConfig.from_text(Path(path).read_text("utf-8"))
    if overrides:
        cfg = cfg.with_overrides(overrides)
    env_seed = os.environ.get("UNISCENE_SEED")
    if env_seed is not None:
        try:
            cfg = cfg.with_overrides({"run.seed": int(env_seed)})
        except ValueError:
            raise UsageError(f"UNISCENE_SEED must be an integer, got {env_seed!r}")
    return cfg


def _dataset_from_dir(path: str) -> tuple[RunConfig, SyntheticDataset]:
    config, sequences = dataio.read_dataset(path)
    return config, SyntheticDataset(sequences,
                                    config.get("dataset.holdout_fraction"))


def _check_sensor_sections(dataset_cfg: RunConfig, cfg: RunConfig) -> None:
    """The training config must agree with the dataset on sensor geometry."""
    sections = ("scene.", "trajectory.", "sequence.", "dataset.", "rig.", "lidar.")
    for key, value in dataset_cfg.values:
        if key.startswith(sections) and cfg.get(key) != value:
            raise UniSceneError(
                f"config mismatch with dataset: {key} is {cfg.get(key)!r}, "
                f"dataset was generated with {value!r}")


def cmd_synth(args) -> int:
    cfg = _load_config(args.config)
    dataset = build_dataset(cfg)
    dataio.write_dataset(args.out, cfg, dataset.sequences)
    print(f"wrote {len(dataset.sequences)} sequences to {args.out}")
    return 0


def cmd_gen_labels(args) -> int:
    dataset_cfg, dataset = _dataset_from_dir(args.dataset_dir)
    cfg = dataset_cfg if args.config is None else _load_config(args.config)
    grid = cfg.grid_spec()
    mode = args.mode
    out_root = Path(args.out) if args.out else Path(args.dataset_dir) / "labels"
    tag = f"f{args.frames}_{mode}"
    n_grids = 0
    for s, frames in enumerate(dataset.sequences):
        keyframes = [f for f in frames if f.is_keyframe]
        if mode == FUSE_COMPENSATE:
            scene_cfg = dataset_cfg.scene_config()
            from .config import STREAM_SCENE, rng_seed
            scene = build_scene(rng_seed(dataset_cfg.get("run.seed"),
                                         STREAM_SCENE, s), scene_cfg)
            keyframes = [
                _with_velocities(f, scene) for f in keyframes
            ]
        for j in range(len(keyframes)):
            fused = fuse_frames(keyframes, j, args.frames, mode)
            occ = voxelize_occupancy(fused, grid)
            sem = voxelize_semantic(fused, grid)
            base = out_root / tag / f"seq_{s:03d}"
            dataio.atomic_write_bytes(base / f"kf_{j:02d}.uoog",
                                      dataio.occupancy_to_bytes(occ))
            dataio.atomic_write_bytes(base / f"kf_{j:02d}.uosg",
                                      dataio.semantic_to_bytes(sem))
            n_grids += 1
    print(f"wrote {n_grids} occupancy+semantic grid pairs under {out_root / tag}")
    return 0


def _with_velocities(frame, scene):
    cloud = recover_velocities(frame.point_cloud, scene, frame.timestamp,
                               frame.ego_pose)
    frame.point_cloud = cloud
    return frame


def cmd_pretrain(args) -> int:
    dataset_cfg, dataset = _dataset_from_dir(args.dataset_dir)
    cfg = dataset_cfg if args.config is None else _load_config(args.config)
    _check_sensor_sections(dataset_cfg, cfg)
    ck = pretrain(dataset, TrainConfig.from_run(cfg))
    ck.save(args.out)
    print(f"pretrained checkpoint -> {args.out} (digest {ck.digest()[:12]})")
    return 0


def cmd_finetune(args) -> int:
    dataset_cfg, dataset = _dataset_from_dir(args.dataset_dir)
    cfg = dataset_cfg if args.config is None else _load_config(args.config)
    if args.label_fraction is not None:
        cfg = cfg.with_overrides({"train.label_fraction": args.label_fraction})
    _check_sensor_sections(dataset_cfg, cfg)
    if args.scratch:
        init = None
    else:
        init = strip_decoder(load_checkpoint(args.init))
    ck, report = finetune(init, dataset, TrainConfig.from_run(cfg))
    ck.save(args.out)
    if args.report:
        dataio.atomic_write_text(args.report, report_to_csv(report))
    print(f"finetuned checkpoint -> {args.out} (mIoU {report.miou:.4f})")
    return 0


def cmd_eval(args) -> int:
    _, dataset = _dataset_from_dir(args.dataset_dir)
    ck = load_checkpoint(args.checkpoint)
    report = evaluate(ck, dataset)
    dataio.atomic_write_text(args.report, report_to_csv(report))
    shown = report.miou if report.miou is not None else report.binary_iou
    print(f"report -> {args.report} (headline {shown:.4f})")
    return 0


def cmd_ablate(args) -> int:
    cfg = _load_config(args.config)
    seeds = [int(s) for s in args.seeds.split(",") if s]
    if not seeds:
        raise UsageError("--seeds needs a comma-separated integer list")
    rows = ablate(args.grid, cfg, seeds)
    out = Path(args.out)
    dataio.atomic_write_text(out / f"{args.grid}.csv", ablation_to_csv(rows))
    print(f"wrote {len(rows)} rows to {out / f'{args.grid}.csv'}")
    return 0


def cmd_dump_grid(args) -> int:
    data = Path(args.grid_file).read_bytes()
    if data[:4] == dataio.MAGIC_OCC:
        grid = dataio.occupancy_from_bytes(data)
    elif data[:4] == dataio.MAGIC_SEM:
        grid = dataio.semantic_from_bytes(data)
    else:
        raise UniSceneError(
            f"{args.grid_file}: not an occupancy or semantic grid file")
    if args.format == "ascii-slices":
        sys.stdout.write(dataio.dump_grid_ascii(grid))
    else:
        sys.stdout.write(dataio.dump_grid_csv(grid))
    return 0


def build_parser() -> _Parser:
    p = _Parser(prog="uniscene",
                description="Synthetic multi-camera occupancy pre-training pipeline")
    sub = p.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("synth", help="generate a synthetic dataset")
    sp.add_argument("--config", default=None)
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_synth)

    sp = sub.add_parser("gen-labels", help="fuse clouds and write grid files")
    sp.add_argument("dataset_dir")
    sp.add_argument("--frames", type=int, default=3)
    sp.add_argument("--mode", default="keep_all",
                    choices=["keep_all", "drop_dynamic", "compensate"])
    sp.add_argument("--config", default=None)
    sp.add_argument("--out", default=None)
    sp.set_defaults(func=cmd_gen_labels)

    sp = sub.add_parser("pretrain", help="occupancy pre-training")
    sp.add_argument("dataset_dir")
    sp.add_argument("--config", default=None)
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_pretrain)

    sp = sub.add_parser("finetune", help="semantic fine-tuning")
    sp.add_argument("dataset_dir")
    sp.add_argument("--init", default=None)
    sp.add_argument("--scratch", action="store_true")
    sp.add_argument("--label-fraction", type=float, default=None)
    sp.add_argument("--config", default=None)
    sp.add_argument("--out", required=True)
    sp.add_argument("--report", default=None)
    sp.set_defaults(func=cmd_finetune)

    sp = sub.add_parser("eval", help="evaluate a checkpoint")
    sp.add_argument("checkpoint")
    sp.add_argument("dataset_dir")
    sp.add_argument("--report", required=True)
    sp.set_defaults(func=cmd_eval)

    sp = sub.add_parser("ablate", help="run an ablation grid")
    sp.add_argument("--config", default=None)
    sp.add_argument("--grid", required=True,
                    choices=["frames", "fraction", "loss", "supervision"])
    sp.add_argument("--seeds", required=True)
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_ablate)

    sp = sub.add_parser("dump-grid", help="print a grid file")
    sp.add_argument("grid_file")
    sp.add_argument("--format", default="ascii-slices",
                    choices=["ascii-slices", "csv-points"])
    sp.set_defaults(func=cmd_dump_grid)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    try:
        if args.command == "finetune" and not args.scratch and args.init is None:
            raise UsageError("finetune needs --init CHECKPOINT or --scratch")
        return args.func(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except FileNotFoundError as exc:
        print(f"error: missing file: {exc}", file=sys.stderr)
        return 2
    except UniSceneError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
