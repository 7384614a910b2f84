"""Command-line entry point: data generation, LR sweep, training, ablations,
evaluation of KITTI-format prediction directories, and depth prediction.

Exit codes: 0 success, 1 usage error, 2 runtime failure. Diagnostics go to
stderr; results go to files only. Every command drops a resolved-config
snapshot next to its outputs.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from pathlib import Path

import numpy as np

from .data import (
    SyntheticDataset,
    read_kitti_png,
    read_rgb_png,
    write_dataset_dir,
    write_kitti_png,
)
from .harness import (
    ABLATION_AXES,
    ConfigConflictError,
    ConfigError,
    ExperimentConfig,
    TrainingDiverged,
    lr_find,
    restore,
    run_ablation,
    train,
)
from .losses import silog

__all__ = ["main", "build_parser"]


class UsageError(Exception):
    pass


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mtdepth",
        description="Joint regression + depth-interval-classification depth estimation toolkit",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add_config(p):
        p.add_argument("--config", type=Path, default=None,
                       help="experiment config JSON (defaults apply when omitted)")
        p.add_argument("--seed", type=int, default=None, help="run seed (default 0)")

    p = sub.add_parser("gen-data", help="materialize a synthetic dataset as PNG pairs")
    add_config(p)
    p.add_argument("--out", type=Path, required=True, help="output directory")
    p.add_argument("--count", type=int, default=None,
                   help="number of samples (default: config train_size, 200)")

    p = sub.add_parser("lr-find", help="learning-rate range test")
    add_config(p)
    p.add_argument("--out", type=Path, required=True, help="output directory")
    p.add_argument("--steps", type=int, default=250, help="sweep steps (default 250)")
    p.add_argument("--alpha-start", type=float, default=1e-8,
                   help="lowest rate (default 1e-8)")
    p.add_argument("--alpha-end", type=float, default=10.0,
                   help="highest rate (default 10)")

    p = sub.add_parser("train", help="train one configuration")
    add_config(p)
    p.add_argument("--out", type=Path, required=True, help="output directory")
    p.add_argument("--iters", type=int, default=None,
                   help="total optimizer steps (default 2000)")
    p.add_argument("--batch-size", type=int, default=None, help="batch size (default 16)")
    p.add_argument("--alpha0", type=float, default=None,
                   help="initial learning rate (default: picked by lr range test)")
    p.add_argument("--weighting", choices=["learned", "equal", "manual"], default=None,
                   help="task weighting mode (default learned)")
    p.add_argument("--manual-weights", type=str, default=None, metavar="W_REG,W_CLS",
                   help="fixed weights for manual mode (default 5,1)")
    p.add_argument("--n-cls", type=int, default=None,
                   help="number of depth interval classes (default 32)")
    p.add_argument("--crop", type=int, default=None,
                   help="square training patch size (default 32)")
    p.add_argument("--validation-interval", type=int, default=None,
                   help="iterations between validations (default 100)")
    p.add_argument("--resume", type=Path, default=None, help="checkpoint to resume from")
    p.add_argument("--checkpoint-every", type=int, default=None,
                   help="checkpoint cadence in iterations (default: end of run only)")

    p = sub.add_parser("ablate", help="run one ablation axis over several seeds")
    add_config(p)
    p.add_argument("--axis", choices=list(ABLATION_AXES), required=True)
    p.add_argument("--out", type=Path, required=True, help="output directory")
    p.add_argument("--seeds", type=str, default="0,1,2",
                   help="comma-separated run seeds (default 0,1,2)")
    p.add_argument("--jobs", type=int, default=1,
                   help="parallel worker processes (default 1)")

    p = sub.add_parser("eval", help="score a directory of predictions against ground truth")
    p.add_argument("--pred", type=Path, required=True, help="directory of predicted depth PNGs")
    p.add_argument("--gt", type=Path, required=True, help="directory of ground-truth depth PNGs")
    p.add_argument("--out", type=Path, required=True, help="output JSON file")

    p = sub.add_parser("predict", help="predict depth maps with a trained checkpoint")
    p.add_argument("--checkpoint", type=Path, required=True)
    p.add_argument("--input", type=Path, required=True, help="RGB PNG file or directory")
    p.add_argument("--out", type=Path, required=True, help="output directory")
    return parser


def _load_config(args) -> ExperimentConfig:
    if getattr(args, "config", None) is not None:
        try:
            text = Path(args.config).read_text()
        except OSError as e:
            raise UsageError(f"cannot read config file: {e}") from e
        config = ExperimentConfig.from_json(text)
    else:
        config = ExperimentConfig()
    return config


def _apply_overrides(config: ExperimentConfig, args) -> ExperimentConfig:
    rep = dataclasses.replace
    if getattr(args, "seed", None) is not None:
        config = rep(config, seed=args.seed)
    if getattr(args, "iters", None) is not None:
        config = rep(config, total_iters=args.iters)
    if getattr(args, "batch_size", None) is not None:
        config = rep(config, batch_size=args.batch_size)
    if getattr(args, "alpha0", None) is not None:
        config = rep(config, alpha0=args.alpha0)
    if getattr(args, "validation_interval", None) is not None:
        config = rep(config, validation_interval=args.validation_interval)
    if getattr(args, "n_cls", None) is not None:
        config = rep(config, model=rep(config.model, n_cls=args.n_cls))
    if getattr(args, "crop", None) is not None:
        config = rep(config, augment=rep(config.augment, crop=(args.crop, args.crop)))

    manual = getattr(args, "manual_weights", None)
    weighting = getattr(args, "weighting", None)
    if manual is not None:
        if weighting is not None and weighting != "manual":
            raise UsageError(f"--manual-weights conflicts with --weighting {weighting}")
        try:
            w_reg, w_cls = (float(x) for x in manual.split(","))
        except ValueError as e:
            raise UsageError(f"--manual-weights expects W_REG,W_CLS: {e}") from e
        config = rep(config, weighting="manual", manual_weights=(w_reg, w_cls))
    elif weighting is not None:
        config = rep(config, weighting=weighting)
    return config


def _snapshot_config(config: ExperimentConfig, where: Path) -> None:
    where.parent.mkdir(parents=True, exist_ok=True)
    where.write_text(config.to_json() + "\n")


def _cmd_gen_data(args) -> int:
    config = _apply_overrides(_load_config(args), args)
    count = args.count if args.count is not None else config.dataset.train_size
    seeds = np.random.SeedSequence(config.seed).generate_state(1)
    dataset = SyntheticDataset(config.dataset.scene, config.dataset.sparsity,
                               config.scheme(), seed=int(seeds[0]), size=count)
    args.out.mkdir(parents=True, exist_ok=True)
    write_dataset_dir(dataset, args.out)
    _snapshot_config(config, args.out / "resolved_config.json")
    return 0


def _cmd_lr_find(args) -> int:
    config = _apply_overrides(_load_config(args), args)
    record = lr_find(config, steps=args.steps, alpha_start=args.alpha_start,
                     alpha_end=args.alpha_end)
    args.out.mkdir(parents=True, exist_ok=True)
    record.to_csv(args.out / "sweep.csv")
    with open(args.out / "summary.json", "w") as fh:
        json.dump(record.summary(), fh, indent=2, sort_keys=True)
        fh.write("\n")
    _snapshot_config(config, args.out / "resolved_config.json")
    return 0


def _cmd_train(args) -> int:
    config = _apply_overrides(_load_config(args), args)
    _snapshot_config(config, args.out / "resolved_config.json")
    train(config, out_dir=args.out, resume_from=args.resume,
          checkpoint_every=args.checkpoint_every)
    return 0


def _cmd_ablate(args) -> int:
    config = _apply_overrides(_load_config(args), args)
    try:
        seeds = tuple(int(s) for s in args.seeds.split(","))
    except ValueError as e:
        raise UsageError(f"--seeds expects comma-separated integers: {e}") from e
    _snapshot_config(config, args.out / "resolved_config.json")
    run_ablation(args.axis, config, seeds=seeds, out_dir=args.out, jobs=args.jobs)
    return 0


def _cmd_eval(args) -> int:
    gt_files = sorted(p.name for p in args.gt.glob("*.png")
                      if not p.name.endswith("_rgb.png"))
    if not gt_files:
        raise FileNotFoundError(f"no depth PNG files in {args.gt}")
    per_file = {}
    raws, scaleds = [], []
    for name in gt_files:
        pred_path = args.pred / name
        if not pred_path.exists():
            raise FileNotFoundError(f"prediction missing for {name}")
        res = silog(read_kitti_png(pred_path), read_kitti_png(args.gt / name))
        per_file[name] = {"raw": res.raw, "scaled": res.scaled, "n": res.n}
        raws.append(res.raw)
        scaleds.append(res.scaled)
    out = {
        "count": len(gt_files),
        "mean_raw": float(np.mean(raws)),
        "mean_scaled": float(np.mean(scaleds)),
        "per_file": per_file,
    }
    args.out.parent.mkdir(parents=True, exist_ok=True)
    with open(args.out, "w") as fh:
        json.dump(out, fh, indent=2, sort_keys=True)
        fh.write("\n")
    snapshot = {"command": "eval", "pred": str(args.pred), "gt": str(args.gt)}
    with open(args.out.with_suffix(".resolved.json"), "w") as fh:
        json.dump(snapshot, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return 0


def _cmd_predict(args) -> int:
    state = restore(args.checkpoint)
    bounds = state.config.depth_bounds()
    if args.input.is_dir():
        inputs = sorted(p for p in args.input.glob("*.png") if not p.name.endswith("_depth.png"))
        if not inputs:
            raise FileNotFoundError(f"no RGB PNG files in {args.input}")
    else:
        inputs = [args.input]
    args.out.mkdir(parents=True, exist_ok=True)
    for path in inputs:
        rgb = read_rgb_png(path)
        dmap = state.model.predict_depth(rgb, bounds)
        stem = path.stem.removesuffix("_rgb")
        write_kitti_png(dmap, args.out / f"{stem}_depth.png")
    _snapshot_config(state.config, args.out / "resolved_config.json")
    return 0


_HANDLERS = {
    "gen-data": _cmd_gen_data,
    "lr-find": _cmd_lr_find,
    "train": _cmd_train,
    "ablate": _cmd_ablate,
    "eval": _cmd_eval,
    "predict": _cmd_predict,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        # argparse prints its own message; remap its exit code to the
        # 0=ok / 1=usage convention.
        return 0 if e.code == 0 else 1
    try:
        return _HANDLERS[args.command](args)
    except (UsageError, ConfigError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except (TrainingDiverged, ConfigConflictError, FileNotFoundError, OSError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
