"""Training loop, validation, ablation presets, and run persistence.

A run is fully described by an ExperimentConfig; identical configs produce
byte-identical logs. The loop per iteration: pull the next batch with any
valid ground truth (skipping and counting empty ones without touching the
optimizer), forward, combine the sparse losses, backward, Adam step at the
polynomial-decayed rate. Learned task weights join the optimizer's parameter
list and are exempt from weight decay.

Checkpoints capture everything the loop consumes (parameters, optimizer
moments, task weights, batch cursor, dropout RNG state), so a restored run
continues bit-identically.
"""

from __future__ import annotations

import csv
import dataclasses
import json
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .data import AugmentSpec, BatchStream, SceneSpec, SparsityModel, SyntheticDataset
from .depthspace import (
    ClipPlanes,
    DepthBounds,
    DepthMap,
    IntervalScheme,
    decode_depth,
    dequantize,
    encode_clamped,
)
from .losses import TaskWeights, combine, silog, sparse_mse, sparse_softmax_ce
from .model import Model, ModelConfig, build
from .optim import Adam, NonFiniteGradientError, PolySchedule, lr_at, lr_range_test

__all__ = [
    "ConfigError",
    "ConfigConflictError",
    "TrainingDiverged",
    "DatasetSpec",
    "ExperimentConfig",
    "TrainRow",
    "ValRow",
    "RunLog",
    "TrainResult",
    "train",
    "validate",
    "lr_find",
    "run_ablation",
    "ABLATION_AXES",
    "checkpoint",
    "restore",
    "RestoredState",
]

log = logging.getLogger(__name__)

CHECKPOINT_VERSION = 1
TASK_MODES = ("both", "reg_only")


class ConfigError(ValueError):
    """Config file/dict contains unknown keys or invalid values."""


class ConfigConflictError(ValueError):
    """A checkpoint was created under a different configuration."""


class TrainingDiverged(RuntimeError):
    """The multi-task loss or a gradient became non-finite."""

    def __init__(self, message: str, iteration: int, checkpoint_path=None):
        super().__init__(message)
        self.iteration = iteration
        self.checkpoint_path = checkpoint_path


# -- configuration -----------------------------------------------------------

@dataclass(frozen=True)
class DatasetSpec:
    train_size: int = 200
    val_size: int = 24
    scene: SceneSpec = field(default_factory=SceneSpec)
    sparsity: SparsityModel = field(default_factory=SparsityModel)

    def __post_init__(self):
        if self.train_size < 1 or self.val_size < 1:
            raise ValueError("dataset sizes must be positive")


@dataclass(frozen=True)
class ExperimentConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    tasks: str = "both"                       # "both" | "reg_only"
    weighting: str = "learned"                # "learned" | "equal" | "manual"
    manual_weights: tuple[float, float] = (5.0, 1.0)
    s_init: float = 1.0
    bounds: tuple[float, float] = (2.0, 125.0)
    clip_planes: tuple[float, float] = (2.5, 80.0)
    augment: AugmentSpec = field(default_factory=lambda: AugmentSpec(crop=(32, 32)))
    batch_size: int = 16
    total_iters: int = 2000
    alpha0: float | None = None               # None: picked by a fresh LR range test
    schedule_gamma: float = 0.9
    weight_decay: float = 1e-4
    seed: int = 0
    validation_interval: int = 100
    dataset: DatasetSpec = field(default_factory=DatasetSpec)

    def __post_init__(self):
        if self.tasks not in TASK_MODES:
            raise ConfigError(f"tasks must be one of {TASK_MODES}, got {self.tasks!r}")
        if self.weighting not in ("learned", "equal", "manual"):
            raise ConfigError(f"unknown weighting {self.weighting!r}")
        if self.tasks == "reg_only" and self.model.with_classifier:
            raise ConfigError("tasks='reg_only' requires model.with_classifier=False")
        if self.tasks == "both" and not self.model.with_classifier:
            raise ConfigError("tasks='both' requires model.with_classifier=True")
        if self.batch_size < 1 or self.total_iters < 0 or self.validation_interval < 1:
            raise ConfigError("batch_size/validation_interval must be positive, total_iters >= 0")
        if self.alpha0 is not None and self.alpha0 <= 0:
            raise ConfigError("alpha0 must be positive when given")
        if min(self.manual_weights) <= 0:
            raise ConfigError("manual weights must be positive")
        # Constructing these validates bounds/planes ordering.
        self.scheme()

    def depth_bounds(self) -> DepthBounds:
        return DepthBounds(*self.bounds)

    def scheme(self) -> IntervalScheme:
        return IntervalScheme(n_cls=self.model.n_cls, planes=ClipPlanes(*self.clip_planes),
                              bounds=self.depth_bounds())

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        d = dict(d)
        nested = {
            "model": (ModelConfig, "model"),
            "augment": (AugmentSpec, "augment"),
        }
        kwargs = {}
        for key, (sub_cls, where) in nested.items():
            if key in d:
                kwargs[key] = _strict_dataclass(sub_cls, d.pop(key), where)
        if "dataset" in d:
            ds = dict(_as_mapping(d.pop("dataset"), "dataset"))
            ds_kwargs = {}
            if "scene" in ds:
                ds_kwargs["scene"] = _strict_dataclass(SceneSpec, ds.pop("scene"), "dataset.scene")
            if "sparsity" in ds:
                ds_kwargs["sparsity"] = _strict_dataclass(SparsityModel, ds.pop("sparsity"),
                                                          "dataset.sparsity")
            kwargs["dataset"] = _strict_dataclass(DatasetSpec, ds, "dataset", extra=ds_kwargs)
        return _strict_dataclass(cls, d, "config", extra=kwargs)

    @classmethod
    def from_json(cls, text: str) -> "ExperimentConfig":
        try:
            d = json.loads(text)
        except json.JSONDecodeError as e:
            raise ConfigError(f"invalid JSON: {e}") from e
        return cls.from_dict(_as_mapping(d, "config"))


def _as_mapping(d, where: str) -> dict:
    if not isinstance(d, dict):
        raise ConfigError(f"{where}: expected an object, got {type(d).__name__}")
    return d


def _strict_dataclass(cls, d, where: str, extra: dict | None = None):
    d = _as_mapping(d, where)
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(d) - names)
    if unknown:
        raise ConfigError(f"{where}: unknown key(s) {unknown}")
    kwargs = dict(extra or {})
    for f in dataclasses.fields(cls):
        if f.name in d and f.name not in kwargs:
            v = d[f.name]
            if isinstance(v, list):
                v = tuple(v)
            kwargs[f.name] = v
    try:
        return cls(**kwargs)
    except ConfigError:
        raise
    except (TypeError, ValueError) as e:
        raise ConfigError(f"{where}: {e}") from e


def _derived_seeds(config: ExperimentConfig) -> dict[str, int]:
    st = np.random.SeedSequence(config.seed).generate_state(8)
    return {
        "train_data": int(st[0]),
        "val_data": int(st[1]),
        "model": int(st[2]),
        "stream": int(st[3]),
        "dropout": int(st[4]),
        "sweep": int(st[5]),
    }


# -- run log -----------------------------------------------------------------

TRAIN_COLUMNS = ["iter", "l_reg", "l_cls", "l_mt", "w_reg", "w_cls",
                 "s_reg", "s_cls", "alpha", "skipped_batches"]
VAL_COLUMNS = ["iter", "silog_reg_scaled", "silog_cls_scaled"]


@dataclass
class TrainRow:
    iter: int
    l_reg: float
    l_cls: float
    l_mt: float
    w_reg: float
    w_cls: float
    s_reg: float
    s_cls: float
    alpha: float
    skipped_batches: int


@dataclass
class ValRow:
    iter: int
    silog_reg_scaled: float
    silog_cls_scaled: float


@dataclass
class RunLog:
    header: dict = field(default_factory=dict)
    rows: list = field(default_factory=list)
    val_rows: list = field(default_factory=list)

    def best_val(self, column: str = "silog_reg_scaled") -> float:
        vals = [getattr(r, column) for r in self.val_rows if np.isfinite(getattr(r, column))]
        if not vals:
            return float("nan")
        return float(min(vals))

    def _write(self, path, columns, records) -> None:
        with open(path, "w", newline="") as fh:
            for key in sorted(self.header):
                fh.write(f"# {key}={self.header[key]}\n")
            writer = csv.writer(fh)
            writer.writerow(columns)
            for r in records:
                writer.writerow([repr(float(v)) if isinstance(v, float) else v
                                 for v in (getattr(r, c) for c in columns)])

    def to_csv(self, path) -> None:
        self._write(path, TRAIN_COLUMNS, self.rows)

    def val_to_csv(self, path) -> None:
        self._write(path, VAL_COLUMNS, self.val_rows)


# -- checkpointing -----------------------------------------------------------

@dataclass
class RestoredState:
    config: ExperimentConfig
    model: Model
    optimizer: Adam
    weights: TaskWeights
    iteration: int
    batch_cursor: int
    skipped_batches: int
    dropout_rng: np.random.Generator
    alpha0: float


def _make_weights(config: ExperimentConfig) -> TaskWeights:
    if config.tasks == "reg_only":
        # Single-task baselines have nothing to weight; the mode is ignored
        # and no s parameters are created (they would never see a gradient).
        return TaskWeights.equal()
    if config.weighting == "learned":
        return TaskWeights.learned(config.s_init)
    if config.weighting == "manual":
        return TaskWeights.manual_pair(*config.manual_weights)
    return TaskWeights.equal()


def _make_optimizer(model: Model, weights: TaskWeights, config: ExperimentConfig) -> Adam:
    named = model.named_parameters() + weights.parameters()
    return Adam(named, weight_decay=config.weight_decay, no_decay={"s_reg", "s_cls"})


def checkpoint(model: Model, optimizer: Adam, weights: TaskWeights, iteration: int,
               path, *, config: ExperimentConfig, batch_cursor: int = 0,
               skipped_batches: int = 0, dropout_rng: np.random.Generator | None = None,
               alpha0: float = float("nan")) -> None:
    """Serialize the complete training state to an .npz file."""
    if dropout_rng is None:
        dropout_rng = np.random.Generator(np.random.PCG64(0))
    arrays = {
        "params": model.state_vector(),
        "meta": np.frombuffer(json.dumps({
            "version": CHECKPOINT_VERSION,
            "config": config.to_dict(),
            "iteration": int(iteration),
            "batch_cursor": int(batch_cursor),
            "skipped_batches": int(skipped_batches),
            "alpha0": float(alpha0),
            "rng_state": dropout_rng.bit_generator.state,
            "adam_step": optimizer.step_count,
            "s_reg": None if weights.s_reg is None else float(weights.s_reg.data),
            "s_cls": None if weights.s_cls is None else float(weights.s_cls.data),
        }, sort_keys=True).encode(), dtype=np.uint8),
    }
    for name, _ in optimizer.named_params:
        arrays[f"adam_m::{name}"] = optimizer.m[name]
        arrays[f"adam_v::{name}"] = optimizer.v[name]
    np.savez(path, **arrays)


def restore(path, expected_config: ExperimentConfig | None = None) -> RestoredState:
    """Rebuild model/optimizer/weights from a checkpoint, bit-exactly."""
    try:
        blob = np.load(path, allow_pickle=False)
    except (OSError, ValueError) as e:
        raise ConfigConflictError(f"cannot read checkpoint {path}: {e}") from e
    if "meta" not in blob or "params" not in blob:
        raise ConfigConflictError(f"{path} is not a training checkpoint")
    meta = json.loads(bytes(blob["meta"]).decode())
    if meta.get("version") != CHECKPOINT_VERSION:
        raise ConfigConflictError(
            f"checkpoint version {meta.get('version')} != supported {CHECKPOINT_VERSION}")
    config = ExperimentConfig.from_dict(meta["config"])
    if expected_config is not None and config != expected_config:
        diffs = [f.name for f in dataclasses.fields(ExperimentConfig)
                 if getattr(config, f.name) != getattr(expected_config, f.name)]
        raise ConfigConflictError(f"checkpoint config differs in field(s): {diffs}")

    model = build(config.model, _derived_seeds(config)["model"])
    model.load_state_vector(blob["params"])
    weights = _make_weights(config)
    if weights.s_reg is not None:
        weights.s_reg.data = np.asarray(meta["s_reg"], dtype=np.float64)
        weights.s_cls.data = np.asarray(meta["s_cls"], dtype=np.float64)
    optimizer = _make_optimizer(model, weights, config)
    optimizer.load_state_dict({
        "step_count": meta["adam_step"],
        "m": {name: blob[f"adam_m::{name}"] for name, _ in optimizer.named_params},
        "v": {name: blob[f"adam_v::{name}"] for name, _ in optimizer.named_params},
    })
    rng = np.random.Generator(np.random.PCG64(0))
    rng.bit_generator.state = meta["rng_state"]
    return RestoredState(
        config=config, model=model, optimizer=optimizer, weights=weights,
        iteration=int(meta["iteration"]), batch_cursor=int(meta["batch_cursor"]),
        skipped_batches=int(meta["skipped_batches"]), dropout_rng=rng,
        alpha0=float(meta["alpha0"]),
    )


# -- validation --------------------------------------------------------------

def validate(model: Model, val_set, scheme: IntervalScheme,
             bounds: DepthBounds) -> tuple[float, float]:
    """Mean scaled SILog of both heads over a list of full-frame samples.

    The regression head is clamped to [0, 1] and decoded to meters; the
    classification head is argmaxed and dequantized to bin-midpoint depths.
    Samples without jointly valid pixels are skipped; all-empty is an error.
    """
    reg_scores, cls_scores = [], []
    for s in val_set:
        out = model.forward(s.rgb[None], heads="both", training=False)
        d_log = np.clip(out.regression.data[0, 0], 0.0, 1.0)
        pred = DepthMap.dense(decode_depth(d_log, bounds))
        if not (s.gt.valid & pred.valid).any():
            continue
        reg_scores.append(silog(pred, s.gt).scaled)
        if out.class_logits is not None:
            lab = np.argmax(out.class_logits.data[0], axis=0)
            cls_pred = DepthMap.dense(dequantize(lab, scheme))
            cls_scores.append(silog(cls_pred, s.gt).scaled)
    if not reg_scores:
        raise ValueError("validation set has no sample with valid ground truth")
    silog_reg = float(np.mean(reg_scores))
    silog_cls = float(np.mean(cls_scores)) if cls_scores else float("nan")
    return silog_reg, silog_cls


# -- learning-rate selection ---------------------------------------------------

def lr_find(config: ExperimentConfig, steps: int = 250, alpha_start: float = 1e-8,
            alpha_end: float = 10.0):
    """LR range test on throwaway copies of the configured task.

    Builds a fresh model, optimizer, and batch stream from sweep-specific
    derived seeds; nothing of the actual training run is touched.
    """
    seeds = _derived_seeds(config)
    ss = np.random.SeedSequence([seeds["sweep"], 1])
    model_seed, stream_seed, dropout_seed = (int(s.generate_state(1)[0]) for s in ss.spawn(3))

    scheme = config.scheme()
    bounds = config.depth_bounds()
    dataset = SyntheticDataset(config.dataset.scene, config.dataset.sparsity, scheme,
                               seed=seeds["train_data"], size=config.dataset.train_size)
    stream = BatchStream(dataset, config.batch_size, config.augment, seed=stream_seed)
    model = build(config.model, model_seed)
    weights = _make_weights(config)
    optimizer = _make_optimizer(model, weights, config)
    dropout_rng = np.random.Generator(np.random.PCG64(dropout_seed))
    params = [p for _, p in optimizer.named_params]
    cursor = 0

    def train_step(alpha: float) -> float:
        nonlocal cursor
        while True:
            b = stream.batch(cursor)
            cursor += 1
            if b.valid_count > 0:
                break
        target = encode_clamped(b.depth, bounds)
        out = model.forward(ad.tensor(b.rgb),
                            heads="both" if config.tasks == "both" else "reg_only",
                            training=True, rng=dropout_rng)
        l_reg = sparse_mse(out.regression, target[:, None], b.valid[:, None])
        l_cls = None
        if out.class_logits is not None:
            l_cls = sparse_softmax_ce(out.class_logits, b.labels, b.valid)
        bd = combine(l_reg, l_cls, weights, valid_pixel_count=b.valid_count)
        if np.isfinite(bd.l_mt):
            ad.backward(bd.total)
            try:
                optimizer.step(alpha)
            except NonFiniteGradientError:
                ad.zero_grads(params)
                return float("inf")
            ad.zero_grads(params)
        return bd.l_mt

    return lr_range_test(train_step, alpha_start, alpha_end, steps=steps)


# -- training ----------------------------------------------------------------

@dataclass
class TrainResult:
    model: Model
    log: RunLog
    weights: TaskWeights
    optimizer: Adam
    alpha0: float
    checkpoint_path: Path | None = None


def _run_header(config: ExperimentConfig, alpha0: float) -> dict:
    return {
        "alpha0": repr(float(alpha0)),
        "weighting": config.weighting,
        "manual_weights": f"{config.manual_weights[0]}/{config.manual_weights[1]}",
        "validation_interval": config.validation_interval,
        "tasks": config.tasks,
        "n_cls": config.model.n_cls,
        "seed": config.seed,
        "config": json.dumps(config.to_dict(), sort_keys=True),
    }


def train(config: ExperimentConfig, out_dir=None, resume_from=None,
          checkpoint_every: int | None = None,
          stop_after: int | None = None) -> TrainResult:
    """Run (or resume) one training run described by the config.

    Writes runlog.csv, validation.csv, and checkpoint.npz into ``out_dir``
    when given. ``stop_after`` pauses the run at that iteration (the
    schedule still spans config.total_iters), so it can be resumed later.
    Raises TrainingDiverged (after saving the last good state) if the loss
    or a gradient goes non-finite.
    """
    seeds = _derived_seeds(config)
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)

    scheme = config.scheme()
    bounds = config.depth_bounds()
    train_ds = SyntheticDataset(config.dataset.scene, config.dataset.sparsity, scheme,
                                seed=seeds["train_data"], size=config.dataset.train_size)
    val_ds = SyntheticDataset(config.dataset.scene, config.dataset.sparsity, scheme,
                              seed=seeds["val_data"], size=config.dataset.val_size)
    val_set = [val_ds.sample(i) for i in range(len(val_ds))]

    if resume_from is not None:
        state = restore(resume_from, expected_config=config)
        model, optimizer, weights = state.model, state.optimizer, state.weights
        start_iter, cursor = state.iteration, state.batch_cursor
        skipped, dropout_rng, alpha0 = state.skipped_batches, state.dropout_rng, state.alpha0
    else:
        model = build(config.model, seeds["model"])
        weights = _make_weights(config)
        optimizer = _make_optimizer(model, weights, config)
        dropout_rng = np.random.Generator(np.random.PCG64(seeds["dropout"]))
        start_iter, cursor, skipped = 0, 0, 0
        if config.total_iters == 0:
            alpha0 = config.alpha0 if config.alpha0 is not None else float("nan")
        elif config.alpha0 is not None:
            alpha0 = config.alpha0
        else:
            alpha0 = lr_find(config).selected_alpha
            log.info("lr_find selected alpha0=%.3g", alpha0)

    runlog = RunLog(header=_run_header(config, alpha0))
    if config.total_iters == 0:
        return TrainResult(model=model, log=runlog, weights=weights,
                           optimizer=optimizer, alpha0=alpha0)

    stream = BatchStream(train_ds, config.batch_size, config.augment, seed=seeds["stream"])
    schedule = PolySchedule(alpha0, config.total_iters, config.schedule_gamma)
    params = [p for _, p in optimizer.named_params]
    ckpt_path = out / "checkpoint.npz" if out is not None else None
    stop = config.total_iters if stop_after is None else min(stop_after, config.total_iters)

    def save(path, iteration):
        checkpoint(model, optimizer, weights, iteration, path, config=config,
                   batch_cursor=cursor, skipped_batches=skipped,
                   dropout_rng=dropout_rng, alpha0=alpha0)

    for it in range(start_iter, stop):
        empty_streak = 0
        while True:
            batch = stream.batch(cursor)
            cursor += 1
            if batch.valid_count > 0:
                break
            skipped += 1
            empty_streak += 1
            if empty_streak > 10 * stream.batches_per_epoch:
                raise RuntimeError("every batch in the stream is empty; check the dataset")

        alpha = lr_at(schedule, it)
        target = encode_clamped(batch.depth, bounds)
        out_t = model.forward(ad.tensor(batch.rgb),
                              heads="both" if config.tasks == "both" else "reg_only",
                              training=True, rng=dropout_rng)
        l_reg = sparse_mse(out_t.regression, target[:, None], batch.valid[:, None])
        l_cls = None
        if out_t.class_logits is not None:
            l_cls = sparse_softmax_ce(out_t.class_logits, batch.labels, batch.valid)
        bd = combine(l_reg, l_cls, weights, valid_pixel_count=batch.valid_count)

        # Row values must reflect the state the loss was composed from, so
        # snapshot the task weights before the optimizer moves them.
        s_reg_val = float(weights.s_reg.data) if weights.s_reg is not None else float("nan")
        s_cls_val = float(weights.s_cls.data) if weights.s_cls is not None else float("nan")

        if not np.isfinite(bd.l_mt):
            if ckpt_path is not None:
                save(ckpt_path, it)
            raise TrainingDiverged(
                f"non-finite multi-task loss at iteration {it}", it, ckpt_path)
        ad.backward(bd.total)
        try:
            optimizer.step(alpha)
        except NonFiniteGradientError as e:
            ad.zero_grads(params)
            if ckpt_path is not None:
                save(ckpt_path, it)
            raise TrainingDiverged(f"{e} at iteration {it}", it, ckpt_path) from e
        ad.zero_grads(params)

        runlog.rows.append(TrainRow(
            iter=it + 1, l_reg=bd.l_reg, l_cls=bd.l_cls, l_mt=bd.l_mt,
            w_reg=bd.w_reg, w_cls=bd.w_cls, s_reg=s_reg_val, s_cls=s_cls_val,
            alpha=alpha, skipped_batches=skipped,
        ))
        if (it + 1) % config.validation_interval == 0 or it + 1 == config.total_iters:
            silog_reg, silog_cls = validate(model, val_set, scheme, bounds)
            runlog.val_rows.append(ValRow(iter=it + 1, silog_reg_scaled=silog_reg,
                                          silog_cls_scaled=silog_cls))
        if checkpoint_every and (it + 1) % checkpoint_every == 0 and ckpt_path is not None:
            save(ckpt_path, it + 1)

    if out is not None:
        save(ckpt_path, stop)
        runlog.to_csv(out / "runlog.csv")
        runlog.val_to_csv(out / "validation.csv")
        with open(out / "resolved_config.json", "w") as fh:
            fh.write(config.to_json())
            fh.write("\n")
    return TrainResult(model=model, log=runlog, weights=weights, optimizer=optimizer,
                       alpha0=alpha0, checkpoint_path=ckpt_path)


# -- ablations ----------------------------------------------------------------

ABLATION_AXES = ("n_cls", "weighting", "bounds", "patch")


def _ablation_cells(axis: str, base: ExperimentConfig) -> list[tuple[str, ExperimentConfig]]:
    rep = dataclasses.replace
    if axis == "n_cls":
        cells = [("reg_only", rep(base, tasks="reg_only",
                                  model=rep(base.model, with_classifier=False)))]
        for n in (2, 4, 32, 64):
            cells.append((f"n_cls={n}", rep(base, tasks="both",
                                            model=rep(base.model, with_classifier=True, n_cls=n))))
        return cells
    if axis == "weighting":
        return [(mode, rep(base, weighting=mode)) for mode in ("equal", "manual", "learned")]
    if axis == "bounds":
        return [
            ("bounds=2-125", rep(base, bounds=(2.0, 125.0))),
            ("bounds=0-256", rep(base, bounds=(0.0, 256.0))),
        ]
    if axis == "patch":
        return [
            ("patch=32", rep(base, augment=rep(base.augment, crop=(32, 32)))),
            ("patch=64", rep(base, augment=rep(base.augment, crop=(64, 64)))),
        ]
    raise ConfigError(f"unknown ablation axis {axis!r}; expected one of {ABLATION_AXES}")


def _run_cell(args):
    cell, config_json, seed = args
    config = dataclasses.replace(ExperimentConfig.from_json(config_json), seed=seed)
    result = train(config)
    return {
        "cell": cell,
        "seed": seed,
        "best_silog_reg": result.log.best_val("silog_reg_scaled"),
        "best_silog_cls": result.log.best_val("silog_cls_scaled"),
    }


@dataclass
class AblationTable:
    axis: str
    seeds: tuple[int, ...]
    runs: list[dict]                  # one dict per (cell, seed)
    medians: dict[str, float]         # cell -> median best regression SILog

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["cell", "seed", "best_silog_reg", "best_silog_cls"])
            for r in self.runs:
                writer.writerow([r["cell"], r["seed"],
                                 repr(r["best_silog_reg"]), repr(r["best_silog_cls"])])

    def to_json(self, path) -> None:
        with open(path, "w") as fh:
            json.dump({"axis": self.axis, "seeds": list(self.seeds), "runs": self.runs,
                       "median_best_silog_reg": self.medians}, fh, indent=2, sort_keys=True)
            fh.write("\n")


def run_ablation(axis: str, base: ExperimentConfig, seeds=(0, 1, 2),
                 out_dir=None, jobs: int = 1) -> AblationTable:
    """Train the preset grid for one ablation axis, >=1 seed per cell.

    One learning rate serves the whole grid: it is resolved once from the
    base config (running the range test if the config does not pin one).
    """
    if not seeds:
        raise ConfigError("at least one seed is required")
    if base.alpha0 is None:
        base = dataclasses.replace(base, alpha0=float(lr_find(base).selected_alpha))
    cells = _ablation_cells(axis, base)
    tasks = [(cell, cfg.to_json(), seed) for cell, cfg in cells for seed in seeds]

    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            runs = list(pool.map(_run_cell, tasks))
    else:
        runs = [_run_cell(t) for t in tasks]

    medians = {}
    for cell, _ in cells:
        scores = [r["best_silog_reg"] for r in runs if r["cell"] == cell]
        medians[cell] = float(np.median(scores))
    table = AblationTable(axis=axis, seeds=tuple(seeds), runs=runs, medians=medians)
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        table.to_csv(out / f"ablation_{axis}.csv")
        table.to_json(out / f"ablation_{axis}.json")
    return table
