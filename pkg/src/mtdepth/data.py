"""Synthetic road-scene depth data, KITTI depth-PNG interchange, and batching.

Scenes are a perspective ground ramp (inverse-depth linear from a near bottom
row to a far horizon) with box obstacles standing on it, shaded so that pixel
brightness is a monotone function of depth: the appearance carries the signal
the network is supposed to learn. The top ``sky_fraction`` of each image has
no ground truth, mirroring how LiDAR returns vanish above the horizon.
Sparsification keeps jittered horizontal scanlines below the sky.

Everything is a pure function of (spec, seed), so any batch of the stream can
be recomputed independently: prefetching cannot change the sequence, and a
training run can resume mid-stream from just a cursor.
"""

from __future__ import annotations

import json
import queue
import threading
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image, UnidentifiedImageError

from .depthspace import DepthMap, IntervalLabeling, IntervalScheme, label_map

__all__ = [
    "SceneSpec",
    "SparsityModel",
    "AugmentSpec",
    "Sample",
    "Batch",
    "KittiPngError",
    "generate_scene",
    "sparsify",
    "read_kitti_png",
    "write_kitti_png",
    "write_rgb_png",
    "read_rgb_png",
    "augment",
    "SyntheticDataset",
    "BatchStream",
    "write_dataset_dir",
]


@dataclass(frozen=True)
class SceneSpec:
    height: int = 64
    width: int = 64
    near_depth: float = 3.0          # ground ramp depth at the bottom row
    far_depth: float = 120.0         # ground ramp depth at the horizon
    object_count: tuple[int, int] = (2, 5)
    object_depth: tuple[float, float] = (3.0, 70.0)
    object_size: float = 8.0         # apparent height ~ object_size * H / depth
    sky_fraction: float = 0.25
    texture_noise: float = 0.02

    def __post_init__(self):
        if self.height < 8 or self.width < 8:
            raise ValueError("scene must be at least 8x8")
        if not 0.0 < self.near_depth < self.far_depth:
            raise ValueError("need 0 < near_depth < far_depth")
        if not (0.0 < self.object_depth[0] <= self.object_depth[1]):
            raise ValueError("object depth range must be positive and ordered")
        if not 0.0 <= self.sky_fraction <= 0.5:
            raise ValueError("sky_fraction must lie in [0, 0.5]")
        if self.texture_noise < 0:
            raise ValueError("texture_noise must be non-negative")

    @property
    def horizon_row(self) -> int:
        return int(round(self.sky_fraction * self.height))


@dataclass(frozen=True)
class SparsityModel:
    coverage: float = 0.12           # target fraction of all pixels kept
    scanline_spacing: int = 4
    jitter: int = 1
    coverage_floor: float = 0.008    # per-sample minimum fraction

    def __post_init__(self):
        if not 0.0 < self.coverage <= 1.0:
            raise ValueError("coverage must lie in (0, 1]")
        if self.scanline_spacing < 1 or self.jitter < 0:
            raise ValueError("spacing must be >= 1 and jitter >= 0")
        if not 0.0 <= self.coverage_floor <= self.coverage:
            raise ValueError("coverage_floor must lie in [0, coverage]")


@dataclass(frozen=True)
class AugmentSpec:
    """Random crop + horizontal flip. Image scaling is deliberately absent:
    patches must keep the source scale so train and inference sizes are
    interchangeable."""

    crop: tuple[int, int] = (128, 128)
    flip_prob: float = 0.5

    def __post_init__(self):
        if min(self.crop) < 1:
            raise ValueError("crop size must be positive")
        if not 0.0 <= self.flip_prob <= 1.0:
            raise ValueError("flip_prob must lie in [0, 1]")


@dataclass
class Sample:
    rgb: np.ndarray                  # (3, H, W) float64 in [0, 1]
    gt: DepthMap
    labels: IntervalLabeling | None = None


def generate_scene(spec: SceneSpec, seed) -> Sample:
    """Render one deterministic scene with dense ground truth below the horizon."""
    rng = np.random.default_rng(seed)
    h, w = spec.height, spec.width
    horizon = spec.horizon_row

    depth = np.zeros((h, w))
    rows = np.arange(horizon, h)
    if len(rows) > 1:
        t = (rows - horizon) / (len(rows) - 1)
    else:
        t = np.zeros(1)
    inv = (1.0 - t) / spec.far_depth + t / spec.near_depth
    depth[horizon:, :] = (1.0 / inv)[:, None]
    ramp_rows = depth[horizon:, 0].copy()

    albedo = np.ones((3, h, w))
    n_obj = int(rng.integers(spec.object_count[0], spec.object_count[1] + 1))
    for _ in range(n_obj):
        od = float(rng.uniform(*spec.object_depth))
        od = min(od, spec.far_depth * 0.98)
        # Ground-contact row: deepest ramp row still farther than the object.
        nearer = np.nonzero(ramp_rows <= od)[0]
        r_ground = horizon + (int(nearer[0]) if len(nearer) else len(ramp_rows)) - 1
        r_ground = max(r_ground, horizon)
        oh = int(np.clip(round(spec.object_size * h / od), 2, max(2, (h - horizon) // 2)))
        aspect = float(rng.uniform(0.6, 1.6))
        ow = int(np.clip(round(oh * aspect), 2, w // 2))
        left = int(rng.integers(0, w - ow + 1))
        top = max(horizon, r_ground - oh + 1)
        region = depth[top:r_ground + 1, left:left + ow]
        hit = region > od
        region[hit] = od
        alb = rng.uniform(0.85, 1.0, size=3)
        for c in range(3):
            albedo[c, top:r_ground + 1, left:left + ow][hit] = alb[c]

    valid = np.zeros((h, w), dtype=bool)
    valid[horizon:, :] = True

    # Brightness falls off monotonically with depth; that correlation is what
    # makes depth recoverable from appearance.
    shade = np.zeros((h, w))
    shade[valid] = 1.0 - np.log1p(depth[valid]) / np.log1p(spec.far_depth)
    rgb = np.empty((3, h, w))
    base = (1.0, 0.92, 0.85)
    for c in range(3):
        rgb[c] = 0.1 + 0.85 * shade * albedo[c] * base[c]
    if horizon > 0:
        sky = 0.75 + 0.2 * (1.0 - np.arange(horizon) / max(horizon, 1))
        rgb[:, :horizon, :] = sky[None, :, None]
    if spec.texture_noise > 0:
        rgb += rng.uniform(-spec.texture_noise, spec.texture_noise, size=rgb.shape)
    np.clip(rgb, 0.0, 1.0, out=rgb)

    return Sample(rgb=rgb, gt=DepthMap(np.where(valid, depth, 0.0), valid))


def sparsify(gt: DepthMap, model: SparsityModel, seed) -> DepthMap:
    """Keep jittered horizontal scanlines of the dense ground truth."""
    rng = np.random.default_rng(seed)
    h, w = gt.depth.shape
    row_has_gt = gt.valid.any(axis=1)
    first = int(np.argmax(row_has_gt)) if row_has_gt.any() else h
    usable = h - first
    keep = np.zeros((h, w), dtype=bool)
    if usable > 0:
        # Per-usable-pixel rate that realizes the whole-image coverage target.
        q = min(1.0, model.coverage * h / usable)
        spacing = max(1, min(model.scanline_spacing, int(1.0 / q) if q > 0 else 1))
        p = min(1.0, q * spacing)
        jitter = min(model.jitter, spacing - 1)  # scanlines must not collide or vanish
        for base in range(first, h, spacing):
            r = base + int(rng.integers(-jitter, jitter + 1)) if jitter else base
            r = min(max(r, first), h - 1)
            keep[r] |= rng.random(w) < p
    keep &= gt.valid

    floor_count = int(np.ceil(model.coverage_floor * h * w))
    short = floor_count - int(keep.sum())
    if short > 0:
        candidates = np.nonzero((gt.valid & ~keep).ravel())[0]
        if len(candidates):
            extra = rng.choice(candidates, size=min(short, len(candidates)), replace=False)
            keep.ravel()[extra] = True

    return DepthMap(np.where(keep, gt.depth, 0.0), keep)


# -- KITTI depth PNG interchange --------------------------------------------

class KittiPngError(ValueError):
    """File is not a valid 16-bit single-channel depth PNG."""


def write_kitti_png(dmap: DepthMap, path) -> None:
    """Store depth as uint16 PNG: value = round(256 * meters), 0 = invalid."""
    stored = np.round(dmap.depth * 256.0)
    stored = np.where(dmap.valid, np.clip(stored, 1.0, 65535.0), 0.0).astype(np.uint16)
    Image.fromarray(stored).save(path, format="PNG")


def read_kitti_png(path) -> DepthMap:
    try:
        img = Image.open(path)
        img.load()
    except (OSError, UnidentifiedImageError) as e:
        raise KittiPngError(f"cannot read {path}: {e}") from e
    if img.mode not in ("I", "I;16", "I;16B"):
        raise KittiPngError(f"{path}: expected 16-bit single-channel PNG, got mode {img.mode!r}")
    arr = np.asarray(img)
    if arr.ndim != 2:
        raise KittiPngError(f"{path}: expected a single channel")
    if arr.min() < 0 or arr.max() > 65535:
        raise KittiPngError(f"{path}: stored values exceed 16-bit range")
    arr = arr.astype(np.uint16)
    valid = arr != 0
    return DepthMap(np.where(valid, arr / 256.0, 0.0), valid)


def write_rgb_png(rgb: np.ndarray, path) -> None:
    """Store a (3, H, W) [0, 1] image as 8-bit RGB PNG."""
    arr = np.clip(np.round(np.asarray(rgb) * 255.0), 0, 255).astype(np.uint8)
    Image.fromarray(arr.transpose(1, 2, 0)).save(path, format="PNG")


def read_rgb_png(path) -> np.ndarray:
    img = Image.open(path).convert("RGB")
    return np.asarray(img, dtype=np.float64).transpose(2, 0, 1) / 255.0


# -- augmentation ------------------------------------------------------------

def augment(sample: Sample, spec: AugmentSpec, seed) -> Sample:
    """Apply one random crop + flip identically to rgb, depth, and labels."""
    rng = np.random.default_rng(seed)
    ch, cw = spec.crop
    h, w = sample.gt.depth.shape
    if ch > h or cw > w:
        raise ValueError(f"crop {ch}x{cw} larger than image {h}x{w}")
    flip = bool(rng.random() < spec.flip_prob)
    top = int(rng.integers(0, h - ch + 1))
    left = int(rng.integers(0, w - cw + 1))

    def cut(a):
        out = a[..., top:top + ch, left:left + cw]
        return out[..., ::-1].copy() if flip else out.copy()

    labels = sample.labels
    if labels is not None:
        labels = IntervalLabeling(cut(labels.label), cut(labels.valid))
    return Sample(
        rgb=cut(sample.rgb),
        gt=DepthMap(cut(sample.gt.depth), cut(sample.gt.valid)),
        labels=labels,
    )


# -- dataset + batch stream --------------------------------------------------

class SyntheticDataset:
    """Indexable set of sparsified, labeled scenes; sample(i) is pure in (seed, i)."""

    def __init__(self, scene: SceneSpec, sparsity: SparsityModel,
                 scheme: IntervalScheme, seed: int, size: int):
        if size < 1:
            raise ValueError("dataset must contain at least one sample")
        self.scene = scene
        self.sparsity = sparsity
        self.scheme = scheme
        self.seed = int(seed)
        self.size = int(size)
        self._cache: dict[int, Sample] = {}

    def __len__(self) -> int:
        return self.size

    def sample(self, i: int) -> Sample:
        if not 0 <= i < self.size:
            raise IndexError(i)
        s = self._cache.get(i)
        if s is None:
            scene_seed, sparse_seed = np.random.SeedSequence([self.seed, i]).spawn(2)
            dense = generate_scene(self.scene, scene_seed)
            sparse = sparsify(dense.gt, self.sparsity, sparse_seed)
            s = Sample(dense.rgb, sparse, label_map(sparse, self.scheme))
            self._cache[i] = s
        # Callers get their own copies; cached arrays stay pristine.
        return Sample(
            rgb=s.rgb.copy(),
            gt=DepthMap(s.gt.depth.copy(), s.gt.valid.copy()),
            labels=IntervalLabeling(s.labels.label.copy(), s.labels.valid.copy()),
        )

    def manifest(self) -> dict:
        return {
            "seed": self.seed,
            "size": self.size,
            "scene": asdict(self.scene),
            "sparsity": asdict(self.sparsity),
            "scheme": {
                "n_cls": self.scheme.n_cls,
                "clip_planes": [self.scheme.planes.d_cmin, self.scheme.planes.d_cmax],
                "bounds": [self.scheme.bounds.d_min, self.scheme.bounds.d_max],
            },
        }


@dataclass
class Batch:
    rgb: np.ndarray                  # (N, 3, h, w)
    depth: np.ndarray                # (N, h, w) metric, 0 where invalid
    valid: np.ndarray                # (N, h, w) bool
    labels: np.ndarray               # (N, h, w) int64
    indices: list[int] = field(default_factory=list)

    @property
    def valid_count(self) -> int:
        return int(self.valid.sum())


class BatchStream:
    """Deterministic epoch-shuffled crops; batch(t) is a pure function of t.

    Incomplete trailing batches of an epoch are dropped. Prefetching (a
    read-ahead thread) only computes future batches early; the sequence is
    identical at any prefetch depth.
    """

    def __init__(self, dataset: SyntheticDataset, batch_size: int,
                 augment_spec: AugmentSpec, seed: int, prefetch: int = 0):
        if batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if len(dataset) == 0:
            raise ValueError("empty dataset")
        self.dataset = dataset
        self.batch_size = int(batch_size)
        self.augment_spec = augment_spec
        self.seed = int(seed)
        self.prefetch = int(prefetch)
        self.batches_per_epoch = len(dataset) // batch_size
        if self.batches_per_epoch == 0:
            raise ValueError(f"dataset of {len(dataset)} samples never fills a batch of {batch_size}")

    def batch(self, t: int) -> Batch:
        epoch, k = divmod(t, self.batches_per_epoch)
        perm = np.random.default_rng(
            np.random.SeedSequence([self.seed, 104729, epoch])
        ).permutation(len(self.dataset))
        idx = perm[k * self.batch_size:(k + 1) * self.batch_size]
        rgbs, depths, valids, labels = [], [], [], []
        for slot, i in enumerate(idx):
            s = self.dataset.sample(int(i))
            s = augment(s, self.augment_spec, np.random.SeedSequence([self.seed, 7919, t, slot]))
            rgbs.append(s.rgb)
            depths.append(s.gt.depth)
            valids.append(s.gt.valid)
            labels.append(s.labels.label)
        return Batch(
            rgb=np.stack(rgbs), depth=np.stack(depths),
            valid=np.stack(valids), labels=np.stack(labels),
            indices=[int(i) for i in idx],
        )

    def iter_batches(self, start: int = 0, count: int | None = None):
        """Yield batch(start), batch(start+1), ... (count of them, or forever)."""
        stop = None if count is None else start + count
        if self.prefetch <= 0:
            t = start
            while stop is None or t < stop:
                yield self.batch(t)
                t += 1
            return

        q: queue.Queue = queue.Queue(maxsize=self.prefetch)
        done = object()

        def worker():
            t = start
            while stop is None or t < stop:
                q.put(self.batch(t))
                t += 1
            q.put(done)

        thread = threading.Thread(target=worker, daemon=True)
        thread.start()
        while True:
            item = q.get()
            if item is done:
                break
            yield item


def write_dataset_dir(dataset: SyntheticDataset, out_dir) -> None:
    """Materialize a dataset as RGB + KITTI depth PNG pairs plus a manifest."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for i in range(len(dataset)):
        s = dataset.sample(i)
        write_rgb_png(s.rgb, out / f"{i:05d}_rgb.png")
        write_kitti_png(s.gt, out / f"{i:05d}_depth.png")
    with open(out / "manifest.json", "w") as fh:
        json.dump(dataset.manifest(), fh, indent=2, sort_keys=True)
        fh.write("\n")
