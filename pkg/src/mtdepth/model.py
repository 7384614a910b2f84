"""Micro shared-encoder / dual-decoder convolutional depth network.

The encoder downsamples twice (stem stride 2, block A stride 2) and finishes
with a dilated stride-1 block, so features stay at 1/4 resolution. Two
shallow task heads consume the same feature map: each pools a small feature
pyramid, projects it, upsamples, concatenates it with the features and a
pooled stem skip, fuses with one 3x3 conv (+ ReLU + dropout), projects to its
output channels with a 1x1 conv, and upsamples x4 back to the input size.

The regression head emits one channel of normalized-log depth (no squashing;
decoding clamps). The classification head emits n_cls logit channels and can
be disabled entirely.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor, concat, conv2d, pool2d_mean, relu, upsample_bilinear
from .depthspace import DepthBounds, DepthMap, decode_depth

__all__ = ["ModelConfig", "ModelOutput", "Model", "build", "ENCODER_STRIDE"]

ENCODER_STRIDE = 4


@dataclass(frozen=True)
class ModelConfig:
    input_channels: int = 3
    stem_channels: int = 16
    block_channels: tuple[int, int] = (32, 64)
    dilation_of_last_block: int = 2
    n_cls: int = 32
    with_classifier: bool = True
    dropout_p: float = 0.1
    pyramid_levels: tuple[int, ...] = (1, 2)
    pyramid_channels: int = 8
    head_channels: int = 16
    use_skip: bool = True

    def __post_init__(self):
        if self.with_classifier and self.n_cls < 2:
            raise ValueError("n_cls must be >= 2 when the classification head is enabled")
        if min(self.input_channels, self.stem_channels, *self.block_channels,
               self.pyramid_channels, self.head_channels) < 1:
            raise ValueError("channel counts must be positive")
        if self.dilation_of_last_block < 1:
            raise ValueError("dilation must be >= 1")
        if not 0.0 <= self.dropout_p < 1.0:
            raise ValueError("dropout_p must lie in [0, 1)")
        if not self.pyramid_levels or min(self.pyramid_levels) < 1:
            raise ValueError("pyramid_levels must be positive")


@dataclass
class ModelOutput:
    regression: Tensor
    class_logits: Tensor | None = None


class Model:
    """Parameter container plus the forward pass."""

    def __init__(self, config: ModelConfig, seed: int):
        self.config = config
        self.seed = int(seed)
        self.params: dict[str, Tensor] = {}
        self._init_params(np.random.Generator(np.random.PCG64(seed)))

    # -- construction ----------------------------------------------------
    def _add_conv(self, name: str, out_ch: int, in_ch: int, k: int,
                  rng: np.random.Generator) -> None:
        fan_in = in_ch * k * k
        bound = 1.0 / np.sqrt(fan_in)
        w = rng.uniform(-bound, bound, size=(out_ch, in_ch, k, k))
        self.params[f"{name}.w"] = ad.tensor(w, requires_grad=True)
        self.params[f"{name}.b"] = ad.tensor(np.zeros(out_ch), requires_grad=True)

    def _head_in_channels(self) -> int:
        cfg = self.config
        ch = cfg.block_channels[1] + len(cfg.pyramid_levels) * cfg.pyramid_channels
        if cfg.use_skip:
            ch += cfg.stem_channels
        return ch

    def _add_head(self, prefix: str, out_ch: int, rng: np.random.Generator) -> None:
        cfg = self.config
        for lvl in cfg.pyramid_levels:
            self._add_conv(f"{prefix}.pp{lvl}", cfg.pyramid_channels, cfg.block_channels[1], 1, rng)
        self._add_conv(f"{prefix}.fuse", cfg.head_channels, self._head_in_channels(), 3, rng)
        self._add_conv(f"{prefix}.out", out_ch, cfg.head_channels, 1, rng)

    def _init_params(self, rng: np.random.Generator) -> None:
        cfg = self.config
        self._add_conv("stem", cfg.stem_channels, cfg.input_channels, 3, rng)
        self._add_conv("enc1", cfg.block_channels[0], cfg.stem_channels, 3, rng)
        self._add_conv("enc2", cfg.block_channels[1], cfg.block_channels[0], 3, rng)
        self._add_head("reg", 1, rng)
        if cfg.with_classifier:
            self._add_head("cls", cfg.n_cls, rng)

    # -- bookkeeping -----------------------------------------------------
    def named_parameters(self) -> list[tuple[str, Tensor]]:
        return list(self.params.items())

    def parameter_census(self) -> dict[str, float]:
        """Parameter counts split by ownership (shared encoder vs heads)."""
        shared = reg = cls_ = 0
        for name, p in self.params.items():
            n = p.data.size
            if name.startswith("reg."):
                reg += n
            elif name.startswith("cls."):
                cls_ += n
            else:
                shared += n
        total = shared + reg + cls_
        return {
            "shared": shared, "reg_head": reg, "cls_head": cls_, "total": total,
            "shared_fraction": shared / total,
        }

    def state_vector(self) -> np.ndarray:
        """All parameters flattened in construction order."""
        return np.concatenate([p.data.ravel() for p in self.params.values()])

    def load_state_vector(self, vec: np.ndarray) -> None:
        vec = np.asarray(vec, dtype=np.float64)
        expected = sum(p.data.size for p in self.params.values())
        if vec.size != expected:
            raise ValueError(f"state vector has {vec.size} values, model expects {expected}")
        off = 0
        for p in self.params.values():
            n = p.data.size
            p.data = vec[off:off + n].reshape(p.data.shape).copy()
            off += n

    # -- forward ---------------------------------------------------------
    def _decode_head(self, prefix: str, features: Tensor, stem: Tensor,
                     out_size: tuple[int, int], training: bool,
                     rng: np.random.Generator | None) -> Tensor:
        cfg = self.config
        fh, fw = features.shape[2], features.shape[3]
        parts = [features]
        for lvl in cfg.pyramid_levels:
            p = pool2d_mean(features, (min(lvl, fh), min(lvl, fw)))
            p = conv2d(p, self.params[f"{prefix}.pp{lvl}.w"], self.params[f"{prefix}.pp{lvl}.b"])
            parts.append(upsample_bilinear(p, (fh, fw)))
        if cfg.use_skip:
            parts.append(pool2d_mean(stem, (fh, fw)))
        h = relu(conv2d(concat(parts, axis=1),
                        self.params[f"{prefix}.fuse.w"], self.params[f"{prefix}.fuse.b"],
                        padding=1))
        if training and cfg.dropout_p > 0.0:
            if rng is None:
                raise ValueError("training-mode forward with dropout needs an rng")
            keep = rng.random(h.shape) >= cfg.dropout_p
            h = h * ad.tensor(keep.astype(np.float64) / (1.0 - cfg.dropout_p))
        o = conv2d(h, self.params[f"{prefix}.out.w"], self.params[f"{prefix}.out.b"])
        return upsample_bilinear(o, out_size)

    def forward(self, batch, heads: str = "both", training: bool = False,
                rng: np.random.Generator | None = None) -> ModelOutput:
        """Run the network on an (N, 3, H, W) batch.

        ``heads`` is "both" or "reg_only". The regression head always runs
        first, so its output (dropout draws included) is identical whether or
        not the classification head runs afterwards.
        """
        if heads not in ("both", "reg_only"):
            raise ValueError(f"unknown heads mode {heads!r}")
        x = batch if isinstance(batch, Tensor) else ad.tensor(batch)
        if x.data.ndim != 4 or x.data.shape[1] != self.config.input_channels:
            raise ValueError(f"expected (N, {self.config.input_channels}, H, W) input")
        n, _, h, w = x.data.shape
        if h % ENCODER_STRIDE or w % ENCODER_STRIDE:
            raise ValueError(f"spatial size {h}x{w} not divisible by encoder stride {ENCODER_STRIDE}")

        cfg = self.config
        stem = relu(conv2d(x, self.params["stem.w"], self.params["stem.b"], stride=2, padding=1))
        a = relu(conv2d(stem, self.params["enc1.w"], self.params["enc1.b"], stride=2, padding=1))
        d = cfg.dilation_of_last_block
        features = relu(conv2d(a, self.params["enc2.w"], self.params["enc2.b"],
                               dilation=d, padding=d))

        regression = self._decode_head("reg", features, stem, (h, w), training, rng)
        logits = None
        if heads == "both" and cfg.with_classifier:
            logits = self._decode_head("cls", features, stem, (h, w), training, rng)
        return ModelOutput(regression=regression, class_logits=logits)

    def predict_depth(self, image, bounds: DepthBounds) -> DepthMap:
        """Dense metric prediction for one (3, H, W) image.

        The regression output is clamped to [0, 1] and decoded; every pixel
        of the result is valid.
        """
        img = np.asarray(image, dtype=np.float64)
        if img.ndim != 3:
            raise ValueError("predict_depth expects a single (3, H, W) image")
        out = self.forward(img[None], heads="reg_only", training=False)
        d_log = np.clip(out.regression.data[0, 0], 0.0, 1.0)
        return DepthMap.dense(decode_depth(d_log, bounds))


def build(config: ModelConfig, seed: int) -> Model:
    """Construct a model with seed-deterministic parameter initialization."""
    return Model(config, seed)
