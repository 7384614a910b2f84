"""Sparse task losses, the scale-invariant log metric, and task weighting.

Training optimizes a sparse MSE on normalized-log depths plus a sparse
softmax cross entropy on interval labels, combined either with fixed weights
or with learned per-task log-variances s = log(sigma^2):

    w_reg = 0.5 * exp(-s_reg),  w_cls = exp(-s_cls),  r_task = 0.5 * s_task
    L_mt  = w_reg * L_reg + r_reg + w_cls * L_cls + r_cls

The r_task terms keep the combined objective bounded below, so the trivial
all-zero weighting is never a minimum. Evaluation uses the scale-invariant
logarithmic error, reported both raw and as 100 * sqrt(raw).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import (
    EmptyReductionError,
    Tensor,
    reduce_mean,
    softmax_cross_entropy,
    square,
    tensor,
    exp,
)
from .depthspace import DepthMap

__all__ = [
    "TaskWeights",
    "LossBreakdown",
    "SilogResult",
    "sparse_mse",
    "sparse_softmax_ce",
    "silog",
    "combine",
]

WEIGHTING_MODES = ("learned", "equal", "manual")


class TaskWeights:
    """Per-task loss weights: fixed (equal/manual) or learned log-variances."""

    def __init__(self, mode: str, s_init: float = 1.0,
                 manual: tuple[float, float] = (1.0, 1.0)):
        if mode not in WEIGHTING_MODES:
            raise ValueError(f"unknown weighting mode {mode!r}")
        self.mode = mode
        self.manual = (float(manual[0]), float(manual[1]))
        if self.manual[0] <= 0 or self.manual[1] <= 0:
            raise ValueError("manual weights must be strictly positive")
        self.s_reg = tensor(float(s_init), requires_grad=True) if mode == "learned" else None
        self.s_cls = tensor(float(s_init), requires_grad=True) if mode == "learned" else None

    @classmethod
    def learned(cls, s_init: float = 1.0) -> "TaskWeights":
        return cls("learned", s_init=s_init)

    @classmethod
    def equal(cls) -> "TaskWeights":
        return cls("equal")

    @classmethod
    def manual_pair(cls, w_reg: float, w_cls: float) -> "TaskWeights":
        return cls("manual", manual=(w_reg, w_cls))

    def parameters(self) -> list[tuple[str, Tensor]]:
        """Learnable tensors to hand to the optimizer (empty unless learned)."""
        if self.mode != "learned":
            return []
        return [("s_reg", self.s_reg), ("s_cls", self.s_cls)]

    def sigma_sq(self, task: str) -> float:
        """Recovered task variance exp(s_task) in learned mode."""
        s = {"reg": self.s_reg, "cls": self.s_cls}[task]
        if s is None:
            raise ValueError("sigma_sq is only defined in learned mode")
        return float(np.exp(s.data))


@dataclass
class LossBreakdown:
    """One training step's loss composition, mirrored as plain floats."""

    l_reg: float
    l_cls: float
    w_reg: float
    w_cls: float
    r_reg: float
    r_cls: float
    l_mt: float
    total: Tensor
    valid_pixel_count: int = 0


def sparse_mse(pred: Tensor, target, valid) -> Tensor:
    """Mean squared difference over valid pixels only.

    ``target`` holds normalized-log ground truth (already clamped to [0, 1]);
    values at invalid positions are ignored entirely.
    """
    t = np.asarray(target, dtype=np.float64)
    if pred.shape != t.shape:
        raise ValueError(f"pred shape {pred.shape} != target shape {t.shape}")
    return reduce_mean(square(pred - tensor(t)), mask=valid)


def sparse_softmax_ce(logits: Tensor, labels, valid) -> Tensor:
    """Mean -log softmax(logits)[label] over valid pixels."""
    return softmax_cross_entropy(logits, labels, valid)


@dataclass(frozen=True)
class SilogResult:
    raw: float
    scaled: float
    n: int


def silog(pred: DepthMap, gt: DepthMap) -> SilogResult:
    """Scale-invariant logarithmic error over jointly valid pixels.

    raw    = (1/n) sum(e_i^2) - (1/n^2) (sum e_i)^2,  e_i = log d_i - log d*_i
    scaled = 100 * sqrt(raw)   (benchmark reporting convention)
    """
    joint = pred.valid & gt.valid
    n = int(joint.sum())
    if n == 0:
        raise EmptyReductionError("silog: no jointly valid pixels")
    p = pred.depth[joint]
    g = gt.depth[joint]
    if np.any(p <= 0.0) or np.any(g <= 0.0):
        raise ValueError("silog: depths must be positive at valid pixels")
    e = np.log(p) - np.log(g)
    raw = float(e.dot(e) / n - (e.sum() / n) ** 2)
    raw = max(raw, 0.0)  # guards float cancellation; raw is a variance
    return SilogResult(raw=raw, scaled=100.0 * np.sqrt(raw), n=n)


def combine(l_reg: Tensor, l_cls: Tensor | None, weights: TaskWeights,
            valid_pixel_count: int = 0) -> LossBreakdown:
    """Compose the multi-task objective from single-task losses.

    With ``l_cls=None`` (single-task regression) the total is just ``l_reg``.
    In learned mode the returned total is differentiable w.r.t. both losses
    and both s parameters.
    """
    if l_cls is None:
        return LossBreakdown(
            l_reg=l_reg.item(), l_cls=0.0, w_reg=1.0, w_cls=0.0,
            r_reg=0.0, r_cls=0.0, l_mt=l_reg.item(), total=l_reg,
            valid_pixel_count=valid_pixel_count,
        )

    if weights.mode == "learned":
        w_reg_t = 0.5 * exp(-weights.s_reg)
        w_cls_t = exp(-weights.s_cls)
        r_reg_t = 0.5 * weights.s_reg
        r_cls_t = 0.5 * weights.s_cls
        total = w_reg_t * l_reg + r_reg_t + w_cls_t * l_cls + r_cls_t
        w_reg, w_cls = w_reg_t.item(), w_cls_t.item()
        r_reg, r_cls = r_reg_t.item(), r_cls_t.item()
    else:
        if weights.mode == "equal":
            w_reg, w_cls = 1.0, 1.0
        else:
            w_reg, w_cls = weights.manual
        total = w_reg * l_reg + w_cls * l_cls
        r_reg = r_cls = 0.0

    return LossBreakdown(
        l_reg=l_reg.item(), l_cls=l_cls.item(), w_reg=w_reg, w_cls=w_cls,
        r_reg=r_reg, r_cls=r_cls, l_mt=total.item(), total=total,
        valid_pixel_count=valid_pixel_count,
    )
