"""Adam with coupled L2 decay, polynomial LR decay, and the LR range test."""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field

import numpy as np

from .autodiff import Tensor

__all__ = [
    "Adam",
    "NonFiniteGradientError",
    "PolySchedule",
    "lr_at",
    "LrInterval",
    "LrSweepRecord",
    "lr_range_test",
]

log = logging.getLogger(__name__)


class NonFiniteGradientError(RuntimeError):
    """A parameter gradient contained NaN or infinity."""


class Adam:
    """Adam over named parameters, with coupled L2 weight decay.

    Decay folds lambda * theta into the gradient before the moment updates.
    Parameters listed in ``no_decay`` (the task-weight scalars) are exempt.
    """

    def __init__(self, named_params, beta1: float = 0.9, beta2: float = 0.999,
                 eps: float = 1e-8, weight_decay: float = 1e-4,
                 no_decay: frozenset[str] | set[str] = frozenset()):
        self.named_params: list[tuple[str, Tensor]] = list(named_params)
        if not self.named_params:
            raise ValueError("optimizer needs at least one parameter")
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.weight_decay = weight_decay
        self.no_decay = frozenset(no_decay)
        self.step_count = 0
        self.m = {name: np.zeros_like(p.data) for name, p in self.named_params}
        self.v = {name: np.zeros_like(p.data) for name, p in self.named_params}

    def step(self, alpha: float) -> None:
        """One update at learning rate alpha (alpha=0 still advances the moments).

        All gradients are validated before any parameter moves, so a
        non-finite gradient aborts without a partial update.
        """
        if alpha < 0:
            raise ValueError("learning rate must be non-negative")
        for name, p in self.named_params:
            if p.grad is None:
                raise NonFiniteGradientError(f"parameter {name!r} has no gradient")
            if not np.all(np.isfinite(p.grad)):
                raise NonFiniteGradientError(f"non-finite gradient for parameter {name!r}")
        self.step_count += 1
        t = self.step_count
        bc1 = 1.0 - self.beta1 ** t
        bc2 = 1.0 - self.beta2 ** t
        for name, p in self.named_params:
            g = p.grad
            if self.weight_decay and name not in self.no_decay:
                g = g + self.weight_decay * p.data
            m = self.m[name]
            v = self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            p.data -= alpha * (m / bc1) / (np.sqrt(v / bc2) + self.eps)

    def state_dict(self) -> dict:
        return {
            "step_count": self.step_count,
            "m": {k: v.copy() for k, v in self.m.items()},
            "v": {k: v.copy() for k, v in self.v.items()},
        }

    def load_state_dict(self, state: dict) -> None:
        names = {name for name, _ in self.named_params}
        if set(state["m"]) != names or set(state["v"]) != names:
            raise ValueError("optimizer state does not match the parameter set")
        self.step_count = int(state["step_count"])
        for k in names:
            self.m[k] = np.asarray(state["m"][k], dtype=np.float64).copy()
            self.v[k] = np.asarray(state["v"][k], dtype=np.float64).copy()


@dataclass(frozen=True)
class PolySchedule:
    """alpha(t) = alpha0 * (1 - t/total)^gamma, reaching exactly 0 at t=total."""

    alpha0: float
    total_iters: int
    gamma: float = 0.9

    def __post_init__(self):
        if self.total_iters < 1:
            raise ValueError("total_iters must be positive")
        if self.alpha0 < 0:
            raise ValueError("alpha0 must be non-negative")


def lr_at(schedule: PolySchedule, t: int) -> float:
    if not 0 <= t <= schedule.total_iters:
        raise ValueError(f"t={t} outside [0, {schedule.total_iters}]")
    return schedule.alpha0 * (1.0 - t / schedule.total_iters) ** schedule.gamma


# -- learning-rate range test ---------------------------------------------

STAGNATION, DECREASE, INCREASE, DIVERGENCE = "stagnation", "decrease", "increase", "divergence"

# Per-step relative change below this is stagnation; smoothed loss above
# DIVERGENCE_FACTOR x its initial value (or non-finite) is divergence.
SLOPE_THRESHOLD = 1e-3
DIVERGENCE_FACTOR = 4.0
# Selection slope is measured over +/- this many steps so a single noisy
# step cannot masquerade as the steepest descent.
SELECTION_WINDOW = 5


@dataclass(frozen=True)
class LrInterval:
    kind: str
    start: int          # first step index (inclusive)
    end: int            # last step index (inclusive)
    alpha_lo: float
    alpha_hi: float


@dataclass
class LrSweepRecord:
    alphas: np.ndarray
    loss_raw: np.ndarray
    loss_smoothed: np.ndarray
    intervals: list[LrInterval] = field(default_factory=list)
    selected_alpha: float = float("nan")
    selection_fallback: str | None = None

    def steps(self) -> int:
        return len(self.alphas)

    def intervals_of(self, kind: str) -> list[LrInterval]:
        return [iv for iv in self.intervals if iv.kind == kind]

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["step", "alpha", "loss_raw", "loss_smoothed"])
            for i in range(len(self.alphas)):
                writer.writerow([i, repr(float(self.alphas[i])),
                                 repr(float(self.loss_raw[i])), repr(float(self.loss_smoothed[i]))])

    def summary(self) -> dict:
        return {
            "steps": self.steps(),
            "selected_alpha": self.selected_alpha,
            "selection_fallback": self.selection_fallback,
            "intervals": [
                {"kind": iv.kind, "start": iv.start, "end": iv.end,
                 "alpha_lo": iv.alpha_lo, "alpha_hi": iv.alpha_hi}
                for iv in self.intervals
            ],
        }


def _label_steps(raw: np.ndarray, smoothed: np.ndarray, truncated: bool) -> list[str]:
    n = len(raw)
    ref = max(abs(smoothed[0]), 1e-300)
    labels = []
    for i in range(n):
        if not np.isfinite(raw[i]) or smoothed[i] > DIVERGENCE_FACTOR * ref:
            labels.append(DIVERGENCE)
            continue
        if i == 0:
            labels.append(STAGNATION)
            continue
        denom = max(abs(smoothed[i - 1]), 1e-300)
        rel = (smoothed[i] - smoothed[i - 1]) / denom
        if rel < -SLOPE_THRESHOLD:
            labels.append(DECREASE)
        elif rel > SLOPE_THRESHOLD:
            labels.append(INCREASE)
        else:
            labels.append(STAGNATION)
    if truncated and labels:
        labels[-1] = DIVERGENCE
    return labels


def _merge_intervals(labels: list[str], alphas: np.ndarray) -> list[LrInterval]:
    intervals = []
    start = 0
    for i in range(1, len(labels) + 1):
        if i == len(labels) or labels[i] != labels[start]:
            intervals.append(LrInterval(labels[start], start, i - 1,
                                        float(alphas[start]), float(alphas[i - 1])))
            start = i
    return intervals


def lr_range_test(train_step, alpha_start: float, alpha_end: float,
                  steps: int = 250, smoothing: float = 0.9) -> LrSweepRecord:
    """Sweep geometrically increasing learning rates through a training step.

    ``train_step(alpha)`` must perform one optimization step at that rate and
    return the loss. The callable owns a throwaway model/optimizer pair: the
    sweep is expected to wreck it. Losses are EMA-smoothed before slope
    detection; a non-finite loss truncates the record and marks divergence.
    The selected alpha sits at the steepest smoothed descent, falling back to
    the geometric midpoint (with a recorded warning) if nothing decreases.
    """
    if not (0 < alpha_start < alpha_end):
        raise ValueError("need 0 < alpha_start < alpha_end")
    if steps < 2:
        raise ValueError("need at least 2 sweep steps")

    ratio = (alpha_end / alpha_start) ** (1.0 / (steps - 1))
    alphas, raw, smooth = [], [], []
    truncated = False
    for i in range(steps):
        a = alpha_start * ratio ** i
        loss = float(train_step(a))
        alphas.append(a)
        raw.append(loss)
        if not np.isfinite(loss):
            smooth.append(loss)
            truncated = True
            break
        smooth.append(loss if not smooth else smoothing * smooth[-1] + (1 - smoothing) * loss)

    alphas = np.asarray(alphas)
    raw = np.asarray(raw)
    smooth = np.asarray(smooth)
    labels = _label_steps(raw, smooth, truncated)
    record = LrSweepRecord(alphas=alphas, loss_raw=raw, loss_smoothed=smooth,
                           intervals=_merge_intervals(labels, alphas))

    # Candidates: decrease-labeled steps on the way down to the smoothed
    # minimum. Slopes after the minimum are rebounds from instability, not
    # descent, however steep they look.
    finite = int(np.isfinite(smooth).sum())
    drop = np.full(len(raw), np.inf)
    if finite:
        min_step = int(np.argmin(smooth[:finite]))
        for i in range(1, min_step + 1):
            if labels[i] == DECREASE:
                lo = max(i - SELECTION_WINDOW, 0)
                hi = min(i + SELECTION_WINDOW, finite - 1)
                drop[i] = (smooth[hi] - smooth[lo]) / (hi - lo)
    if np.isfinite(drop).any():
        record.selected_alpha = float(alphas[int(np.argmin(drop))])
    else:
        record.selected_alpha = float(np.sqrt(alpha_start * alpha_end))
        record.selection_fallback = "no decreasing interval detected; using geometric midpoint"
        log.warning("lr_range_test: %s", record.selection_fallback)
    return record
