"""Transformations between metric depth, normalized log depth, and interval labels.

Metric depths in [d_min, d_max] map onto [0, 1] through a shifted natural log,
spending most of the output resolution close to the camera. Interval labels
discretize a clipped sub-range [d_cmin, d_cmax] of that log axis into n_cls
equally wide bins.

All functions are pure and accept scalars or numpy arrays.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "DepthBounds",
    "ClipPlanes",
    "IntervalScheme",
    "DepthMap",
    "IntervalLabeling",
    "encode_depth",
    "decode_depth",
    "encode_clamped",
    "quantize",
    "dequantize",
    "label_map",
]


@dataclass(frozen=True)
class DepthBounds:
    """Normalization range: d_min maps to 0, d_max maps to 1."""

    d_min: float = 2.0
    d_max: float = 125.0

    def __post_init__(self):
        if not (0.0 <= self.d_min < self.d_max):
            raise ValueError(f"require 0 <= d_min < d_max, got ({self.d_min}, {self.d_max})")

    @property
    def log_span(self) -> float:
        return float(np.log(self.d_max - self.d_min + 1.0))


@dataclass(frozen=True)
class ClipPlanes:
    """Inner clipping planes bounding the quantized depth range."""

    d_cmin: float = 2.5
    d_cmax: float = 80.0

    def validate_inside(self, bounds: DepthBounds) -> None:
        if not (bounds.d_min < self.d_cmin < self.d_cmax < bounds.d_max):
            raise ValueError(
                f"clip planes ({self.d_cmin}, {self.d_cmax}) must lie strictly inside "
                f"bounds ({bounds.d_min}, {bounds.d_max})"
            )


def encode_depth(d, bounds: DepthBounds):
    """Map metric depth to normalized log space: ln(d - d_min + 1) / ln(d_max - d_min + 1).

    Values above d_max are permitted and encode to > 1 (callers clamp where
    they need to); values below d_min are rejected.
    """
    d = np.asarray(d, dtype=np.float64)
    if np.any(d < bounds.d_min):
        raise ValueError(f"depth below d_min={bounds.d_min} cannot be encoded")
    out = np.log(d - bounds.d_min + 1.0) / bounds.log_span
    return float(out) if out.ndim == 0 else out


def decode_depth(d_log, bounds: DepthBounds):
    """Exact inverse of encode_depth for non-negative normalized values."""
    d_log = np.asarray(d_log, dtype=np.float64)
    if np.any(d_log < 0.0):
        raise ValueError("normalized log depth must be non-negative")
    out = np.exp(d_log * bounds.log_span) + bounds.d_min - 1.0
    return float(out) if out.ndim == 0 else out


def encode_clamped(d, bounds: DepthBounds):
    """Encode with depths clamped up to d_min and encodings clamped down to 1.

    This is the regression-target path: real data may fall outside the
    normalization range on either side.
    """
    d = np.maximum(np.asarray(d, dtype=np.float64), bounds.d_min)
    out = np.minimum(np.log(d - bounds.d_min + 1.0) / bounds.log_span, 1.0)
    return float(out) if out.ndim == 0 else out


@dataclass(frozen=True)
class IntervalScheme:
    """n_cls depth intervals, equally spaced in normalized log space."""

    n_cls: int
    planes: ClipPlanes = field(default_factory=ClipPlanes)
    bounds: DepthBounds = field(default_factory=DepthBounds)

    def __post_init__(self):
        if self.n_cls < 1:
            raise ValueError("n_cls must be positive")
        self.planes.validate_inside(self.bounds)

    @property
    def edges(self) -> np.ndarray:
        """n_cls + 1 monotonically increasing bin edges in normalized log space."""
        e0 = encode_depth(self.planes.d_cmin, self.bounds)
        ek = encode_depth(self.planes.d_cmax, self.bounds)
        return np.linspace(e0, ek, self.n_cls + 1)


def quantize(d, scheme: IntervalScheme):
    """Bin positive metric depths into [0, n_cls) by normalized log position.

    Total by clamping: depths below d_cmin land in class 0, above d_cmax in
    class n_cls - 1.
    """
    d = np.asarray(d, dtype=np.float64)
    if np.any(d <= 0.0):
        raise ValueError("quantize requires positive depths")
    clipped = np.clip(d, scheme.planes.d_cmin, scheme.planes.d_cmax)
    e = np.log(clipped - scheme.bounds.d_min + 1.0) / scheme.bounds.log_span
    e0 = encode_depth(scheme.planes.d_cmin, scheme.bounds)
    ek = encode_depth(scheme.planes.d_cmax, scheme.bounds)
    idx = np.floor(scheme.n_cls * (e - e0) / (ek - e0)).astype(np.int64)
    idx = np.clip(idx, 0, scheme.n_cls - 1)
    return int(idx) if idx.ndim == 0 else idx


def dequantize(label, scheme: IntervalScheme):
    """Metric depth of a bin's midpoint in normalized log space."""
    label = np.asarray(label)
    if np.any(label < 0) or np.any(label >= scheme.n_cls):
        raise ValueError(f"label out of range [0, {scheme.n_cls})")
    edges = scheme.edges
    mid = (edges[label] + edges[label + 1]) / 2.0
    return decode_depth(mid, scheme.bounds)


@dataclass
class DepthMap:
    """Per-pixel metric depth with a validity mask; invalid pixels hold 0."""

    depth: np.ndarray
    valid: np.ndarray

    def __post_init__(self):
        self.depth = np.asarray(self.depth, dtype=np.float64)
        self.valid = np.asarray(self.valid, dtype=bool)
        if self.depth.shape != self.valid.shape or self.depth.ndim != 2:
            raise ValueError("depth and valid must be equal-shape 2D arrays")
        if np.any(self.depth[self.valid] <= 0.0):
            raise ValueError("valid pixels must carry positive depth")
        self.depth = np.where(self.valid, self.depth, 0.0)

    @property
    def height(self) -> int:
        return self.depth.shape[0]

    @property
    def width(self) -> int:
        return self.depth.shape[1]

    def coverage(self) -> float:
        """Fraction of pixels with valid ground truth."""
        return float(self.valid.mean())

    @classmethod
    def dense(cls, depth: np.ndarray) -> "DepthMap":
        depth = np.asarray(depth, dtype=np.float64)
        return cls(depth, np.ones(depth.shape, dtype=bool))


@dataclass
class IntervalLabeling:
    """Per-pixel interval class indices with a validity mask."""

    label: np.ndarray
    valid: np.ndarray

    def __post_init__(self):
        self.label = np.asarray(self.label, dtype=np.int64)
        self.valid = np.asarray(self.valid, dtype=bool)
        if self.label.shape != self.valid.shape or self.label.ndim != 2:
            raise ValueError("label and valid must be equal-shape 2D arrays")


def label_map(gt: DepthMap, scheme: IntervalScheme) -> IntervalLabeling:
    """Quantize every valid pixel of a depth map; the mask carries over unchanged."""
    labels = np.zeros(gt.depth.shape, dtype=np.int64)
    if gt.valid.any():
        labels[gt.valid] = quantize(gt.depth[gt.valid], scheme)
    return IntervalLabeling(labels, gt.valid.copy())
