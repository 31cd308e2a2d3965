"""Box primitives, global deskew, projection histograms and split thresholds."""
from __future__ import annotations

import math
from dataclasses import dataclass, replace
from enum import Enum
from typing import Sequence

import numpy as np


class Axis(str, Enum):
    X = "X"
    Y = "Y"

    @property
    def other(self) -> "Axis":
        return Axis.X if self is Axis.Y else Axis.Y


@dataclass(frozen=True)
class TextBox:
    id: int
    x0: float
    y0: float
    x1: float
    y1: float
    text: str = ""

    def __post_init__(self):
        if not (self.x0 < self.x1 and self.y0 < self.y1):
            raise ValueError(f"degenerate box {self.id}: ({self.x0}, {self.y0}, {self.x1}, {self.y1})")

    @property
    def cx(self) -> float:
        return (self.x0 + self.x1) / 2

    @property
    def cy(self) -> float:
        return (self.y0 + self.y1) / 2

    @property
    def width(self) -> float:
        return self.x1 - self.x0

    @property
    def height(self) -> float:
        return self.y1 - self.y0

    def interval(self, axis: Axis) -> tuple[float, float]:
        return (self.x0, self.x1) if axis is Axis.X else (self.y0, self.y1)

    def center(self, axis: Axis) -> float:
        return self.cx if axis is Axis.X else self.cy

    def translated(self, dx: float, dy: float) -> "TextBox":
        return replace(self, x0=self.x0 + dx, x1=self.x1 + dx, y0=self.y0 + dy, y1=self.y1 + dy)


@dataclass
class Document:
    boxes: list[TextBox]
    width: float
    height: float
    doc_id: str = "doc"

    def __post_init__(self):
        ids = [b.id for b in self.boxes]
        if len(set(ids)) != len(ids):
            raise ValueError(f"duplicate box ids in document {self.doc_id!r}")

    @property
    def ids(self) -> list[int]:
        return [b.id for b in self.boxes]

    def by_id(self) -> dict[int, TextBox]:
        return {b.id: b for b in self.boxes}


@dataclass(frozen=True)
class ProjectionHistogram:
    axis: Axis
    bin_width: float
    origin: float
    counts: np.ndarray

    def __len__(self) -> int:
        return len(self.counts)

    def bin_start(self, k: float) -> float:
        return self.origin + k * self.bin_width


@dataclass(frozen=True)
class SplitThresholds:
    gap_min: float
    tau_valley: float
    median_size: float
    iqr: float


@dataclass
class AxgParams:
    alpha: float = 0.5
    beta: float = 0.25
    gamma: float = 0.3
    max_bins: int = 1024
    deskew_enabled: bool = True
    deskew_range_deg: float = 5.0

    def __post_init__(self):
        if not 0 < self.gamma <= 1:
            raise ValueError(f"gamma must lie in (0, 1], got {self.gamma}")
        if self.alpha < 0 or self.beta < 0:
            raise ValueError("alpha and beta must be non-negative")
        if self.max_bins < 16:
            raise ValueError(f"max_bins must be >= 16, got {self.max_bins}")
        if not 0 <= self.deskew_range_deg <= 15:
            raise ValueError(f"deskew_range_deg must lie in [0, 15], got {self.deskew_range_deg}")


SKEW_STEP_DEG = 0.25


def clamp_box(box: TextBox, width: float, height: float) -> TextBox:
    """Clamp ``box`` into the page, keeping at least one pixel of extent."""
    x0 = min(max(box.x0, 0.0), max(width - 1.0, 0.0))
    y0 = min(max(box.y0, 0.0), max(height - 1.0, 0.0))
    x1 = max(min(box.x1, width), x0 + 1.0)
    y1 = max(min(box.y1, height), y0 + 1.0)
    return replace(box, x0=x0, y0=y0, x1=x1, y1=y1)


def _rotate(xs: np.ndarray, ys: np.ndarray, cx: float, cy: float, angle_deg: float):
    t = math.radians(angle_deg)
    c, s = math.cos(t), math.sin(t)
    dx, dy = xs - cx, ys - cy
    return cx + c * dx - s * dy, cy + s * dx + c * dy


def rotate_points(xs, ys, cx: float, cy: float, angle_deg: float):
    """Rotate points by ``angle_deg`` about ``(cx, cy)`` (image coordinates)."""
    return _rotate(np.asarray(xs, float), np.asarray(ys, float), cx, cy, angle_deg)


def _skew_scores(cx: np.ndarray, cy: np.ndarray, pcx: float, pcy: float, angles: np.ndarray) -> np.ndarray:
    # Fixed 1-px grid for every angle: the mean bin count is constant, so the histogram
    # variance ranks angles exactly like the integer sum of squared counts.
    # The quarter-pixel offset keeps integer and half-integer centers off bin edges.
    t = np.radians(-angles)[:, None]
    dx, dy = (cx - pcx)[None, :], (cy - pcy)[None, :]
    ry = np.sin(t) * dx + np.cos(t) * dy
    reach = math.ceil(float(np.hypot(np.abs(cx - pcx).max(), np.abs(cy - pcy).max()))) + 2
    nbins = 2 * reach + 2
    k = np.floor(ry + reach + 0.25).astype(np.int64) + (np.arange(len(angles)) * nbins)[:, None]
    hist = np.bincount(k.ravel(), minlength=nbins * len(angles)).reshape(len(angles), nbins)
    return (hist.astype(np.int64) ** 2).sum(axis=1)


def estimate_skew(doc: Document, range_deg: float = 5.0) -> float:
    """Angle in [-range_deg, range_deg] whose inverse rotation best aligns box centers into rows.

    Scans in 0.25 degree steps; ties go to the smallest absolute angle.
    """
    if len(doc.boxes) < 2 or range_deg <= 0:
        return 0.0
    if range_deg > 15:
        raise ValueError(f"range_deg must be <= 15, got {range_deg}")
    n_steps = int(math.floor(range_deg / SKEW_STEP_DEG + 1e-9))
    steps = np.arange(-n_steps, n_steps + 1)
    # candidates ordered by |angle| so argmax picks the smallest rotation among ties
    steps = steps[np.lexsort((steps, np.abs(steps)))]
    angles = steps * SKEW_STEP_DEG
    boxes = sorted(doc.boxes, key=lambda b: b.id)
    cx = np.array([b.cx for b in boxes])
    cy = np.array([b.cy for b in boxes])
    # pivot on a box center (not the page center) so page translation cannot move bin edges
    scores = _skew_scores(cx, cy, float(cx[0]), float(cy[0]), angles)
    return float(angles[int(np.argmax(scores))]) + 0.0


def deskew(doc: Document, angle: float) -> Document:
    """Rotate every box by ``-angle`` about the page center and re-axis-align it."""
    if not math.isfinite(angle):
        raise ValueError(f"angle must be finite, got {angle}")
    if angle == 0:
        return Document(list(doc.boxes), doc.width, doc.height, doc.doc_id)
    pcx, pcy = doc.width / 2, doc.height / 2
    out = []
    for b in doc.boxes:
        xs = np.array([b.x0, b.x1, b.x1, b.x0])
        ys = np.array([b.y0, b.y0, b.y1, b.y1])
        rx, ry = _rotate(xs, ys, pcx, pcy, -angle)
        out.append(replace(b, x0=float(rx.min()), y0=float(ry.min()), x1=float(rx.max()), y1=float(ry.max())))
    return Document(out, doc.width, doc.height, doc.doc_id)


def _intervals(boxes: Sequence[TextBox], axis: Axis) -> tuple[np.ndarray, np.ndarray]:
    if axis is Axis.X:
        return np.array([b.x0 for b in boxes], float), np.array([b.x1 for b in boxes], float)
    return np.array([b.y0 for b in boxes], float), np.array([b.y1 for b in boxes], float)


def auto_bin_width(boxes: Sequence[TextBox], axis: Axis, max_bins: int) -> float:
    lo, hi = _intervals(boxes, axis)
    extent = float(hi.max() - lo.min())
    return float(max(1, math.ceil(extent / max_bins)))


def project_histogram(boxes: Sequence[TextBox], axis: Axis, bin_width: float) -> ProjectionHistogram:
    """Count, per bin, the boxes whose projected interval intersects it.

    Bins are half-open ``[origin + k*w, origin + (k+1)*w)`` and span the tight extent
    of ``boxes`` on ``axis``.
    """
    if len(boxes) == 0:
        raise ValueError("empty region")
    if bin_width < 1:
        raise ValueError(f"bin_width must be >= 1, got {bin_width}")
    axis = Axis(axis)
    lo, hi = _intervals(boxes, axis)
    origin = float(lo.min())
    n = max(1, math.ceil((float(hi.max()) - origin) / bin_width))
    first = np.floor((lo - origin) / bin_width).astype(np.int64)
    last = np.ceil((hi - origin) / bin_width).astype(np.int64) - 1
    last = np.clip(np.maximum(last, first), 0, n - 1)
    diff = np.zeros(n + 1, dtype=np.int64)
    np.add.at(diff, first, 1)
    np.add.at(diff, last + 1, -1)
    return ProjectionHistogram(axis, float(bin_width), origin, np.cumsum(diff[:n]))


def box_sizes(boxes: Sequence[TextBox], axis: Axis) -> np.ndarray:
    lo, hi = _intervals(boxes, axis)
    return hi - lo


def adaptive_thresholds(boxes: Sequence[TextBox], hist: ProjectionHistogram, params: AxgParams) -> SplitThresholds:
    """Minimum gap width from box-size statistics and valley density from the histogram median."""
    if len(boxes) == 0:
        raise ValueError("empty region")
    sizes = box_sizes(boxes, hist.axis)
    q25, m, q75 = np.percentile(sizes, [25, 50, 75])
    iqr = float(q75 - q25)
    gap_min = params.alpha * float(m) + params.beta * iqr
    tau = params.gamma * float(np.median(hist.counts))
    return SplitThresholds(gap_min=gap_min, tau_valley=tau, median_size=float(m), iqr=iqr)
