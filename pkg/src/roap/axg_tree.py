"""Adaptive-XY-Gap tree: recursive projection-valley splitting with a line-sorting fallback."""
from __future__ import annotations

import bisect
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .geometry import (
    AxgParams,
    Axis,
    Document,
    ProjectionHistogram,
    SplitThresholds,
    TextBox,
    adaptive_thresholds,
    auto_bin_width,
    deskew,
    estimate_skew,
    project_histogram,
)


@dataclass(frozen=True)
class ValleyInterval:
    start_bin: int
    end_bin: int
    width_px: float

    def center(self, hist: ProjectionHistogram) -> float:
        """Pixel coordinate of the valley's center (the split line)."""
        return hist.bin_start((self.start_bin + self.end_bin + 1) / 2)


@dataclass(frozen=True)
class ReadingOrder:
    order: list[int]

    def positions(self) -> dict[int, int]:
        """Map box id -> reading index."""
        return {bid: i for i, bid in enumerate(self.order)}

    def __len__(self) -> int:
        return len(self.order)

    def __iter__(self):
        return iter(self.order)


def find_valleys(hist: ProjectionHistogram, thresholds: SplitThresholds) -> list[ValleyInterval]:
    """Maximal interior runs of sub-threshold bins that are at least ``gap_min`` wide."""
    counts = np.asarray(hist.counts)
    n = len(counts)
    if n == 0:
        raise ValueError("empty histogram")
    low = counts < thresholds.tau_valley
    valleys = []
    k = 0
    while k < n:
        if not low[k]:
            k += 1
            continue
        start = k
        while k < n and low[k]:
            k += 1
        end = k - 1
        width = (end - start + 1) * hist.bin_width
        # a run touching either border separates nothing
        if start > 0 and end < n - 1 and width >= thresholds.gap_min:
            valleys.append(ValleyInterval(start, end, width))
    return valleys


def ags_sort(boxes: Sequence[TextBox]) -> list[int]:
    """Cluster boxes into lines by vertical proximity, then read lines top-down, left-to-right."""
    if len(boxes) == 0:
        raise ValueError("empty region")
    tol = 0.5 * float(np.median([b.height for b in boxes]))
    ordered = sorted(boxes, key=lambda b: (b.cy, b.x0, b.id))
    lines: list[list[TextBox]] = [[ordered[0]]]
    for prev, box in zip(ordered, ordered[1:]):
        # consecutive chaining on sorted centers equals the transitive closure of |dy| < tol
        if box.cy - prev.cy < tol:
            lines[-1].append(box)
        else:
            lines.append([box])
    keyed = []
    for line in lines:
        mean_cy = sum(b.cy for b in line) / len(line)
        members = sorted(line, key=lambda b: (b.x0, b.id))
        keyed.append((mean_cy, min(b.id for b in line), members))
    keyed.sort(key=lambda t: (t[0], t[1]))
    return [b.id for _, _, members in keyed for b in members]


def split_groups(
    boxes: Sequence[TextBox], axis: Axis, params: AxgParams
) -> list[list[TextBox]] | None:
    """Split ``boxes`` at the valleys of their projection on ``axis``.

    Returns the groups sorted by ascending coordinate, or None when no valid split exists.
    """
    hist = project_histogram(boxes, axis, auto_bin_width(boxes, axis, params.max_bins))
    thresholds = adaptive_thresholds(boxes, hist, params)
    valleys = find_valleys(hist, thresholds)
    if not valleys:
        return None
    cuts = [v.center(hist) for v in valleys]
    groups: list[list[TextBox]] = [[] for _ in range(len(cuts) + 1)]
    for b in boxes:
        groups[bisect.bisect_right(cuts, b.center(axis))].append(b)
    if any(len(g) == 0 or len(g) == len(boxes) for g in groups):
        return None
    groups.sort(key=lambda g: (min(b.interval(axis)[0] for b in g), min(b.id for b in g)))
    return groups


def axg_recurse(boxes: Sequence[TextBox], params: AxgParams, axis: Axis = Axis.Y) -> list[int]:
    """The recursive splitter, without deskew or order repair.

    Runs with an explicit stack; leaves are emitted in reading order.
    """
    boxes = sorted(boxes, key=lambda b: b.id)
    limit = 2 * max(len(boxes), 1)
    out: list[int] = []
    stack = [(boxes, Axis(axis), 0)]
    while stack:
        subset, ax, depth = stack.pop()
        if depth > limit:
            raise RuntimeError(f"recursion depth {depth} exceeds 2N={limit}")
        if len(subset) <= 1:
            out.extend(b.id for b in subset)
            continue
        groups = split_groups(subset, ax, params)
        if groups is None:
            if ax is Axis.Y:
                stack.append((subset, Axis.X, depth + 1))
            else:
                out.extend(ags_sort(subset))
            continue
        for g in reversed(groups):
            stack.append((g, ax.other, depth + 1))
    return out


def repair_order(order: Iterable[int], doc: Document) -> ReadingOrder:
    """Drop duplicate ids (first occurrence wins) and append missing ids in line-sorted order."""
    known = doc.by_id()
    seen: set[int] = set()
    fixed = []
    for bid in order:
        if bid not in known:
            raise KeyError(f"unknown id {bid}")
        if bid not in seen:
            seen.add(bid)
            fixed.append(bid)
    missing = [b for b in doc.boxes if b.id not in seen]
    if missing:
        fixed.extend(ags_sort(missing))
    return ReadingOrder(fixed)


def axg_order(doc: Document, params: AxgParams | None = None) -> ReadingOrder:
    """Global reading order of ``doc``: optional deskew, recursive splitting, repair."""
    params = params or AxgParams()
    if not doc.boxes:
        raise ValueError("empty document")
    work = doc
    if params.deskew_enabled and len(doc.boxes) >= 2:
        angle = estimate_skew(doc, params.deskew_range_deg)
        if angle != 0:
            work = deskew(doc, angle)
    return repair_order(axg_recurse(work.boxes, params), doc)
