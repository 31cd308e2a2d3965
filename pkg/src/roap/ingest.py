"""Annotation loaders, synthetic layouts with known reading order, and simulator batches."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Sequence

import numpy as np

from .geometry import Document, TextBox, clamp_box, rotate_points


class LayoutKind(str, Enum):
    SINGLE_COLUMN = "single_column"
    TWO_COLUMN = "two_column"
    GRID_TABLE = "grid_table"
    STAGGERED_COLUMNS = "staggered_columns"
    SKEWED = "skewed"


@dataclass
class AnnotatedDocument:
    document: Document
    labels: dict[int, str]
    ground_truth_order: list[int] | None = None

    def __post_init__(self):
        ids = set(self.document.ids)
        if set(self.labels) != ids:
            raise ValueError("every box needs exactly one label")
        gt = self.ground_truth_order
        if gt is not None and (len(gt) != len(ids) or set(gt) != ids):
            raise ValueError("ground_truth_order must be a permutation of the box ids")


@dataclass
class LayoutSpec:
    kind: LayoutKind = LayoutKind.SINGLE_COLUMN
    rows: int = 5
    cols: int = 2
    gap_scale: float = 10.0
    skew_deg: float = 0.0
    seed: int = 0

    def __post_init__(self):
        self.kind = LayoutKind(self.kind)
        if self.rows < 1 or self.cols < 1:
            raise ValueError("rows and cols must be >= 1")
        if self.gap_scale <= 0:
            raise ValueError("gap_scale must be positive")


class AnnotationError(ValueError):
    pass


# ---------------------------------------------------------------------------
# Loaders
# ---------------------------------------------------------------------------

def _bbox(values, path, index) -> tuple[float, float, float, float]:
    try:
        x0, y0, x1, y1 = (float(v) for v in values)
    except (TypeError, ValueError) as exc:
        raise AnnotationError(f"{path}: record {index}: bad box {values!r}") from exc
    return min(x0, x1), min(y0, y1), max(x0, x1), max(y0, y1)


def _make_document(raw: list[tuple[float, float, float, float, str, str]], width, height, doc_id) -> AnnotatedDocument:
    if width is None:
        width = max(r[2] for r in raw)
    if height is None:
        height = max(r[3] for r in raw)
    width, height = max(float(width), 1.0), max(float(height), 1.0)
    boxes, labels = [], {}
    for i, (x0, y0, x1, y1, text, label) in enumerate(raw):
        # zero-extent OCR boxes are widened to one pixel before clamping
        box = TextBox(i, x0, y0, max(x1, x0 + 1.0), max(y1, y0 + 1.0), text)
        boxes.append(clamp_box(box, width, height))
        labels[i] = label
    return AnnotatedDocument(Document(boxes, width, height, doc_id), labels)


def load_funsd(path) -> AnnotatedDocument:
    """Word-level boxes from a FUNSD annotation file; words inherit their entity label."""
    path = Path(path)
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise AnnotationError(f"{path}: cannot parse annotation: {exc}") from exc
    form = data.get("form") if isinstance(data, dict) else None
    if not isinstance(form, list):
        raise AnnotationError(f"{path}: record 0: missing 'form' list")
    raw = []
    for i, entity in enumerate(form):
        if not isinstance(entity, dict) or not isinstance(entity.get("words"), list):
            raise AnnotationError(f"{path}: record {i}: entity without 'words' list")
        label = str(entity.get("label", "other"))
        for word in entity["words"]:
            if not isinstance(word, dict) or "box" not in word:
                raise AnnotationError(f"{path}: record {i}: word without 'box'")
            raw.append((*_bbox(word["box"], path, i), str(word.get("text", "")), label))
    if not raw:
        raise AnnotationError(f"{path}: empty document")
    size = data.get("meta", {}).get("image_size", {}) if isinstance(data.get("meta"), dict) else {}
    return _make_document(raw, size.get("width"), size.get("height"), path.stem)


def _quad_bbox(quad, path, index):
    try:
        xs = [float(quad[f"x{k}"]) for k in range(1, 5)]
        ys = [float(quad[f"y{k}"]) for k in range(1, 5)]
    except (KeyError, TypeError, ValueError) as exc:
        raise AnnotationError(f"{path}: record {index}: bad quad {quad!r}") from exc
    return min(xs), min(ys), max(xs), max(ys)


def load_cord(path) -> AnnotatedDocument:
    """Word-level boxes from a CORD annotation file; quads collapse to bounding boxes."""
    path = Path(path)
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise AnnotationError(f"{path}: cannot parse annotation: {exc}") from exc
    lines = data.get("valid_line") if isinstance(data, dict) else None
    if not isinstance(lines, list):
        raise AnnotationError(f"{path}: record 0: missing 'valid_line' list")
    raw = []
    for i, line in enumerate(lines):
        if not isinstance(line, dict) or not isinstance(line.get("words"), list):
            raise AnnotationError(f"{path}: record {i}: line without 'words' list")
        label = str(line.get("category", "other"))
        for word in line["words"]:
            if not isinstance(word, dict) or "quad" not in word:
                raise AnnotationError(f"{path}: record {i}: word without 'quad'")
            raw.append((*_quad_bbox(word["quad"], path, i), str(word.get("text", "")), label))
    if not raw:
        raise AnnotationError(f"{path}: empty document")
    size = data.get("meta", {}).get("image_size", {}) if isinstance(data.get("meta"), dict) else {}
    return _make_document(raw, size.get("width"), size.get("height"), path.stem)


def load_annotations(path, format: str = "funsd") -> AnnotatedDocument:
    if format == "funsd":
        return load_funsd(path)
    if format == "cord":
        return load_cord(path)
    raise ValueError(f"unknown annotation format {format!r}")


# ---------------------------------------------------------------------------
# Synthetic layouts
# ---------------------------------------------------------------------------

MARGIN = 40


def _justified_line(rng, x_start: int, width: int, n_words: int, y0: int, h: int) -> list[tuple[int, int, int, int]]:
    """``n_words`` boxes spanning exactly [x_start, x_start + width) with small gaps."""
    gaps = rng.integers(4, 9, size=n_words - 1)
    free = width - int(gaps.sum())
    weights = rng.uniform(0.6, 1.6, size=n_words)
    widths = np.maximum(12, np.floor(free * weights / weights.sum()).astype(int))
    widths[-1] = free - int(widths[:-1].sum())
    out, x = [], x_start
    for i in range(n_words):
        out.append((x, y0, x + int(widths[i]), y0 + h))
        x += int(widths[i]) + (int(gaps[i]) if i < n_words - 1 else 0)
    return out


def _assemble(rects, reading, width, height, doc_id, label="other") -> AnnotatedDocument:
    # ids follow a seeded shuffle so box ids carry no ordering hint
    boxes = [TextBox(i, *r, text=f"w{i}") for i, r in enumerate(rects)]
    return AnnotatedDocument(
        Document(boxes, float(width), float(height), doc_id),
        {b.id: label for b in boxes},
        list(reading),
    )


def _single_column(spec: LayoutSpec, rng) -> tuple[list, list, int, int]:
    h = int(rng.integers(10, 17))
    col_w = int(rng.integers(240, 420))
    rects, y = [], MARGIN
    for r in range(spec.rows):
        n = int(rng.integers(2, 6))
        line_w = int(col_w * rng.uniform(0.55, 1.0))
        rects.extend(_justified_line(rng, MARGIN, line_w, n, y, h))
        y += h + int(rng.integers(2, max(3, int(spec.gap_scale * 0.8))))
    return rects, list(range(len(rects))), MARGIN * 2 + col_w, y + MARGIN


def _columns(spec: LayoutSpec, rng, staggered: bool) -> tuple[list, list, int, int]:
    cols = max(2, spec.cols)
    h = int(rng.integers(10, 17))
    col_w = int(rng.integers(200, 360))
    gutter = int(rng.integers(int(spec.gap_scale * 7), int(spec.gap_scale * 11)))
    if staggered:
        # half-pitch offset with constant words per line: the Y projection never drops
        # below the per-line count, so rows cannot be cut across columns
        pitch = h + h // 2
        words = int(rng.integers(3, 6))
    else:
        # line gaps stay below half a line height, so no Y valley forms
        pitch = h + int(rng.integers(1, max(2, h // 2 - 1)))
    columns = []
    for c in range(cols):
        offset = (c * pitch) // cols if staggered else 0
        col = []
        for r in range(spec.rows):
            n = words if staggered else int(rng.integers(2, 6))
            col.extend(_justified_line(rng, 0, col_w, n, MARGIN + offset + r * pitch, h))
        columns.append(col)
    # the gutter must beat the adaptive minimum gap computed from word widths
    widths = np.array([r[2] - r[0] for col in columns for r in col])
    q25, med, q75 = np.percentile(widths, [25, 50, 75])
    gutter = max(gutter, math.ceil(0.5 * med + 0.25 * (q75 - q25)) + int(spec.gap_scale * 2))
    for c, col in enumerate(columns):
        x = MARGIN + c * (col_w + gutter)
        columns[c] = [(x0 + x, y0, x1 + x, y1) for x0, y0, x1, y1 in col]
    rects = [r for col in columns for r in col]
    width = 2 * MARGIN + cols * col_w + (cols - 1) * gutter
    height = 2 * MARGIN + spec.rows * pitch + pitch
    return rects, list(range(len(rects))), width, height


def _grid(spec: LayoutSpec, rng) -> tuple[list, list, int, int]:
    h = int(rng.integers(10, 17))
    cell_w = int(rng.integers(90, 160))
    col_gap = int(rng.integers(int(spec.gap_scale * 3), int(spec.gap_scale * 5)))
    rects, y = [], MARGIN
    # row gaps in (h/2, h): wide enough to cut, narrow enough that text rows hold the median bin
    row_gap = int(rng.integers(h // 2 + 2, h))
    for r in range(spec.rows):
        for c in range(spec.cols):
            x = MARGIN + c * (cell_w + col_gap)
            w = int(rng.integers(cell_w // 3, cell_w + 1))
            rects.append((x, y, x + w, y + h))
        y += h + row_gap
    width = 2 * MARGIN + spec.cols * cell_w + (spec.cols - 1) * col_gap
    return rects, list(range(len(rects))), width, y + MARGIN


def _skewed(rects, width, height, angle):
    """Rotate box centers rigidly about the page center; box sizes are kept."""
    r = np.asarray(rects, float)
    cx, cy = (r[:, 0] + r[:, 2]) / 2, (r[:, 1] + r[:, 3]) / 2
    hw, hh = (r[:, 2] - r[:, 0]) / 2, (r[:, 3] - r[:, 1]) / 2
    nx, ny = rotate_points(cx, cy, width / 2, height / 2, angle)
    # enlarge the page so rotated boxes stay inside it
    pad = math.ceil(math.hypot(width, height) * abs(math.sin(math.radians(angle)))) + 2
    out = [(float(x - a + pad), float(y - b + pad), float(x + a + pad), float(y + b + pad))
           for x, y, a, b in zip(nx, ny, hw, hh)]
    return out, width + 2 * pad, height + 2 * pad


def synthesize_layout(spec: LayoutSpec) -> AnnotatedDocument:
    """Deterministic synthetic page with its human reading order.

    Reading order is row-major within a column and columns left-to-right; grid tables read
    row by row. Box ids are a seeded shuffle of the reading positions.
    """
    rng = np.random.default_rng(spec.seed)
    kind = spec.kind
    if kind is LayoutKind.SINGLE_COLUMN:
        rects, reading, w, h = _single_column(spec, rng)
    elif kind is LayoutKind.TWO_COLUMN:
        rects, reading, w, h = _columns(spec, rng, staggered=False)
    elif kind is LayoutKind.STAGGERED_COLUMNS:
        rects, reading, w, h = _columns(spec, rng, staggered=True)
    elif kind is LayoutKind.GRID_TABLE:
        rects, reading, w, h = _grid(spec, rng)
    else:
        if spec.cols >= 2:
            rects, reading, w, h = _columns(spec, rng, staggered=False)
        else:
            rects, reading, w, h = _single_column(spec, rng)
        if spec.skew_deg:
            rects, w, h = _skewed(rects, w, h, spec.skew_deg)
    perm = rng.permutation(len(rects))
    # box with id perm[k] sits at reading position k; the list itself is stored in id order
    by_id = [None] * len(rects)
    for pos, bid in enumerate(perm):
        by_id[bid] = rects[reading[pos]]
    gt = [int(perm[pos]) for pos in range(len(rects))]
    doc_id = f"{kind.value}-{spec.rows}x{spec.cols}-s{spec.seed}"
    return _assemble(by_id, gt, w, h, doc_id)


# ---------------------------------------------------------------------------
# Simulator batches
# ---------------------------------------------------------------------------

@dataclass
class SimBatch:
    embeddings: np.ndarray          # B x L x d_model
    lengths: list[int]              # valid text tokens per sample
    reading_indices: np.ndarray     # B x t_b, -1 on padding slots
    t_b: int
    num_visual: int
    doc_ids: list[str] = field(default_factory=list)

    def __post_init__(self):
        B, L, _ = self.embeddings.shape
        if len(self.lengths) != B or self.reading_indices.shape != (B, self.t_b):
            raise ValueError("batch fields disagree on batch size or text span")
        if L != self.t_b + self.num_visual:
            raise ValueError(f"sequence length {L} != t_b {self.t_b} + visual {self.num_visual}")
        for b, n in enumerate(self.lengths):
            if not 1 <= n <= self.t_b:
                raise ValueError(f"sample {b}: valid length {n} outside [1, {self.t_b}]")
            if sorted(self.reading_indices[b, :n].tolist()) != list(range(n)):
                raise ValueError(f"sample {b}: reading indices are not a permutation of 0..{n - 1}")

    @property
    def batch_size(self) -> int:
        return self.embeddings.shape[0]

    @property
    def seq_len(self) -> int:
        return self.embeddings.shape[1]

    def key_mask(self) -> np.ndarray:
        """B x L boolean, True where a key position may be attended."""
        mask = np.ones((self.batch_size, self.seq_len), dtype=bool)
        for b, n in enumerate(self.lengths):
            mask[b, n:self.t_b] = False
        return mask


def reading_indices_for(doc: Document, order: Sequence[int]) -> list[int]:
    """Reading index of each token, tokens laid out in the document's box order."""
    pos = {bid: i for i, bid in enumerate(order)}
    if set(pos) != set(doc.ids) or len(pos) != len(order):
        raise ValueError(f"order is not a permutation of the ids of {doc.doc_id!r}")
    return [pos[b.id] for b in doc.boxes]


def batch_assemble(
    docs: Sequence[Document | AnnotatedDocument],
    orders: Sequence[Sequence[int]],
    d_model: int,
    t_max: int,
    num_visual: int,
    seed: int = 0,
) -> SimBatch:
    """Pad documents into one batch: text tokens first (one per box), then visual tokens."""
    if len(docs) != len(orders) or not docs:
        raise ValueError("need one order per document and at least one document")
    docs = [d.document if isinstance(d, AnnotatedDocument) else d for d in docs]
    lengths = [len(d.boxes) for d in docs]
    for d, n in zip(docs, lengths):
        if n > t_max:
            raise ValueError(f"document {d.doc_id!r} has {n} boxes, more than t_max={t_max}")
    t_b = max(lengths)
    rng = np.random.default_rng(seed)
    emb = rng.standard_normal((len(docs), t_b + num_visual, d_model))
    ridx = np.full((len(docs), t_b), -1, dtype=np.int64)
    for b, (d, order) in enumerate(zip(docs, orders)):
        ridx[b, : lengths[b]] = reading_indices_for(d, order)
        emb[b, lengths[b]:t_b] = 0.0
    return SimBatch(emb, lengths, ridx, t_b, num_visual, [d.doc_id for d in docs])
