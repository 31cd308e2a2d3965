import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from roap.geometry import (
    AxgParams,
    Axis,
    Document,
    ProjectionHistogram,
    TextBox,
    adaptive_thresholds,
    auto_bin_width,
    clamp_box,
    deskew,
    estimate_skew,
    project_histogram,
)
from roap.ingest import LayoutKind, LayoutSpec, synthesize_layout

from conftest import make_doc


def brute_counts(boxes, axis, hist):
    out = []
    for k in range(len(hist)):
        lo, hi = hist.bin_start(k), hist.bin_start(k + 1)
        out.append(sum(1 for b in boxes if b.interval(axis)[0] < hi and b.interval(axis)[1] > lo))
    return out


box_strategy = st.tuples(
    st.integers(0, 400), st.integers(0, 400), st.integers(1, 80), st.integers(1, 40)
).map(lambda t: (t[0], t[1], t[0] + t[2], t[1] + t[3]))


# --- primitives -----------------------------------------------------------

def test_textbox_rejects_degenerate():
    with pytest.raises(ValueError):
        TextBox(0, 5, 0, 5, 10)
    with pytest.raises(ValueError):
        TextBox(0, 0, 10, 5, 3)


def test_document_rejects_duplicate_ids():
    with pytest.raises(ValueError):
        Document([TextBox(1, 0, 0, 1, 1), TextBox(1, 2, 2, 3, 3)], 10, 10)


def test_clamp_box_keeps_box_inside_page():
    b = clamp_box(TextBox(0, -5, 2, 30, 40), 20, 30)
    assert (b.x0, b.y0, b.x1, b.y1) == (0, 2, 20, 30)


def test_axgparams_validation():
    with pytest.raises(ValueError):
        AxgParams(gamma=0)
    with pytest.raises(ValueError):
        AxgParams(gamma=1.01)
    with pytest.raises(ValueError):
        AxgParams(alpha=-1)
    with pytest.raises(ValueError):
        AxgParams(max_bins=15)
    AxgParams(gamma=1.0)


# --- project_histogram ----------------------------------------------------

def test_single_box_spans_three_bins():
    h = project_histogram([TextBox(0, 0, 0, 30, 5)], Axis.X, 10)
    assert h.counts.tolist() == [1, 1, 1]


def test_disjoint_boxes_leave_one_empty_bin():
    boxes = [TextBox(0, 0, 0, 10, 5), TextBox(1, 20, 0, 30, 5)]
    assert project_histogram(boxes, Axis.X, 10).counts.tolist() == [1, 0, 1]


def test_empty_region_raises():
    with pytest.raises(ValueError, match="empty region"):
        project_histogram([], Axis.Y, 1)


def test_twenty_random_boxes_match_oracle(rng):
    boxes = []
    for i in range(20):
        x0, y0 = rng.integers(0, 200, size=2)
        boxes.append(TextBox(i, x0, y0, x0 + rng.integers(1, 50), y0 + rng.integers(1, 20)))
    for axis in Axis:
        for w in (1, 3, 7):
            h = project_histogram(boxes, axis, w)
            assert h.counts.tolist() == brute_counts(boxes, axis, h)


@given(st.lists(box_strategy, min_size=1, max_size=15), st.integers(1, 9), st.sampled_from(list(Axis)))
def test_histogram_oracle_and_bounds(rects, w, axis):
    boxes = [TextBox(i, *r) for i, r in enumerate(rects)]
    h = project_histogram(boxes, axis, w)
    assert h.counts.tolist() == brute_counts(boxes, axis, h)
    assert h.counts.max() <= len(boxes) and h.counts.sum() >= 1


@given(st.lists(box_strategy, min_size=1, max_size=15), st.randoms())
def test_histogram_permutation_invariant(rects, r):
    boxes = [TextBox(i, *x) for i, x in enumerate(rects)]
    shuffled = list(boxes)
    r.shuffle(shuffled)
    for axis in Axis:
        assert np.array_equal(project_histogram(boxes, axis, 3).counts, project_histogram(shuffled, axis, 3).counts)


def test_auto_bin_width_caps_bins():
    boxes = [TextBox(0, 0, 0, 5000, 10)]
    assert auto_bin_width(boxes, Axis.X, 1024) == 5
    assert auto_bin_width(boxes, Axis.Y, 1024) == 1


# --- adaptive_thresholds --------------------------------------------------

def test_gap_min_from_constant_heights():
    boxes = [TextBox(i, 0, 20 * i, 50, 20 * i + 10) for i in range(5)]
    h = project_histogram(boxes, Axis.Y, 1)
    t = adaptive_thresholds(boxes, h, AxgParams(alpha=0.5, beta=0.25))
    assert (t.median_size, t.iqr, t.gap_min) == (10.0, 0.0, 5.0)


def test_tau_from_histogram_median_with_zero_bins():
    hist = ProjectionHistogram(Axis.Y, 1.0, 0.0, np.array([4, 4, 0, 4]))
    t = adaptive_thresholds([TextBox(0, 0, 0, 1, 1)], hist, AxgParams(gamma=0.3))
    assert t.tau_valley == pytest.approx(1.2)


def test_gamma_one_on_constant_histogram():
    hist = ProjectionHistogram(Axis.X, 1.0, 0.0, np.full(6, 3))
    t = adaptive_thresholds([TextBox(0, 0, 0, 1, 1)], hist, AxgParams(gamma=1.0))
    assert t.tau_valley == 3 and not np.any(hist.counts < t.tau_valley)


def test_sizes_follow_cut_axis():
    boxes = [TextBox(0, 0, 0, 40, 10), TextBox(1, 0, 30, 60, 50)]
    tx = adaptive_thresholds(boxes, project_histogram(boxes, Axis.X, 1), AxgParams())
    ty = adaptive_thresholds(boxes, project_histogram(boxes, Axis.Y, 1), AxgParams())
    assert tx.median_size == 50 and ty.median_size == 15


@given(st.lists(box_strategy, min_size=1, max_size=12), st.floats(0, 2), st.floats(0, 2), st.floats(0, 1))
def test_gap_min_monotone_in_alpha_beta(rects, a, b, bump):
    boxes = [TextBox(i, *r) for i, r in enumerate(rects)]
    h = project_histogram(boxes, Axis.Y, 1)
    base = adaptive_thresholds(boxes, h, AxgParams(alpha=a, beta=b)).gap_min
    assert adaptive_thresholds(boxes, h, AxgParams(alpha=a + bump, beta=b)).gap_min >= base
    assert adaptive_thresholds(boxes, h, AxgParams(alpha=a, beta=b + bump)).gap_min >= base
    assert base >= 0


def test_tau_zero_iff_median_zero():
    boxes = [TextBox(0, 0, 0, 2, 1), TextBox(1, 50, 0, 52, 1)]
    h = project_histogram(boxes, Axis.X, 1)
    assert np.median(h.counts) == 0
    assert adaptive_thresholds(boxes, h, AxgParams()).tau_valley == 0


# --- skew -----------------------------------------------------------------

def three_rows():
    return make_doc([(50 + 80 * c, 40 + 40 * r, 110 + 80 * c, 55 + 40 * r) for r in range(3) for c in range(4)], 500, 200)


def test_horizontal_layout_has_zero_skew():
    assert abs(estimate_skew(three_rows(), 5)) <= 0.25


def test_single_box_zero_skew():
    assert estimate_skew(make_doc([(0, 0, 10, 10)]), 5) == 0.0


@pytest.mark.parametrize("angle", [3.0, -3.0, 1.5, 4.75])
def test_rotated_layout_recovers_angle(angle):
    base = synthesize_layout(LayoutSpec(LayoutKind.SINGLE_COLUMN, rows=8, seed=2)).document
    skewed = synthesize_layout(LayoutSpec(LayoutKind.SKEWED, rows=8, cols=1, skew_deg=angle, seed=2)).document
    assert len(base.boxes) == len(skewed.boxes)
    assert abs(estimate_skew(skewed, 5) - angle) <= 0.25


def test_rotating_by_hand_about_page_center():
    doc = three_rows()
    pcx, pcy = doc.width / 2, doc.height / 2
    t = math.radians(3.0)
    boxes = []
    for b in doc.boxes:
        dx, dy = b.cx - pcx, b.cy - pcy
        nx, ny = pcx + math.cos(t) * dx - math.sin(t) * dy, pcy + math.sin(t) * dx + math.cos(t) * dy
        boxes.append(TextBox(b.id, nx - b.width / 2, ny - b.height / 2, nx + b.width / 2, ny + b.height / 2))
    assert abs(estimate_skew(Document(boxes, doc.width, doc.height), 5) - 3.0) <= 0.25


def test_skew_range_precondition():
    with pytest.raises(ValueError):
        estimate_skew(three_rows(), 20)


def test_deskew_zero_is_identity():
    doc = three_rows()
    assert deskew(doc, 0.0).boxes == doc.boxes


@given(st.floats(-10, 10))
def test_deskew_round_trip(angle):
    doc = three_rows()
    back = deskew(deskew(doc, angle), -angle)
    for a, b in zip(doc.boxes, back.boxes):
        assert abs(a.cx - b.cx) <= 0.5 and abs(a.cy - b.cy) <= 0.5
        assert a.id == b.id


def test_center_box_is_fixed_point():
    doc = make_doc([(90, 90, 110, 110), (0, 0, 10, 10)], 200, 200)
    out = deskew(doc, 7.0).boxes[0]
    assert out.cx == pytest.approx(100) and out.cy == pytest.approx(100)
    assert out.width > 20  # re-axis-aligned bounding box of the rotated corners grows
