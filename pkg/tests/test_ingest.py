import json

import numpy as np
import pytest
from hypothesis import given, strategies as st

from roap.axg_tree import find_valleys
from roap.config import FIXTURE_DIR
from roap.geometry import AxgParams, Axis, adaptive_thresholds, auto_bin_width, project_histogram
from roap.ingest import (
    AnnotatedDocument,
    AnnotationError,
    LayoutKind,
    LayoutSpec,
    SimBatch,
    batch_assemble,
    load_annotations,
    reading_indices_for,
    synthesize_layout,
)
from roap.tt_prior import dispersion_ratio


def write(tmp_path, name, data):
    p = tmp_path / name
    p.write_text(json.dumps(data))
    return p


def funsd_entity(words, label="question"):
    return {"box": [0, 0, 1, 1], "text": "", "label": label, "words": words, "linking": [], "id": 0}


def quad(x0, y0, x1, y1):
    return {"x1": x0, "y1": y0, "x2": x1, "y2": y0, "x3": x1, "y3": y1, "x4": x0, "y4": y1}


# --- loaders --------------------------------------------------------------

def test_funsd_entity_of_three_words(tmp_path):
    words = [{"box": [10 + 30 * i, 5, 35 + 30 * i, 17], "text": f"w{i}"} for i in range(3)]
    ad = load_annotations(write(tmp_path, "a.json", {"form": [funsd_entity(words)]}), "funsd")
    assert len(ad.document.boxes) == 3
    assert set(ad.labels.values()) == {"question"}
    assert [b.text for b in ad.document.boxes] == ["w0", "w1", "w2"]
    assert ad.document.doc_id == "a" and ad.ground_truth_order is None


def test_funsd_empty_form(tmp_path):
    with pytest.raises(AnnotationError, match="empty document"):
        load_annotations(write(tmp_path, "e.json", {"form": []}), "funsd")


def test_funsd_bad_record_reports_path_and_index(tmp_path):
    form = [funsd_entity([{"box": [0, 0, 5, 5]}]), funsd_entity([{"box": [0, "x", 5, 5]}])]
    p = write(tmp_path, "bad.json", {"form": form})
    with pytest.raises(AnnotationError, match=r"bad\.json: record 1"):
        load_annotations(p, "funsd")


def test_funsd_missing_words(tmp_path):
    with pytest.raises(AnnotationError, match="record 0"):
        load_annotations(write(tmp_path, "m.json", {"form": [{"label": "other"}]}), "funsd")


def test_not_json(tmp_path):
    p = tmp_path / "x.json"
    p.write_text("{nope")
    with pytest.raises(AnnotationError, match="x.json"):
        load_annotations(p, "funsd")


def test_cord_quads_collapse(tmp_path):
    tilted = {"x1": 10, "y1": 12, "x2": 50, "y2": 10, "x3": 52, "y3": 30, "x4": 11, "y4": 33}
    data = {"valid_line": [{"words": [{"quad": tilted, "text": "A"}, {"quad": quad(60, 10, 90, 30), "text": "B"}],
                            "category": "menu.nm"}],
            "meta": {"image_size": {"width": 200, "height": 100}}}
    ad = load_annotations(write(tmp_path, "c.json", data), "cord")
    b = ad.document.boxes[0]
    assert (b.x0, b.y0, b.x1, b.y1) == (10, 10, 52, 33)
    assert ad.labels == {0: "menu.nm", 1: "menu.nm"} and ad.document.width == 200


def test_cord_bad_quad(tmp_path):
    data = {"valid_line": [{"words": [{"quad": {"x1": 0}}], "category": "x"}]}
    with pytest.raises(AnnotationError, match="record 0"):
        load_annotations(write(tmp_path, "q.json", data), "cord")


def test_zero_extent_and_out_of_page_boxes(tmp_path):
    words = [{"box": [5, 5, 5, 9], "text": "a"}, {"box": [90, 0, 130, 10], "text": "b"}]
    data = {"form": [funsd_entity(words)], "meta": {"image_size": {"width": 100, "height": 50}}}
    doc = load_annotations(write(tmp_path, "z.json", data), "funsd").document
    assert doc.boxes[0].width == 1 and doc.boxes[1].x1 == 100


def test_unknown_format(tmp_path):
    with pytest.raises(ValueError):
        load_annotations(tmp_path / "a.json", "docbank")


def test_fixture_counts_match_word_records():
    paths = sorted((FIXTURE_DIR / "funsd").glob("*.json"))
    assert len(paths) >= 2
    for p in paths:
        data = json.loads(p.read_text())
        ad = load_annotations(p, "funsd")
        assert len(ad.document.boxes) == sum(len(e["words"]) for e in data["form"])
    receipt = FIXTURE_DIR / "cord" / "receipt_00.json"
    data = json.loads(receipt.read_text())
    assert len(load_annotations(receipt, "cord").document.boxes) == sum(len(l["words"]) for l in data["valid_line"])


def test_loading_is_deterministic():
    p = FIXTURE_DIR / "funsd" / "form_00.json"
    assert load_annotations(p).document == load_annotations(p).document


def test_annotated_document_invariants():
    doc = synthesize_layout(LayoutSpec(rows=2)).document
    with pytest.raises(ValueError):
        AnnotatedDocument(doc, {})
    with pytest.raises(ValueError):
        AnnotatedDocument(doc, {b.id: "x" for b in doc.boxes}, [0, 0])


# --- synthetic layouts ----------------------------------------------------

def test_spec_validation():
    with pytest.raises(ValueError):
        LayoutSpec(rows=0)
    with pytest.raises(ValueError):
        LayoutSpec(kind="spiral")


def test_single_column_reads_top_to_bottom():
    ad = synthesize_layout(LayoutSpec(LayoutKind.SINGLE_COLUMN, rows=5, seed=3))
    by_id = ad.document.by_id()
    ys = [by_id[i].cy for i in ad.ground_truth_order]
    assert ys == sorted(ys)
    lines = sorted({round(y) for y in ys})
    assert len(lines) == 5


def test_two_column_three_rows():
    ad = synthesize_layout(LayoutSpec(LayoutKind.TWO_COLUMN, rows=3, cols=2, seed=0))
    by_id = ad.document.by_id()
    mid = ad.document.width / 2
    sides = [by_id[i].cx > mid for i in ad.ground_truth_order]
    k = sides.index(True)
    assert not any(sides[:k]) and all(sides[k:])
    left_ys = [by_id[i].cy for i in ad.ground_truth_order[:k]]
    assert left_ys == sorted(left_ys) and len({round(y) for y in left_ys}) == 3


def test_grid_is_row_major():
    ad = synthesize_layout(LayoutSpec(LayoutKind.GRID_TABLE, rows=3, cols=4, seed=5))
    by_id = ad.document.by_id()
    keys = [(round(by_id[i].cy), by_id[i].x0) for i in ad.ground_truth_order]
    assert keys == sorted(keys) and len(keys) == 12


@pytest.mark.parametrize("seed", range(10))
def test_staggered_has_x_valley_but_no_y_valley(seed):
    doc = synthesize_layout(LayoutSpec(LayoutKind.STAGGERED_COLUMNS, rows=6, cols=2, seed=seed)).document
    p = AxgParams()
    found = {}
    for axis in Axis:
        h = project_histogram(doc.boxes, axis, auto_bin_width(doc.boxes, axis, p.max_bins))
        found[axis] = find_valleys(h, adaptive_thresholds(doc.boxes, h, p))
    assert found[Axis.Y] == [] and len(found[Axis.X]) >= 1


def test_skewed_is_rigid_rotation_of_base():
    base = synthesize_layout(LayoutSpec(LayoutKind.SKEWED, rows=4, cols=2, seed=1))
    tilted = synthesize_layout(LayoutSpec(LayoutKind.SKEWED, rows=4, cols=2, skew_deg=4.0, seed=1))
    assert base.ground_truth_order == tilted.ground_truth_order
    sizes = lambda ad: [(b.width, b.height) for b in ad.document.boxes]
    assert np.allclose(sizes(base), sizes(tilted))
    # pairwise center distances survive the rotation
    def dists(ad):
        c = np.array([(b.cx, b.cy) for b in ad.document.boxes])
        return np.linalg.norm(c[:, None] - c[None], axis=-1)
    assert np.allclose(dists(base), dists(tilted), atol=1e-9)


@given(st.sampled_from(list(LayoutKind)), st.integers(1, 8), st.integers(1, 4), st.integers(0, 10**6))
def test_synthesis_is_pure_and_valid(kind, rows, cols, seed):
    spec = LayoutSpec(kind, rows=rows, cols=cols, seed=seed, skew_deg=2.0 if kind is LayoutKind.SKEWED else 0.0)
    a, b = synthesize_layout(spec), synthesize_layout(spec)
    assert a.document == b.document and a.ground_truth_order == b.ground_truth_order
    doc = a.document
    assert sorted(a.ground_truth_order) == sorted(doc.ids)
    assert all(0 <= x.x0 < x.x1 <= doc.width and 0 <= x.y0 < x.y1 <= doc.height for x in doc.boxes)


# --- batches --------------------------------------------------------------

def small_docs():
    a = synthesize_layout(LayoutSpec(LayoutKind.GRID_TABLE, rows=1, cols=3, seed=1))
    b = synthesize_layout(LayoutSpec(LayoutKind.GRID_TABLE, rows=1, cols=5, seed=2))
    return a, b


def test_two_docs_padded():
    a, b = small_docs()
    batch = batch_assemble([a, b], [a.ground_truth_order, b.ground_truth_order], 8, 16, 4)
    assert batch.lengths == [3, 5] and batch.t_b >= 5 and batch.seq_len == batch.t_b + 4
    assert batch.reading_indices[0, 3:].tolist() == [-1, -1]
    assert not batch.embeddings[0, 3:5].any()
    mask = batch.key_mask()
    assert mask[0].tolist() == [True] * 3 + [False] * 2 + [True] * 4


def test_single_doc_zero_dispersion():
    a, _ = small_docs()
    batch = batch_assemble([a], [a.ground_truth_order], 8, 16, 2)
    assert dispersion_ratio(batch.lengths) == 0.0


def test_too_long_is_rejected():
    _, b = small_docs()
    with pytest.raises(ValueError, match="t_max"):
        batch_assemble([b], [b.ground_truth_order], 8, 4, 2)


@given(st.lists(st.tuples(st.integers(1, 6), st.integers(0, 1000)), min_size=1, max_size=4))
def test_reading_indices_are_permutations(specs):
    ads = [synthesize_layout(LayoutSpec(LayoutKind.GRID_TABLE, rows=1, cols=c, seed=s)) for c, s in specs]
    batch = batch_assemble(ads, [ad.ground_truth_order for ad in ads], 8, 64, 2)
    for b, n in enumerate(batch.lengths):
        assert sorted(batch.reading_indices[b, :n].tolist()) == list(range(n))


def test_reading_indices_for_layout():
    a, _ = small_docs()
    r = reading_indices_for(a.document, a.ground_truth_order)
    assert [a.ground_truth_order[k] for k in r] == a.document.ids
    with pytest.raises(ValueError):
        reading_indices_for(a.document, a.ground_truth_order[:-1])


def test_simbatch_validation():
    with pytest.raises(ValueError):
        SimBatch(np.zeros((1, 3, 8)), [2], np.array([[0, 0]]), 2, 1)
    with pytest.raises(ValueError):
        SimBatch(np.zeros((1, 3, 8)), [2], np.array([[0, 1]]), 2, 2)
