"""Regenerate the vendored FUNSD/CORD-schema fixture pages under src/roap/fixtures/.

The pages are synthetic forms and receipts written in the published annotation schemas
(FUNSD: ``form`` entities with ``words``; CORD: ``valid_line`` with word quads).
Entity order in the files is shuffled to mimic raw OCR order.
"""
import json
from pathlib import Path

import numpy as np

OUT = Path(__file__).resolve().parents[1] / "src" / "roap" / "fixtures"
VOCAB = ("date name company address phone fax total amount number account code signature "
         "approved reference subject quantity price description remarks branch region brand "
         "product market sales report item unit cost tax period project status").split()


def words_for(rng, n, x, y, h, char_w=7):
    out = []
    for _ in range(n):
        t = str(rng.choice(VOCAB)).capitalize() if rng.random() < 0.3 else str(rng.choice(VOCAB))
        w = char_w * len(t) + int(rng.integers(0, 4))
        out.append({"box": [x, y, x + w, y + h], "text": t})
        x += w + int(rng.integers(5, 9))
    return out, x


def entity(words, label):
    xs0 = min(w["box"][0] for w in words)
    ys0 = min(w["box"][1] for w in words)
    xs1 = max(w["box"][2] for w in words)
    ys1 = max(w["box"][3] for w in words)
    return {"box": [xs0, ys0, xs1, ys1], "text": " ".join(w["text"] for w in words),
            "label": label, "words": words, "linking": []}


def funsd_page(seed, n_fields, n_table_rows, two_col_rows):
    rng = np.random.default_rng(seed)
    h = int(rng.integers(11, 15))
    ents = []
    y = 40
    # header block
    ws, _ = words_for(rng, int(rng.integers(3, 6)), 260, y, h + 4, char_w=9)
    ents.append(entity(ws, "header"))
    y += h + 30
    # question / answer rows
    for _ in range(n_fields):
        q, x = words_for(rng, int(rng.integers(1, 3)), 60, y, h)
        ents.append(entity(q, "question"))
        a, _ = words_for(rng, int(rng.integers(1, 5)), x + 14, y, h)
        ents.append(entity(a, "answer"))
        y += h + int(rng.integers(10, 18))
    y += 20
    # two-column block of free text
    for r in range(two_col_rows):
        for cx in (60, 420):
            ws, _ = words_for(rng, int(rng.integers(3, 6)), cx, y, h)
            ents.append(entity(ws, "other"))
        y += h + 4
    y += 30
    # table
    col_x = [60, 230, 400, 570]
    for r in range(n_table_rows):
        for cx in col_x:
            ws, _ = words_for(rng, int(rng.integers(1, 3)), cx, y, h)
            ents.append(entity(ws, "answer" if r else "question"))
        y += h + int(rng.integers(9, 14))
    y += 30
    ws, _ = words_for(rng, 4, 400, y, h)
    ents.append(entity(ws, "other"))
    order = rng.permutation(len(ents))
    form = []
    for new_id, k in enumerate(order):
        e = dict(ents[k])
        e["id"] = new_id
        form.append(e)
    return {"form": form}


def cord_receipt(seed, n_items):
    rng = np.random.default_rng(seed)
    lines, y, gid = [], 30, 0
    h = 18

    def quad(x0, y0, x1, y1):
        return {"x1": x0, "y1": y0, "x2": x1, "y2": y0, "x3": x1, "y3": y1, "x4": x0, "y4": y1}

    for i in range(n_items):
        gid += 1
        name, x = words_for(rng, int(rng.integers(1, 3)), 20, y, h, char_w=10)
        price = str(int(rng.integers(1, 90)) * 1000)
        lines.append({"words": [{"quad": quad(*w["box"]), "text": w["text"], "is_key": 0, "row_id": i}
                                for w in name], "category": "menu.nm", "group_id": gid})
        lines.append({"words": [{"quad": quad(300, y, 300 + 10 * len(price), y + h), "text": price,
                                 "is_key": 0, "row_id": i}], "category": "menu.price", "group_id": gid})
        y += h + 12
    lines.append({"words": [{"quad": quad(20, y + 10, 80, y + 10 + h), "text": "TOTAL", "is_key": 1, "row_id": n_items},
                            ], "category": "total.total_price", "group_id": gid + 1})
    lines.append({"words": [{"quad": quad(300, y + 10, 370, y + 10 + h), "text": "99000", "is_key": 0,
                             "row_id": n_items}], "category": "total.total_price", "group_id": gid + 1})
    return {"valid_line": lines, "meta": {"version": "v0.0", "image_id": seed,
                                          "image_size": {"width": 420, "height": y + 60}}}


def main():
    (OUT / "funsd").mkdir(parents=True, exist_ok=True)
    (OUT / "cord").mkdir(parents=True, exist_ok=True)
    specs = [(11, 8, 4, 3), (12, 14, 6, 6), (13, 22, 10, 8), (14, 26, 14, 10)]
    for i, (seed, nf, nt, nc) in enumerate(specs):
        (OUT / "funsd" / f"form_{i:02d}.json").write_text(json.dumps(funsd_page(seed, nf, nt, nc), indent=1))
    (OUT / "cord" / "receipt_00.json").write_text(json.dumps(cord_receipt(21, 7), indent=1))


if __name__ == "__main__":
    main()
