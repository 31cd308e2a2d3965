"""``roap`` command line: order, viz, simulate, check, bench."""
from __future__ import annotations

import argparse
import statistics
import sys
import time
import xml.etree.ElementTree as ET
from pathlib import Path

import numpy as np

from . import checks
from .attention_sim import SimParams, dump_attention, forward
from .axg_tree import axg_order
from .config import ConfigError, RunConfig, load_config
from .geometry import Document
from .ingest import AnnotatedDocument, LayoutSpec, batch_assemble, load_annotations, synthesize_layout
from .tt_prior import TTPriorModule, compute_tt_prior, reference_length

COMMANDS = ("order", "viz", "simulate", "check", "bench")


class CliError(Exception):
    pass


# ---------------------------------------------------------------------------
# inputs
# ---------------------------------------------------------------------------

def parse_synthetic(text: str, seed: int | None = None) -> LayoutSpec:
    """``kind[:key=value,...]``, e.g. ``two_column:rows=6,cols=2,seed=3``."""
    kind, _, rest = text.partition(":")
    kw: dict = {}
    for item in filter(None, (p.strip() for p in rest.split(","))):
        key, eq, value = item.partition("=")
        if not eq:
            raise CliError(f"bad synthetic spec item {item!r} (expected key=value)")
        if key in ("rows", "cols", "seed"):
            kw[key] = int(value)
        elif key in ("gap_scale", "skew_deg"):
            kw[key] = float(value)
        else:
            raise CliError(f"unknown synthetic spec key {key!r}")
    if seed is not None:
        kw["seed"] = seed
    try:
        return LayoutSpec(kind.strip(), **kw)
    except ValueError as exc:
        raise CliError(str(exc)) from exc


def load_inputs(args, cfg: RunConfig) -> list[AnnotatedDocument]:
    fmt = args.format
    if fmt == "synthetic":
        specs = args.input.split(";") if args.input else ["two_column"]
        return [synthesize_layout(parse_synthetic(s, args.seed)) for s in specs if s.strip()]
    source = Path(args.input) if args.input else Path(cfg.paths.funsd if fmt == "funsd" else cfg.paths.cord)
    if source.is_dir():
        paths = sorted(source.glob("*.json"))
        if not paths:
            raise CliError(f"{source}: no .json annotation files")
    elif source.exists():
        paths = [source]
    else:
        raise CliError(f"{source}: no such file or directory")
    return [load_annotations(p, fmt) for p in paths]


def order_line(doc: Document, order: list[int]) -> str:
    pos = {bid: i for i, bid in enumerate(order)}
    return "\t".join([doc.doc_id, " ".join(map(str, order)), " ".join(str(pos[b.id]) for b in doc.boxes)])


def read_order_line(line: str) -> tuple[str, list[int]]:
    doc_id, ids, _ = line.rstrip("\n").split("\t")
    return doc_id, [int(v) for v in ids.split()]


def _out_dir(args, cfg: RunConfig) -> Path:
    out = Path(args.out or cfg.paths.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def cmd_order(args, cfg: RunConfig) -> int:
    out = _out_dir(args, cfg)
    for ad in load_inputs(args, cfg):
        doc = ad.document
        path = out / f"{doc.doc_id}.order"
        path.write_text(order_line(doc, axg_order(doc, cfg.axg).order) + "\n", encoding="utf-8")
        print(path)
    return 0


def render_svg(doc: Document, order: list[int], scale: float = 1.0) -> ET.Element:
    """Two panels side by side: original (file) index on the left, reading index on the right."""
    pos = {bid: i for i, bid in enumerate(order)}
    if set(pos) != set(doc.ids) or len(order) != len(doc.boxes):
        raise CliError(f"order does not match the boxes of {doc.doc_id!r}")
    pad = 20.0
    panel_w = doc.width * scale
    svg = ET.Element("svg", xmlns="http://www.w3.org/2000/svg",
                     width=f"{2 * panel_w + 3 * pad:g}", height=f"{doc.height * scale + 2 * pad + 16:g}")
    for p, (title, labels) in enumerate((("original", {b.id: i for i, b in enumerate(doc.boxes)}),
                                         ("reading order", pos))):
        g = ET.SubElement(svg, "g", {"class": "panel", "data-panel": title,
                                     "transform": f"translate({pad + p * (panel_w + pad):g},{pad + 16:g})"})
        ET.SubElement(g, "text", x="0", y="-6", fill="black").text = title
        ET.SubElement(g, "rect", {"class": "page", "x": "0", "y": "0", "width": f"{panel_w:g}",
                                  "height": f"{doc.height * scale:g}", "fill": "none", "stroke": "#999"})
        for b in doc.boxes:
            ET.SubElement(g, "rect", {"class": "box", "data-id": str(b.id), "data-label": str(labels[b.id]),
                                      "x": f"{b.x0 * scale:g}", "y": f"{b.y0 * scale:g}",
                                      "width": f"{b.width * scale:g}", "height": f"{b.height * scale:g}",
                                      "fill": "none", "stroke": "#1f77b4"})
            ET.SubElement(g, "text", {"class": "label", "x": f"{b.x0 * scale + 1:g}",
                                      "y": f"{b.y1 * scale - 1:g}", "font-size": "8"}).text = str(labels[b.id])
    return svg


def cmd_viz(args, cfg: RunConfig) -> int:
    out = _out_dir(args, cfg)
    given = {}
    if args.order_file:
        for line in Path(args.order_file).read_text(encoding="utf-8").splitlines():
            if line.strip():
                doc_id, ids = read_order_line(line)
                given[doc_id] = ids
    for ad in load_inputs(args, cfg):
        doc = ad.document
        if given and doc.doc_id not in given:
            raise CliError(f"order file has no record for {doc.doc_id!r}")
        order = given.get(doc.doc_id) or axg_order(doc, cfg.axg).order
        path = out / f"{doc.doc_id}.svg"
        ET.ElementTree(render_svg(doc, order)).write(path, encoding="utf-8", xml_declaration=True)
        print(path)
    return 0


def cmd_simulate(args, cfg: RunConfig) -> int:
    out = _out_dir(args, cfg)
    sim = cfg.sim
    seed = sim.seed if args.seed is None else args.seed
    docs = load_inputs(args, cfg)
    orders = [axg_order(ad.document, cfg.axg).order for ad in docs]
    batch = batch_assemble(docs, orders, sim.d_model, sim.t_max, sim.num_visual_tokens, seed=seed)
    params = SimParams.load(args.params, sim) if args.params else SimParams.init(sim, seed=seed)
    result = forward(batch, sim, params)
    attn_dir = out / "attention"
    for layer in range(sim.num_layers):
        for head in range(sim.num_heads):
            for sample in range(batch.batch_size):
                dump_attention(result, layer, head, sample, attn_dir)
    params.save(out / "params.ckpt")
    print(f"loss\t{result.loss:.17g}")
    print(f"t_ref\t{result.t_ref}\tbucket\t{result.bucket}")
    print(f"attention\t{attn_dir}")
    print(f"checkpoint\t{out / 'params.ckpt'}")
    return 0


def cmd_check(args, cfg: RunConfig) -> int:
    results, total = checks.run_checks(cfg, args.filter, echo=print)
    if not results:
        raise CliError(f"no checks for module {args.filter!r}")
    failed = sum(not r.passed for r in results)
    print(f"{len(results) - failed}/{len(results)} checks passed in {total:.1f}s")
    return 0 if failed == 0 else 1


def _timing_row(name: str, samples: list[float]) -> str:
    ms = 1000.0 * np.asarray(samples)
    return f"{name}\t{len(ms)}\t{statistics.median(ms):.4f}\t{np.percentile(ms, 95):.4f}"


def cmd_bench(args, cfg: RunConfig) -> int:
    rng = np.random.default_rng(0 if args.seed is None else args.seed)
    print("benchmark\tn\tmedian_ms\tp95_ms")
    docs = [ad.document for ad in checks.fixture_docs(cfg)]
    print(_timing_row("axg_order_per_funsd_page", checks.timed_axg(docs, cfg.axg)), flush=True)
    samples = []
    for _ in range(2000):
        lengths = rng.integers(1, 513, size=int(rng.integers(1, 33))).tolist()
        t0 = time.perf_counter()
        reference_length(lengths, cfg.sim.tt)
        samples.append(time.perf_counter() - t0)
    print(_timing_row("reference_length_per_batch", samples), flush=True)
    for t in (128, 512):
        print(_timing_row(f"compute_tt_prior_t{t}", checks.timed_tt_prior(t, cfg.sim.tt.pool_K, cfg.sim.num_heads)),
              flush=True)
    return 0


HANDLERS = {"order": cmd_order, "viz": cmd_viz, "simulate": cmd_simulate, "check": cmd_check, "bench": cmd_bench}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="roap", description="Reading-order extraction and attention-prior toolkit.")
    p.add_argument("command", choices=COMMANDS)
    p.add_argument("--config", help="INI configuration file (defaults built in)")
    p.add_argument("--input", help="annotation file or directory; for --format synthetic, "
                                   "';'-separated specs like 'two_column:rows=6,cols=2,seed=3'")
    p.add_argument("--format", choices=("funsd", "cord", "synthetic"), default="funsd")
    p.add_argument("--out", help="output directory (default: [paths] out)")
    p.add_argument("--filter", help="check: run only the checks of this module")
    p.add_argument("--seed", type=int, help="override the synthetic / simulator seed")
    p.add_argument("--order-file", help="viz: ordering file written by 'roap order'")
    p.add_argument("--params", help="simulate: load parameters from a checkpoint")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config)
        return HANDLERS[args.command](args, cfg)
    except (CliError, ConfigError, ValueError, KeyError, OSError) as exc:
        print(f"roap {args.command}: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
