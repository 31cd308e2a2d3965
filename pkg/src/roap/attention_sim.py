"""Toy multi-head attention encoder with the reading-order bias and text prior wired in.

Each block is ``x <- x + MHA(x)`` in float64. Tokens are laid out as
``[text slots (t_b) | visual tokens]``; text padding keys are masked everywhere.
The objective is the mean squared norm of the final valid text-token states.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .checkpoint import load_checkpoint, save_checkpoint
from .ingest import SimBatch
from .ro_rpb import (
    RoBiasTable,
    RoBucketConfig,
    bin_deltas,
    effective_gate,
    gate_slope,
    masked_softmax,
    pairwise_delta,
)
from .tt_prior import (
    OpCounter,
    TTPriorModule,
    TTRoutingConfig,
    reference_length,
    route_bucket,
    tt_prior_backward,
    tt_prior_forward,
)


def first_layers(n: int, num_layers: int) -> tuple[int, ...]:
    return tuple(range(min(n, num_layers)))


def last_layers(n: int, num_layers: int) -> tuple[int, ...]:
    return tuple(range(max(0, num_layers - n), num_layers))


@dataclass
class SimConfig:
    num_layers: int = 12
    num_heads: int = 2
    d_model: int = 8
    d_k: int = 4
    num_visual_tokens: int = 4
    ro_layers: tuple[int, ...] | None = None
    tt_layers: tuple[int, ...] | None = None
    seed: int = 0
    use_ro: bool = True
    use_tt: bool = True
    gate_mode: str = "sigmoid"
    ro_gate_init: tuple[float, float] = (-3.0, -2.0)
    tt_gate_init: tuple[float, float] = (-2.0, -1.0)
    ro_init_scale: float = 0.02
    ro: RoBucketConfig = field(default_factory=RoBucketConfig)
    tt: TTRoutingConfig = field(default_factory=TTRoutingConfig)

    def __post_init__(self):
        if self.ro_layers is None:
            self.ro_layers = first_layers(6, self.num_layers)
        if self.tt_layers is None:
            self.tt_layers = last_layers(8, self.num_layers)
        self.ro_layers = tuple(sorted(int(l) for l in self.ro_layers))
        self.tt_layers = tuple(sorted(int(l) for l in self.tt_layers))
        self.ro_gate_init = tuple(float(v) for v in self.ro_gate_init)
        self.tt_gate_init = tuple(float(v) for v in self.tt_gate_init)
        if self.d_model != self.num_heads * self.d_k:
            raise ValueError(f"d_model ({self.d_model}) must equal num_heads * d_k ({self.num_heads * self.d_k})")
        for name in ("ro_layers", "tt_layers"):
            if any(not 0 <= l < self.num_layers for l in getattr(self, name)):
                raise ValueError(f"{name} must lie in [0, {self.num_layers})")
        if self.gate_mode not in ("sigmoid", "raw"):
            raise ValueError(f"unknown gate mode {self.gate_mode!r}")

    @property
    def t_max(self) -> int:
        return self.tt.t_max

    def ro_active(self, layer: int) -> bool:
        return self.use_ro and layer in self.ro_layers

    def tt_active(self, layer: int) -> bool:
        return self.use_tt and layer in self.tt_layers


@dataclass
class LayerParams:
    wq: np.ndarray
    wk: np.ndarray
    wv: np.ndarray
    wo: np.ndarray


@dataclass
class SimParams:
    layers: list[LayerParams]
    ro_table: RoBiasTable
    tt_modules: dict[int, TTPriorModule]
    ro_gate: np.ndarray  # raw gate per layer; only ro_layers entries are used
    tt_gate: np.ndarray

    @classmethod
    def init(cls, cfg: SimConfig, seed: int | None = None) -> "SimParams":
        rng = np.random.default_rng(cfg.seed if seed is None else seed)
        D = cfg.d_model
        scale = 1.0 / math.sqrt(D)
        layers = [LayerParams(*(rng.normal(0.0, scale, size=(D, D)) for _ in range(4))) for _ in range(cfg.num_layers)]
        table = RoBiasTable.init(cfg.ro, cfg.num_heads, rng, cfg.ro_init_scale)
        modules = {b: TTPriorModule.init(b, cfg.num_heads, rng) for b in cfg.tt.bins}
        ro_gate = rng.uniform(*cfg.ro_gate_init, size=cfg.num_layers)
        tt_gate = rng.uniform(*cfg.tt_gate_init, size=cfg.num_layers)
        return cls(layers, table, modules, ro_gate, tt_gate)

    def arrays(self) -> dict[str, np.ndarray]:
        """Name -> parameter array. The arrays are the live storage, not copies."""
        out = {}
        for i, lp in enumerate(self.layers):
            for k in ("wq", "wk", "wv", "wo"):
                out[f"layer{i}.{k}"] = getattr(lp, k)
        out["ro.table"] = self.ro_table.table
        out["ro.gate"] = self.ro_gate
        out["tt.gate"] = self.tt_gate
        for b, m in self.tt_modules.items():
            for k, v in m.parameters().items():
                out[f"tt.{b}.{k}"] = v
        return out

    def zeros_like(self) -> dict[str, np.ndarray]:
        return {k: np.zeros_like(v) for k, v in self.arrays().items()}

    def save(self, path) -> None:
        save_checkpoint(path, self.arrays())

    @classmethod
    def load(cls, path, cfg: SimConfig) -> "SimParams":
        arrays = load_checkpoint(path)
        params = cls.init(cfg)
        live = params.arrays()
        missing = set(live) - set(arrays)
        if missing:
            raise ValueError(f"checkpoint lacks {sorted(missing)}")
        for k, v in live.items():
            if arrays[k].shape != v.shape:
                raise ValueError(f"{k}: checkpoint shape {arrays[k].shape} != expected {v.shape}")
            v[...] = arrays[k]
        return params

    def randomize_priors(self, rng: np.random.Generator, scale: float = 0.3) -> None:
        """Move every prior module off its zero start (for gradient checks)."""
        for m in self.tt_modules.values():
            for v in m.parameters().values():
                v[...] = rng.normal(0.0, scale, size=v.shape)


@dataclass
class SimResult:
    loss: float
    outputs: np.ndarray                 # B x L x d_model
    attention: list[np.ndarray]         # per layer, B x H x L x L
    t_ref: int | None
    bucket: int | None
    cache: list | None = None


def _heads(x: np.ndarray, H: int) -> np.ndarray:
    B, L, D = x.shape
    return x.reshape(B, L, H, D // H).transpose(0, 2, 1, 3)


def _merge(x: np.ndarray) -> np.ndarray:
    B, H, L, dk = x.shape
    return x.transpose(0, 2, 1, 3).reshape(B, L, H * dk)


def _check_batch(batch: SimBatch, cfg: SimConfig) -> None:
    if batch.embeddings.shape[2] != cfg.d_model:
        raise ValueError(f"embedding width {batch.embeddings.shape[2]} != d_model {cfg.d_model}")
    if batch.num_visual != cfg.num_visual_tokens:
        raise ValueError(f"batch has {batch.num_visual} visual tokens, config wants {cfg.num_visual_tokens}")
    if batch.t_b > cfg.t_max:
        raise ValueError(f"text span {batch.t_b} exceeds t_max {cfg.t_max}")


def forward(batch: SimBatch, cfg: SimConfig, params: SimParams, keep_cache: bool = False,
            counter: OpCounter | None = None) -> SimResult:
    _check_batch(batch, cfg)
    H, dk = cfg.num_heads, cfg.d_k
    scale = math.sqrt(dk)
    x = np.array(batch.embeddings, dtype=np.float64)
    B, L, _ = x.shape
    mask = batch.key_mask()[:, None, None, :]
    lengths = batch.lengths

    any_ro = any(cfg.ro_active(l) for l in range(cfg.num_layers))
    any_tt = any(cfg.tt_active(l) for l in range(cfg.num_layers))
    buckets, ro_bias = [], []
    if any_ro:
        for b, n in enumerate(lengths):
            bk = bin_deltas(pairwise_delta(batch.reading_indices[b], n).deltas, cfg.ro)
            buckets.append(bk)
            ro_bias.append(np.moveaxis(params.ro_table.table[bk], -1, 0))
    t_ref = bucket = module = None
    if any_tt:
        t_ref = reference_length(lengths, cfg.tt)
        bucket = route_bucket(t_ref, cfg.tt.bins)
        module = params.tt_modules[bucket]

    maps, cache = [], []
    for l, lp in enumerate(params.layers):
        q, k, v = _heads(x @ lp.wq, H), _heads(x @ lp.wk, H), _heads(x @ lp.wv, H)
        z = q @ k.transpose(0, 1, 3, 2)
        g_ro = effective_gate(params.ro_gate[l], cfg.gate_mode) if cfg.ro_active(l) else None
        g_tt = effective_gate(params.tt_gate[l], cfg.gate_mode) if cfg.tt_active(l) else None
        priors = []
        if g_ro is not None:
            for b, n in enumerate(lengths):
                z[b, :, :n, :n] += g_ro * ro_bias[b]
        if g_tt is not None:
            # the prior reads the text block after the reading-order bias
            for b, n in enumerate(lengths):
                prior, pc = tt_prior_forward(z[b, :, :n, :n].copy(), module, t_ref, cfg.tt.pool_K, counter)
                m = min(n, t_ref)
                priors.append((prior, pc))
                z[b, :, :m, :m] += g_tt * prior[:, :m, :m]
        p = masked_softmax(z / scale, mask)
        o = _merge(p @ v)
        x_next = x + o @ lp.wo
        maps.append(p)
        if keep_cache:
            cache.append(dict(x=x, q=q, k=k, v=v, p=p, o=o, g_ro=g_ro, g_tt=g_tt, priors=priors))
        x = x_next

    n_valid = sum(lengths)
    loss = sum(float(np.sum(x[b, :n] ** 2)) for b, n in enumerate(lengths)) / n_valid
    extra = dict(layers=cache, buckets=buckets, ro_bias=ro_bias, module=module) if keep_cache else None
    return SimResult(loss, x, maps, t_ref, bucket, extra)


def backward(batch: SimBatch, cfg: SimConfig, params: SimParams, upstream: float = 1.0):
    """Loss and gradients of ``upstream * loss`` w.r.t. every array in ``params.arrays()``."""
    res = forward(batch, cfg, params, keep_cache=True)
    H, dk = cfg.num_heads, cfg.d_k
    scale = math.sqrt(dk)
    grads = params.zeros_like()
    lengths = batch.lengths
    n_valid = sum(lengths)
    c = res.cache
    module = c["module"]

    dx = np.zeros_like(res.outputs)
    for b, n in enumerate(lengths):
        dx[b, :n] = upstream * 2.0 * res.outputs[b, :n] / n_valid

    dtable = grads["ro.table"]
    for l in reversed(range(cfg.num_layers)):
        lp, lc = params.layers[l], c["layers"][l]
        x, q, k, v, p, o = lc["x"], lc["q"], lc["k"], lc["v"], lc["p"], lc["o"]
        grads[f"layer{l}.wo"] += np.einsum("bld,ble->de", o, dx)
        do = _heads(dx @ lp.wo.T, H)
        dp = do @ v.transpose(0, 1, 3, 2)
        dv = p.transpose(0, 1, 3, 2) @ do
        dz = p * (dp - np.sum(p * dp, axis=-1, keepdims=True)) / scale

        if lc["g_tt"] is not None:
            g = lc["g_tt"]
            dgate = 0.0
            for b, n in enumerate(lengths):
                prior, pc = lc["priors"][b]
                m = min(n, res.t_ref)
                dprior = np.zeros_like(prior)
                dprior[:, :m, :m] = g * dz[b, :, :m, :m]
                dgate += float(np.sum(dz[b, :, :m, :m] * prior[:, :m, :m]))
                dlog, mgrads = tt_prior_backward(dprior, module, pc)
                dz[b, :, :n, :n] += dlog
                for name, gv in mgrads.items():
                    grads[f"tt.{module.bucket_size}.{name}"] += gv
            grads["tt.gate"][l] += dgate * gate_slope(params.tt_gate[l], cfg.gate_mode)

        if lc["g_ro"] is not None:
            g = lc["g_ro"]
            dgate = 0.0
            for b, n in enumerate(lengths):
                block = dz[b, :, :n, :n]
                dgate += float(np.sum(block * c["ro_bias"][b]))
                bk = c["buckets"][b]
                for h in range(H):
                    np.add.at(dtable[:, h], bk, g * block[h])
            grads["ro.gate"][l] += dgate * gate_slope(params.ro_gate[l], cfg.gate_mode)

        dq = dz @ k
        dk_ = dz.transpose(0, 1, 3, 2) @ q
        dq, dk_, dv = _merge(dq), _merge(dk_), _merge(dv)
        grads[f"layer{l}.wq"] += np.einsum("bld,ble->de", x, dq)
        grads[f"layer{l}.wk"] += np.einsum("bld,ble->de", x, dk_)
        grads[f"layer{l}.wv"] += np.einsum("bld,ble->de", x, dv)
        dx = dx + dq @ lp.wq.T + dk_ @ lp.wk.T + dv @ lp.wv.T
    return res.loss, grads


@dataclass
class GradCheckReport:
    max_rel_error: dict[str, float]
    coords_checked: dict[str, int]

    @property
    def worst(self) -> float:
        return max(self.max_rel_error.values())


def finite_difference_check(batch: SimBatch, cfg: SimConfig, params: SimParams, epsilon: float = 1e-5,
                            max_coords: int = 128, seed: int = 0) -> GradCheckReport:
    """Central differences against the analytic gradient, |ga - gfd| / max(1, |gfd|).

    Arrays with at most ``max_coords`` entries are checked in full, larger ones on a seeded sample.
    """
    if not 1e-7 <= epsilon <= 1e-3:
        raise ValueError(f"epsilon must lie in [1e-7, 1e-3], got {epsilon}")
    _, analytic = backward(batch, cfg, params)
    rng = np.random.default_rng(seed)
    errors, counts = {}, {}
    for name, arr in params.arrays().items():
        flat = arr.reshape(-1)
        idx = np.arange(flat.size) if flat.size <= max_coords else rng.choice(flat.size, max_coords, replace=False)
        worst = 0.0
        for i in idx:
            fd = fd_coordinate(batch, cfg, params, arr, int(i), epsilon)
            ga = analytic[name].reshape(-1)[i]
            worst = max(worst, abs(ga - fd) / max(1.0, abs(fd)))
        errors[name], counts[name] = worst, len(idx)
    return GradCheckReport(errors, counts)


def fd_coordinate(batch, cfg, params, arr: np.ndarray, index: int, epsilon: float) -> float:
    """Central-difference derivative of the loss along one coordinate of ``arr`` (restored after)."""
    flat = arr.reshape(-1)
    old = flat[index]
    flat[index] = old + epsilon
    up = forward(batch, cfg, params).loss
    flat[index] = old - epsilon
    down = forward(batch, cfg, params).loss
    flat[index] = old
    return (up - down) / (2 * epsilon)


# ---------------------------------------------------------------------------
# Attention dumps
# ---------------------------------------------------------------------------

@dataclass
class AttentionDump:
    matrix: np.ndarray
    max_value: float
    text_path: Path | None
    image_path: Path | None


def write_pgm(path, matrix: np.ndarray) -> None:
    """Binary portable graymap, brightest cell = largest value."""
    m = np.asarray(matrix, dtype=np.float64)
    top = m.max() if m.size and m.max() > 0 else 1.0
    pixels = np.clip(np.rint(255.0 * m / top), 0, 255).astype(np.uint8)
    rows, cols = pixels.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{cols} {rows}\n255\n".encode("ascii"))
        fh.write(pixels.tobytes())


def read_pgm(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    parts = raw.split(b"\n", 3)
    if parts[0] != b"P5":
        raise ValueError(f"{path}: not a binary PGM")
    cols, rows = (int(v) for v in parts[1].split())
    return np.frombuffer(parts[3], dtype=np.uint8, count=rows * cols).reshape(rows, cols)


def dump_attention(result: SimResult, layer: int, head: int, sample: int, out_dir=None) -> AttentionDump:
    if not 0 <= layer < len(result.attention):
        raise IndexError(f"unknown layer {layer}")
    maps = result.attention[layer]
    if not 0 <= head < maps.shape[1]:
        raise IndexError(f"unknown head {head}")
    if not 0 <= sample < maps.shape[0]:
        raise IndexError(f"unknown sample {sample}")
    m = maps[sample, head]
    text_path = image_path = None
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        stem = f"attn_l{layer}_h{head}_s{sample}"
        text_path, image_path = out_dir / f"{stem}.txt", out_dir / f"{stem}.pgm"
        np.savetxt(text_path, m, fmt="%.17g")
        write_pgm(image_path, m)
    return AttentionDump(m.copy(), float(m.max()), text_path, image_path)


def toy_config(**overrides) -> SimConfig:
    """The small configuration used for gradient checks: 2 layers, 2 heads, d_k=4."""
    kw = dict(
        num_layers=2, num_heads=2, d_model=8, d_k=4, num_visual_tokens=4,
        tt=TTRoutingConfig(tolerance=0.1, t_max=12, bins=(8, 16), pool_K=8),
    )
    kw.update(overrides)
    return SimConfig(**kw)
