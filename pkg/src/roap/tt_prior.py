"""Text-token sub-block prior: batch reference length, bucket routing, pool/conv/upsample refiner.

The refiner functions come in forward/backward pairs so the simulator can backpropagate
through them; each backward takes the cache returned by its forward.
"""
from __future__ import annotations

import math
from fractions import Fraction
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .ro_rpb import effective_gate, masked_softmax

FUNSD_BINS = (128, 192, 256, 320, 384, 512)
CORD_BINS = (64, 96, 128, 160, 192, 224, 256, 288)


@dataclass(frozen=True)
class TTRoutingConfig:
    tolerance: float = 0.1
    t_max: int = 512
    bins: tuple[int, ...] = FUNSD_BINS
    pool_K: int = 64

    def __post_init__(self):
        object.__setattr__(self, "bins", tuple(int(b) for b in self.bins))
        if not 0 < self.tolerance < 1:
            raise ValueError(f"tolerance must lie in (0, 1), got {self.tolerance}")
        if self.t_max < 1:
            raise ValueError("t_max must be >= 1")
        if not self.bins or any(a >= b for a, b in zip(self.bins, self.bins[1:])):
            raise ValueError(f"bins must be non-empty and strictly increasing, got {self.bins}")
        if self.pool_K < 8:
            raise ValueError(f"pool_K must be >= 8, got {self.pool_K}")


def dispersion_ratio(lengths: Sequence[int]) -> float:
    if len(lengths) == 0:
        raise ValueError("lengths must be non-empty")
    if min(lengths) <= 0:
        raise ValueError(f"lengths must be positive, got {list(lengths)}")
    hi, lo = max(lengths), min(lengths)
    return (hi - lo) / hi


def ceil_to_8(x: int) -> int:
    return 8 * ((int(x) + 7) // 8)


def reference_length(lengths: Sequence[int], cfg: TTRoutingConfig) -> int:
    """Batch maximum for length-homogeneous batches, else the mean rounded up to a multiple of 8."""
    dispersion_ratio(lengths)  # validates
    hi, lo = max(lengths), min(lengths)
    # exact rational comparison so ratios sitting on the tolerance are not decided by rounding
    if Fraction(hi - lo, hi) <= Fraction(cfg.tolerance):
        t_ref = math.floor(max(lengths) + 0.5)
    else:
        # integer arithmetic for floor(mean + 1/2) avoids float rounding on large batches
        t_ref = ceil_to_8((2 * sum(lengths) + len(lengths)) // (2 * len(lengths)))
    return min(max(t_ref, 1), cfg.t_max)


def route_bucket(t_ref: int, bins: Sequence[int]) -> int:
    """Smallest bin >= t_ref, or the largest bin on overflow."""
    if len(bins) == 0:
        raise ValueError("bins must be non-empty")
    for b in sorted(bins):
        if b >= t_ref:
            return int(b)
    return int(max(bins))


# ---------------------------------------------------------------------------
# Refiner building blocks
# ---------------------------------------------------------------------------

@dataclass
class OpCounter:
    conv_macs: int = 0


def pool_edges(t: int, k: int) -> np.ndarray:
    """Bin boundaries floor(i*t/k) for i = 0..k."""
    return (np.arange(k + 1) * t) // k


def adaptive_pool_forward(x: np.ndarray, k: int):
    """Average-pool the last two (square) axes of ``x`` to k x k; identity when t <= k."""
    t = x.shape[-1]
    if t <= k:
        return x, (t, None)
    edges = pool_edges(t, k)
    counts = np.diff(edges)
    s = np.add.reduceat(np.add.reduceat(x, edges[:-1], axis=-1), edges[:-1], axis=-2)
    return s / (counts[:, None] * counts[None, :]), (t, edges)


def adaptive_pool_backward(dout: np.ndarray, cache) -> np.ndarray:
    t, edges = cache
    if edges is None:
        return dout
    counts = np.diff(edges)
    scaled = dout / (counts[:, None] * counts[None, :])
    return np.repeat(np.repeat(scaled, counts, axis=-2), counts, axis=-1)


def conv3x3_forward(x: np.ndarray, w: np.ndarray, b: np.ndarray, counter: OpCounter | None = None):
    """Zero-padded 3x3 convolution, x: C x n x n, w: O x C x 3 x 3."""
    xp = np.pad(x, ((0, 0), (1, 1), (1, 1)))
    win = sliding_window_view(xp, (3, 3), axis=(1, 2))  # C x n x n x 3 x 3
    out = np.einsum("cijuv,ocuv->oij", win, w, optimize=True) + b[:, None, None]
    if counter is not None:
        counter.conv_macs += w.shape[0] * w.shape[1] * 9 * x.shape[1] * x.shape[2]
    return out, (win, x.shape)


def conv3x3_backward(dout: np.ndarray, w: np.ndarray, cache):
    win, shape = cache
    c, n, m = shape
    dw = np.einsum("cijuv,oij->ocuv", win, dout, optimize=True)
    db = dout.sum(axis=(1, 2))
    dxp = np.zeros((c, n + 2, m + 2))
    for u in range(3):
        for v in range(3):
            dxp[:, u:u + n, v:v + m] += np.einsum("oc,oij->cij", w[:, :, u, v], dout)
    return dxp[:, 1:-1, 1:-1], dw, db


def bilinear_matrix(src: int, dst: int) -> np.ndarray:
    """dst x src interpolation weights, half-pixel centers, clamped at the edges."""
    pos = (np.arange(dst) + 0.5) * (src / dst) - 0.5
    pos = np.clip(pos, 0.0, src - 1)
    i0 = np.floor(pos).astype(np.int64)
    i1 = np.minimum(i0 + 1, src - 1)
    frac = pos - i0
    m = np.zeros((dst, src))
    rows = np.arange(dst)
    np.add.at(m, (rows, i0), 1.0 - frac)
    np.add.at(m, (rows, i1), frac)
    return m


def upsample_forward(x: np.ndarray, size: int):
    m = bilinear_matrix(x.shape[-1], size)
    return m @ x @ m.T, m


def upsample_backward(dout: np.ndarray, m: np.ndarray) -> np.ndarray:
    return m.T @ dout @ m


# ---------------------------------------------------------------------------
# Prior module
# ---------------------------------------------------------------------------

@dataclass
class TTPriorModule:
    bucket_size: int
    conv1_w: np.ndarray
    conv1_b: np.ndarray
    conv2_w: np.ndarray
    conv2_b: np.ndarray

    @classmethod
    def init(cls, bucket_size: int, num_heads: int, rng: np.random.Generator):
        fan_in = num_heads * 9
        return cls(
            bucket_size,
            rng.normal(0.0, math.sqrt(2.0 / fan_in), size=(num_heads, num_heads, 3, 3)),
            np.zeros(num_heads),
            # zero so the prior starts as an exact no-op
            np.zeros((num_heads, num_heads, 3, 3)),
            np.zeros(num_heads),
        )

    def parameters(self) -> dict[str, np.ndarray]:
        return {"conv1_w": self.conv1_w, "conv1_b": self.conv1_b, "conv2_w": self.conv2_w, "conv2_b": self.conv2_b}


@dataclass(frozen=True)
class PriorMatrix:
    values: np.ndarray  # H x t_ref x t_ref


def tt_prior_forward(tt_logits: np.ndarray, module: TTPriorModule, t_ref: int, pool_K: int,
                     counter: OpCounter | None = None):
    x = np.asarray(tt_logits, dtype=np.float64)
    if x.ndim != 3 or x.shape[1] != x.shape[2] or x.shape[1] < 1:
        raise ValueError(f"expected H x t x t logits, got shape {x.shape}")
    pooled, pool_cache = adaptive_pool_forward(x, pool_K)
    h1, c1 = conv3x3_forward(pooled, module.conv1_w, module.conv1_b, counter)
    r1 = np.maximum(h1, 0.0)
    h2, c2 = conv3x3_forward(r1, module.conv2_w, module.conv2_b, counter)
    prior, up = upsample_forward(h2, t_ref)
    return prior, (pool_cache, c1, h1, c2, up)


def tt_prior_backward(dprior: np.ndarray, module: TTPriorModule, cache):
    """Gradients w.r.t. the input logits and the module parameters."""
    pool_cache, c1, h1, c2, up = cache
    dh2 = upsample_backward(dprior, up)
    dr1, dw2, db2 = conv3x3_backward(dh2, module.conv2_w, c2)
    dh1 = dr1 * (h1 > 0)
    dpooled, dw1, db1 = conv3x3_backward(dh1, module.conv1_w, c1)
    dx = adaptive_pool_backward(dpooled, pool_cache)
    return dx, {"conv1_w": dw1, "conv1_b": db1, "conv2_w": dw2, "conv2_b": db2}


def compute_tt_prior(tt_logits, module: TTPriorModule, t_ref: int, pool_K: int,
                     counter: OpCounter | None = None) -> PriorMatrix:
    prior, _ = tt_prior_forward(tt_logits, module, t_ref, pool_K, counter)
    return PriorMatrix(prior)


def add_prior(scores: np.ndarray, prior: np.ndarray, gate: float, valid_len: int) -> np.ndarray:
    """``scores`` with g * prior added on the top-left min(valid_len, t_ref) square."""
    n = min(valid_len, prior.shape[-1])
    out = np.array(scores, dtype=np.float64)
    out[..., :n, :n] += gate * prior[..., :n, :n]
    return out


def inject_tt_prior(logits, prior: PriorMatrix | np.ndarray, gate_raw: float, valid_len: int, d_k: int,
                    text_span: int | None = None, gate_mode: str = "sigmoid") -> np.ndarray:
    """Attention with the gated prior on valid text pairs; text padding keys are masked.

    ``text_span`` is the number of text slots in the sequence (default: all of it), so keys in
    ``[valid_len, text_span)`` are padding and anything after ``text_span`` stays attendable.
    """
    logits = np.asarray(logits, dtype=np.float64)
    p = prior.values if isinstance(prior, PriorMatrix) else np.asarray(prior, dtype=np.float64)
    if logits.ndim != 3 or logits.shape[1] != logits.shape[2]:
        raise ValueError(f"expected H x L x L logits, got {logits.shape}")
    if p.ndim != 3 or p.shape[0] != logits.shape[0] or p.shape[1] != p.shape[2]:
        raise ValueError(f"prior shape {p.shape} does not match logits {logits.shape}")
    L = logits.shape[-1]
    text_span = L if text_span is None else text_span
    if not 1 <= valid_len <= text_span <= L:
        raise ValueError(f"need 1 <= valid_len ({valid_len}) <= text_span ({text_span}) <= L ({L})")
    mask = np.ones(L, dtype=bool)
    mask[valid_len:text_span] = False
    g = effective_gate(gate_raw, gate_mode)
    return masked_softmax(add_prior(logits, p, g, valid_len) / math.sqrt(d_k), mask)
