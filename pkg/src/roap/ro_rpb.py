"""Reading-order relative position bias: order deltas, log buckets, per-head table, gated softmax."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np


@dataclass(frozen=True)
class RoBucketConfig:
    num_buckets: int = 32
    exact_span: int = 8
    max_distance: int = 1024

    def __post_init__(self):
        if self.num_buckets % 2:
            raise ValueError(f"num_buckets must be even, got {self.num_buckets}")
        if self.exact_span < 1:
            raise ValueError("exact_span must be >= 1")
        if self.num_buckets < 2 * (self.exact_span + 1):
            raise ValueError("num_buckets must be >= 2 * (exact_span + 1)")
        if self.max_distance <= self.exact_span:
            raise ValueError("max_distance must exceed exact_span")


@dataclass
class RoBiasTable:
    table: np.ndarray  # num_buckets x num_heads
    config: RoBucketConfig

    def __post_init__(self):
        self.table = np.asarray(self.table, dtype=np.float64)
        if self.table.shape[0] != self.config.num_buckets:
            raise ValueError(f"table has {self.table.shape[0]} rows, config wants {self.config.num_buckets}")
        if not np.all(np.isfinite(self.table)):
            raise ValueError("bias table has non-finite entries")

    @property
    def num_heads(self) -> int:
        return self.table.shape[1]

    @classmethod
    def init(cls, config: RoBucketConfig, num_heads: int, rng: np.random.Generator, scale: float = 0.02):
        return cls(rng.uniform(-scale, scale, size=(config.num_buckets, num_heads)), config)


@dataclass(frozen=True)
class DeltaMatrix:
    t_b: int
    deltas: np.ndarray


def pairwise_delta(reading_indices: Sequence[int], t_b: int) -> DeltaMatrix:
    if t_b <= 0:
        raise ValueError(f"t_b must be positive, got {t_b}")
    r = np.asarray(reading_indices, dtype=np.int64)
    if len(r) < t_b:
        raise ValueError(f"need at least {t_b} reading indices, got {len(r)}")
    r = r[:t_b]
    return DeltaMatrix(t_b, r[:, None] - r[None, :])


def bin_deltas(deltas, cfg: RoBucketConfig) -> np.ndarray:
    """Vectorised bucketing: exact buckets near zero, logarithmic beyond, sign in the upper half."""
    d = np.asarray(deltas, dtype=np.int64)
    half = cfg.num_buckets // 2
    mag = np.abs(d)
    out = mag.copy()
    far = mag > cfg.exact_span
    if np.any(far):
        ratio = np.log(mag[far] / cfg.exact_span) / math.log(cfg.max_distance / cfg.exact_span)
        log_bucket = cfg.exact_span + np.floor(ratio * (half - cfg.exact_span - 1)).astype(np.int64)
        out[far] = np.minimum(log_bucket, half - 1)
    return np.where(d < 0, half + out, out)


def bin_delta(delta: int, cfg: RoBucketConfig) -> int:
    return int(bin_deltas(np.array([delta]), cfg)[0])


def assemble_ro_bias(deltas: DeltaMatrix, table: RoBiasTable) -> np.ndarray:
    """Per-head bias tensor H x t_b x t_b looked up from the bucketed deltas."""
    buckets = bin_deltas(deltas.deltas, table.config)
    return np.moveaxis(table.table[buckets], -1, 0)


def sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * np.asarray(x, dtype=np.float64)))


def effective_gate(gate_raw: float, mode: str = "sigmoid") -> float:
    if mode == "sigmoid":
        return float(sigmoid(gate_raw))
    if mode == "raw":
        return float(gate_raw)
    raise ValueError(f"unknown gate mode {mode!r}")


def gate_slope(gate_raw: float, mode: str = "sigmoid") -> float:
    """d(effective gate)/d(raw gate)."""
    if mode == "raw":
        return 1.0
    g = effective_gate(gate_raw, mode)
    return g * (1.0 - g)


def masked_softmax(scores: np.ndarray, key_mask: np.ndarray | None = None) -> np.ndarray:
    """Row softmax over the last axis; masked keys get exactly zero probability."""
    s = np.array(scores, dtype=np.float64)
    if key_mask is not None:
        s = np.where(key_mask, s, -np.inf)
    s -= s.max(axis=-1, keepdims=True)
    e = np.exp(s)
    return e / e.sum(axis=-1, keepdims=True)


def inject_ro_bias(logits, bias, gate_raw: float, d_k: int, gate_mode: str = "sigmoid") -> np.ndarray:
    """softmax_j((q.k + g * bias) / sqrt(d_k)) over the text block."""
    logits = np.asarray(logits, dtype=np.float64)
    bias = np.asarray(bias, dtype=np.float64)
    if logits.shape != bias.shape:
        raise ValueError(f"shape mismatch: logits {logits.shape} vs bias {bias.shape}")
    if d_k < 1:
        raise ValueError("d_k must be >= 1")
    if not np.all(np.isfinite(logits)):
        raise ValueError("non-finite logits")
    g = effective_gate(gate_raw, gate_mode)
    return masked_softmax((logits + g * bias) / math.sqrt(d_k))
