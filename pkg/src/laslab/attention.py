"""Content, location-aware and sigmoid-smoothed MLP attention.

All variants share the scoring MLP ``w' tanh(W s + V h_j + b)``.  The location
variant adds ``U f_j`` where ``f = F * alpha_prev`` is a zero-padded 1-D
convolution of the previous alignment, and the smoothed variant normalizes the
content scores with an elementwise sigmoid instead of a softmax.

Batched shapes: decoder state ``[B, s]``, encoder memory ``[B, T, D]``,
alignments ``[B, T]``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import numerics as nx
from .errors import ConfigError, DimensionError, NumericError
from .layers import glorot_init, zeros
from .numerics import Tensor

VARIANTS = ("content", "location", "smoothed")


@dataclass
class AttentionScorer:
    variant: str
    w: Tensor  # [a]
    W: Tensor  # [a, s]
    V: Tensor  # [a, D]
    b: Tensor  # [a]
    U: Tensor | None = None  # [a, k]
    F: Tensor | None = None  # [k, r]

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ConfigError(f"attention must be one of {VARIANTS}, got {self.variant!r}")
        if self.variant == "location" and (self.U is None or self.F is None):
            raise ConfigError("location attention needs U and F")

    @classmethod
    def create(cls, variant: str, state_dim: int, memory_dim: int, attn_dim: int, rng,
               filters: int = 4, width: int = 5, dtype=np.float64) -> "AttentionScorer":
        if variant not in VARIANTS:
            raise ConfigError(f"attention must be one of {VARIANTS}, got {variant!r}")
        if width % 2 == 0:
            raise ConfigError(f"location filter width must be odd, got {width}")
        w = Tensor(glorot_init((attn_dim, 1), rng, dtype).data.reshape(attn_dim), requires_grad=True)
        W = glorot_init((attn_dim, state_dim), rng, dtype)
        V = glorot_init((attn_dim, memory_dim), rng, dtype)
        b = zeros((attn_dim,), dtype)
        U = F = None
        if variant == "location":
            U = glorot_init((attn_dim, filters), rng, dtype)
            F = glorot_init((filters, width), rng, dtype)
        return cls(variant, w, W, V, b, U, F)

    @property
    def normalization(self) -> str:
        return "sigmoid" if self.variant == "smoothed" else "softmax"

    def parameters(self) -> dict:
        out = {"w": self.w, "W": self.W, "V": self.V, "b": self.b}
        if self.variant == "location":
            out["U"] = self.U
            out["F"] = self.F
        return out


@dataclass
class Memory:
    """Encoder outputs prepared for repeated attention."""

    h: Tensor  # [B, T, D]
    keys: Tensor  # V h_j, [B, T, a]
    lengths: np.ndarray
    mask: np.ndarray  # additive, 0 on frames and -inf on padding

    @property
    def batch(self) -> int:
        return self.h.shape[0]

    @property
    def frames(self) -> int:
        return self.h.shape[1]


@dataclass
class AttentionState:
    alpha: Tensor  # [B, T]
    context: Tensor  # [B, D]
    alpha_prev: Tensor | None = None


def make_memory(scorer: AttentionScorer, h: Tensor, lengths=None) -> Memory:
    """Project encoder outputs once; ``h`` is ``[B, T, D]`` right-padded."""
    B, T, D = h.shape
    if scorer.V.shape[1] != D:
        raise DimensionError(f"V expects memory dim {scorer.V.shape[1]}, got h{h.shape}")
    a = scorer.V.shape[0]
    keys = nx.reshape(nx.matmul(nx.reshape(h, (B * T, D)), nx.transpose(scorer.V)), (B, T, a))
    if lengths is None:
        lengths = np.full(B, T)
    lengths = np.asarray(lengths)
    mask = np.where(np.arange(T)[None, :] < lengths[:, None], 0.0, -np.inf).astype(h.dtype)
    return Memory(h, keys, lengths, mask)


def initial_alignment(memory: Memory) -> Tensor:
    """Uniform ``1/T`` over each row's real frames."""
    valid = (memory.mask == 0).astype(memory.h.dtype)
    return Tensor(valid / memory.lengths[:, None].astype(memory.h.dtype))


def _as_memory(scorer, h) -> Memory:
    if isinstance(h, Memory):
        return h
    if isinstance(h, Tensor):
        seq = h
    elif isinstance(h[0], Tensor):
        seq = nx.stack(list(h), axis=0)
    else:
        seq = Tensor(np.asarray(h))
    if seq.ndim == 2:
        seq = nx.reshape(seq, (1,) + seq.shape)
    return make_memory(scorer, seq)


def score_batch(scorer: AttentionScorer, s_prev: Tensor, memory: Memory,
                alpha_prev: Tensor | None = None) -> Tensor:
    """Unnormalized energies ``e [B, T]`` (padding not yet masked)."""
    B, T = memory.batch, memory.frames
    a = scorer.w.shape[0]
    if s_prev.ndim != 2 or s_prev.shape[0] != B or s_prev.shape[1] != scorer.W.shape[1]:
        raise DimensionError(f"state shape {s_prev.shape} does not fit W{scorer.W.shape} with batch {B}")
    query = nx.matmul(s_prev, nx.transpose(scorer.W))  # [B, a]
    pre = nx.add(memory.keys, nx.expand(query, 1, T))
    if scorer.variant == "location":
        if alpha_prev is None:
            alpha_prev = initial_alignment(memory)
        if alpha_prev.shape != (B, T):
            raise DimensionError(f"previous alignment has shape {alpha_prev.shape}, expected {(B, T)}")
        feats = nx.conv1d(alpha_prev, scorer.F)  # [B, T, k]
        k = feats.shape[-1]
        loc = nx.matmul(nx.reshape(feats, (B * T, k)), nx.transpose(scorer.U))
        pre = nx.add(pre, nx.reshape(loc, (B, T, a)))
    pre = nx.add(pre, scorer.b)
    e = nx.matmul(nx.reshape(nx.tanh(pre), (B * T, a)), nx.reshape(scorer.w, (a, 1)))
    return nx.reshape(e, (B, T))


def score(scorer: AttentionScorer, s_prev: Tensor, h, alpha_prev: Tensor | None = None) -> Tensor:
    """Energies for one sequence: ``s_prev [s]``, ``h`` of length ``T`` -> ``e [T]``."""
    memory = _as_memory(scorer, h)
    T = memory.frames
    if alpha_prev is not None:
        if alpha_prev.ndim != 1 or alpha_prev.shape[0] != T:
            raise DimensionError(f"previous alignment has length {alpha_prev.shape}, expected {T}")
        alpha_prev = nx.reshape(alpha_prev, (1, T))
    e = score_batch(scorer, nx.reshape(s_prev, (1, s_prev.shape[-1])), memory, alpha_prev)
    return nx.reshape(e, (T,))


def normalize(e: Tensor, mode: str = "softmax", mask: np.ndarray | None = None) -> Tensor:
    """Turn energies into alignment weights over the last axis."""
    if not np.all(np.isfinite(e.data)):
        raise NumericError("attention energies must be finite")
    if mask is not None:
        e = nx.add(e, Tensor(mask, dtype=e.dtype))
    if mode == "softmax":
        return nx.softmax(e, axis=-1)
    if mode == "sigmoid":
        return nx.sigmoid(e)
    raise ConfigError(f"normalization must be softmax or sigmoid, got {mode!r}")


def context(alpha: Tensor, h) -> Tensor:
    """Weighted sum of memory vectors: ``alpha [B, T]`` with ``h [B, T, D]``, or unbatched."""
    if not isinstance(h, Tensor):
        h = nx.stack(list(h), axis=0) if isinstance(h[0], Tensor) else Tensor(np.asarray(h))
    if alpha.shape[-1] != h.shape[-2] or alpha.ndim + 1 != h.ndim:
        raise DimensionError(f"alignment {alpha.shape} does not match memory {h.shape}")
    D = h.shape[-1]
    weighted = nx.mul(nx.expand(alpha, alpha.ndim, D), h)
    return nx.sum(weighted, axis=-2)


def attend(scorer: AttentionScorer, s: Tensor, memory: Memory,
           alpha_prev: Tensor | None = None) -> AttentionState:
    """Score, normalize (with padding masked out) and read the context."""
    e = score_batch(scorer, s, memory, alpha_prev)
    alpha = normalize(e, scorer.normalization, memory.mask)
    return AttentionState(alpha, context(alpha, memory.h), alpha_prev)
