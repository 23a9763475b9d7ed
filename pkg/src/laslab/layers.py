"""Embedding table, LSTM cell, bidirectional LSTM stack and initializers.

Everything works on batches laid out row-wise (``[batch, features]``); single
vectors are accepted and treated as a batch of one.

LSTM gate order in the packed weight matrices is fixed as
(input, forget, output, candidate).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import numerics as nx
from .errors import ConfigError, DimensionError, InputError, VocabularyError
from .numerics import Tensor


def glorot_init(shape, rng: np.random.Generator, dtype=np.float64) -> Tensor:
    """Normalized (Glorot) uniform initialization for a ``(fan_in, fan_out)`` weight."""
    shape = tuple(shape)
    if len(shape) != 2:
        raise ConfigError(f"glorot_init needs a 2-D (fan_in, fan_out) shape, got {shape}")
    fan_in, fan_out = shape
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return Tensor(rng.uniform(-bound, bound, size=shape).astype(dtype), requires_grad=True)


def zeros(shape, dtype=np.float64) -> Tensor:
    return Tensor(np.zeros(shape, dtype=dtype), requires_grad=True)


def _batched(x: Tensor) -> tuple[Tensor, bool]:
    if x.ndim == 1:
        return nx.reshape(x, (1, x.shape[0])), True
    return x, False


# -- embedding ------------------------------------------------------------------
@dataclass
class EmbeddingTable:
    weights: Tensor  # [n, m]

    @classmethod
    def create(cls, n: int, m: int, rng, dtype=np.float64) -> "EmbeddingTable":
        return cls(glorot_init((n, m), rng, dtype))

    @property
    def vocab_size(self) -> int:
        return self.weights.shape[0]

    @property
    def dim(self) -> int:
        return self.weights.shape[1]

    def parameters(self) -> dict:
        return {"W_e": self.weights}


def embed(table: EmbeddingTable, index) -> Tensor:
    """Row lookup: a scalar id gives ``[m]``, an id array gives ``[..., m]``."""
    idx = np.asarray(index)
    if idx.dtype.kind not in "iu":
        raise VocabularyError(index, table.vocab_size)
    n = table.vocab_size
    if idx.size and (idx.min() < 0 or idx.max() >= n):
        bad = idx[(idx < 0) | (idx >= n)].reshape(-1)[0]
        raise VocabularyError(int(bad), n)
    if idx.ndim == 0:
        return table.weights[int(idx)]
    return table.weights[idx]


# -- LSTM -------------------------------------------------------------------------
@dataclass
class LstmCell:
    """Packed LSTM parameters: ``W_x [d, 4H]``, ``W_h [H, 4H]``, ``b [4H]``."""

    W_x: Tensor
    W_h: Tensor
    b: Tensor

    @classmethod
    def create(cls, input_dim: int, hidden: int, rng, dtype=np.float64) -> "LstmCell":
        return cls(
            W_x=glorot_init((input_dim, 4 * hidden), rng, dtype),
            W_h=glorot_init((hidden, 4 * hidden), rng, dtype),
            b=zeros((4 * hidden,), dtype),
        )

    @property
    def input_dim(self) -> int:
        return self.W_x.shape[0]

    @property
    def hidden(self) -> int:
        return self.W_h.shape[0]

    def parameters(self) -> dict:
        return {"W_x": self.W_x, "W_h": self.W_h, "b": self.b}

    def zero_state(self, batch: int | None = None, dtype=None) -> tuple[Tensor, Tensor]:
        dtype = dtype or self.W_h.dtype
        shape = (self.hidden,) if batch is None else (batch, self.hidden)
        return Tensor(np.zeros(shape, dtype)), Tensor(np.zeros(shape, dtype))


def lstm_step(cell: LstmCell, x: Tensor, h_prev: Tensor, c_prev: Tensor) -> tuple[Tensor, Tensor]:
    """One LSTM time step; returns the new ``(h, c)``."""
    H = cell.hidden
    x, single = _batched(x)
    h_prev, _ = _batched(h_prev)
    c_prev, _ = _batched(c_prev)
    if x.shape[1] != cell.input_dim or h_prev.shape[1] != H or c_prev.shape != h_prev.shape \
            or h_prev.shape[0] != x.shape[0]:
        raise DimensionError(
            f"lstm_step got x{x.shape}, h{h_prev.shape}, c{c_prev.shape} "
            f"for a cell with input {cell.input_dim} and hidden {H}")
    z = nx.add(nx.add(nx.matmul(x, cell.W_x), nx.matmul(h_prev, cell.W_h)), cell.b)
    i = nx.sigmoid(z[:, 0:H])
    f = nx.sigmoid(z[:, H:2 * H])
    o = nx.sigmoid(z[:, 2 * H:3 * H])
    g = nx.tanh(z[:, 3 * H:4 * H])
    c = nx.add(nx.mul(f, c_prev), nx.mul(i, g))
    h = nx.mul(o, nx.tanh(c))
    if single:
        return nx.reshape(h, (H,)), nx.reshape(c, (H,))
    return h, c


def run_lstm(cell: LstmCell, x: Tensor) -> Tensor:
    """Run a cell left to right over ``x [B, T, d]``; returns ``[B, T, H]``."""
    B, T, _ = x.shape
    h, c = cell.zero_state(B, x.dtype)
    outs = []
    for t in range(T):
        h, c = lstm_step(cell, x[:, t, :], h, c)
        outs.append(h)
    return nx.stack(outs, axis=1)


# -- bidirectional stack -------------------------------------------------------------
@dataclass
class Blstm:
    forward_cells: list = field(default_factory=list)
    backward_cells: list = field(default_factory=list)

    @classmethod
    def create(cls, input_dim: int, hidden: int, layers: int, rng, dtype=np.float64) -> "Blstm":
        fwd, bwd = [], []
        d = input_dim
        for _ in range(layers):
            fwd.append(LstmCell.create(d, hidden, rng, dtype))
            bwd.append(LstmCell.create(d, hidden, rng, dtype))
            d = 2 * hidden
        return cls(fwd, bwd)

    @property
    def layers(self) -> int:
        return len(self.forward_cells)

    @property
    def hidden(self) -> int:
        return self.forward_cells[0].hidden

    @property
    def output_dim(self) -> int:
        return 2 * self.hidden

    def parameters(self) -> dict:
        out = {}
        for i, (f, b) in enumerate(zip(self.forward_cells, self.backward_cells)):
            for k, v in f.parameters().items():
                out[f"l{i}.fwd.{k}"] = v
            for k, v in b.parameters().items():
                out[f"l{i}.bwd.{k}"] = v
        return out


def reversal_index(lengths, T: int) -> tuple[np.ndarray, np.ndarray]:
    """Index arrays that reverse each row within its own length; padding stays put."""
    lengths = np.asarray(lengths)
    t = np.arange(T)[None, :]
    rev = np.where(t < lengths[:, None], lengths[:, None] - 1 - t, t)
    rows = np.broadcast_to(np.arange(len(lengths))[:, None], rev.shape)
    return rows, rev


def blstm_forward_batch(net: Blstm, x: Tensor, lengths=None) -> Tensor:
    """Bidirectional pass over a padded batch ``x [B, T, d]``; returns ``[B, T, 2H]``.

    Rows shorter than ``T`` must be right-padded; the backward direction starts
    at each row's own last frame so padding never leaks into real positions.
    """
    B, T, _ = x.shape
    if T == 0:
        raise InputError("blstm_forward needs a non-empty sequence")
    if lengths is None:
        lengths = np.full(B, T)
    rows, rev = reversal_index(lengths, T)
    out = x
    for fcell, bcell in zip(net.forward_cells, net.backward_cells):
        fwd = run_lstm(fcell, out)
        bwd = run_lstm(bcell, out[rows, rev])[rows, rev]
        out = nx.concat([fwd, bwd], axis=2)
    return out


def blstm_forward(net: Blstm, xs) -> list:
    """Single-sequence convenience: ``xs`` is a sequence of ``[d]`` tensors or a ``[T, d]`` array."""
    if isinstance(xs, Tensor):
        seq = xs
    elif len(xs) == 0:
        raise InputError("blstm_forward needs a non-empty sequence")
    elif isinstance(xs[0], Tensor):
        seq = nx.stack(list(xs), axis=0)
    else:
        seq = Tensor(np.asarray(xs))
    if seq.ndim != 2 or seq.shape[0] == 0:
        raise InputError(f"expected a non-empty [T, d] sequence, got shape {seq.shape}")
    T, d = seq.shape
    out = blstm_forward_batch(net, nx.reshape(seq, (1, T, d)))
    return [out[0, t, :] for t in range(T)]
