"""Listen, Attend and Spell: listener, speller and checkpoint I/O.

The speller input at step i is ``[embed(y_{i-1}), c_{i-1}]``; the LSTM produces
``s_i``, attention over the listener outputs gives ``c_i``, and the logits are
an affine projection of ``[s_i, c_i]``.
"""

from __future__ import annotations

import dataclasses
import json
import os
import struct
import tempfile
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import numerics as nx
from .attention import AttentionScorer, Memory, attend, initial_alignment, make_memory
from .errors import CheckpointError, ConfigError, InputError, VocabularyError
from .layers import Blstm, EmbeddingTable, LstmCell, blstm_forward_batch, embed, glorot_init, lstm_step, zeros
from .numerics import Tensor
from .vocab import EOS, SOS


@dataclass(frozen=True)
class LasConfig:
    input_dim: int = 8
    encoder_layers: int = 1
    encoder_hidden: int = 32
    decoder_hidden: int = 32
    vocab_size: int = 23
    embed_dim: int = 16
    attention: str = "content"
    attention_dim: int = 32
    location_filters: int = 4
    location_width: int = 5
    frame_skip: int = 2
    attend_with: str = "new_state"
    decode_frames: str = "interleave"

    def __post_init__(self):
        for f in ("input_dim", "encoder_layers", "encoder_hidden", "decoder_hidden", "vocab_size",
                  "embed_dim", "attention_dim", "location_filters", "location_width", "frame_skip"):
            if getattr(self, f) < 1:
                raise ConfigError(f"{f} must be positive, got {getattr(self, f)}")
        if self.vocab_size < 4:
            raise ConfigError("vocab_size must cover the three reserved tokens and one character")
        if self.attention not in ("content", "location", "smoothed"):
            raise ConfigError(f"attention must be content, location or smoothed, got {self.attention!r}")
        if self.attend_with not in ("new_state", "prev_state"):
            raise ConfigError(f"attend_with must be new_state or prev_state, got {self.attend_with!r}")
        if self.decode_frames not in ("interleave", "full"):
            raise ConfigError(f"decode_frames must be interleave or full, got {self.decode_frames!r}")
        if self.location_width % 2 == 0:
            raise ConfigError(f"location_width must be odd, got {self.location_width}")

    @classmethod
    def large_scale(cls, **overrides) -> "LasConfig":
        """3x256 BLSTM listener, 256-unit speller, 240-dim input, 6925 labels."""
        base = dict(input_dim=240, encoder_layers=3, encoder_hidden=256, decoder_hidden=256,
                    vocab_size=6925, embed_dim=64, attention_dim=256)
        base.update(overrides)
        return cls(**base)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "LasConfig":
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ConfigError(f"unknown LasConfig keys {sorted(unknown)}")
        return cls(**d)


@dataclass
class SpellerState:
    h: Tensor  # [B, s]
    c: Tensor  # [B, s]
    context: Tensor  # [B, 2H]
    alpha: Tensor  # [B, T]


class LasModel:
    def __init__(self, config: LasConfig, listener: Blstm, embedding: EmbeddingTable,
                 scorer: AttentionScorer, speller: LstmCell, W_out: Tensor, b_out: Tensor):
        self.config = config
        self.listener = listener
        self.embedding = embedding
        self.scorer = scorer
        self.speller = speller
        self.W_out = W_out
        self.b_out = b_out

    @classmethod
    def create(cls, config: LasConfig, seed: int = 0, dtype=np.float64) -> "LasModel":
        rng = np.random.default_rng(seed)
        D = 2 * config.encoder_hidden
        listener = Blstm.create(config.input_dim, config.encoder_hidden, config.encoder_layers, rng, dtype)
        embedding = EmbeddingTable.create(config.vocab_size, config.embed_dim, rng, dtype)
        scorer = AttentionScorer.create(config.attention, config.decoder_hidden, D, config.attention_dim,
                                        rng, config.location_filters, config.location_width, dtype)
        speller = LstmCell.create(config.embed_dim + D, config.decoder_hidden, rng, dtype)
        W_out = glorot_init((config.decoder_hidden + D, config.vocab_size), rng, dtype)
        b_out = zeros((config.vocab_size,), dtype)
        return cls(config, listener, embedding, scorer, speller, W_out, b_out)

    def parameters(self) -> dict:
        """Named parameters in a fixed order."""
        out = {}
        for k, v in self.listener.parameters().items():
            out[f"listener.{k}"] = v
        out["embedding.W_e"] = self.embedding.weights
        for k, v in self.scorer.parameters().items():
            out[f"attention.{k}"] = v
        for k, v in self.speller.parameters().items():
            out[f"speller.{k}"] = v
        out["output.W"] = self.W_out
        out["output.b"] = self.b_out
        return out

    def num_parameters(self) -> int:
        return int(sum(p.size for p in self.parameters().values()))

    def zero_grad(self) -> None:
        for p in self.parameters().values():
            p.zero_grad()

    @property
    def dtype(self):
        return self.W_out.dtype


# -- listener -----------------------------------------------------------------------
def _prepare_inputs(model: LasModel, xs, mode: str) -> list:
    if mode not in ("train", "decode"):
        raise ConfigError(f"mode must be train or decode, got {mode!r}")
    out = []
    for x in xs:
        x = np.asarray(x.data if isinstance(x, Tensor) else x, dtype=model.dtype)
        if x.ndim != 2 or x.shape[0] == 0:
            raise InputError(f"listener input must be a non-empty [T, d] array, got shape {x.shape}")
        if x.shape[1] != model.config.input_dim:
            raise InputError(f"feature dim {x.shape[1]} != configured {model.config.input_dim}")
        if mode == "train" and model.config.frame_skip > 1:
            x = x[::model.config.frame_skip]
        out.append(x)
    return out


def _encode_padded(model: LasModel, xs) -> tuple[Tensor, np.ndarray]:
    lengths = np.array([len(x) for x in xs])
    T = int(lengths.max())
    padded = np.zeros((len(xs), T, model.config.input_dim), dtype=model.dtype)
    for i, x in enumerate(xs):
        padded[i, :len(x)] = x
    return blstm_forward_batch(model.listener, Tensor(padded), lengths), lengths


def _encode_interleaved(model: LasModel, xs) -> tuple[Tensor, np.ndarray]:
    """Encode each phase ``x[o::k]`` separately and weave the outputs back to full length."""
    k = model.config.frame_skip
    streams, rows, cols = [], [], []
    lengths = np.array([len(x) for x in xs])
    T = int(lengths.max())
    for b, x in enumerate(xs):
        base = len(streams)
        phases = min(k, len(x))
        streams.extend(x[o::k] for o in range(phases))
        t = np.arange(T)
        # padded positions point at a real output; the attention mask hides them
        t = np.minimum(t, len(x) - 1)
        rows.append(base + t % k)
        cols.append(t // k)
    h, _ = _encode_padded(model, streams)
    return h[np.stack(rows), np.stack(cols)], lengths


def listen_batch(model: LasModel, xs, mode: str = "decode") -> Memory:
    """Encode a list of ``[T_b, d]`` utterances into right-padded attention memory.

    Training mode keeps frames ``0, k, 2k, ...``.  Decode mode uses every frame:
    with ``decode_frames="interleave"`` the k phase-shifted subsequences are
    encoded at the training frame rate and woven back together; ``"full"``
    encodes the raw sequence directly.
    """
    if len(xs) == 0:
        raise InputError("empty batch")
    xs = _prepare_inputs(model, xs, mode)
    if mode == "decode" and model.config.frame_skip > 1 and model.config.decode_frames == "interleave":
        h, lengths = _encode_interleaved(model, xs)
    else:
        h, lengths = _encode_padded(model, xs)
    return make_memory(model.scorer, h, lengths)


def listen(model: LasModel, x, mode: str = "decode") -> Tensor:
    """Listener outputs ``[T', 2H]`` for one utterance (``T' = ceil(T/k)`` in training mode)."""
    memory = listen_batch(model, [x], mode)
    return memory.h[0]


# -- speller --------------------------------------------------------------------------
def initial_state(model: LasModel, memory: Memory) -> SpellerState:
    B = memory.batch
    h, c = model.speller.zero_state(B, model.dtype)
    ctx = Tensor(np.zeros((B, memory.h.shape[2]), dtype=model.dtype))
    return SpellerState(h, c, ctx, initial_alignment(memory))


def _check_ids(ids, n: int) -> np.ndarray:
    ids = np.asarray(ids)
    if ids.dtype.kind not in "iu":
        raise VocabularyError(ids, n)
    bad = (ids < 0) | (ids >= n)
    if bad.any():
        raise VocabularyError(int(ids[bad].reshape(-1)[0]), n)
    return ids


def decode_step(model: LasModel, memory: Memory, y_prev, state: SpellerState) -> tuple[SpellerState, Tensor]:
    """Advance the speller one character; returns the new state and logits ``[B, n]``."""
    y_prev = _check_ids(np.atleast_1d(y_prev), model.config.vocab_size)
    inp = nx.concat([embed(model.embedding, y_prev), state.context], axis=1)
    h, c = lstm_step(model.speller, inp, state.h, state.c)
    query = h if model.config.attend_with == "new_state" else state.h
    att = attend(model.scorer, query, memory, state.alpha)
    logits = nx.add(nx.matmul(nx.concat([h, att.context], axis=1), model.W_out), model.b_out)
    return SpellerState(h, c, att.context, att.alpha), logits


def character_distribution(logits: Tensor) -> np.ndarray:
    return nx.softmax_array(logits.data, axis=-1)


def _with_eos(y) -> list:
    y = [int(t) for t in y]
    if not y or y[-1] != EOS:
        y.append(EOS)
    return y


def teacher_forced_batch(model: LasModel, xs, ys, mode: str = "train") -> tuple[Tensor, list, np.ndarray]:
    """Run the speller over gold prefixes for a batch.

    Returns ``(log_probs [B, L, n], targets, mask [B, L])`` where ``targets`` are
    the gold sequences with ``<eos>`` appended and ``mask`` marks real steps.
    """
    if len(xs) != len(ys):
        raise InputError(f"{len(xs)} inputs but {len(ys)} transcripts")
    n = model.config.vocab_size
    targets = [_with_eos(y) for y in ys]
    for y in targets:
        _check_ids(np.asarray(y), n)
    memory = listen_batch(model, xs, mode)
    B = len(targets)
    L = max(len(y) for y in targets)
    gold = np.full((B, L), EOS, dtype=np.int64)
    mask = np.zeros((B, L), dtype=model.dtype)
    for b, y in enumerate(targets):
        gold[b, :len(y)] = y
        mask[b, :len(y)] = 1.0
    prev = np.concatenate([np.full((B, 1), SOS, dtype=np.int64), gold[:, :-1]], axis=1)
    state = initial_state(model, memory)
    steps = []
    for i in range(L):
        state, logits = decode_step(model, memory, prev[:, i], state)
        steps.append(nx.log_softmax(logits, axis=-1))
    return nx.stack(steps, axis=1), targets, mask


def forward_teacher_forced(model: LasModel, x, y, mode: str = "train") -> Tensor:
    """Per-step log-distributions ``[L, n]`` for one utterance (``<eos>`` step included)."""
    log_probs, _, _ = teacher_forced_batch(model, [x], [y], mode)
    return log_probs[0]


def gold_log_probs(log_probs: Tensor, y) -> Tensor:
    """Pick ``log p(y_i | ...)`` out of a ``[L, n]`` matrix."""
    y = _with_eos(y)
    if len(y) != log_probs.shape[0]:
        raise InputError(f"{len(y)} targets for {log_probs.shape[0]} steps")
    return log_probs[np.arange(len(y)), np.asarray(y)]


# -- checkpoints ---------------------------------------------------------------------------
MAGIC = b"LASC"
VERSION = 1
_DTYPE_FLAG = {np.dtype(np.float32): 32, np.dtype(np.float64): 64}
_FLAG_DTYPE = {32: np.dtype("<f4"), 64: np.dtype("<f8")}


def save_checkpoint(model: LasModel, path) -> None:
    """Write ``model`` atomically in the LASC format (little-endian)."""
    chunks = [MAGIC, struct.pack("<I", VERSION)]
    cfg = json.dumps(model.config.to_dict(), sort_keys=True).encode()
    chunks += [struct.pack("<I", len(cfg)), cfg]
    params = model.parameters()
    chunks.append(struct.pack("<I", len(params)))
    for name, p in params.items():
        raw = name.encode()
        chunks += [struct.pack("<H", len(raw)), raw, struct.pack("<B", p.ndim)]
        chunks += [struct.pack("<I", d) for d in p.shape]
        flag = _DTYPE_FLAG[p.dtype]
        chunks.append(struct.pack("<B", flag))
        chunks.append(np.ascontiguousarray(p.data, dtype=_FLAG_DTYPE[flag]).tobytes())
    _atomic_write(Path(path), b"".join(chunks))


def _atomic_write(path: Path, payload: bytes) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name + ".")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(payload)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


class _Reader:
    def __init__(self, buf: bytes):
        self.buf, self.pos = buf, 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.buf):
            raise CheckpointError(f"truncated checkpoint: wanted {n} bytes at offset {self.pos}, "
                                  f"file has {len(self.buf)}")
        out = self.buf[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))[0]


def load_checkpoint(path, expect: LasConfig | None = None) -> LasModel:
    """Read a LASC file; ``expect`` (if given) must equal the stored config."""
    r = _Reader(Path(path).read_bytes())
    magic = r.take(4)
    if magic != MAGIC:
        raise CheckpointError(f"bad magic: expected {MAGIC!r}, found {magic!r}")
    version = r.unpack("<I")
    if version != VERSION:
        raise CheckpointError(f"unsupported version: expected {VERSION}, found {version}")
    try:
        config = LasConfig.from_dict(json.loads(r.take(r.unpack("<I")).decode()))
    except (ValueError, TypeError) as exc:
        raise CheckpointError(f"unreadable config block: {exc}") from exc
    if expect is not None:
        for f in dataclasses.fields(LasConfig):
            want, got = getattr(expect, f.name), getattr(config, f.name)
            if want != got:
                raise CheckpointError(f"config field {f.name!r}: expected {want!r}, found {got!r}")
    stored = {}
    for _ in range(r.unpack("<I")):
        name = r.take(r.unpack("<H")).decode()
        ndim = r.unpack("<B")
        shape = tuple(r.unpack("<I") for _ in range(ndim))
        flag = r.unpack("<B")
        if flag not in _FLAG_DTYPE:
            raise CheckpointError(f"parameter {name!r}: unknown precision flag {flag}")
        dt = _FLAG_DTYPE[flag]
        count = int(np.prod(shape)) if shape else 1
        data = np.frombuffer(r.take(count * dt.itemsize), dtype=dt).reshape(shape)
        stored[name] = data.astype(dt.newbyteorder("="))
    if r.pos != len(r.buf):
        raise CheckpointError(f"{len(r.buf) - r.pos} trailing bytes after parameter blobs")

    model = LasModel.create(config, seed=0)
    params = model.parameters()
    if list(stored) != list(params):
        missing = sorted(set(params) - set(stored))
        extra = sorted(set(stored) - set(params))
        raise CheckpointError(f"parameter names differ: expected-but-missing {missing}, unexpected {extra}")
    for name, p in params.items():
        if stored[name].shape != p.shape:
            raise CheckpointError(f"parameter {name!r}: expected shape {p.shape}, found {stored[name].shape}")
        p.data = stored[name]
    return model
