"""Greedy and left-to-right beam search with temperature and LM fusion.

A hypothesis carries two accumulators: the untempered model log-probability,
which is what gets reported and what the fused cost

    C = -(sum_i log p(y_i | x, y_<i) + lm_weight * LM)

is built from, and a tempered one used only to rank and prune the beam.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .. import numerics as nx
from ..attention import Memory
from ..errors import ConfigError, InputError
from ..las import LasModel, SpellerState, decode_step, initial_state, listen_batch
from ..numerics import Tensor
from ..vocab import EOS, SOS, UNK


@dataclass
class DecodeConfig:
    beam: int = 30
    temperature: float = 2.0
    lm_weight: float = 0.1
    max_len: int | None = None
    lm_mode: str = "step"
    temper_scores: bool = False
    emit_unk: bool = False

    def __post_init__(self):
        if self.beam < 1:
            raise ConfigError(f"beam must be >= 1, got {self.beam}")
        if not self.temperature > 0:
            raise ConfigError(f"temperature must be > 0, got {self.temperature}")
        if self.lm_weight < 0:
            raise ConfigError(f"lm_weight must be >= 0, got {self.lm_weight}")
        if self.lm_mode not in ("step", "rescore"):
            raise ConfigError(f"lm_mode must be step or rescore, got {self.lm_mode!r}")
        if self.max_len is not None and self.max_len < 1:
            raise ConfigError("max_len must be >= 1")


def tempered_distribution(logits, tau: float) -> np.ndarray:
    """``softmax(o / tau)`` over the last axis."""
    if not tau > 0:
        raise ConfigError(f"temperature must be > 0, got {tau}")
    o = logits.data if isinstance(logits, Tensor) else np.asarray(logits, dtype=np.float64)
    if not np.all(np.isfinite(o)):
        raise InputError("logits must be finite")
    return nx.softmax_array(o / tau, axis=-1)


def tempered_log_distribution(logits, tau: float) -> np.ndarray:
    o = logits.data if isinstance(logits, Tensor) else np.asarray(logits, dtype=np.float64)
    return nx.log_softmax_array(o / tau, axis=-1)


@dataclass
class Hypothesis:
    tokens: tuple
    model_logprob: float
    lm_score: float
    search_score: float
    row: int  # index into the decoder-state batch of its step
    lm_state: object = None
    completed: bool = False

    def fused_cost(self, lm_weight: float) -> float:
        if lm_weight == 0:
            return -self.model_logprob
        return -(self.model_logprob + lm_weight * self.lm_score)


@dataclass
class DecodeResult:
    tokens: list
    model_logprob: float
    fused_cost: float
    completed: bool = True
    lm_score: float = 0.0


def _gather_memory(memory: Memory, rows: np.ndarray) -> Memory:
    return Memory(Tensor(memory.h.data[rows]), Tensor(memory.keys.data[rows]),
                  memory.lengths[rows], memory.mask[rows])


def _gather_state(state: SpellerState, rows: np.ndarray) -> SpellerState:
    return SpellerState(*(Tensor(t.data[rows]) for t in (state.h, state.c, state.context, state.alpha)))


def _emit_ids(n: int, emit_unk: bool) -> np.ndarray:
    skip = {SOS} if emit_unk else {SOS, UNK}
    return np.array([i for i in range(n) if i not in skip])


def default_max_len(frames: int) -> int:
    return max(1, 2 * frames)


def greedy_decode_batch(model: LasModel, xs, max_len: int | None = None) -> list:
    """Argmax decoding of several utterances at once; returns token lists without ``<eos>``."""
    with nx.no_grad():
        memory = listen_batch(model, xs, "decode")
        B = memory.batch
        limits = [max_len or default_max_len(int(n)) for n in memory.lengths]
        state = initial_state(model, memory)
        prev = np.full(B, SOS)
        done = np.zeros(B, dtype=bool)
        out = [[] for _ in range(B)]
        emit = _emit_ids(model.config.vocab_size, False)
        for _ in range(max(limits)):
            state, logits = decode_step(model, memory, prev, state)
            best = emit[np.argmax(logits.data[:, emit], axis=1)]
            for b in np.flatnonzero(~done):
                if best[b] == EOS:
                    done[b] = True
                else:
                    out[b].append(int(best[b]))
                    done[b] = len(out[b]) >= limits[b]
            if done.all():
                break
            prev = best
    return out


def greedy_decode(model: LasModel, x, max_len: int | None = None) -> list:
    return greedy_decode_batch(model, [x], max_len)[0]


class _LmCache:
    def __init__(self, lm):
        self.lm = lm
        self.step = {}
        self.final = {}

    def advance(self, state, token):
        key = (state, token)
        hit = self.step.get(key)
        if hit is None:
            hit = self.step[key] = self.lm.advance(state, token)
        return hit

    def finish(self, state):
        hit = self.final.get(state)
        if hit is None:
            hit = self.final[state] = self.lm.final_delta(state)
        return hit


def beam_search(model: LasModel, x, config: DecodeConfig | None = None, lm=None) -> list:
    """Ranked :class:`DecodeResult` list for one utterance, best fused cost first.

    If nothing reaches ``<eos>`` within ``max_len`` the best live hypotheses are
    returned with ``completed=False``.
    """
    config = config or DecodeConfig()
    gamma = config.lm_weight if lm is not None else 0.0
    step_lm = lm is not None and config.lm_mode == "step" and gamma > 0
    cache = _LmCache(lm) if step_lm else None
    with nx.no_grad():
        memory = listen_batch(model, [x], "decode")
        limit = config.max_len or default_max_len(int(memory.lengths[0]))
        emit = _emit_ids(model.config.vocab_size, config.emit_unk)
        state = initial_state(model, memory)
        live = [Hypothesis((), 0.0, 0.0, 0.0, 0, lm.initial_state() if step_lm else None)]
        completed: list = []
        for _ in range(limit):
            rows = np.array([h.row for h in live])
            mem = _gather_memory(memory, np.zeros(len(live), dtype=np.int64))
            st = _gather_state(state, rows)
            prev = np.array([h.tokens[-1] if h.tokens else SOS for h in live])
            state, logits = decode_step(model, mem, prev, st)
            logp = nx.log_softmax_array(logits.data.astype(np.float64), axis=-1)[:, emit]
            logp_tau = tempered_log_distribution(logits.data.astype(np.float64), config.temperature)[:, emit]
            model_acc = np.array([h.model_logprob for h in live])[:, None] + logp
            search_acc = np.array([h.search_score for h in live])[:, None] + logp_tau
            lm_acc = np.zeros_like(model_acc)
            lm_states = None
            if step_lm:
                lm_states = [[None] * len(emit) for _ in live]
                for b, h in enumerate(live):
                    for j, tok in enumerate(emit):
                        if tok == EOS:
                            delta, new = cache.finish(h.lm_state), h.lm_state
                        else:
                            new, delta = cache.advance(h.lm_state, int(tok))
                        lm_acc[b, j] = h.lm_score + delta
                        lm_states[b][j] = new
            with np.errstate(invalid="ignore"):
                cost = -(search_acc + gamma * lm_acc) if gamma > 0 else -search_acc
            cost = np.where(np.isnan(cost), np.inf, cost)
            flat = np.argsort(cost, axis=None, kind="stable")[:config.beam]
            new_live = []
            for f in flat:
                b, j = divmod(int(f), len(emit))
                if not np.isfinite(cost[b, j]):
                    break
                tok = int(emit[j])
                hyp = Hypothesis(live[b].tokens + (tok,), float(model_acc[b, j]), float(lm_acc[b, j]),
                                 float(search_acc[b, j]), b, lm_states[b][j] if lm_states else None)
                if tok == EOS:
                    hyp.completed = True
                    completed.append(hyp)
                else:
                    new_live.append(hyp)
            completed.sort(key=lambda h: _search_cost(h, gamma))
            del completed[config.beam:]
            live = new_live
            if not live:
                break
            if len(completed) >= config.beam and \
                    _search_cost(live[0], gamma) > _search_cost(completed[-1], gamma):
                break
    pool, finished = (completed, True) if completed else (live, False)
    return _finalize(pool, finished, config, lm, gamma)


def _search_cost(h: Hypothesis, gamma: float) -> float:
    return -(h.search_score + gamma * h.lm_score) if gamma > 0 else -h.search_score


def _finalize(pool, finished, config, lm, gamma) -> list:
    results = []
    for h in pool:
        tokens = [t for t in h.tokens if t != EOS]
        lm_score = h.lm_score
        if lm is not None and config.lm_mode == "rescore" and gamma > 0:
            lm_score = lm.score(tokens, terminal=finished)
        logp = h.model_logprob
        if config.temper_scores:
            logp = h.search_score
        if gamma > 0:
            cost = -(logp + gamma * lm_score) if np.isfinite(lm_score) else np.inf
        else:
            cost = -logp
        results.append(DecodeResult(tokens, h.model_logprob, float(cost), finished, lm_score))
    results.sort(key=lambda r: r.fused_cost)
    return results
