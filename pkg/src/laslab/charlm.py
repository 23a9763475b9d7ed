"""Character-level LM scores from a spelling lexicon and a word n-gram.

The scorer gives a character string the best (max over segmentations)
word-sequence log-probability, i.e. Viterbi semantics of composing the
character-to-word lexicon with the word grammar and determinizing the result.
An unfinished last word is charged its best completion, so prefix scores are
admissible upper bounds on every continuation.

Realized as a product of a spelling trie with LM histories; no general FST
machinery is involved.
"""

from __future__ import annotations

import math
from collections import Counter, defaultdict
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import InputError, VocabularyError

BOS = "<s>"
EOS_WORD = "</s>"
UNK_WORD = "<unk>"
_LN10 = math.log(10.0)


# -- word n-gram ----------------------------------------------------------------------------
class WordNgram:
    """Interpolated Witten-Bell n-gram over words (natural-log probabilities).

    The predicted vocabulary is every training word plus ``</s>`` and
    ``<unk>``; ``<s>`` only ever appears as context.
    """

    def __init__(self, order: int = 3):
        self.order = order
        self.counts = [Counter() for _ in range(order + 1)]  # counts[k][ngram of length k]
        self.context_total = defaultdict(int)  # history -> sum of continuation counts
        self.context_types = defaultdict(int)  # history -> distinct continuations
        self.vocab: list = []
        self._vocab_set: set = set()
        self._cache: dict = {}

    @property
    def vocab_size(self) -> int:
        return len(self.vocab)

    def map_word(self, w: str) -> str:
        return w if w in self._vocab_set else UNK_WORD

    def prob(self, word: str, history=()) -> float:
        word = self.map_word(word) if word != EOS_WORD else word
        history = tuple(history)[-(self.order - 1):] if self.order > 1 else ()
        history = tuple(h if h == BOS else self.map_word(h) for h in history)
        key = (word, history)
        p = self._cache.get(key)
        if p is None:
            p = self._cache[key] = self._prob(word, history)
        return p

    def _prob(self, word: str, history: tuple) -> float:
        if not history:
            n = self.context_total[()]
            t = self.context_types[()]
            return (self.counts[1][(word,)] + t / self.vocab_size) / (n + t)
        lower = self._prob(word, history[1:])
        total = self.context_total[history]
        if total == 0:
            return lower
        types = self.context_types[history]
        return (self.counts[len(history) + 1][history + (word,)] + types * lower) / (total + types)

    def logprob(self, word: str, history=()) -> float:
        return math.log(self.prob(word, history))


def train_ngram(transcripts, order: int = 3) -> WordNgram:
    """Count-based Witten-Bell model from word sequences."""
    sents = [list(s.split()) if isinstance(s, str) else list(s) for s in transcripts]
    if not sents:
        raise InputError("cannot train an n-gram on an empty corpus")
    if order < 1:
        raise InputError("order must be >= 1")
    lm = WordNgram(order)
    words = set()
    for s in sents:
        toks = [BOS] + s + [EOS_WORD]
        words.update(s)
        for i in range(1, len(toks)):
            for k in range(1, order + 1):
                if i - k + 1 < 0:
                    break
                gram = tuple(toks[i - k + 1:i + 1])
                lm.counts[k][gram] += 1
    for k in range(1, order + 1):
        for gram, c in lm.counts[k].items():
            hist = gram[:-1]
            lm.context_total[hist] += c
            lm.context_types[hist] += 1
    lm.vocab = sorted(words - {UNK_WORD}) + [EOS_WORD, UNK_WORD]
    lm._vocab_set = set(lm.vocab)
    return lm


# -- ARPA exchange format ----------------------------------------------------------------------
def _log10(p: float) -> float:
    return math.log10(p) if p > 0 else -99.0


def write_arpa(lm: WordNgram, path) -> None:
    """Backoff-form ARPA file that reproduces the interpolated probabilities exactly."""
    order = lm.order
    grams = {1: [(w,) for w in lm.vocab] + [(BOS,)]}
    for k in range(2, order + 1):
        grams[k] = sorted(lm.counts[k])
    histories_needed = {g for k in range(1, order) for g in grams[k]}
    lines = ["", "\\data\\"]
    for k in range(1, order + 1):
        lines.append(f"ngram {k}={len(grams[k])}")
    for k in range(1, order + 1):
        lines += ["", f"\\{k}-grams:"]
        for g in grams[k]:
            lp = -99.0 if g == (BOS,) else _log10(lm.prob(g[-1], g[:-1]))
            row = f"{lp!r}\t{' '.join(g)}"
            if k < order and g in histories_needed:
                bow = _backoff_weight(lm, g)
                if bow is not None:
                    row += f"\t{_log10(bow)!r}"
            lines.append(row)
    lines += ["", "\\end\\", ""]
    Path(path).write_text("\n".join(lines), encoding="utf-8")


def _backoff_weight(lm: WordNgram, hist: tuple):
    if lm.context_total[hist] == 0:
        return None
    seen = [g[-1] for g in lm.counts[len(hist) + 1] if g[:-1] == hist]
    num = 1.0 - sum(lm.prob(w, hist) for w in seen)
    den = 1.0 - sum(lm.prob(w, hist[1:]) for w in seen)
    return num / den


class ArpaLm:
    """Backoff n-gram read from an ARPA file (natural-log interface)."""

    def __init__(self, probs: dict, backoffs: dict, order: int):
        self.probs = probs  # ngram tuple -> log10 p
        self.backoffs = backoffs  # ngram tuple -> log10 bow
        self.order = order
        self.vocab = [g[0] for g in probs if len(g) == 1 and g[0] != BOS]
        self._vocab_set = set(self.vocab)

    def map_word(self, w: str) -> str:
        return w if w in self._vocab_set else UNK_WORD

    def _log10prob(self, word: str, history: tuple) -> float:
        gram = history + (word,)
        if gram in self.probs:
            return self.probs[gram]
        if not history:
            return -99.0
        return self.backoffs.get(history, 0.0) + self._log10prob(word, history[1:])

    def logprob(self, word: str, history=()) -> float:
        word = self.map_word(word) if word != EOS_WORD else word
        history = tuple(history)[-(self.order - 1):] if self.order > 1 else ()
        history = tuple(h if h == BOS else self.map_word(h) for h in history)
        return self._log10prob(word, history) * _LN10

    def prob(self, word: str, history=()) -> float:
        return math.exp(self.logprob(word, history))


def read_arpa(path) -> ArpaLm:
    probs, backoffs, counts = {}, {}, {}
    section = None
    for lineno, raw in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        line = raw.strip()
        if not line:
            continue
        if line == "\\data\\":
            section = 0
            continue
        if line == "\\end\\":
            break
        if line.startswith("\\") and line.endswith("-grams:"):
            section = int(line[1:line.index("-")])
            continue
        if section == 0:
            if line.startswith("ngram "):
                k, v = line[6:].split("=")
                counts[int(k)] = int(v)
            continue
        if not section:
            raise InputError(f"{path}:{lineno}: content outside any section")
        parts = line.split()
        if len(parts) not in (section + 1, section + 2):
            raise InputError(f"{path}:{lineno}: malformed {section}-gram line")
        gram = tuple(parts[1:section + 1])
        probs[gram] = float(parts[0])
        if len(parts) == section + 2:
            backoffs[gram] = float(parts[-1])
    if not counts:
        raise InputError(f"{path}: missing \\data\\ header")
    for k, n in counts.items():
        found = sum(1 for g in probs if len(g) == k)
        if found != n:
            raise InputError(f"{path}: header promises {n} {k}-grams, found {found}")
    return ArpaLm(probs, backoffs, max(counts))


# -- lexicon ---------------------------------------------------------------------------------------
class Lexicon(dict):
    """word -> tuple of character symbols."""

    def __init__(self, entries=()):
        super().__init__()
        for word, spelling in dict(entries).items():
            spelling = tuple(spelling)
            if not spelling:
                raise InputError(f"word {word!r} has an empty spelling")
            self[word] = spelling

    def characters(self) -> set:
        return {c for s in self.values() for c in s}


# -- character scorer --------------------------------------------------------------------------------
class _Node:
    __slots__ = ("children", "words", "subtree")

    def __init__(self):
        self.children: dict = {}
        self.words: list = []
        self.subtree: list = []


@dataclass(frozen=True)
class CharState:
    """Hypothesis-set of (trie node, word history) -> best complete-word score."""

    entries: tuple  # sorted ((node, history), acc)

    @property
    def dead(self) -> bool:
        return not self.entries


class CharScorer:
    """Scores character sequences against ``lexicon`` and the word model ``lm``.

    ``alphabet`` lists the valid character symbols (defaults to those in the
    lexicon).  Alphabet characters that no lexicon word uses are read as
    one-character ``<unk>`` words charged ``unk_penalty`` on top of the LM.
    """

    def __init__(self, lexicon, lm, alphabet=None, unk_penalty: float = -10.0):
        self.lexicon = lexicon if isinstance(lexicon, Lexicon) else Lexicon(lexicon)
        self.lm = lm
        self.order = getattr(lm, "order", 3)
        covered = self.lexicon.characters()
        self.alphabet = frozenset(alphabet) if alphabet is not None else frozenset(covered)
        missing = covered - self.alphabet
        if missing:
            raise VocabularyError(sorted(missing, key=str)[0])
        self.uncovered = self.alphabet - covered
        self.unk_penalty = unk_penalty
        self.nodes = [_Node()]
        for word in sorted(self.lexicon):
            node = 0
            for ch in self.lexicon[word]:
                nxt = self.nodes[node].children.get(ch)
                if nxt is None:
                    nxt = len(self.nodes)
                    self.nodes.append(_Node())
                    self.nodes[node].children[ch] = nxt
                node = nxt
                self.nodes[node].subtree.append(word)
            self.nodes[node].words.append(word)
        self._lp_cache: dict = {}
        self._look_cache: dict = {}
        self._score_cache: dict = {}
        self._initial = CharState(((( 0, self._start_history()), 0.0),))

    def _start_history(self) -> tuple:
        return (BOS,) if self.order > 1 else ()

    def _push(self, history: tuple, word: str) -> tuple:
        if self.order <= 1:
            return ()
        return (history + (word,))[-(self.order - 1):]

    def _lp(self, word: str, history: tuple) -> float:
        key = (word, history)
        v = self._lp_cache.get(key)
        if v is None:
            v = self._lp_cache[key] = self.lm.logprob(word, history)
        return v

    def lookahead(self, node: int, history: tuple) -> float:
        """Best LM score among words whose spelling passes through ``node``."""
        if node == 0:
            return 0.0
        key = (node, history)
        v = self._look_cache.get(key)
        if v is None:
            v = self._look_cache[key] = max(self._lp(w, history) for w in self.nodes[node].subtree)
        return v

    # -- incremental API --
    def initial_state(self) -> CharState:
        return self._initial

    def state_score(self, state: CharState) -> float:
        v = self._score_cache.get(state)
        if v is None:
            v = max((acc + self.lookahead(node, hist) for (node, hist), acc in state.entries),
                    default=-math.inf)
            self._score_cache[state] = v
        return v

    def terminal_score(self, state: CharState) -> float:
        return max((acc + self._lp(EOS_WORD, hist) for (node, hist), acc in state.entries if node == 0),
                   default=-math.inf)

    def step(self, state: CharState, ch) -> CharState:
        if ch not in self.alphabet:
            raise VocabularyError(ch)
        best: dict = {}

        def offer(key, acc):
            if acc > best.get(key, -math.inf):
                best[key] = acc

        for (node, hist), acc in state.entries:
            child = self.nodes[node].children.get(ch)
            if child is not None:
                offer((child, hist), acc)
                for w in self.nodes[child].words:
                    offer((0, self._push(hist, w)), acc + self._lp(w, hist))
            if node == 0 and ch in self.uncovered:
                offer((0, self._push(hist, UNK_WORD)), acc + self._lp(UNK_WORD, hist) + self.unk_penalty)
        entries = tuple(sorted(((k, v) for k, v in best.items() if v > -math.inf), key=_entry_key))
        return CharState(entries)

    def advance(self, state: CharState, ch) -> tuple:
        """Consume one character; returns ``(new_state, delta_logprob)``."""
        new = self.step(state, ch)
        return new, _delta(self.state_score(state), self.state_score(new))

    def final_delta(self, state: CharState) -> float:
        """Extra log-probability for ending the sentence here."""
        return _delta(self.state_score(state), self.terminal_score(state))

    def score(self, chars, terminal: bool = False) -> float:
        state = self._initial
        for ch in chars:
            state = self.step(state, ch)
        return self.terminal_score(state) if terminal else self.state_score(state)


def _entry_key(item):
    (node, hist), _ = item
    return node, hist


def _delta(old: float, new: float) -> float:
    if old == -math.inf:
        return 0.0
    return new - old


def build_char_scorer(lexicon, lm, alphabet=None, unk_penalty: float = -10.0) -> CharScorer:
    return CharScorer(lexicon, lm, alphabet, unk_penalty)


def score_chars(scorer: CharScorer, chars, terminal: bool = False) -> float:
    return scorer.score(chars, terminal)


def incremental_score(scorer: CharScorer, state: CharState, next_char) -> tuple:
    return scorer.advance(state, next_char)


def recombine(items):
    """Collapse ``(state, score, payload)`` triples with equal states, keeping the best score."""
    best: dict = {}
    for state, score, payload in items:
        if state not in best or score > best[state][0]:
            best[state] = (score, payload)
    return [(s, v[0], v[1]) for s, v in best.items()]


def load_char_scorer(lexicon_path, arpa_path, vocab, unk_penalty: float = -10.0) -> CharScorer:
    """Scorer over vocabulary ids from a ``word<TAB>c h a r s`` lexicon and an ARPA LM."""
    from .harness.formats import read_lexicon
    from .vocab import RESERVED

    raw = read_lexicon(lexicon_path)
    lexicon = Lexicon({w: tuple(vocab.id(c) for c in s) for w, s in raw.items()})
    alphabet = range(len(RESERVED), len(vocab))
    return CharScorer(lexicon, read_arpa(arpa_path), alphabet, unk_penalty)


def lexicon_from_transcripts(transcripts) -> Lexicon:
    """Every whitespace-separated token becomes a word spelled by its characters."""
    return Lexicon({w: tuple(w) for t in transcripts for w in t.split()})


def word_sequences(transcripts) -> list:
    return [t.split() for t in transcripts]


def ngram_sum(lm, history=()) -> float:
    """Total probability mass over the predicted vocabulary for one history."""
    return float(np.sum([lm.prob(w, history) for w in lm.vocab]))
