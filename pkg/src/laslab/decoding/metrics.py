"""Character and sentence error rates."""

from __future__ import annotations

from ..errors import InputError
from ..vocab import EOS, SOS

SPECIAL = frozenset({SOS, EOS, "<sos>", "<eos>"})


def strip_special(seq, special=SPECIAL) -> list:
    return [t for t in seq if t not in special]


def edit_distance(a, b) -> int:
    """Levenshtein distance with unit substitution/insertion/deletion costs."""
    a, b = list(a), list(b)
    prev = list(range(len(b) + 1))
    for i, x in enumerate(a, 1):
        cur = [i] + [0] * len(b)
        for j, y in enumerate(b, 1):
            cur[j] = min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (x != y))
        prev = cur
    return prev[-1]


def cer(ref, hyp, special=SPECIAL) -> float:
    ref, hyp = strip_special(ref, special), strip_special(hyp, special)
    if not ref:
        raise InputError("reference is empty")
    return edit_distance(ref, hyp) / len(ref)


def corpus_cer(pairs, special=SPECIAL) -> float:
    """Total edits over total reference length."""
    pairs = list(pairs)
    if not pairs:
        raise InputError("no sentence pairs")
    edits = total = 0
    for ref, hyp in pairs:
        ref, hyp = strip_special(ref, special), strip_special(hyp, special)
        edits += edit_distance(ref, hyp)
        total += len(ref)
    if total == 0:
        raise InputError("all references are empty")
    return edits / total


def ser(pairs, special=SPECIAL) -> float:
    """Fraction of pairs whose hypothesis is not an exact match."""
    pairs = list(pairs)
    if not pairs:
        raise InputError("no sentence pairs")
    wrong = sum(strip_special(r, special) != strip_special(h, special) for r, h in pairs)
    return wrong / len(pairs)
