"""Character vocabulary with the three reserved ids."""

from __future__ import annotations

from pathlib import Path

from .errors import InputError, VocabularyError

UNK, SOS, EOS = 0, 1, 2
RESERVED = ("<unk>", "<sos>", "<eos>")


class Vocabulary:
    """Maps characters to ids; ids 0-2 are ``<unk>``, ``<sos>``, ``<eos>``."""

    def __init__(self, chars):
        chars = list(chars)
        if len(set(chars)) != len(chars):
            raise InputError("duplicate characters in vocabulary")
        for c in chars:
            if c in RESERVED:
                raise InputError(f"{c!r} is reserved")
        self.tokens = list(RESERVED) + chars
        self._index = {t: i for i, t in enumerate(self.tokens)}

    def __len__(self):
        return len(self.tokens)

    def __contains__(self, token):
        return token in self._index

    @property
    def chars(self) -> list:
        return self.tokens[len(RESERVED):]

    def id(self, token: str) -> int:
        return self._index.get(token, UNK)

    def encode(self, text) -> list:
        """Characters of ``text`` (whitespace ignored) to ids; unknown -> ``<unk>``."""
        return [self.id(c) for c in text if not c.isspace()]

    def decode(self, ids, strip_special: bool = True) -> str:
        out = []
        for i in ids:
            i = int(i)
            if not 0 <= i < len(self.tokens):
                raise VocabularyError(i, len(self.tokens))
            if strip_special and i in (SOS, EOS):
                continue
            out.append(self.tokens[i])
        return "".join(out)

    def save(self, path) -> None:
        Path(path).write_text("".join(t + "\n" for t in self.tokens), encoding="utf-8")

    @classmethod
    def load(cls, path) -> "Vocabulary":
        lines = Path(path).read_text(encoding="utf-8").splitlines()
        if tuple(lines[:3]) != RESERVED:
            raise InputError(f"{path}: vocabulary must start with {', '.join(RESERVED)}")
        return cls(lines[3:])
