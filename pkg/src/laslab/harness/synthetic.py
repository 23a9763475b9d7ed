"""Synthetic speech-like corpus and per-speaker feature normalization.

Each character owns a fixed emission template; an utterance is a sequence of
lexicon words drawn from a sparse word Markov chain, and every character emits
a short run of ``template + noise`` frames.  Speakers apply their own affine
distortion, which per-speaker mean/variance normalization removes.
"""

from __future__ import annotations

import json
import string
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from ..errors import ConfigError, InputError, NormalizationError
from ..vocab import Vocabulary
from .formats import (ManifestEntry, atomic_write_text, read_features, read_lexicon, read_manifest,
                      read_table, write_features, write_lexicon, write_manifest, write_table)

ALPHABET = string.ascii_lowercase + string.ascii_uppercase + string.digits


@dataclass(frozen=True)
class SyntheticTaskSpec:
    n_chars: int = 20
    dim: int = 8
    frames_mean: int = 3
    frames_jitter: int = 1
    noise_std: float = 0.3
    min_len: int = 2
    max_len: int = 12
    n_words: int = 60
    max_word_len: int = 3
    min_template_distance: float = 1.5
    speaker_block: int = 50
    speaker_offset_std: float = 0.5
    speaker_scale_jitter: float = 0.2
    n_train: int = 2000
    n_valid: int = 200
    n_test: int = 200
    seed: int = 0

    def __post_init__(self):
        if not 1 <= self.n_chars <= len(ALPHABET):
            raise ConfigError(f"n_chars must be in 1..{len(ALPHABET)}")
        if self.frames_mean - self.frames_jitter < 1:
            raise ConfigError("frames_mean - frames_jitter must be at least 1")
        if not 1 <= self.min_len <= self.max_len:
            raise ConfigError("need 1 <= min_len <= max_len")
        if self.noise_std < 0 or self.speaker_offset_std < 0 or self.speaker_scale_jitter < 0:
            raise ConfigError("noise and speaker spreads must be non-negative")


@dataclass
class Utterance:
    uid: str
    features: np.ndarray  # [T, D]
    labels: list
    text: str
    speaker: str = ""


class SyntheticTask:
    """The fixed ingredients of a task (templates, lexicon, word chain) for one seed."""

    def __init__(self, spec: SyntheticTaskSpec):
        self.spec = spec
        rng = np.random.default_rng([spec.seed, 0])
        self.chars = list(ALPHABET[:spec.n_chars])
        self.templates = self._templates(rng)
        self.lexicon = self._lexicon(rng)
        self.words = list(self.lexicon)
        n = len(self.words)
        self.start = rng.dirichlet(np.ones(n))
        trans = np.full((n, n), 0.1 / n)
        for i in range(n):
            nxt = rng.choice(n, size=min(5, n), replace=False)
            trans[i, nxt] += 0.9 * rng.dirichlet(np.ones(len(nxt)))
        self.transitions = trans / trans.sum(axis=1, keepdims=True)

    def _templates(self, rng) -> np.ndarray:
        s = self.spec
        t = rng.normal(size=(s.n_chars, s.dim))
        for _ in range(10000):
            d = np.linalg.norm(t[:, None] - t[None], axis=-1) + np.eye(s.n_chars) * 1e9
            i, _ = np.unravel_index(np.argmin(d), d.shape)
            if d.min() >= s.min_template_distance:
                return t
            t[i] = rng.normal(size=s.dim)
        raise ConfigError("cannot place templates with the requested minimum distance")

    def _lexicon(self, rng) -> dict:
        s = self.spec
        spellings = [(c,) for c in self.chars]  # every character is a word on its own
        seen = set(spellings)
        target = max(s.n_words, len(spellings))
        attempts = 0
        while len(spellings) < target and attempts < 100000:
            attempts += 1
            k = int(rng.integers(2, s.max_word_len + 1)) if s.max_word_len > 1 else 1
            w = tuple(self.chars[i] for i in rng.integers(0, s.n_chars, size=k))
            if w not in seen:
                seen.add(w)
                spellings.append(w)
        return {f"w{i:03d}": w for i, w in enumerate(spellings)}

    def sample_words(self, rng) -> list:
        s = self.spec
        while True:
            target = int(rng.integers(s.min_len, s.max_len + 1))
            words = [int(rng.choice(len(self.words), p=self.start))]
            length = len(self.lexicon[self.words[words[0]]])
            while length < target:
                words.append(int(rng.choice(len(self.words), p=self.transitions[words[-1]])))
                length += len(self.lexicon[self.words[words[-1]]])
            if s.min_len <= length <= s.max_len:
                return [self.words[w] for w in words]

    def render(self, words, rng, speaker=(0.0, 1.0)) -> np.ndarray:
        s = self.spec
        offset, scale = speaker
        frames = []
        for w in words:
            for ch in self.lexicon[w]:
                k = int(rng.integers(s.frames_mean - s.frames_jitter, s.frames_mean + s.frames_jitter + 1))
                tpl = self.templates[self.chars.index(ch)]
                run = np.repeat(tpl[None], k, axis=0)
                if s.noise_std > 0:
                    run = run + rng.normal(0.0, s.noise_std, size=run.shape)
                frames.append(run)
        return (np.concatenate(frames) * scale + offset).astype(np.float32)

    def spelling(self, words) -> str:
        return "".join("".join(self.lexicon[w]) for w in words)


def generate(spec: SyntheticTaskSpec, out_dir, count: int | None = None) -> dict:
    """Write vocabulary, lexicon and train/valid/test splits under ``out_dir``.

    ``count`` overrides all three split sizes.  Returns a dict of split name to
    manifest path.
    """
    sizes = {"train": spec.n_train, "valid": spec.n_valid, "test": spec.n_test}
    if count is not None:
        if count < 1:
            raise InputError("count must be >= 1")
        sizes = {k: count for k in sizes}
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create output directory {out}: {exc}") from exc
    task = SyntheticTask(spec)
    Vocabulary(task.chars).save(out / "vocab.txt")
    write_lexicon(out / "lexicon.txt", task.lexicon)
    atomic_write_text(out / "task.json", json.dumps(asdict(spec), indent=2, sort_keys=True) + "\n")
    manifests = {}
    for split_no, (split, n) in enumerate(sizes.items()):
        rng = np.random.default_rng([spec.seed, 1, split_no])
        entries, text, spk = [], [], []
        speaker = None
        for i in range(n):
            if i % spec.speaker_block == 0:
                sid = f"{split}-spk{i // spec.speaker_block:03d}"
                offset = rng.normal(0.0, spec.speaker_offset_std, size=spec.dim)
                scale = 1.0 + rng.uniform(-spec.speaker_scale_jitter, spec.speaker_scale_jitter, size=spec.dim)
                speaker = (offset, scale)
            uid = f"{split}-{i:05d}"
            words = task.sample_words(rng)
            feats = task.render(words, rng, speaker)
            path = out / split / "feats" / f"{uid}.lasf"
            write_features(path, feats)
            entries.append(ManifestEntry(uid, path, " ".join("".join(task.lexicon[w]) for w in words)))
            text.append((uid, task.spelling(words)))
            spk.append((uid, sid))
        write_manifest(out / split / "manifest.tsv", entries)
        write_table(out / split / "text", text)
        write_table(out / split / "utt2spk", spk)
        manifests[split] = out / split / "manifest.tsv"
    return manifests


def normalize_features(feats: dict, utt2spk: dict, floor: float = 1e-6) -> dict:
    """Per-speaker, per-dimension mean/variance normalization.

    ``feats`` maps utterance id to ``[T, D]`` frames; the result is float64.
    """
    by_spk: dict = {}
    for uid in feats:
        if uid not in utt2spk:
            raise NormalizationError(f"utterance {uid!r} has no speaker")
        by_spk.setdefault(utt2spk[uid], []).append(uid)
    out = {}
    for spk, uids in by_spk.items():
        stacked = np.concatenate([np.asarray(feats[u], dtype=np.float64) for u in uids])
        if len(stacked) < 2:
            raise NormalizationError(f"speaker {spk!r} has {len(stacked)} frame(s); need at least 2")
        mean = stacked.mean(axis=0)
        std = np.maximum(stacked.std(axis=0), floor)
        for u in uids:
            out[u] = (np.asarray(feats[u], dtype=np.float64) - mean) / std
    return out


def load_split(data_dir, split: str, vocab: Vocabulary | None = None) -> list:
    """Read a split written by :func:`generate`, normalized per speaker."""
    data_dir = Path(data_dir)
    vocab = vocab or Vocabulary.load(data_dir / "vocab.txt")
    manifest = read_manifest(data_dir / split / "manifest.tsv")
    spk_file = data_dir / split / "utt2spk"
    utt2spk = read_table(spk_file) if spk_file.exists() else {e.uid: e.uid for e in manifest}
    raw = {e.uid: read_features(e.path) for e in manifest}
    norm = normalize_features(raw, utt2spk)
    return [Utterance(e.uid, norm[e.uid], vocab.encode(e.transcript), e.transcript.replace(" ", ""),
                      utt2spk[e.uid]) for e in manifest]


def load_lexicon(data_dir) -> dict:
    return read_lexicon(Path(data_dir) / "lexicon.txt")
