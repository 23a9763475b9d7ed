"""On-disk formats: LASF feature files, manifests, text/speaker maps, lexicons."""

from __future__ import annotations

import os
import struct
import tempfile
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..errors import InputError

FEATURE_MAGIC = b"LASF"
FEATURE_VERSION = 1
_HEADER = struct.Struct("<4sIII")


def atomic_write_bytes(path, payload: bytes) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix="." + path.name + ".")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(payload)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_text(path, text: str) -> None:
    atomic_write_bytes(path, text.encode("utf-8"))


def write_features(path, feats) -> None:
    """``[T, D]`` frames as little-endian float32 behind a LASF header."""
    feats = np.asarray(feats)
    if feats.ndim != 2:
        raise InputError(f"features must be [T, D], got shape {feats.shape}")
    T, D = feats.shape
    body = np.ascontiguousarray(feats, dtype="<f4").tobytes()
    atomic_write_bytes(path, _HEADER.pack(FEATURE_MAGIC, FEATURE_VERSION, T, D) + body)


def read_features(path) -> np.ndarray:
    buf = Path(path).read_bytes()
    if len(buf) < _HEADER.size:
        raise InputError(f"{path}: truncated feature header")
    magic, version, T, D = _HEADER.unpack_from(buf)
    if magic != FEATURE_MAGIC:
        raise InputError(f"{path}: bad magic {magic!r}, expected {FEATURE_MAGIC!r}")
    if version != FEATURE_VERSION:
        raise InputError(f"{path}: unsupported feature version {version}")
    expected = _HEADER.size + 4 * T * D
    if len(buf) != expected:
        raise InputError(f"{path}: expected {expected} bytes for {T}x{D} frames, found {len(buf)}")
    return np.frombuffer(buf, dtype="<f4", offset=_HEADER.size).reshape(T, D).astype(np.float32)


@dataclass(frozen=True)
class ManifestEntry:
    uid: str
    path: Path
    transcript: str


class Manifest(list):
    """List of :class:`ManifestEntry` with unique ids."""

    def ids(self) -> list:
        return [e.uid for e in self]

    def by_id(self) -> dict:
        return {e.uid: e for e in self}


def write_manifest(path, entries) -> None:
    path = Path(path)
    lines = []
    for e in entries:
        rel = os.path.relpath(e.path, path.parent)
        lines.append(f"{e.uid}\t{rel}\t{e.transcript}\n")
    atomic_write_text(path, "".join(lines))


def read_manifest(path, check_files: bool = True) -> Manifest:
    path = Path(path)
    out, seen = Manifest(), set()
    for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip():
            continue
        parts = line.split("\t")
        if len(parts) != 3:
            raise InputError(f"{path}:{lineno}: expected 3 tab-separated fields, got {len(parts)}")
        uid, rel, transcript = parts
        if uid in seen:
            raise InputError(f"{path}:{lineno}: duplicate utterance id {uid!r}")
        seen.add(uid)
        feat = (path.parent / rel).resolve()
        if check_files and not feat.exists():
            raise InputError(f"{path}:{lineno}: feature file {feat} does not exist")
        out.append(ManifestEntry(uid, feat, transcript))
    return out


def write_table(path, rows) -> None:
    """Two-column ``key<TAB>value`` file."""
    atomic_write_text(path, "".join(f"{k}\t{v}\n" for k, v in rows))


def read_table(path) -> dict:
    """Read ``key<TAB>value`` lines; extra columns are kept in the value."""
    out = {}
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip() or line.startswith("#"):
            continue
        key, sep, value = line.partition("\t")
        if not sep:
            raise InputError(f"{path}:{lineno}: expected key<TAB>value")
        if key in out:
            raise InputError(f"{path}:{lineno}: duplicate key {key!r}")
        out[key] = value
    return out


def write_lexicon(path, lexicon: dict) -> None:
    """``word<TAB>c h a r s`` lines."""
    atomic_write_text(path, "".join(f"{w}\t{' '.join(chars)}\n" for w, chars in lexicon.items()))


def read_lexicon(path) -> dict:
    out = {}
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip():
            continue
        word, sep, spelling = line.partition("\t")
        chars = tuple(spelling.split())
        if not sep or not chars:
            raise InputError(f"{path}:{lineno}: expected word<TAB>c h a r s")
        out[word] = chars
    return out
