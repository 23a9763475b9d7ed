"""Synthetic data, file formats, configs and the command line."""

from .formats import read_features, read_manifest, write_features, write_manifest
from .synthetic import SyntheticTask, SyntheticTaskSpec, Utterance, generate, load_split, normalize_features

__all__ = [
    "SyntheticTask", "SyntheticTaskSpec", "Utterance", "generate", "load_split",
    "normalize_features", "read_features", "read_manifest", "write_features", "write_manifest",
]
