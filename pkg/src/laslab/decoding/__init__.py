from .metrics import cer, corpus_cer, edit_distance, ser, strip_special
from .search import (DecodeConfig, DecodeResult, Hypothesis, beam_search, greedy_decode,
                     greedy_decode_batch, tempered_distribution)

__all__ = [
    "DecodeConfig", "DecodeResult", "Hypothesis", "beam_search", "cer", "corpus_cer",
    "edit_distance", "greedy_decode", "greedy_decode_batch", "ser", "strip_special",
    "tempered_distribution",
]
