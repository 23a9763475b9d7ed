"""
Training a small listener/speller and decoding with a language model
====================================================================

A complete run at reduced size (about two minutes on one core): generate a
synthetic corpus, train, then compare greedy decoding with beam search with
and without the word language model.
"""
# %%
import tempfile
import time
from pathlib import Path

from laslab.charlm import CharScorer, lexicon_from_transcripts, train_ngram
from laslab.decoding import DecodeConfig, beam_search, corpus_cer, greedy_decode_batch, ser
from laslab.harness.formats import read_manifest
from laslab.harness.synthetic import SyntheticTaskSpec, generate, load_split
from laslab.las import LasConfig, LasModel
from laslab.training import TrainConfig, train_loop
from laslab.vocab import Vocabulary

root = Path(tempfile.mkdtemp(prefix="laslab-demo-"))
spec = SyntheticTaskSpec(n_valid=100, n_test=60)
generate(spec, root)
vocab = Vocabulary.load(root / "vocab.txt")
train, valid, test = (load_split(root, s, vocab) for s in ("train", "valid", "test"))
print(f"{len(train)} training utterances, e.g. {train[0].text!r} with {len(train[0].features)} frames")

# %%
# Training
# --------
# Each line: epoch, train and validation loss per character, learning
# rate, seconds.
config = LasConfig(input_dim=spec.dim, vocab_size=len(vocab))
model = LasModel.create(config, seed=0)
start = time.perf_counter()
result = train_loop(model, train, valid, TrainConfig(max_epochs=30),
                    progress=lambda m: print(m.line()))
print(f"best validation loss {result.best_valid:.3f} at epoch {result.best_epoch}, "
      f"{time.perf_counter() - start:.0f}s")


# %%
# Decoding
# --------
def score(hyps):
    pairs = [(u.text, h) for u, h in zip(test, hyps)]
    return f"CER {100 * corpus_cer(pairs):5.2f}%  SER {100 * ser(pairs):5.1f}%"


greedy = [vocab.decode(h) for h in greedy_decode_batch(model, [u.features for u in test])]
print("greedy          ", score(greedy))

# The LM needs word boundaries, which the manifest transcripts keep
# (``Utterance.text`` holds the characters only).
transcripts = [e.transcript for e in read_manifest(root / "train" / "manifest.tsv")]
lexicon = {w: tuple(vocab.id(c) for c in w) for w in lexicon_from_transcripts(transcripts)}
lm = CharScorer(lexicon, train_ngram(transcripts), alphabet=range(3, len(vocab)))
for gamma in (0.0, 0.1, 0.5):
    cfg = DecodeConfig(beam=8, temperature=2.0, lm_weight=gamma)
    hyps = [vocab.decode(beam_search(model, u.features, cfg, lm if gamma else None)[0].tokens) for u in test]
    print(f"beam 8, gamma {gamma:.1f}", score(hyps))

for u, h in list(zip(test, greedy))[:5]:
    print(f"  ref {u.text:24s} hyp {h}")
