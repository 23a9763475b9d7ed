"""
Scoring character strings with a word language model
====================================================

Beam search extends hypotheses one character at a time, but the language
model knows words.  ``CharScorer`` bridges the two: a character prefix
scores as the best segmentation into lexicon words, with the last partial
word bounded by its best completion.
"""
# %%
from laslab.charlm import CharScorer, incremental_score, score_chars, train_ngram

corpus = ["the cat sat", "the cat ran", "a cat sat", "the hat"]
lm = train_ngram(corpus, order=3)
lexicon = {w: tuple(w) for line in corpus for w in line.split()}
scorer = CharScorer(lexicon, lm)

# %%
# Whole strings
# -------------
# Spaces are not characters here: the segmentation is recovered from the
# lexicon.  An impossible spelling scores minus infinity.
for text in ("thecatsat", "thecatran", "acatsat", "thehat", "thecat", "tacs"):
    print(f"{text:12s} prefix {score_chars(scorer, text):9.4f}   "
          f"complete {score_chars(scorer, text, terminal=True):9.4f}")

# %%
# One character at a time
# -----------------------
# The decoder adds the per-character deltas to a hypothesis score; their
# running sum always equals the prefix score above.
state, total = scorer.initial_state(), 0.0
for ch in "thecat":
    state, delta = incremental_score(scorer, state, ch)
    total += delta
    print(f"+{ch}: delta {delta:8.4f}  running {total:8.4f}")
print("end of sentence:", scorer.final_delta(state))
