"""
Three attention variants on the same memory
===========================================

The speller reads the encoder output through an attention scorer.  Here we
create one scorer per variant over a random memory and watch how the
alignment evolves over a few steps with the same decoder states.
"""
# %%
import numpy as np

from laslab import numerics as nx
from laslab.attention import AttentionScorer, attend, initial_alignment, make_memory

rng = np.random.default_rng(3)
T, state_dim, mem_dim = 8, 4, 6
h = nx.Tensor(rng.normal(size=(1, T, mem_dim)))
states = [nx.Tensor(rng.normal(size=(1, state_dim))) for _ in range(3)]

# %%
# Content attention normalizes energies with a softmax; location attention
# also convolves the previous alignment; the smoothed variant replaces the
# softmax with an element-wise sigmoid, so its weights are flatter and no
# longer sum to one.
np.set_printoptions(precision=3, suppress=True)
for variant in ("content", "location", "smoothed"):
    scorer = AttentionScorer.create(variant, state_dim, mem_dim, attn_dim=5,
                                    rng=np.random.default_rng(0), filters=2, width=3)
    memory = make_memory(scorer, h)
    alpha = initial_alignment(memory)
    print(f"\n{variant}")
    for s in states:
        out = attend(scorer, s, memory, alpha)
        alpha = out.alpha
        print("  alpha", alpha.data[0], " sum", round(float(alpha.data.sum()), 6))

# %%
# Padding
# -------
# In a batch, frames past each utterance's end get zero weight.
scorer = AttentionScorer.create("content", state_dim, mem_dim, 5, np.random.default_rng(0))
hb = nx.Tensor(rng.normal(size=(2, T, mem_dim)))
memory = make_memory(scorer, hb, lengths=[8, 3])
out = attend(scorer, nx.Tensor(rng.normal(size=(2, state_dim))), memory)
print("\npadded batch alignment\n", out.alpha.data)
