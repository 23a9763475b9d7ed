"""
Reverse-mode gradients on numpy arrays
======================================

Everything in ``laslab`` trains through a small tape-based autodiff
engine.  This script builds a tiny expression, back-propagates through it,
and compares the result with central finite differences.
"""
# %%
# A scalar function of two matrices
# ---------------------------------
# ``Tensor`` wraps an ndarray; operations in ``laslab.numerics`` record
# how to send gradients back to their inputs.
import numpy as np

from laslab import numerics as nx
from laslab.numerics import Tensor, grad_check

rng = np.random.default_rng(0)
W = Tensor(rng.normal(size=(3, 4)), requires_grad=True)
x = Tensor(rng.normal(size=(4, 1)), requires_grad=True)

y = nx.log_softmax(nx.tanh(nx.matmul(W, x)), axis=0)
loss = nx.neg(nx.sum(y[1]))
loss.backward()
print("loss         ", float(loss.data))
print("dloss/dx     ", np.round(x.grad.ravel(), 4))

# %%
# Checking against finite differences
# -----------------------------------
# ``grad_check`` re-runs the closure with each parameter element nudged by
# +-h and reports the largest relative error between the two gradients.


def f():
    return nx.neg(nx.sum(nx.log_softmax(nx.tanh(nx.matmul(W, x)), axis=0)[1]))


print("max relative error:", grad_check(f, [W, x]))

# %%
# A whole LSTM layer
# ------------------
# The same check works for composite layers.  Here a single LSTM runs over a
# batch of two length-5 sequences and a random projection reduces the
# outputs to a scalar.
from laslab.layers import LstmCell, run_lstm  # noqa: E402

cell = LstmCell.create(input_dim=4, hidden=3, rng=rng)
seq = Tensor(rng.normal(size=(2, 5, 4)), requires_grad=True)
probe = Tensor(rng.normal(size=(2, 5, 3)))
err = grad_check(lambda: nx.sum(nx.mul(run_lstm(cell, seq), probe)), [cell.W_x, cell.W_h, cell.b, seq])
print("LSTM max relative error:", err)
