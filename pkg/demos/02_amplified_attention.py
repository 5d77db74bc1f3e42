"""
Amplified aspect-sentence attention on one sentence
===================================================

The amplify matrix doubles attention weights between sentence tokens and
aspect tokens.  The weights are not renormalised, so each row of the
amplified score matrix sums to 1 plus that row's cross-segment mass.
"""

import numpy as np

from a3sn import TrainConfig
from a3sn.encoding import Example, build_vocab, encode, tokens_of
from a3sn.model import ModelParams, forward

np.set_printoptions(precision=3, suppress=True, linewidth=120)

# four sentence words, a two-word aspect: [CLS] w1 a1 a2 w4 [SEP] a1 a2 [SEP]
ex = Example(("w1", "a1", "a2", "w4"), ("a1", "a2"), "positive")
vocab = build_vocab([ex])
enc = encode(ex, vocab, max_len=9)
print(tokens_of(enc, vocab))
print(enc.amplify.astype(int))

cfg = TrainConfig(d_model=16, heads=4, d_ff=32, max_len=9)
params = ModelParams.init(len(vocab), cfg, np.random.default_rng(3))
pred = forward(enc, params, cfg)
trace = pred.traces[0]

so, sa = trace.score_ori[0], trace.score_amp[0]
cross = enc.amplify == 2
print("original scores (head 0)\n", so)
print("row sums, original :", so.sum(axis=1))
print("row sums, amplified:", sa.sum(axis=1))
print(f"cross-segment mass: original {so[cross].sum():.6f}, amplified {sa[cross].sum():.6f}")

# gates are sigmoid outputs of a width-3 convolution over each head read-out
print("gate_o range", trace.gate_o[0].min(), trace.gate_o[0].max())
print("untrained prediction:", pred.label, pred.probs)
