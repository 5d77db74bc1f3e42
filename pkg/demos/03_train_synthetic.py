"""
Training on the synthetic two-aspect task
=========================================

Each sentence mentions two aspects, each preceded by its own sentiment word
with a different polarity, e.g. "friendly waiter the unhelpful staff".  The
label depends on which aspect is asked about, so a bag of words cannot solve
it; the model has to link the aspect segment to the right sentence word.

A full run (500 training sentences, 50 epochs) takes about two minutes on
one core.  Pass a smaller epoch count as the first argument for a quick look.
"""

import sys

import numpy as np

from a3sn import TrainConfig, synth_dataset
from a3sn.encoding import Example, encode
from a3sn.model import forward
from a3sn.training import evaluate, train

epochs = int(sys.argv[1]) if len(sys.argv) > 1 else 50

data = synth_dataset(700, seed=7, vocab_size=50)
train_set, test_set = data[:500], data[500:]
for ex in train_set[:4]:
    print(" ".join(ex.sentence), "|", ex.aspect[0], "->", ex.label)

cfg = TrainConfig(epochs=epochs)
result = train(train_set, cfg)
for rec in result.history:
    if rec.split == "val" and (rec.epoch % 5 == 0 or rec.epoch == 1):
        print(f"epoch {rec.epoch:3d}  val acc {rec.accuracy:.3f}  loss {rec.loss:.3f}")
print("best epoch", result.best_epoch)

m = evaluate(test_set, result.params, cfg, result.vocab)
print(f"test accuracy {m.accuracy:.3f}, macro-F1 {m.macro_f1:.3f}")
print("confusion (rows gold):\n", m.confusion)

# one sentence, two questions
sentence = "friendly waiter and unhelpful staff"
for aspect in ("waiter", "staff"):
    enc = encode(Example.from_text(sentence, aspect, "neutral"), result.vocab, cfg.max_len, pad=False)
    pred = forward(enc, result.params, cfg)
    print(f"{sentence!r} / {aspect}: {pred.label}  {np.round(pred.probs, 3)}")
