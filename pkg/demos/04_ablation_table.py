"""
Ablation table on the synthetic task
====================================

Trains the full model and the three reduced variants with the same seed and
data split, then prints a Markdown table.  The reduced variants:

* without original attention: both fusion paths read the amplified attention
* without amplified attention: both paths read the original attention
* without gated fusion: the two read-outs are concatenated and merged by an
  affine layer

The task is easy, so all four variants usually land close together; the
ordering between them is not meaningful at this scale.
"""

import sys

from a3sn import TrainConfig, synth_dataset
from a3sn.training import ablation_markdown, run_ablations

epochs = int(sys.argv[1]) if len(sys.argv) > 1 else 20

data = synth_dataset(700, seed=7, vocab_size=50)
rows = run_ablations(data[:500], TrainConfig(epochs=epochs), test_set=data[500:])
print(ablation_markdown(rows))
for row in rows:
    print(f"{row.mode.value:<16} best epoch {row.best_epoch}")
