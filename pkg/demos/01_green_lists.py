"""Keyed green lists: the same (context, key) always gives the same half of the
vocabulary, and different contexts give roughly independent halves."""
import numpy as np

from lrdwm import Vocabulary, WatermarkKey, green_mask, green_table

vocab = Vocabulary(32)
key = WatermarkKey(0x9E3779B97F4A7C15)

m = green_mask(5, key, vocab)
print("context 5:", m, "hex", m.hex())
print("same again equal?", m == green_mask(5, key, vocab))

# overlap between green lists of different contexts sits near gamma^2 * V
table = green_table(np.arange(vocab.size), key, vocab)
overlap = table[:, None, :] & table[None, :, :]
off = ~np.eye(vocab.size, dtype=bool)
print("mean pairwise overlap %.2f (expect %.1f)" % (overlap.sum(-1)[off].mean(), 0.25 * vocab.size))
print("row sums all", np.unique(table.sum(1)))
