"""Comparison watermarks.

* left-only: the classic green-list bias from the revealed left neighbor;
* dmark-style: when the right neighbor ``u`` is revealed, bias every ``v``
  for which ``u`` would be green after ``v``.  Needs the inverse relation,
  precomputed as a ``|V| x |V|`` bit table.

Both are detected with the one-sided green-fraction z-test over
``(y[t-1], y[t])`` pairs.
"""
from __future__ import annotations

import math
import time
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, InputError, ResourceError, UsageError
from .inject import BiasReport, _revealed_token
from .vocab_hash import Vocabulary, WatermarkKey, fingerprint, green_bits, green_count, green_table

TABLE_CAP = 16384
TABLE_OVERHEAD = 32  # key, sizes, gamma
_CHUNK = 1024


def _check(logits, state, pos, vocab):
    if not 0 <= pos < len(state):
        raise UsageError(f"position {pos} outside sequence of length {len(state)}")
    if state.revealed[pos]:
        raise UsageError(f"position {pos} is already revealed")
    logits = np.asarray(logits, dtype=np.float64)
    if logits.shape != (vocab.size,):
        raise UsageError(f"logits must have shape ({vocab.size},), got {logits.shape}")
    return logits


def inject_left_only(logits, state, pos: int, key: WatermarkKey, delta: float, vocab: Vocabulary,
                     gamma: float = 0.5):
    """``+delta`` on the green set of the revealed left neighbor, if any."""
    logits = _check(logits, state, pos, vocab)
    green_count(vocab, gamma)
    out = logits.copy()
    left = _revealed_token(state, pos - 1, vocab)
    bits = None
    if left is not None:
        bits = green_bits(left, key, vocab, gamma)
        np.add(out, delta, out=out, where=bits)
    return out, BiasReport(left is not None, False, bits, None)


class LeftOnlyInjector:
    def __init__(self, key: WatermarkKey, delta: float, vocab: Vocabulary, gamma: float = 0.5):
        if not (np.isfinite(delta) and delta >= 0):
            raise ConfigError(f"delta must be a finite value >= 0, got {delta}")
        self.key, self.delta, self.vocab, self.gamma = key, float(delta), vocab, gamma

    def __call__(self, logits, state, pos):
        return inject_left_only(logits, state, pos, self.key, self.delta, self.vocab, self.gamma)

    def accounted_bytes(self) -> int:
        return self.vocab.size + 8


@dataclass(frozen=True)
class InverseTable:
    """``row(u)[v]`` is True iff ``u`` is green after context ``v``.

    Rows are bit-packed (little bit order) along ``v``.
    """
    packed: np.ndarray
    vocab_size: int
    gamma: float
    key_fingerprint: str
    build_seconds: float = 0.0

    @property
    def memory_bytes(self) -> int:
        return int(self.packed.nbytes) + TABLE_OVERHEAD

    def row(self, u: int) -> np.ndarray:
        return np.unpackbits(self.packed[u], count=self.vocab_size, bitorder="little").astype(bool)

    def cell(self, u: int, v: int) -> bool:
        return bool(self.packed[u, v >> 3] >> (v & 7) & 1)


def inverse_table_bytes(vocab_size: int) -> int:
    """Accounted size of a table without building it."""
    return vocab_size * math.ceil(vocab_size / 8) + TABLE_OVERHEAD


def build_inverse_table(key: WatermarkKey, vocab: Vocabulary, gamma: float = 0.5,
                        cap: int = TABLE_CAP) -> InverseTable:
    """Precompute the inverse green relation for every target token.

    Raises:
        ResourceError: ``|V|`` above ``cap``.
    """
    V = vocab.size
    if V > cap:
        raise ResourceError(f"inverse table for |V|={V} exceeds the cap of {cap} "
                            f"({inverse_table_bytes(V)} bytes)")
    t0 = time.perf_counter()
    packed = np.zeros((V, math.ceil(V / 8)), dtype=np.uint8)
    for a in range(0, V, _CHUNK):
        ctx = np.arange(a, min(a + _CHUNK, V))
        g = green_table(ctx, key, vocab, gamma)  # g[v - a, u]
        packed[:, a // 8: a // 8 + math.ceil(ctx.size / 8)] = np.packbits(g.T, axis=1, bitorder="little")
    packed.setflags(write=False)
    return InverseTable(packed, V, gamma, fingerprint(key), time.perf_counter() - t0)


def inject_dmark_style(logits, state, pos: int, table: InverseTable, key: WatermarkKey, delta: float,
                       vocab: Vocabulary = None):
    """``+delta`` on every ``v`` that makes the revealed right neighbor green."""
    if table.key_fingerprint != fingerprint(key):
        raise ConfigError("inverse table was built with a different key")
    vocab = vocab or Vocabulary(table.vocab_size)
    if vocab.size != table.vocab_size:
        raise ConfigError("inverse table was built for a different vocabulary size")
    logits = _check(logits, state, pos, vocab)
    out = logits.copy()
    right = _revealed_token(state, pos + 1, vocab)
    bits = None
    if right is not None:
        bits = table.row(right)
        np.add(out, delta, out=out, where=bits)
    return out, BiasReport(False, right is not None, None, bits)


class DmarkInjector:
    def __init__(self, table: InverseTable, key: WatermarkKey, delta: float, vocab: Vocabulary = None):
        if table.key_fingerprint != fingerprint(key):
            raise ConfigError("inverse table was built with a different key")
        self.table, self.key, self.delta = table, key, float(delta)
        self.vocab = vocab or Vocabulary(table.vocab_size)

    def __call__(self, logits, state, pos):
        return inject_dmark_style(logits, state, pos, self.table, self.key, self.delta, self.vocab)

    def accounted_bytes(self) -> int:
        return self.table.memory_bytes + self.vocab.size


def green_fraction_z(seqs, key: WatermarkKey, vocab: Vocabulary, gamma: float = 0.5) -> np.ndarray:
    """One-sided green-fraction z for each sequence, over ``(y[t-1], y[t])`` pairs."""
    seqs = [np.asarray(s, dtype=np.int64).ravel() for s in seqs]
    if any(s.size < 2 for s in seqs):
        raise InputError("need at least 2 tokens for a green-fraction test")
    if not seqs:
        return np.zeros(0)
    uniq = np.unique(np.concatenate(seqs))
    table = green_table(uniq, key, vocab, gamma)
    g = green_count(vocab, gamma) / vocab.size
    out = np.empty(len(seqs))
    for i, s in enumerate(seqs):
        hits = table[np.searchsorted(uniq, s[:-1]), s[1:]].sum()
        T = s.size - 1
        out[i] = (hits - g * T) / math.sqrt(T * g * (1 - g))
    return out
