"""Seeded synthetic text: a sparse first-order Markov chain over token ids.

The chain plays the role of human-written text throughout the package: the
base model is trained on one sample of it, null calibration uses another.
"""
from __future__ import annotations

import numpy as np

from ..errors import ConfigError


class MarkovSource:
    """Each token has ``branching`` preferred successors with Dirichlet
    weights; with probability ``leak`` the next token is uniform instead.
    """

    def __init__(self, vocab_size: int, branching: int = 8, leak: float = 0.05,
                 concentration: float = 1.0, seed: int = 0):
        if vocab_size < 4:
            raise ConfigError("vocab_size must be >= 4")
        if not 1 <= branching <= vocab_size:
            raise ConfigError("branching must lie in [1, vocab_size]")
        if not 0.0 <= leak <= 1.0:
            raise ConfigError("leak must lie in [0, 1]")
        self.vocab_size = vocab_size
        self.branching = branching
        self.leak = leak
        self.concentration = concentration
        self.seed = seed
        rng = np.random.default_rng(seed)
        succ = np.empty((vocab_size, branching), dtype=np.int64)
        for t in range(vocab_size):
            succ[t] = rng.choice(vocab_size, size=branching, replace=False)
        w = rng.dirichlet(np.full(branching, concentration), size=vocab_size)
        self.successors = succ
        self.cdf = np.cumsum(w, axis=1)
        self.cdf[:, -1] = 1.0

    def transition_matrix(self) -> np.ndarray:
        """Dense ``P[a, b]``; for tests and small vocabularies only."""
        V = self.vocab_size
        P = np.full((V, V), self.leak / V)
        w = np.diff(self.cdf, axis=1, prepend=0.0) * (1 - self.leak)
        for t in range(V):
            np.add.at(P[t], self.successors[t], w[t])
        return P

    def sample(self, n: int, length: int, rng) -> np.ndarray:
        """Draw ``n`` sequences of ``length`` tokens, shape ``(n, length)``."""
        rng = np.random.default_rng(rng)
        out = np.empty((n, length), dtype=np.int64)
        if length == 0:
            return out
        out[:, 0] = rng.integers(0, self.vocab_size, size=n)
        rows = np.arange(n)
        for t in range(1, length):
            cur = out[:, t - 1]
            u = rng.random(n)
            pick = (self.cdf[cur] < u[:, None]).sum(axis=1)
            nxt = self.successors[cur, np.minimum(pick, self.branching - 1)]
            leak = rng.random(n) < self.leak
            nxt[leak] = rng.integers(0, self.vocab_size, size=int(leak.sum()))
            out[rows, t] = nxt
        return out

    def describe(self) -> dict:
        return {"kind": "markov", "vocab_size": self.vocab_size, "branching": self.branching,
                "leak": self.leak, "concentration": self.concentration, "seed": self.seed}
