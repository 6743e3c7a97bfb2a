"""Token-level perturbations for robustness runs: random deletion and
random substitution.  Both are deterministic per seed."""
from __future__ import annotations

import numpy as np

from .errors import AttackError
from .vocab_hash import Vocabulary

KINDS = ("delete", "substitute")


def _prepare(tokens, p):
    if not 0.0 <= p < 1.0:
        raise AttackError(f"attack fraction must lie in [0, 1), got {p}")
    tokens = np.asarray(tokens, dtype=np.int64).ravel()
    return tokens, int(np.floor(p * tokens.size + 1e-9))


def delete_tokens(tokens, p: float, seed: int = 0) -> np.ndarray:
    """Remove ``floor(p * L)`` uniformly chosen positions, keeping order.

    Raises:
        AttackError: ``p`` outside [0, 1) or fewer than 3 tokens left.
    """
    tokens, k = _prepare(tokens, p)
    if tokens.size - k < 3:
        raise AttackError(f"deleting {k} of {tokens.size} tokens leaves fewer than 3")
    drop = np.random.default_rng(seed).choice(tokens.size, size=k, replace=False)
    keep = np.ones(tokens.size, dtype=bool)
    keep[drop] = False
    return tokens[keep]


def substitute_tokens(tokens, p: float, vocab: Vocabulary, seed: int = 0) -> np.ndarray:
    """Replace ``floor(p * L)`` uniformly chosen positions by a different uniform token."""
    tokens, k = _prepare(tokens, p)
    rng = np.random.default_rng(seed)
    pos = rng.choice(tokens.size, size=k, replace=False)
    out = tokens.copy()
    r = rng.integers(0, vocab.size - 1, size=k)
    out[pos] = r + (r >= tokens[pos])  # skip the original id
    return out


def apply_attack(kind: str, tokens, p: float, vocab: Vocabulary, seed: int = 0) -> np.ndarray:
    if kind == "delete":
        return delete_tokens(tokens, p, seed)
    if kind == "substitute":
        return substitute_tokens(tokens, p, vocab, seed)
    raise AttackError(f"unknown attack {kind!r}; choose from {KINDS}")
