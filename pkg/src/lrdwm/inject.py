"""Two-sided logit bias.

A masked position gets ``+delta`` on the green set of its revealed left
neighbor (under ``key_left``) and another ``+delta`` on the green set of its
revealed right neighbor (under ``key_right``).  Missing neighbors contribute
nothing.  Prompt tokens count as revealed; special ids never induce a mask.
"""
from __future__ import annotations

import enum
import warnings
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import ConfigError, UsageError
from .vocab_hash import Vocabulary, WatermarkKey, bits_digest, green_bits, green_count


@dataclass(frozen=True)
class InjectorConfig:
    key_left: WatermarkKey
    key_right: WatermarkKey
    delta: float = 2.0
    gamma: float = 0.5

    def __post_init__(self):
        if not (np.isfinite(self.delta) and self.delta >= 0):
            raise ConfigError(f"delta must be a finite value >= 0, got {self.delta}")
        if not 0 < self.gamma < 1:
            raise ConfigError(f"gamma must lie in (0, 1), got {self.gamma}")
        if self.key_left == self.key_right:
            warnings.warn("left and right watermark keys are equal; neighbor signals will correlate",
                          stacklevel=3)

    def with_delta(self, delta: float) -> "InjectorConfig":
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            return InjectorConfig(self.key_left, self.key_right, delta, self.gamma)


class BoundaryMode(str, enum.Enum):
    BOTH = "both"
    LEFT_ONLY = "left-only"
    RIGHT_ONLY = "right-only"
    NONE = "none"


@dataclass(frozen=True)
class BiasReport:
    left_active: bool
    right_active: bool
    left_bits: Optional[np.ndarray] = None
    right_bits: Optional[np.ndarray] = None

    @property
    def left_mask_digest(self) -> int:
        return bits_digest(self.left_bits) if self.left_active else 0

    @property
    def right_mask_digest(self) -> int:
        return bits_digest(self.right_bits) if self.right_active else 0


def _revealed_token(state, j, vocab):
    if 0 <= j < len(state) and state.revealed[j]:
        t = int(state.tokens[j])
        if 0 <= t < vocab.size:
            return t
    return None


def boundary_mode(state, pos: int) -> BoundaryMode:
    left = 0 <= pos - 1 < len(state) and bool(state.revealed[pos - 1])
    right = 0 <= pos + 1 < len(state) and bool(state.revealed[pos + 1])
    if left and right:
        return BoundaryMode.BOTH
    if left:
        return BoundaryMode.LEFT_ONLY
    if right:
        return BoundaryMode.RIGHT_ONLY
    return BoundaryMode.NONE


def inject(logits, state, pos: int, cfg: InjectorConfig, vocab: Vocabulary):
    """Return ``(biased_logits, BiasReport)``; ``logits`` is left untouched.

    Raises:
        UsageError: ``pos`` is outside the sequence or already revealed.
    """
    if not 0 <= pos < len(state):
        raise UsageError(f"position {pos} outside sequence of length {len(state)}")
    if state.revealed[pos]:
        raise UsageError(f"position {pos} is already revealed")
    logits = np.asarray(logits, dtype=np.float64)
    if logits.shape != (vocab.size,):
        raise UsageError(f"logits must have shape ({vocab.size},), got {logits.shape}")
    green_count(vocab, cfg.gamma)

    left = _revealed_token(state, pos - 1, vocab)
    right = _revealed_token(state, pos + 1, vocab)
    out = logits.copy()
    lbits = rbits = None
    if left is not None:
        lbits = green_bits(left, cfg.key_left, vocab, cfg.gamma)
        np.add(out, cfg.delta, out=out, where=lbits)
    if right is not None:
        rbits = green_bits(right, cfg.key_right, vocab, cfg.gamma)
        np.add(out, cfg.delta, out=out, where=rbits)
    return out, BiasReport(left is not None, right is not None, lbits, rbits)


class LRInjector:
    """Decoder hook wrapping ``inject`` for a fixed config and vocabulary."""

    def __init__(self, cfg: InjectorConfig, vocab: Vocabulary):
        self.cfg = cfg
        self.vocab = vocab

    @property
    def delta(self) -> float:
        return self.cfg.delta

    def __call__(self, logits, state, pos):
        return inject(logits, state, pos, self.cfg, self.vocab)

    def accounted_bytes(self) -> int:
        # at most two live masks per position plus the two keys
        return 2 * self.vocab.size * np.dtype(bool).itemsize + 16
