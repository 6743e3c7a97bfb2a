from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import ConfigError, UsageError
from ..vocab_hash import Vocabulary


@dataclass
class SequenceState:
    """Fixed-length token array being denoised.

    ``tokens[i] == mask_id`` exactly when position ``i`` is still masked.
    Prompt positions ``[0, prompt_len)`` are revealed from the start, and a
    revealed position is never written again.
    """

    tokens: np.ndarray
    revealed: np.ndarray
    prompt_len: int
    mask_id: int

    @classmethod
    def from_prompt(cls, prompt, length: int, vocab: Vocabulary) -> "SequenceState":
        prompt = np.asarray(prompt, dtype=np.int64).ravel()
        if length < prompt.size + 1:
            raise ConfigError(f"sequence length {length} leaves nothing to generate after a {prompt.size}-token prompt")
        if np.any(prompt == vocab.mask_id) or np.any(prompt < 0):
            raise ConfigError("prompt contains the MASK sentinel or a negative id")
        tokens = np.full(length, vocab.mask_id, dtype=np.int64)
        tokens[: prompt.size] = prompt
        revealed = np.zeros(length, dtype=bool)
        revealed[: prompt.size] = True
        return cls(tokens, revealed, int(prompt.size), vocab.mask_id)

    def __len__(self):
        return self.tokens.size

    def is_revealed(self, pos: int) -> bool:
        return 0 <= pos < self.tokens.size and bool(self.revealed[pos])

    def masked_positions(self) -> np.ndarray:
        return np.flatnonzero(~self.revealed)

    def reveal(self, pos: int, token: int) -> None:
        if not self.prompt_len <= pos < self.tokens.size:
            raise UsageError(f"position {pos} is not a generation position")
        if self.revealed[pos]:
            raise UsageError(f"position {pos} is already revealed")
        if token == self.mask_id:
            raise UsageError("cannot reveal the MASK sentinel")
        self.tokens[pos] = token
        self.revealed[pos] = True

    @property
    def complete(self) -> bool:
        return bool(self.revealed.all())

    @property
    def generated(self) -> np.ndarray:
        return self.tokens[self.prompt_len:]

    def copy(self) -> "SequenceState":
        return SequenceState(self.tokens.copy(), self.revealed.copy(), self.prompt_len, self.mask_id)
