"""Unmasking schedules.

``random``: a seeded permutation of the generation positions split into
``steps`` consecutive groups.

``block``: generation positions cut into contiguous blocks of ``block_len``
(the last one may be shorter), decoded left to right; each block receives a
share of the steps proportional to its size and is revealed in seeded random
order within the block.

``confidence``: only the number of positions per step is fixed up front; at
each step the decoder reveals the masked positions whose maximum softmax
probability is highest (ties to the lowest index).
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np

from ..errors import ConfigError

KINDS = ("random", "confidence", "block")


@dataclass(frozen=True)
class Schedule:
    kind: str
    length: int
    prompt_len: int
    steps: int
    seed: int
    block_len: Optional[int]
    step_sizes: Tuple[int, ...]
    # None for the confidence kind, where positions are chosen while decoding
    step_sets: Optional[Tuple[Tuple[int, ...], ...]]

    @property
    def gen_len(self) -> int:
        return self.length - self.prompt_len


def _split_sizes(total: int, parts: int):
    base, extra = divmod(total, parts)
    return [base + (i < extra) for i in range(parts)]


def _block_steps(sizes, steps):
    gen = sum(sizes)
    alloc = [max(1, min(s, (steps * s) // gen)) for s in sizes]
    i = 0
    while sum(alloc) < steps:
        if alloc[i % len(sizes)] < sizes[i % len(sizes)]:
            alloc[i % len(sizes)] += 1
        i += 1
    i = 0
    while sum(alloc) > steps:
        if alloc[i % len(sizes)] > 1:
            alloc[i % len(sizes)] -= 1
        i += 1
    return alloc


def make_schedule(kind: str, length: int, prompt_len: int, steps: Optional[int] = None,
                  block_len: Optional[int] = None, seed: int = 0) -> Schedule:
    """Realize a schedule over positions ``[prompt_len, length)``.

    ``steps`` defaults to one position per step.

    Raises:
        ConfigError: unknown kind, or sizes that cannot be partitioned.
    """
    if kind not in KINDS:
        raise ConfigError(f"unknown schedule kind {kind!r}; expected one of {KINDS}")
    gen = length - prompt_len
    if prompt_len < 0 or gen < 1:
        raise ConfigError(f"length {length} and prompt_len {prompt_len} leave no positions to generate")
    steps = gen if steps is None else int(steps)
    if not 1 <= steps <= gen:
        raise ConfigError(f"steps must lie in [1, {gen}], got {steps}")
    rng = np.random.default_rng(seed)
    positions = np.arange(prompt_len, length)

    if kind == "random":
        perm = rng.permutation(positions)
        sizes = _split_sizes(gen, steps)
        sets = tuple(tuple(int(p) for p in chunk) for chunk in np.split(perm, np.cumsum(sizes)[:-1]))
        return Schedule(kind, length, prompt_len, steps, seed, None, tuple(sizes), sets)

    if kind == "confidence":
        return Schedule(kind, length, prompt_len, steps, seed, None, tuple(_split_sizes(gen, steps)), None)

    if block_len is None or block_len < 1:
        raise ConfigError("block schedule needs a positive block_len")
    blocks = [positions[i:i + block_len] for i in range(0, gen, block_len)]
    if steps < len(blocks):
        raise ConfigError(f"{len(blocks)} blocks need at least {len(blocks)} steps, got {steps}")
    sets, sizes = [], []
    for block, n_steps in zip(blocks, _block_steps([b.size for b in blocks], steps)):
        perm = rng.permutation(block)
        for chunk in np.split(perm, np.cumsum(_split_sizes(block.size, n_steps))[:-1]):
            sets.append(tuple(int(p) for p in chunk))
            sizes.append(chunk.size)
    return Schedule(kind, length, prompt_len, steps, seed, int(block_len), tuple(sizes), tuple(sets))
