"""Iterative unmasking with an optional watermark hook.

Each step runs one forward pass over every masked position (as a diffusion
LM does), picks the step's positions from the schedule, lets the injector
bias their logits, and samples.  Positions that share a step share the
step's forward pass; the injector always sees the live state, so a neighbor
revealed earlier in the same step already constrains its successor.

With ``forward_all=False`` and a pre-realized schedule only the selected
rows are computed.  The output is identical; only the cost model changes.
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np

from ..errors import ConfigError
from ..inject import boundary_mode
from ..vocab_hash import Vocabulary
from .schedule import Schedule
from .state import SequenceState


def logits_digest(logits: np.ndarray) -> int:
    h = hashlib.blake2b(np.ascontiguousarray(logits, dtype=np.float64).tobytes(),
                        digest_size=8, person=b"lrdwm-logits")
    return int.from_bytes(h.digest(), "little")


@dataclass
class AuditRecord:
    pos: int
    step: int
    token: int
    mode: str
    logits_digest: int
    left_digest: int = 0
    right_digest: int = 0
    left_bias: float = 0.0
    right_bias: float = 0.0
    raw: Optional[np.ndarray] = field(default=None, repr=False)
    biased: Optional[np.ndarray] = field(default=None, repr=False)

    def to_json(self) -> str:
        return json.dumps({
            "pos": self.pos, "step": self.step, "token": self.token, "mode": self.mode,
            "logits_digest": f"{self.logits_digest:016x}",
            "left_digest": f"{self.left_digest:016x}", "right_digest": f"{self.right_digest:016x}",
            "delta_left": self.left_bias, "delta_right": self.right_bias,
        })


@dataclass
class DecodeResult:
    state: SequenceState
    audit: List[AuditRecord]

    @property
    def tokens(self) -> np.ndarray:
        return self.state.tokens

    @property
    def generated(self) -> np.ndarray:
        return self.state.generated


def max_prob(logits: np.ndarray) -> np.ndarray:
    """Row-wise maximum softmax probability."""
    m = logits.max(axis=1)
    return 1.0 / np.exp(logits - m[:, None]).sum(axis=1)


def decode(model, prompt, schedule: Schedule, *, temperature: float = 0.0, injector=None,
           seed: int = 0, vocab: Optional[Vocabulary] = None, audit: bool = True,
           keep_logits: bool = False, forward_all: bool = True) -> DecodeResult:
    """Denoise a fully masked continuation of ``prompt``.

    Args:
        model: anything with ``forward(tokens, revealed, positions)`` and
            ``vocab_size``.
        schedule: from ``make_schedule``; fixes the total length.
        temperature: 0 means greedy (argmax, lowest index on ties).
        injector: callable ``(logits, state, pos) -> (biased, report)`` or None.
        seed: seeds the sampler; unused when greedy.
        audit: record one ``AuditRecord`` per revealed position.
        keep_logits: also store raw and biased logit vectors in the audit.
        forward_all: score every masked position each step, as a diffusion
            LM forward pass does.  Forced on for the confidence schedule.
    """
    if temperature < 0:
        raise ConfigError(f"temperature must be >= 0, got {temperature}")
    vocab = vocab or Vocabulary(model.vocab_size)
    prompt = np.asarray(prompt, dtype=np.int64).ravel()
    if prompt.size != schedule.prompt_len:
        raise ConfigError(f"prompt has {prompt.size} tokens but the schedule expects {schedule.prompt_len}")
    state = SequenceState.from_prompt(prompt, schedule.length, vocab)
    rng = np.random.default_rng(seed)
    trail: List[AuditRecord] = []

    for step, size in enumerate(schedule.step_sizes):
        if forward_all or schedule.step_sets is None:
            masked = state.masked_positions()
            logits = model.forward(state.tokens, state.revealed, masked)
            if schedule.step_sets is None:
                conf = max_prob(logits)
                positions = masked[np.lexsort((masked, -conf))[:size]]
            else:
                positions = schedule.step_sets[step]
            rows = np.searchsorted(masked, positions)
        else:
            positions = schedule.step_sets[step]
            logits = model.forward(state.tokens, state.revealed, positions)
            rows = range(len(positions))

        for pos, row in zip(positions, rows):
            pos = int(pos)
            raw = logits[row]
            report = None
            if injector is not None:
                biased, report = injector(raw, state, pos)
            else:
                biased = raw
            if temperature == 0:
                token = int(np.argmax(biased))
            else:
                z = (biased - biased.max()) / temperature
                cdf = np.cumsum(np.exp(z))
                token = int(np.searchsorted(cdf, rng.random() * cdf[-1], side="right"))
                token = min(token, cdf.size - 1)
            if audit:
                rec = AuditRecord(pos, step, token, boundary_mode(state, pos).value, logits_digest(raw))
                if report is not None:
                    rec.left_digest = report.left_mask_digest
                    rec.right_digest = report.right_mask_digest
                    rec.left_bias = injector.delta if report.left_active else 0.0
                    rec.right_bias = injector.delta if report.right_active else 0.0
                if keep_logits:
                    rec.raw, rec.biased = raw.copy(), np.array(biased, copy=True)
                trail.append(rec)
            state.reveal(pos, token)
    return DecodeResult(state, trail)
