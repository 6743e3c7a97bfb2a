"""Desk-scale diffusion language model: n-gram scorer, schedules, decoder."""
from .corpus import MarkovSource
from .decode import AuditRecord, DecodeResult, decode, max_prob
from .model import NGramModel, base_logits, logit_of, train_base_model
from .schedule import KINDS, Schedule, make_schedule
from .state import SequenceState

__all__ = [
    "AuditRecord", "DecodeResult", "KINDS", "MarkovSource", "NGramModel", "Schedule",
    "SequenceState", "base_logits", "decode", "logit_of", "make_schedule", "max_prob",
    "train_base_model",
]
