"""Schedule-agnostic detection.

Each interior token ``i`` of the scored span gets

    s_i = [y_i in G(y_{i-1}, key_left)] + [y_i in G(y_{i+1}, key_right)] - 1

and the text statistic is ``Z = (sum(s) - T * mu0) / (sigma * sqrt(T))`` over
the ``T = len(span) - 2`` interior positions.  With balanced partitions the
null mean ``mu0`` is 0 and the per-token variance is 1/2; ``sigma**2`` is
nevertheless estimated on unwatermarked text, and decision thresholds are
empirical null quantiles rather than Gaussian tail values.

Detection reads only the final token sequence.
"""
from __future__ import annotations

import hashlib
import json
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional

import numpy as np
from scipy.stats import norm

from .errors import ConfigError, DataError, DomainError, InputError
from .inject import InjectorConfig
from .vocab_hash import Vocabulary, fingerprint, green_table

FORMAT = "lrdwm-calibration/1"
MIN_SCORED_LEN = 16


@dataclass(frozen=True)
class TokenScore:
    value: int
    m_left: bool
    m_right: bool
    defined_sides: int = 2


@dataclass
class DetectionResult:
    z: float
    score_sum: int
    scored_len: int
    decision: Optional[bool]
    threshold_used: float
    per_token: List[TokenScore] = field(default_factory=list, repr=False)
    status: str = "ok"
    fpr: Optional[float] = None

    def to_dict(self, per_token: bool = False) -> dict:
        out = {
            "z": self.z, "score_sum": self.score_sum, "scored_len": self.scored_len,
            "decision": self.decision, "threshold": self.threshold_used,
            "fpr": self.fpr, "status": self.status,
        }
        if per_token:
            out["per_token"] = [t.value for t in self.per_token]
        return out


def _check_tokens(arr, vocab):
    if arr.size and (arr.min() < 0 or arr.max() >= vocab.size):
        raise DomainError(f"token ids must lie in [0, {vocab.size})")


def _membership(seqs, cfg, vocab):
    """Per-sequence ``(m_left, m_right)`` boolean arrays over interior positions."""
    flat = np.concatenate([s for s in seqs]) if seqs else np.zeros(0, dtype=np.int64)
    _check_tokens(flat, vocab)
    uniq = np.unique(flat)
    gl = green_table(uniq, cfg.key_left, vocab, cfg.gamma)
    gr = green_table(uniq, cfg.key_right, vocab, cfg.gamma)
    out = []
    for s in seqs:
        row = np.searchsorted(uniq, s)
        mid = s[1:-1]
        out.append((gl[row[:-2], mid], gr[row[2:], mid]))
    return out


def score_matrix(tokens, cfg: InjectorConfig, vocab: Vocabulary) -> np.ndarray:
    """Scores for equal-length texts given as an ``(n, L)`` array; shape ``(n, L - 2)``."""
    tokens = np.asarray(tokens, dtype=np.int64)
    if tokens.ndim != 2 or tokens.shape[1] < 3:
        raise InputError("need an (n, L) token array with L >= 3")
    _check_tokens(tokens, vocab)
    uniq, inv = np.unique(tokens, return_inverse=True)
    inv = inv.reshape(tokens.shape)
    gl = green_table(uniq, cfg.key_left, vocab, cfg.gamma)
    gr = green_table(uniq, cfg.key_right, vocab, cfg.gamma)
    mid = tokens[:, 1:-1]
    return gl[inv[:, :-2], mid].astype(np.int8) + gr[inv[:, 2:], mid].astype(np.int8) - 1


def score_values(seqs, cfg: InjectorConfig, vocab: Vocabulary) -> List[np.ndarray]:
    """Ternary interior scores for many sequences, as int8 arrays."""
    if isinstance(seqs, np.ndarray) and seqs.ndim == 2:
        return list(score_matrix(seqs, cfg, vocab))
    seqs = [np.asarray(s, dtype=np.int64).ravel() for s in seqs]
    for s in seqs:
        if s.size < 3:
            raise InputError(f"need at least 3 tokens to score, got {s.size}")
    return [ml.astype(np.int8) + mr.astype(np.int8) - 1 for ml, mr in _membership(seqs, cfg, vocab)]


def score_tokens(tokens, cfg: InjectorConfig, vocab: Vocabulary) -> List[TokenScore]:
    """Per-token scores for the interior positions ``1 .. len(tokens) - 2``.

    Raises:
        InputError: fewer than 3 tokens.
    """
    tokens = np.asarray(tokens, dtype=np.int64).ravel()
    if tokens.size < 3:
        raise InputError(f"need at least 3 tokens to score (one interior position), got {tokens.size}")
    (ml, mr), = _membership([tokens], cfg, vocab)
    return [TokenScore(int(a) + int(b) - 1, bool(a), bool(b)) for a, b in zip(ml, mr)]


def z_statistic(scores, sigma2: float, null_mean: float = 0.0) -> float:
    """``(sum(s) - T * null_mean) / sqrt(sigma2 * T)``."""
    s = np.asarray([getattr(x, "value", x) for x in scores] if isinstance(scores, list) else scores,
                   dtype=np.float64)
    if s.size == 0:
        raise InputError("cannot compute Z over an empty score list")
    if not sigma2 > 0:
        raise ConfigError("sigma2 must be positive")
    return float((s.sum() - s.size * null_mean) / np.sqrt(sigma2 * s.size))


def empirical_threshold(z, fpr: float) -> float:
    """Smallest observed value ``t`` with ``mean(z > t) <= fpr``."""
    z = np.sort(np.asarray(z, dtype=np.float64))
    n = z.size
    allowed = int(np.floor(fpr * n + 1e-9))
    if allowed >= n:
        return float("-inf")
    return float(z[n - allowed - 1])


def _key(fpr) -> str:
    return repr(float(fpr))


@dataclass(frozen=True)
class NullCalibration:
    sigma2: float
    thresholds: Dict[float, float]
    corpus_meta: dict
    hash_params: dict
    thresholds_by_length: Dict[int, Dict[float, float]] = field(default_factory=dict)
    gaussian: Dict[float, float] = field(default_factory=dict)
    null_mean: float = 0.0

    def threshold_for(self, fpr: float, length: Optional[int] = None) -> float:
        table = self.thresholds
        if length is not None and self.thresholds_by_length:
            nearest = min(self.thresholds_by_length, key=lambda n: (abs(n - length), n))
            table = self.thresholds_by_length[nearest]
        for f, t in table.items():
            if abs(f - fpr) < 1e-12:
                return t
        raise ConfigError(f"calibration has no threshold for FPR {fpr}; available: {sorted(table)}")

    def check(self, cfg: InjectorConfig, vocab: Vocabulary) -> None:
        hp = self.hash_params
        if hp.get("vocab_size") != vocab.size or abs(hp.get("gamma", -1) - cfg.gamma) > 1e-12:
            raise ConfigError("calibration was made for a different vocabulary size or gamma")
        if hp.get("key_fingerprint") != fingerprint(cfg.key_left, cfg.key_right):
            raise ConfigError("calibration was made with different watermark keys")

    def to_dict(self) -> dict:
        return {
            "format": FORMAT,
            "sigma2": self.sigma2,
            "null_mean": self.null_mean,
            "thresholds": {_key(f): t for f, t in self.thresholds.items()},
            "gaussian_thresholds": {_key(f): t for f, t in self.gaussian.items()},
            "thresholds_by_length": {str(n): {_key(f): t for f, t in tab.items()}
                                     for n, tab in self.thresholds_by_length.items()},
            "corpus_meta": self.corpus_meta,
            "hash": self.hash_params,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "NullCalibration":
        if d.get("format") != FORMAT:
            raise DataError(f"not an {FORMAT} file (format={d.get('format')!r})")
        conv = lambda tab: {float(f): float(t) for f, t in tab.items()}
        return cls(
            sigma2=float(d["sigma2"]),
            thresholds=conv(d["thresholds"]),
            corpus_meta=d.get("corpus_meta", {}),
            hash_params=d.get("hash", {}),
            thresholds_by_length={int(n): conv(t) for n, t in d.get("thresholds_by_length", {}).items()},
            gaussian=conv(d.get("gaussian_thresholds", {})),
            null_mean=float(d.get("null_mean", 0.0)),
        )

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2))

    @classmethod
    def load(cls, path) -> "NullCalibration":
        try:
            return cls.from_dict(json.loads(Path(path).read_text()))
        except (OSError, json.JSONDecodeError, KeyError) as exc:
            raise DataError(f"cannot read calibration {path}: {exc}") from exc


def _null_mean(cfg, null_mean):
    if null_mean is not None:
        return float(null_mean)
    if abs(cfg.gamma - 0.5) > 1e-12:
        raise ConfigError("detection statistics assume gamma = 0.5; pass null_mean for other values")
    return 0.0


def calibrate_null(null_corpus, cfg: InjectorConfig, vocab: Vocabulary, target_fprs=(0.05, 0.01, 0.005),
                   lengths=None, null_mean: Optional[float] = None) -> NullCalibration:
    """Estimate ``sigma2`` and per-FPR Z thresholds from unwatermarked text.

    ``sigma2`` is the pooled variance of all per-token scores.  The threshold
    for FPR ``f`` is the empirical quantile of per-sequence Z such that at
    most a fraction ``f`` of the null corpus exceeds it.  ``lengths``, if
    given, adds thresholds for the prefixes of that many tokens.
    """
    seqs = [np.asarray(s, dtype=np.int64).ravel() for s in null_corpus]
    if not seqs:
        raise DataError("null corpus is empty")
    fprs = sorted({float(f) for f in target_fprs}, reverse=True)
    if not fprs or any(not 0 < f < 1 for f in fprs):
        raise ConfigError("target FPRs must lie in (0, 1)")
    if len(seqs) < 10 / min(fprs):
        warnings.warn(f"{len(seqs)} null sequences are too few for a reliable {min(fprs)} quantile")
    mu0 = _null_mean(cfg, null_mean)
    scores = score_values(seqs, cfg, vocab)
    pooled = np.concatenate(scores).astype(np.float64)
    sigma2 = float(pooled.var(ddof=1))
    if not sigma2 > 0:
        raise DataError("null scores have zero variance")

    def thresholds(score_list):
        z = np.array([(s.sum() - s.size * mu0) / np.sqrt(sigma2 * s.size) for s in score_list])
        return {f: empirical_threshold(z, f) for f in fprs}

    by_length = {}
    for n in sorted(set(lengths or ())):
        sub = [s[: n - 2] for s in scores if s.size >= n - 2]
        if n < 3 or not sub:
            raise DataError(f"no null sequence is long enough for length {n}")
        by_length[int(n)] = thresholds(sub)

    sizes = [s.size for s in seqs]
    h = hashlib.blake2b(digest_size=8)
    for s in seqs:
        h.update(s.astype("<i8").tobytes())
        h.update(b"\n")
    meta = {"size": len(seqs), "length": sizes[0] if len(set(sizes)) == 1 else [min(sizes), max(sizes)],
            "source_digest": h.hexdigest(), "pooled_mean": float(pooled.mean())}
    hash_params = {"vocab_size": vocab.size, "gamma": cfg.gamma,
                   "key_fingerprint": fingerprint(cfg.key_left, cfg.key_right)}
    return NullCalibration(sigma2=sigma2, thresholds=thresholds(scores), corpus_meta=meta,
                           hash_params=hash_params, thresholds_by_length=by_length,
                           gaussian={f: float(norm.isf(f)) for f in fprs}, null_mean=mu0)


def z_scores(seqs, cfg: InjectorConfig, vocab: Vocabulary, calibration: NullCalibration) -> np.ndarray:
    """Z for many texts at once (whole texts, no prompt stripping)."""
    mu0, s2 = calibration.null_mean, calibration.sigma2
    if isinstance(seqs, np.ndarray) and seqs.ndim == 2:
        m = score_matrix(seqs, cfg, vocab)
        return (m.sum(axis=1) - m.shape[1] * mu0) / np.sqrt(s2 * m.shape[1])
    scores = score_values(seqs, cfg, vocab)
    return np.array([(s.sum() - s.size * mu0) / np.sqrt(s2 * s.size) for s in scores])


def detect(tokens, cfg: InjectorConfig, calibration: NullCalibration, target_fpr: float = 0.01,
           vocab: Optional[Vocabulary] = None, prompt_len: int = 0,
           min_scored_len: int = MIN_SCORED_LEN) -> DetectionResult:
    """Score ``tokens[prompt_len:]`` and compare Z with the calibrated threshold.

    Texts with fewer than ``min_scored_len`` interior tokens get
    ``status="insufficient_length"`` and ``decision=None``.

    Raises:
        ConfigError: no threshold for ``target_fpr``, or calibration/keys mismatch.
    """
    vocab = vocab or Vocabulary(int(calibration.hash_params["vocab_size"]))
    calibration.check(cfg, vocab)
    span = np.asarray(tokens, dtype=np.int64).ravel()[prompt_len:]
    threshold = calibration.threshold_for(target_fpr, span.size)
    scored = max(span.size - 2, 0)
    if scored < max(min_scored_len, 1):
        _check_tokens(span, vocab)
        return DetectionResult(0.0, 0, scored, None, threshold, [], "insufficient_length", target_fpr)
    per_token = score_tokens(span, cfg, vocab)
    total = sum(t.value for t in per_token)
    z = z_statistic([t.value for t in per_token], calibration.sigma2, calibration.null_mean)
    return DetectionResult(z, int(total), len(per_token), bool(z > threshold), threshold, per_token, "ok",
                           target_fpr)
