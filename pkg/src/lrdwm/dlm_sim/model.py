"""Bidirectional n-gram scorer standing in for a pretrained diffusion LM.

For a masked position with candidate ``v`` the model combines

* a left factor ``P(v | y[i-2], y[i-1])`` (trigram, backing off to bigram,
  then unigram),
* a right factor ``P(v | y[i+1], y[i+2])`` from reversed counts, with the
  same backoff,

as ``log(left * right / unigram)``.  A side whose adjacent neighbor is
masked (or a special token) contributes the unigram factor, so with no
revealed neighbor the logits are the unigram log-probabilities.  For a first
order chain this is exactly ``log P(v | left) + log P(right | v)`` up to a
per-position constant.

All factors use additive smoothing ``(count + alpha) / (total + alpha |V|)``.
Per-position constants are dropped: logits are defined up to a shift and
are not log-normalized.
"""
from __future__ import annotations

import json
from pathlib import Path

import numpy as np
from scipy import sparse

from ..errors import ConfigError, DataError, UsageError

FORMAT = "lrdwm-model/1"

# dense float32 copies of count tables are kept up to this many cells
DENSE_LIMIT = 1 << 25


class _SideTable:
    """Count rows for one side, stacked so one gather serves a whole step.

    Row 0 holds unigram counts, rows ``1 .. V`` bigram contexts and rows
    ``V + 1 ..`` the observed trigram contexts (sorted codes in ``tri_keys``).
    """

    def __init__(self, V, unigram, bigram: sparse.csr_matrix, tri_keys=None, trigram=None):
        self.V = V
        self.has_bigram = np.asarray(bigram.sum(axis=1)).ravel() > 0
        self.tri_keys = tri_keys if tri_keys is not None else np.zeros(0, dtype=np.int64)
        blocks = [sparse.csr_matrix(np.asarray(unigram, dtype=np.float64)[None, :]), bigram]
        if trigram is not None:
            blocks.append(trigram)
        self.matrix = sparse.vstack(blocks, format="csr")
        rows = self.matrix.shape[0]
        self.dense = self.matrix.toarray().astype(np.float32) if rows * V <= DENSE_LIMIT else None

    def index(self, near, far, far_first):
        idx = np.zeros(near.size, dtype=np.int64)
        ok = near >= 0
        ok[ok] = self.has_bigram[near[ok]]
        idx[ok] = near[ok] + 1
        if far is not None and self.tri_keys.size:
            both = (near >= 0) & (far >= 0)
            if both.any():
                codes = far * self.V + near if far_first else near * self.V + far
                loc, found = _lookup(self.tri_keys, codes)
                found &= both
                idx[found] = loc[found] + 1 + self.V
        return idx

    def gather(self, idx, alpha):
        if self.dense is not None:
            rows = self.dense[idx]
        else:
            rows = self.matrix[idx].toarray()
        return np.add(rows, alpha, dtype=np.float64)

    @property
    def nbytes(self) -> int:
        m = self.matrix
        n = m.data.nbytes + m.indices.nbytes + m.indptr.nbytes
        n += self.has_bigram.nbytes + self.tri_keys.nbytes
        if self.dense is not None:
            n += self.dense.nbytes
        return n


def _lookup(keys: np.ndarray, codes: np.ndarray):
    loc = np.searchsorted(keys, codes)
    loc = np.minimum(loc, max(keys.size - 1, 0))
    found = keys[loc] == codes if keys.size else np.zeros(codes.shape, dtype=bool)
    return loc, found


class NGramModel:
    """Immutable count tables plus the scoring rule described in the module doc."""

    def __init__(self, vocab_size, order, smoothing, unigram, bigrams, trigrams=None):
        if order not in (2, 3):
            raise ConfigError(f"order must be 2 or 3, got {order}")
        if not (np.isfinite(smoothing) and smoothing > 0):
            raise ConfigError("smoothing must be a positive finite number")
        V = int(vocab_size)
        self.vocab_size = V
        self.order = int(order)
        self.smoothing = float(smoothing)
        self.unigram = np.asarray(unigram, dtype=np.float64)
        if self.unigram.shape != (V,):
            raise DataError("unigram table has the wrong length")

        # bigrams / trigrams: (codes, counts) over a*V+b and a*V*V+b*V+c
        bi_codes, bi_counts = (np.asarray(x, dtype=np.int64) for x in bigrams)
        self._bigrams = (bi_codes, bi_counts)
        a, b = np.divmod(bi_codes, V)
        left_bi = sparse.csr_matrix((bi_counts.astype(np.float64), (a, b)), shape=(V, V))
        right_bi = sparse.csr_matrix((bi_counts.astype(np.float64), (b, a)), shape=(V, V))

        self._trigrams = None
        if self.order == 3:
            tri_codes, tri_counts = (np.asarray(x, dtype=np.int64) for x in (trigrams or ([], [])))
            self._trigrams = (tri_codes, tri_counts)
            ab, c = np.divmod(tri_codes, V)
            a, bc = np.divmod(tri_codes, V * V)
            lkeys, lrow = np.unique(ab, return_inverse=True)
            rkeys, rrow = np.unique(bc, return_inverse=True)
            tc = tri_counts.astype(np.float64)
            self.left = _SideTable(V, self.unigram, left_bi, lkeys,
                                   sparse.csr_matrix((tc, (lrow, c)), shape=(lkeys.size, V)))
            self.right = _SideTable(V, self.unigram, right_bi, rkeys,
                                    sparse.csr_matrix((tc, (rrow, a)), shape=(rkeys.size, V)))
        else:
            self.left = _SideTable(V, self.unigram, left_bi)
            self.right = _SideTable(V, self.unigram, right_bi)

        self._uni_num = self.unigram + self.smoothing
        self._uni_num.setflags(write=False)

    # -- scoring -------------------------------------------------------

    def _context(self, tokens, revealed):
        # real revealed tokens, -1 elsewhere, padded by 2 on each side
        tokens = np.asarray(tokens, dtype=np.int64)
        ok = np.asarray(revealed, dtype=bool) & (tokens >= 0) & (tokens < self.vocab_size)
        ctx = np.full(tokens.size + 4, -1, dtype=np.int64)
        ctx[2:-2] = np.where(ok, tokens, -1)
        return ctx

    def forward(self, tokens, revealed, positions) -> np.ndarray:
        """Logits for every position in ``positions``, shape ``(n, |V|)``.

        Only revealed real-token neighbors condition the prediction.
        """
        ctx = self._context(tokens, revealed)
        p = np.asarray(positions, dtype=np.int64) + 2
        tri = self.order == 3
        li = self.left.index(ctx[p - 1], ctx[p - 2] if tri else None, far_first=True)
        ri = self.right.index(ctx[p + 1], ctx[p + 2] if tri else None, far_first=False)
        a = self.smoothing
        return np.log(self.left.gather(li, a) * self.right.gather(ri, a) / self._uni_num)

    def left_to_right_logprob(self, tokens, start: int = 1) -> np.ndarray:
        """Normalized ``log P(y[i] | y[i-2], y[i-1])`` for ``i >= start``.

        Used as the perplexity oracle; sees only the left context.
        """
        tokens = np.asarray(tokens, dtype=np.int64)
        ctx = self._context(tokens, np.ones(tokens.size, dtype=bool))
        pos = np.arange(max(start, 0), tokens.size)
        if pos.size == 0:
            return np.zeros(0)
        p = pos + 2
        idx = self.left.index(ctx[p - 1], ctx[p - 2] if self.order == 3 else None, far_first=True)
        num = self.left.gather(idx, self.smoothing)
        return np.log(num[np.arange(pos.size), tokens[pos]] / num.sum(axis=1))

    # -- bookkeeping ---------------------------------------------------

    @property
    def nbytes(self) -> int:
        return self.unigram.nbytes + self._uni_num.nbytes + self.left.nbytes + self.right.nbytes

    def to_dict(self) -> dict:
        V = self.vocab_size
        bc, bn = self._bigrams
        a, b = np.divmod(bc, V)
        out = {
            "format": FORMAT,
            "vocab_size": V,
            "order": self.order,
            "smoothing": self.smoothing,
            "unigram": self.unigram.astype(np.int64).tolist(),
            "bigrams": np.stack([a, b, bn], axis=1).tolist(),
        }
        if self.order == 3:
            tc, tn = self._trigrams
            a, bc2 = np.divmod(tc, V * V)
            b, c = np.divmod(bc2, V)
            out["trigrams"] = np.stack([a, b, c, tn], axis=1).tolist()
        return out

    @classmethod
    def from_dict(cls, d: dict) -> "NGramModel":
        if d.get("format") != FORMAT:
            raise DataError(f"not an {FORMAT} artifact (format={d.get('format')!r})")
        V = int(d["vocab_size"])
        bi = np.asarray(d["bigrams"], dtype=np.int64).reshape(-1, 3)
        tri = None
        if int(d["order"]) == 3:
            t = np.asarray(d.get("trigrams", []), dtype=np.int64).reshape(-1, 4)
            tri = (t[:, 0] * V * V + t[:, 1] * V + t[:, 2], t[:, 3])
        return cls(V, int(d["order"]), float(d["smoothing"]), d["unigram"],
                   (bi[:, 0] * V + bi[:, 1], bi[:, 2]), tri)

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict()))

    @classmethod
    def load(cls, path) -> "NGramModel":
        try:
            d = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise DataError(f"cannot read model {path}: {exc}") from exc
        return cls.from_dict(d)


def train_base_model(corpus, order: int = 3, smoothing: float = 0.1, vocab_size=None) -> NGramModel:
    """Count unigrams, bigrams and (order 3) trigrams over ``corpus``.

    Args:
        corpus: iterable of token-id sequences, or a 2-D integer array.
        order: 2 or 3.
        smoothing: additive constant ``alpha > 0``.
        vocab_size: defaults to ``max(token) + 1`` (at least 4).

    Raises:
        DataError: empty corpus or negative/out-of-range ids.
    """
    seqs = [np.asarray(s, dtype=np.int64).ravel() for s in corpus]
    seqs = [s for s in seqs if s.size]
    if not seqs:
        raise DataError("corpus is empty")
    if order not in (2, 3):
        raise ConfigError(f"order must be 2 or 3, got {order}")
    flat = np.concatenate(seqs)
    if flat.min() < 0:
        raise DataError("corpus contains negative token ids")
    V = int(vocab_size) if vocab_size is not None else max(int(flat.max()) + 1, 4)
    if flat.max() >= V:
        raise DataError(f"corpus token {int(flat.max())} outside vocabulary of size {V}")

    unigram = np.bincount(flat, minlength=V)
    bi = np.concatenate([s[:-1] * V + s[1:] for s in seqs])
    bi_codes, bi_counts = np.unique(bi, return_counts=True)
    tri = None
    if order == 3:
        t = [s[:-2] * V * V + s[1:-1] * V + s[2:] for s in seqs if s.size >= 3]
        t = np.concatenate(t) if t else np.zeros(0, dtype=np.int64)
        tri = np.unique(t, return_counts=True)
    return NGramModel(V, order, smoothing, unigram, (bi_codes, bi_counts), tri)


def base_logits(model: NGramModel, state, pos: int) -> np.ndarray:
    """Logits at one unrevealed generation position, length ``|V|``."""
    if not state.prompt_len <= pos < len(state):
        raise UsageError(f"position {pos} is not a generation position")
    if state.revealed[pos]:
        raise UsageError(f"position {pos} is already revealed")
    return model.forward(state.tokens, state.revealed, [pos])[0]


def logit_of(logits: np.ndarray, token: int) -> float:
    """Logit of any id; MASK and other specials get ``-inf``."""
    token = int(token)
    if 0 <= token < logits.shape[-1]:
        return float(logits[token])
    return float("-inf")
