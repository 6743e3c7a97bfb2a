"""Keyed green/red partition of the vocabulary.

Every mask is a pure function of ``(context_token, key, |V|, gamma)``.
The construction, fixed to the bit so that ports can interoperate:

``mix64(z)`` is the SplitMix64 finalizer on unsigned 64-bit words::

    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9
    z = (z ^ (z >> 27)) * 0x94D049BB133111EB
    z =  z ^ (z >> 31)

With ``G = 0x9E3779B97F4A7C15`` and all arithmetic modulo 2**64::

    seed    = mix64(key ^ mix64((context + 1) * G))
    rank(v) = mix64(seed ^ mix64((v + 1) * G))        for v in [0, |V|)

The green set is the ``floor(gamma * |V|)`` tokens of smallest rank, i.e. the
head of the permutation obtained by sorting tokens by rank.  ``mix64`` and
multiplication by the odd constant ``G`` are both bijections, so ranks are
pairwise distinct and the green set always has exactly ``floor(gamma * |V|)``
members.

Masks serialize (``GreenMask.hex``) as the bytes of ``numpy.packbits`` with
``bitorder="little"``: byte ``b`` carries tokens ``8b .. 8b+7`` with token
``8b`` in the least significant bit.
"""
from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .errors import ConfigError, DomainError

MASK64 = (1 << 64) - 1
GOLDEN = 0x9E3779B97F4A7C15
_M1 = 0xBF58476D1CE4E5B9
_M2 = 0x94D049BB133111EB

_U30, _U27, _U31 = np.uint64(30), np.uint64(27), np.uint64(31)
_UM1, _UM2, _UG = np.uint64(_M1), np.uint64(_M2), np.uint64(GOLDEN)


def mix64(z: int) -> int:
    """SplitMix64 finalizer on a Python int."""
    z &= MASK64
    z = ((z ^ (z >> 30)) * _M1) & MASK64
    z = ((z ^ (z >> 27)) * _M2) & MASK64
    return z ^ (z >> 31)


def _mix64_array(z: np.ndarray) -> np.ndarray:
    # uint64 multiply wraps modulo 2**64, which is what we want
    z = (z ^ (z >> _U30)) * _UM1
    z = (z ^ (z >> _U27)) * _UM2
    return z ^ (z >> _U31)


@dataclass(frozen=True)
class Vocabulary:
    """Dense token ids ``[0, size)`` plus a MASK sentinel outside that range.

    Ids outside ``[0, size)`` (the MASK sentinel, padding, other specials) are
    never green and never watermarked.
    """

    size: int
    mask_id: Optional[int] = None
    surface: Optional[Sequence[str]] = field(default=None, compare=False, repr=False)

    def __post_init__(self):
        if int(self.size) < 4:
            raise ConfigError(f"vocabulary size must be >= 4, got {self.size}")
        if self.mask_id is None:
            object.__setattr__(self, "mask_id", int(self.size))
        if 0 <= self.mask_id < self.size:
            raise ConfigError(f"mask_id {self.mask_id} collides with a real token id")
        if self.surface is not None and len(self.surface) != self.size:
            raise ConfigError("surface table length must equal vocabulary size")

    def __len__(self):
        return self.size

    def contains(self, token) -> bool:
        return 0 <= int(token) < self.size

    def check(self, token) -> int:
        token = int(token)
        if not 0 <= token < self.size:
            raise DomainError(f"token {token} outside vocabulary [0, {self.size})")
        return token


@dataclass(frozen=True)
class WatermarkKey:
    """A 64-bit secret.  Keys compare by value."""

    value: int

    def __post_init__(self):
        if not 0 <= int(self.value) <= MASK64:
            raise ConfigError("watermark key must fit in 64 bits")
        object.__setattr__(self, "value", int(self.value))

    @classmethod
    def from_hex(cls, text: str) -> "WatermarkKey":
        text = text.strip().lower()
        if text.startswith("0x"):
            text = text[2:]
        if len(text) != 16:
            raise ConfigError(f"key must be 16 hex digits, got {len(text)}")
        try:
            return cls(int(text, 16))
        except ValueError:
            raise ConfigError(f"key is not hexadecimal: {text!r}") from None

    def hex(self) -> str:
        return f"{self.value:016x}"

    def __repr__(self):
        # keep the secret out of logs and tracebacks
        return f"WatermarkKey(<{fingerprint(self)}>)"


def fingerprint(*keys: WatermarkKey) -> str:
    """Short non-reversible digest identifying a set of keys."""
    h = hashlib.blake2b(digest_size=8, person=b"lrdwm-key")
    for k in keys:
        h.update(k.value.to_bytes(8, "little"))
    return h.hexdigest()


class GreenMask:
    """Immutable bit vector over the real-token ids; ``True`` marks green."""

    __slots__ = ("_bits",)

    def __init__(self, bits):
        bits = np.array(bits, dtype=bool, copy=True)
        if bits.ndim != 1:
            raise ValueError("mask bits must be one-dimensional")
        bits.setflags(write=False)
        self._bits = bits

    @property
    def bits(self) -> np.ndarray:
        return self._bits

    def __len__(self):
        return self._bits.size

    def popcount(self) -> int:
        return int(self._bits.sum())

    def is_empty(self) -> bool:
        return not self._bits.any()

    def __eq__(self, other):
        if not isinstance(other, GreenMask):
            return NotImplemented
        return np.array_equal(self._bits, other._bits)

    def __hash__(self):
        return self.digest()

    def packed(self) -> bytes:
        return np.packbits(self._bits, bitorder="little").tobytes()

    def hex(self) -> str:
        return self.packed().hex()

    @classmethod
    def from_hex(cls, text: str, size: int) -> "GreenMask":
        raw = np.frombuffer(bytes.fromhex(text), dtype=np.uint8)
        return cls(np.unpackbits(raw, bitorder="little", count=size).astype(bool))

    def digest(self) -> int:
        return bits_digest(self._bits)

    def __repr__(self):
        return f"GreenMask(size={len(self)}, popcount={self.popcount()})"


def bits_digest(bits: np.ndarray) -> int:
    """64-bit digest of a boolean vector, as used in audit records."""
    packed = np.packbits(np.asarray(bits, dtype=bool), bitorder="little").tobytes()
    h = hashlib.blake2b(packed, digest_size=8, person=b"lrdwm-mask")
    return int.from_bytes(h.digest(), "little")


def green_count(vocab: Vocabulary, gamma: float) -> int:
    if not 0.0 < gamma < 1.0:
        raise ConfigError(f"gamma must lie in (0, 1), got {gamma}")
    return int(np.floor(gamma * vocab.size))


def _seed(context: int, key: WatermarkKey) -> int:
    return mix64(key.value ^ mix64((context + 1) * GOLDEN))


def _token_hash_base(size: int) -> np.ndarray:
    # mix64((v + 1) * G) for every v; independent of key and context
    v = np.arange(1, size + 1, dtype=np.uint64)
    with np.errstate(over="ignore"):
        return _mix64_array(v * _UG)


_BASE_CACHE: dict = {}


def _base(size: int) -> np.ndarray:
    base = _BASE_CACHE.get(size)
    if base is None:
        base = _token_hash_base(size)
        base.setflags(write=False)
        _BASE_CACHE[size] = base
    return base


def token_ranks(context: int, key: WatermarkKey, vocab: Vocabulary) -> np.ndarray:
    """Per-token 64-bit ranks; sorting tokens by rank gives the keyed permutation."""
    context = vocab.check(context)
    with np.errstate(over="ignore"):
        return _mix64_array(np.uint64(_seed(context, key)) ^ _base(vocab.size))


def green_bits(context: int, key: WatermarkKey, vocab: Vocabulary, gamma: float = 0.5) -> np.ndarray:
    """Boolean green vector; the allocation-light core of ``green_mask``."""
    k = green_count(vocab, gamma)
    ranks = token_ranks(context, key, vocab)
    if k == 0:
        return np.zeros(vocab.size, dtype=bool)
    kth = np.partition(ranks, k - 1)[k - 1]
    return ranks <= kth


def green_mask(context_token: int, key: WatermarkKey, vocab: Vocabulary, gamma: float = 0.5) -> GreenMask:
    """Green set induced by ``context_token`` under ``key``.

    Raises:
        DomainError: ``context_token`` is not a real token id.
        ConfigError: ``gamma`` is outside (0, 1).
    """
    return GreenMask(green_bits(context_token, key, vocab, gamma))


def green_table(contexts, key: WatermarkKey, vocab: Vocabulary, gamma: float = 0.5) -> np.ndarray:
    """Stacked green vectors, one row per context, shape ``(len(contexts), |V|)``.

    Row ``i`` equals ``green_mask(contexts[i], key, vocab, gamma).bits``.
    """
    k = green_count(vocab, gamma)
    contexts = np.asarray(contexts, dtype=np.int64).ravel()
    if contexts.size and (contexts.min() < 0 or contexts.max() >= vocab.size):
        raise DomainError(f"context token outside vocabulary [0, {vocab.size})")
    if contexts.size == 0:
        return np.zeros((0, vocab.size), dtype=bool)
    if k == 0:
        return np.zeros((contexts.size, vocab.size), dtype=bool)
    with np.errstate(over="ignore"):
        ctx = (contexts.astype(np.uint64) + np.uint64(1)) * _UG
        seeds = _mix64_array(np.uint64(key.value) ^ _mix64_array(ctx))
        ranks = _mix64_array(seeds[:, None] ^ _base(vocab.size)[None, :])
    kth = np.partition(ranks, k - 1, axis=1)[:, k - 1]
    return ranks <= kth[:, None]


def empty_mask(vocab: Vocabulary) -> GreenMask:
    """The all-zero mask standing for "no constraint"."""
    return GreenMask(np.zeros(vocab.size, dtype=bool))


def is_green(mask: GreenMask, token: int) -> bool:
    token = int(token)
    if not 0 <= token < len(mask):
        raise DomainError(f"token {token} outside vocabulary [0, {len(mask)})")
    return bool(mask.bits[token])
