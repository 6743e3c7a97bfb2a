"""Plain-text token files: one sequence per line, decimal ids separated by
whitespace.  Lines starting with ``#`` are comments; the first may carry the
format tag and a JSON header, e.g. ``# lrdwm-tokens/1 {"prompt_len": 8}``.
Keys files are small JSON documents so secrets stay out of shell history.
"""
from __future__ import annotations

import json
from pathlib import Path
from typing import List, Optional, Tuple

import numpy as np

from .errors import DataError
from .vocab_hash import WatermarkKey

FORMAT = "lrdwm-tokens/1"
KEYS_FORMAT = "lrdwm-keys/1"


def write_tokens(path, seqs, header: Optional[dict] = None) -> None:
    lines = [f"# {FORMAT} {json.dumps(header or {}, sort_keys=True)}"]
    lines += [" ".join(str(int(t)) for t in np.asarray(s).ravel()) for s in seqs]
    Path(path).write_text("\n".join(lines) + "\n")


def read_tokens(path) -> Tuple[List[np.ndarray], dict]:
    """Return ``(sequences, header)``.

    Raises:
        DataError: unreadable file, non-integer or negative ids, or no sequences.
    """
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise DataError(f"cannot read token file {path}: {exc}") from exc
    seqs, header = [], {}
    for n, line in enumerate(text.splitlines(), 1):
        line = line.strip()
        if not line:
            continue
        if line.startswith("#"):
            body = line[1:].strip()
            if body.startswith(FORMAT):
                rest = body[len(FORMAT):].strip()
                if rest:
                    try:
                        header = json.loads(rest)
                    except json.JSONDecodeError as exc:
                        raise DataError(f"{path}:{n}: bad header: {exc}") from exc
            continue
        try:
            ids = np.array([int(x) for x in line.split()], dtype=np.int64)
        except ValueError:
            raise DataError(f"{path}:{n}: token ids must be decimal integers") from None
        if ids.size and ids.min() < 0:
            raise DataError(f"{path}:{n}: negative token id")
        seqs.append(ids)
    if not seqs:
        raise DataError(f"{path}: no token sequences found")
    return seqs, header


def parse_ids(text: str) -> np.ndarray:
    try:
        return np.array([int(x) for x in text.replace(",", " ").split()], dtype=np.int64)
    except ValueError:
        raise DataError(f"cannot parse token ids from {text!r}") from None


def write_keys(path, **keys: WatermarkKey) -> None:
    doc = {"format": KEYS_FORMAT, **{k: v.hex() for k, v in keys.items()}}
    Path(path).write_text(json.dumps(doc, indent=2) + "\n")


def read_keys(path) -> dict:
    """Keys named ``left``, ``right`` and/or ``single``."""
    try:
        doc = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise DataError(f"cannot read key file {path}: {exc}") from exc
    if doc.get("format") != KEYS_FORMAT:
        raise DataError(f"{path} is not an {KEYS_FORMAT} file")
    return {k: WatermarkKey.from_hex(doc[k]) for k in ("left", "right", "single") if k in doc}
