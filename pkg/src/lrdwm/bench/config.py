"""Experiment configuration: JSON schema, defaults, digest, seed splitting."""
from __future__ import annotations

import copy
import hashlib
import json
from pathlib import Path

import jsonschema

from ..errors import ConfigError, DataError

METHODS = ("lr", "left", "dmark", "none")

_fpr_list = {"type": "array", "items": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
             "minItems": 1}
_hex = {"type": "string", "pattern": "^(0x)?[0-9a-fA-F]{16}$"}

SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "title": "lrdwm experiment",
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "name": {"type": "string"},
        "seed": {"type": "integer", "minimum": 0},
        "vocab_size": {"type": "integer", "minimum": 4},
        "gamma": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
        "keys": {
            "type": "object", "additionalProperties": False,
            "properties": {"left": _hex, "right": _hex, "single": _hex},
        },
        "source": {
            "type": "object", "additionalProperties": False,
            "properties": {
                "branching": {"type": "integer", "minimum": 1},
                "leak": {"type": "number", "minimum": 0, "maximum": 1},
                "concentration": {"type": "number", "exclusiveMinimum": 0},
            },
        },
        "model": {
            "type": "object", "additionalProperties": False,
            "properties": {
                "order": {"enum": [2, 3]},
                "smoothing": {"type": "number", "exclusiveMinimum": 0},
                "train_sequences": {"type": "integer", "minimum": 1},
                "train_length": {"type": "integer", "minimum": 3},
                "oracle_sequences": {"type": "integer", "minimum": 1},
            },
        },
        "methods": {"type": "array", "items": {"enum": list(METHODS)}, "minItems": 1, "uniqueItems": True},
        "deltas": {"type": "array", "items": {"type": "number", "minimum": 0}, "minItems": 1},
        "prompt_len": {"type": "integer", "minimum": 1},
        "gen_len": {"type": "integer", "minimum": 3},
        "steps": {"type": ["integer", "null"], "minimum": 1},
        "schedule": {"enum": ["random", "confidence", "block"]},
        "block_len": {"type": ["integer", "null"], "minimum": 1},
        "temperature": {"type": "number", "minimum": 0},
        "n_generations": {"type": "integer", "minimum": 1},
        "forward_all": {"type": "boolean"},
        "degenerate_threshold": {"type": "number", "exclusiveMinimum": 0, "maximum": 1},
        "target_fprs": _fpr_list,
        "tradeoff_tprs": {"type": "array", "items": {"type": "number", "minimum": 0, "maximum": 1}},
        "workers": {"type": "integer", "minimum": 1},
        "null": {
            "type": "object", "additionalProperties": False,
            "properties": {
                "calibration_sequences": {"type": "integer", "minimum": 1},
                "test_sequences": {"type": "integer", "minimum": 1},
                "length": {"type": "integer", "minimum": 3},
            },
        },
        "attacks": {
            "type": "object", "additionalProperties": False,
            "properties": {
                "kinds": {"type": "array", "items": {"enum": ["delete", "substitute"]}},
                "intensities": {"type": "array",
                                "items": {"type": "number", "minimum": 0, "exclusiveMaximum": 1}},
                "delta": {"type": ["number", "null"], "minimum": 0},
                "fpr": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
            },
        },
        "efficiency": {
            "type": "object", "additionalProperties": False,
            "properties": {
                "vocab_size": {"type": "integer", "minimum": 4},
                "order": {"enum": [2, 3]},
                "gen_len": {"type": "integer", "minimum": 3},
                "sequences": {"type": "integer", "minimum": 1},
                "warmup": {"type": "integer", "minimum": 0},
                "delta": {"type": "number", "minimum": 0},
                "train_sequences": {"type": "integer", "minimum": 1},
                "methods": {"type": "array", "items": {"enum": list(METHODS)}, "minItems": 1},
                "measure_peak": {"type": "boolean"},
            },
        },
    },
}

DEFAULTS = {
    "name": "default",
    "seed": 0,
    "vocab_size": 256,
    "gamma": 0.5,
    "keys": {"left": "9e3779b97f4a7c15", "right": "c2b2ae3d27d4eb4f", "single": "165667b19e3779f9"},
    "source": {"branching": 8, "leak": 0.05, "concentration": 1.0},
    "model": {"order": 3, "smoothing": 0.1, "train_sequences": 2000, "train_length": 300,
              "oracle_sequences": 2000},
    "methods": ["lr", "left", "dmark", "none"],
    "deltas": [0.0, 0.5, 1.0, 2.0, 4.0, 6.0],
    "prompt_len": 8,
    "gen_len": 300,
    "steps": None,
    "schedule": "random",
    "block_len": None,
    "temperature": 1.0,
    "n_generations": 600,
    "forward_all": False,
    "degenerate_threshold": 0.5,
    "target_fprs": [0.05, 0.01, 0.005],
    "tradeoff_tprs": [0.9, 0.99, 0.995],
    "workers": 1,
    "null": {"calibration_sequences": 10000, "test_sequences": 2000, "length": 400},
    "attacks": {"kinds": ["delete", "substitute"], "intensities": [0.1, 0.3, 0.5], "delta": None,
                "fpr": 0.01},
    "efficiency": {"vocab_size": 4096, "order": 2, "gen_len": 300, "sequences": 50, "warmup": 3,
                   "delta": 2.0, "train_sequences": 500, "methods": ["none", "lr", "left", "dmark"],
                   "measure_peak": True},
}


def _merge(base, over):
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


class ExperimentConfig:
    """Resolved experiment settings (defaults merged over a validated dict)."""

    def __init__(self, data: dict | None = None):
        data = data or {}
        try:
            jsonschema.validate(data, SCHEMA)
        except jsonschema.ValidationError as exc:
            where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
            raise ConfigError(f"invalid experiment config at {where}: {exc.message}") from None
        self.data = _merge(DEFAULTS, data)
        d = self.data
        if d["attacks"]["fpr"] not in d["target_fprs"]:
            raise ConfigError("attacks.fpr must be one of target_fprs")
        if d["schedule"] == "block" and not d["block_len"]:
            raise ConfigError("block schedule needs block_len")

    def __getattr__(self, name):
        try:
            return self.__dict__["data"][name]
        except KeyError:
            raise AttributeError(name) from None

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        try:
            data = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise DataError(f"cannot read config {path}: {exc}") from exc
        return cls(data)

    def replace(self, **changes) -> "ExperimentConfig":
        """Copy with top-level or nested (dict) overrides."""
        return ExperimentConfig(_merge(self.data, changes))

    @property
    def digest(self) -> str:
        blob = json.dumps(self.data, sort_keys=True, separators=(",", ":")).encode()
        return hashlib.blake2b(blob, digest_size=8).hexdigest()

    def to_dict(self) -> dict:
        return copy.deepcopy(self.data)


def derive_seed(root: int, *labels) -> int:
    """Independent 63-bit seed for a labelled stream under ``root``."""
    text = "/".join([str(int(root))] + [str(x) for x in labels]).encode()
    return int.from_bytes(hashlib.blake2b(text, digest_size=8, person=b"lrdwm-seed").digest(), "little") >> 1
