"""Experiment harness: detectability, quality, efficiency and robustness."""
from .config import DEFAULTS, METHODS, SCHEMA, ExperimentConfig, derive_seed
from .experiments import (GenerationCache, ReportRow, Workbench, degenerate, operating_delta, perplexity,
                          run_detectability, run_efficiency, run_quality, run_robustness, tradeoff)
from .report import PARTS, run_bench, write_csv, write_jsonl

__all__ = [
    "DEFAULTS", "METHODS", "PARTS", "SCHEMA", "ExperimentConfig", "GenerationCache", "ReportRow", "Workbench",
    "degenerate", "derive_seed", "operating_delta", "perplexity", "run_bench", "run_detectability",
    "run_efficiency", "run_quality", "run_robustness", "tradeoff", "write_csv", "write_jsonl",
]
