"""CSV / JSONL writers and the ``run_bench`` driver."""
from __future__ import annotations

import csv
import json
import logging
from pathlib import Path
from typing import Iterable, List

from ..errors import ConfigError
from .config import ExperimentConfig
from .experiments import (GenerationCache, ReportRow, Workbench, run_detectability, run_efficiency,
                          run_robustness, tradeoff)

log = logging.getLogger(__name__)

PARTS = ("detectability", "efficiency", "robustness")
FORMAT = "lrdwm-report/1"


def write_csv(path, rows: Iterable[dict]) -> None:
    rows = list(rows)
    cols = []
    for r in rows:
        cols.extend(k for k in r if k not in cols)
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=cols)
        w.writeheader()
        for r in rows:
            w.writerow({k: ("" if v is None else v) for k, v in r.items()})


def write_jsonl(path, rows: Iterable[dict]) -> None:
    with open(path, "w") as fh:
        for r in rows:
            fh.write(json.dumps(r, sort_keys=True, default=str) + "\n")


def run_bench(cfg: ExperimentConfig, out_dir, parts=PARTS) -> dict:
    """Run the requested parts and write every report file into ``out_dir``."""
    bad = set(parts) - set(PARTS)
    if bad:
        raise ConfigError(f"unknown bench parts {sorted(bad)}; choose from {PARTS}")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rows: List[ReportRow] = []
    det, rob, eff = [], [], []
    if "detectability" in parts or "robustness" in parts:
        bench = Workbench(cfg)
        cache = GenerationCache(bench)
        if "detectability" in parts:
            det = run_detectability(bench, cache)
            rows += det
        if "robustness" in parts and "lr" in cfg.methods:
            rob = run_robustness(bench, cache, det or None)
            rows += rob
    if "efficiency" in parts:
        eff = run_efficiency(cfg)
        rows += eff

    flat = [r.flat() for r in rows]
    write_csv(out / "rows.csv", flat)
    write_jsonl(out / "rows.jsonl", flat)
    fpr = cfg.attacks["fpr"]
    write_csv(out / "tradeoff.csv", tradeoff(det, fpr, cfg.tradeoff_tprs))
    write_csv(out / "efficiency.csv", [r.flat() for r in eff])
    write_csv(out / "robustness.csv", [r.flat() for r in rob])
    meta = {"format": FORMAT, "config_digest": cfg.digest, "config": cfg.to_dict(), "parts": list(parts),
            "rows": len(rows)}
    (out / "config.resolved.json").write_text(json.dumps(meta, indent=2))
    log.info("wrote %d rows to %s", len(rows), out)
    return {"rows": rows, "detectability": det, "robustness": rob, "efficiency": eff, "meta": meta}
