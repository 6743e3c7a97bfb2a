import csv
import json

import numpy as np
import pytest

from lrdwm.bench import (ExperimentConfig, GenerationCache, Workbench, derive_seed, operating_delta, perplexity,
                         run_bench, run_detectability, run_efficiency, run_robustness, tradeoff)
from lrdwm.baselines import inverse_table_bytes
from lrdwm.errors import ConfigError

SMALL = {
    "vocab_size": 64, "n_generations": 120, "gen_len": 80, "prompt_len": 4,
    "model": {"train_sequences": 400, "train_length": 100, "oracle_sequences": 400},
    "null": {"calibration_sequences": 2000, "test_sequences": 2000, "length": 100},
    "deltas": [0.0, 1.0, 3.0, 6.0], "methods": ["lr", "none"],
    "efficiency": {"vocab_size": 256, "sequences": 4, "warmup": 1, "gen_len": 60, "train_sequences": 100},
}


@pytest.fixture(scope="module")
def small():
    cfg = ExperimentConfig(SMALL)
    bench = Workbench(cfg)
    cache = GenerationCache(bench)
    return cfg, bench, cache, run_detectability(bench, cache)


def test_config_validation_and_digest():
    with pytest.raises(ConfigError, match="deltas"):
        ExperimentConfig({"deltas": [-1]})
    with pytest.raises(ConfigError):
        ExperimentConfig({"bogus": 1})
    with pytest.raises(ConfigError):
        ExperimentConfig({"schedule": "block"})
    a, b = ExperimentConfig(SMALL), ExperimentConfig(SMALL)
    assert a.digest == b.digest
    assert a.replace(seed=1).digest != a.digest
    assert a.replace(efficiency={"sequences": 9}).efficiency["warmup"] == 1


def test_derive_seed_streams():
    assert derive_seed(0, "a", 1) == derive_seed(0, "a", 1)
    assert len({derive_seed(0, "a", i) for i in range(100)}) == 100
    assert derive_seed(0, "a") != derive_seed(1, "a")


def test_zero_delta_tpr_near_fpr(small):
    cfg, _, _, rows = small
    for r in rows:
        if r.delta == 0.0:
            assert r.tpr[0.01] <= 0.05
        # embedded null sanity on 2000 null sequences
        assert 0.005 <= r.extra["null_fpr@0.01"] <= 0.02


def test_tpr_monotone_and_saturates(small):
    _, _, _, rows = small
    lr = sorted((r for r in rows if r.method == "lr"), key=lambda r: r.delta)
    tprs = [r.tpr[0.01] for r in lr]
    n = lr[0].n
    for a, b in zip(tprs, tprs[1:]):
        assert b >= a - 3 * np.sqrt(max(a * (1 - a), 1 / n) / n)
    assert tprs[-1] == 1.0
    zs = [r.mean_z for r in lr]
    assert zs == sorted(zs)


def test_quality_rows(small):
    cfg, bench, cache, rows = small
    lr = {r.delta: r for r in rows if r.method == "lr"}
    assert all(r.mean_ppl >= 1 for r in rows)
    assert lr[6.0].mean_ppl >= lr[0.0].mean_ppl - 1e-9
    uniform = np.random.default_rng(0).integers(0, 64, size=(50, cfg.prompt_len + cfg.gen_len))
    ppl_uniform = np.exp(np.mean([np.log(perplexity(bench.oracle, s, cfg.prompt_len)) for s in uniform]))
    greedy = ExperimentConfig({**SMALL, "temperature": 0.0, "n_generations": 20})
    gb = Workbench(greedy)
    seqs = gb.generate("none", 0.0)
    ppl_greedy = np.exp(np.mean([np.log(perplexity(gb.oracle, s, cfg.prompt_len)) for s in seqs]))
    assert ppl_greedy < ppl_uniform


def test_tradeoff_and_operating_point(small):
    _, _, _, rows = small
    table = tradeoff(rows, 0.01, [0.9, 0.99])
    targets = [t for t in table if t["row_kind"] == "target" and t["method"] == "lr"]
    assert len(targets) == 2 and targets[0]["delta"] <= targets[1]["delta"]
    assert operating_delta(rows, 0.01) in (1.0, 3.0, 6.0)


def test_robustness_rows(small):
    cfg, bench, cache, rows = small
    rob = run_robustness(bench, cache, rows)
    clean = rob[0]
    assert clean.attack == "none" and clean.tpr[0.01] == 1.0
    cells = {(r.attack, r.intensity): r for r in rob[1:]}
    for kind in ("delete", "substitute"):
        assert cells[(kind, 0.1)].mean_z > cells[(kind, 0.5)].mean_z
        assert cells[(kind, 0.1)].extra["z_drop"] <= cells[(kind, 0.3)].extra["z_drop"]


def test_rows_reproducible(small):
    cfg, _, _, rows = small
    again = run_detectability(Workbench(cfg))
    assert [r.flat() for r in again] == [r.flat() for r in rows]


def test_efficiency_accounting():
    cfg = ExperimentConfig(SMALL)
    rows = {r.method: r for r in run_efficiency(cfg.replace(efficiency={"methods": ["none", "lr", "dmark"]}))}
    V = 256
    assert rows["lr"].extra["accounted_bytes"] - rows["none"].extra["accounted_bytes"] == 2 * V + 16
    assert rows["dmark"].extra["watermark_bytes"] == inverse_table_bytes(V) + V
    assert rows["none"].gen_time_ms > 0 and rows["lr"].peak_mem_bytes > 0
    assert inverse_table_bytes(4096) / inverse_table_bytes(1024) == pytest.approx(16, rel=0.05)


def test_run_bench_writes_reports(tmp_path):
    cfg = ExperimentConfig({**SMALL, "n_generations": 20, "deltas": [0.0, 6.0],
                            "null": {"calibration_sequences": 300, "test_sequences": 100, "length": 100}})
    with pytest.warns(UserWarning):
        run_bench(cfg, tmp_path, parts=("detectability", "robustness"))
    for name in ("rows.csv", "rows.jsonl", "tradeoff.csv", "efficiency.csv", "robustness.csv"):
        assert (tmp_path / name).exists()
    with open(tmp_path / "rows.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert rows and all(r["config_digest"] == cfg.digest for r in rows)
    first = json.loads((tmp_path / "rows.jsonl").read_text().splitlines()[0])
    assert first["config_digest"] == cfg.digest
    with pytest.raises(ConfigError):
        run_bench(cfg, tmp_path, parts=("nope",))
