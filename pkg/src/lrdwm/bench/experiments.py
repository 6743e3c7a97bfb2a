"""Detectability, quality, efficiency and robustness runs.

All randomness comes from ``cfg.seed`` through ``derive_seed`` with fixed
labels, so each grid point can be recomputed alone.  Every method and delta
sees the same prompts, schedules and sampler seeds.
"""
from __future__ import annotations

import gc
import logging
import math
import time
import tracemalloc
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Dict, List, Optional

import numpy as np

from ..attacks import apply_attack
from ..baselines import DmarkInjector, LeftOnlyInjector, build_inverse_table, green_fraction_z
from ..detector import calibrate_null, empirical_threshold, z_scores
from ..dlm_sim import MarkovSource, decode, make_schedule, train_base_model
from ..inject import InjectorConfig, LRInjector
from ..vocab_hash import Vocabulary, WatermarkKey
from .config import ExperimentConfig, derive_seed

log = logging.getLogger(__name__)


@dataclass
class ReportRow:
    experiment: str
    method: str
    delta: float
    config_digest: str
    n: int = 0
    tpr: Dict[float, float] = field(default_factory=dict)
    mean_z: Optional[float] = None
    mean_ppl: Optional[float] = None
    ppl_sem: Optional[float] = None
    gen_time_ms: Optional[float] = None
    peak_mem_bytes: Optional[int] = None
    attack: Optional[str] = None
    intensity: Optional[float] = None
    extra: dict = field(default_factory=dict)

    def flat(self) -> dict:
        d = asdict(self)
        tpr = d.pop("tpr")
        extra = d.pop("extra")
        for f, v in sorted(tpr.items(), reverse=True):
            d[f"tpr@{f:g}"] = v
        d.update(extra)
        return d


def degenerate(tokens, threshold: float) -> bool:
    """True when one token makes up more than ``threshold`` of the text."""
    t = np.asarray(tokens)
    return np.bincount(t).max() > threshold * t.size


def perplexity(oracle, tokens, prompt_len: int) -> float:
    lp = oracle.left_to_right_logprob(tokens, start=prompt_len)
    return float(np.exp(-lp.mean()))


class Workbench:
    """Shared artifacts: source, base model, oracle, keys and null calibrations."""

    def __init__(self, cfg: ExperimentConfig):
        self.cfg = cfg
        s = cfg.seed
        V = cfg.vocab_size
        self.vocab = Vocabulary(V)
        self.source = MarkovSource(V, cfg.source["branching"], cfg.source["leak"],
                                   cfg.source["concentration"], seed=derive_seed(s, "source"))
        m = cfg.model
        self.model = train_base_model(self.source.sample(m["train_sequences"], m["train_length"],
                                                         derive_seed(s, "train")),
                                      order=m["order"], smoothing=m["smoothing"], vocab_size=V)
        self.oracle = train_base_model(self.source.sample(m["oracle_sequences"], m["train_length"],
                                                          derive_seed(s, "oracle")),
                                       order=m["order"], smoothing=m["smoothing"], vocab_size=V)
        self.key_left = WatermarkKey.from_hex(cfg.keys["left"])
        self.key_right = WatermarkKey.from_hex(cfg.keys["right"])
        self.key_single = WatermarkKey.from_hex(cfg.keys["single"])
        self.lr_cfg = InjectorConfig(self.key_left, self.key_right, 0.0, cfg.gamma)
        self.prompts = self.source.sample(cfg.n_generations, cfg.prompt_len, derive_seed(s, "prompts"))
        self._table = None
        self._cal = None
        self._null_test = None
        self._kgw = None

    # -- null side ------------------------------------------------------

    def null_corpus(self, label: str, n: int) -> np.ndarray:
        return self.source.sample(n, self.cfg.null["length"], derive_seed(self.cfg.seed, "null", label))

    def _lengths(self):
        L = self.cfg.gen_len
        lengths = {L}
        for p in self.cfg.attacks["intensities"]:
            lengths.add(L - int(math.floor(p * L + 1e-9)))
        return sorted(n for n in lengths if 3 <= n <= self.cfg.null["length"])

    @property
    def calibration(self):
        if self._cal is None:
            null = self.null_corpus("calibration", self.cfg.null["calibration_sequences"])
            mu0 = None if abs(self.cfg.gamma - 0.5) < 1e-12 else 2 * (
                math.floor(self.cfg.gamma * self.vocab.size) / self.vocab.size) - 1
            self._cal = calibrate_null(null, self.lr_cfg, self.vocab, self.cfg.target_fprs,
                                       lengths=self._lengths(), null_mean=mu0)
        return self._cal

    @property
    def null_test(self) -> np.ndarray:
        if self._null_test is None:
            self._null_test = self.null_corpus("test", self.cfg.null["test_sequences"])
        return self._null_test

    @property
    def kgw_thresholds(self) -> Dict[float, float]:
        """Empirical green-fraction thresholds for the single-key baselines."""
        if self._kgw is None:
            null = self.null_corpus("calibration", self.cfg.null["calibration_sequences"])
            z = green_fraction_z(list(null[:, : self.cfg.gen_len]), self.key_single, self.vocab, self.cfg.gamma)
            self._kgw = {f: empirical_threshold(z, f) for f in self.cfg.target_fprs}
        return self._kgw

    # -- generation -----------------------------------------------------

    @property
    def table(self):
        if self._table is None:
            self._table = build_inverse_table(self.key_single, self.vocab, self.cfg.gamma)
        return self._table

    def injector(self, method: str, delta: float):
        if method == "none":
            return None
        if method == "lr":
            return LRInjector(self.lr_cfg.with_delta(delta), self.vocab)
        if method == "left":
            return LeftOnlyInjector(self.key_single, delta, self.vocab, self.cfg.gamma)
        if method == "dmark":
            return DmarkInjector(self.table, self.key_single, delta, self.vocab)
        raise ValueError(method)

    def schedule(self, i: int):
        c = self.cfg
        return make_schedule(c.schedule, c.prompt_len + c.gen_len, c.prompt_len, steps=c.steps,
                             block_len=c.block_len, seed=derive_seed(c.seed, "schedule", i))

    def generate(self, method: str, delta: float, n: Optional[int] = None) -> np.ndarray:
        """Full token sequences (prompt + continuation), shape ``(n, P + L)``."""
        n = n or self.cfg.n_generations
        inj = self.injector(method, delta)
        out = np.empty((n, self.cfg.prompt_len + self.cfg.gen_len), dtype=np.int64)
        for i in range(n):
            res = decode(self.model, self.prompts[i], self.schedule(i), temperature=self.cfg.temperature,
                         injector=inj, seed=derive_seed(self.cfg.seed, "sample", i), vocab=self.vocab,
                         audit=False, forward_all=self.cfg.forward_all)
            out[i] = res.tokens
        return out

    def z_for(self, method: str, continuations) -> np.ndarray:
        if method in ("left", "dmark"):
            return green_fraction_z(continuations, self.key_single, self.vocab, self.cfg.gamma)
        return z_scores(continuations, self.lr_cfg, self.vocab, self.calibration)

    def threshold(self, method: str, fpr: float, length: int) -> float:
        if method in ("left", "dmark"):
            return self.kgw_thresholds[fpr]
        return self.calibration.threshold_for(fpr, length)


def _generate_task(args):
    cfg_data, method, delta = args
    return method, delta, Workbench(ExperimentConfig(cfg_data)).generate(method, delta)


class GenerationCache:
    """Generations per (method, delta), computed once and shared by all runs."""

    def __init__(self, bench: Workbench):
        self.bench = bench
        self.store = {}

    def prefetch(self, points):
        todo = [p for p in points if p not in self.store]
        if self.bench.cfg.workers > 1 and len(todo) > 1:
            with ProcessPoolExecutor(self.bench.cfg.workers) as ex:
                for method, delta, seqs in ex.map(_generate_task, [(self.bench.cfg.data, m, d) for m, d in todo]):
                    self.store[(method, delta)] = seqs
        for p in todo:
            self.get(*p)

    def get(self, method: str, delta: float) -> np.ndarray:
        key = (method, float(delta))
        if key not in self.store:
            t0 = time.perf_counter()
            self.store[key] = self.bench.generate(method, delta)
            log.info("generated %s delta=%g in %.1fs", method, delta, time.perf_counter() - t0)
        return self.store[key]


def _grid(cfg):
    pts = []
    for m in cfg.methods:
        for d in (cfg.deltas if m != "none" else [0.0]):
            pts.append((m, float(d)))
    return pts


def run_detectability(bench: Workbench, cache: Optional[GenerationCache] = None) -> List[ReportRow]:
    """TPR at every calibrated FPR, mean Z, perplexity, and a null-side check."""
    cfg = bench.cfg
    cache = cache or GenerationCache(bench)
    cache.prefetch(_grid(cfg))
    P, L = cfg.prompt_len, cfg.gen_len
    null_lr = bench.z_for("lr", list(bench.null_test[:, :L]))
    null_kgw = bench.z_for("left", list(bench.null_test[:, :L]))
    rows = []
    for method, delta in _grid(cfg):
        seqs = cache.get(method, delta)
        keep = [s for s in seqs if not degenerate(s[P:], cfg.degenerate_threshold)]
        cont = [s[P:] for s in keep]
        score_as = "lr" if method == "none" else method
        z = bench.z_for(score_as, cont) if cont else np.zeros(0)
        null_z = null_kgw if score_as in ("left", "dmark") else null_lr
        tpr, null_fpr = {}, {}
        for f in cfg.target_fprs:
            t = bench.threshold(score_as, f, L)
            tpr[f] = float((z > t).mean()) if z.size else float("nan")
            null_fpr[f"null_fpr@{f:g}"] = float((null_z > t).mean())
            if null_z.size >= 2000 and not 0.5 * f <= null_fpr[f"null_fpr@{f:g}"] <= 2 * f:
                warnings.warn(f"null FPR {null_fpr[f'null_fpr@{f:g}']:.4f} outside [0.5x, 2x] of {f}")
        ppl = np.array([perplexity(bench.oracle, s, P) for s in keep])
        rows.append(ReportRow(
            "detectability", method, delta, cfg.digest, n=len(keep), tpr=tpr,
            mean_z=float(z.mean()) if z.size else None,
            mean_ppl=float(np.exp(np.log(ppl).mean())) if ppl.size else None,
            ppl_sem=float(ppl.std(ddof=1) / math.sqrt(ppl.size)) if ppl.size > 1 else None,
            extra={"dropped_degenerate": len(seqs) - len(keep), "scored_as": score_as,
                   "z_sd": float(z.std()) if z.size else None, **null_fpr},
        ))
    return rows


def run_quality(bench: Workbench, cache: Optional[GenerationCache] = None) -> List[ReportRow]:
    """Perplexity rows; same generations as detectability (see ``mean_ppl``)."""
    rows = run_detectability(bench, cache)
    for r in rows:
        r.experiment = "quality"
    return rows


def tradeoff(rows: List[ReportRow], fpr: float, targets) -> List[dict]:
    """PPL per delta alongside TPR, plus the PPL at the smallest delta
    reaching each target TPR."""
    out = []
    by_method = {}
    for r in rows:
        by_method.setdefault(r.method, []).append(r)
    for method, rs in by_method.items():
        rs = sorted(rs, key=lambda r: r.delta)
        for r in rs:
            out.append({"row_kind": "grid", "method": method, "delta": r.delta, "target_tpr": None,
                        "tpr": r.tpr.get(fpr), "ppl": r.mean_ppl, "ppl_sem": r.ppl_sem,
                        "config_digest": r.config_digest})
        for target in targets:
            hit = next((r for r in rs if r.tpr.get(fpr, 0) >= target), None)
            out.append({"row_kind": "target", "method": method, "target_tpr": target,
                        "delta": hit.delta if hit else None, "tpr": hit.tpr.get(fpr) if hit else None,
                        "ppl": hit.mean_ppl if hit else None, "ppl_sem": hit.ppl_sem if hit else None,
                        "config_digest": rs[0].config_digest})
    return out


def operating_delta(rows: List[ReportRow], fpr: float, method: str = "lr") -> Optional[float]:
    """Smallest grid delta with clean TPR of 1.0."""
    ok = sorted(r.delta for r in rows if r.method == method and r.tpr.get(fpr) == 1.0)
    return ok[0] if ok else None


def run_robustness(bench: Workbench, cache: Optional[GenerationCache] = None,
                   rows: Optional[List[ReportRow]] = None, method: str = "lr") -> List[ReportRow]:
    """Detection rate and mean Z per (attack, intensity) at the operating delta."""
    cfg = bench.cfg
    cache = cache or GenerationCache(bench)
    fpr = cfg.attacks["fpr"]
    delta = cfg.attacks["delta"]
    chosen = "configured"
    if delta is None:
        rows = rows if rows is not None else run_detectability(bench, cache)
        delta = operating_delta(rows, fpr, method)
        chosen = "smallest delta with clean TPR 1.0"
        if delta is None:
            delta = max(cfg.deltas)
            chosen = "largest delta (no grid point reached clean TPR 1.0)"
    P = cfg.prompt_len
    cont = [s[P:] for s in cache.get(method, delta)]

    def cell(texts):
        z = bench.z_for(method, texts)
        hits = [zi > bench.threshold(method, fpr, len(t)) for zi, t in zip(z, texts)]
        return float(np.mean(hits)), float(z.mean())

    clean_tpr, clean_z = cell(cont)
    out = [ReportRow("robustness", method, delta, cfg.digest, n=len(cont), tpr={fpr: clean_tpr},
                     mean_z=clean_z, attack="none", intensity=0.0,
                     extra={"z_drop": 0.0, "delta_choice": chosen})]
    for kind in cfg.attacks["kinds"]:
        for p in cfg.attacks["intensities"]:
            attacked = [apply_attack(kind, t, p, bench.vocab, seed=derive_seed(cfg.seed, "attack", kind, p, i))
                        for i, t in enumerate(cont)]
            tpr, mz = cell(attacked)
            out.append(ReportRow("robustness", method, delta, cfg.digest, n=len(cont), tpr={fpr: tpr},
                                 mean_z=mz, attack=kind, intensity=float(p),
                                 extra={"z_drop": clean_z - mz, "delta_choice": chosen}))
    return out


def run_efficiency(cfg: ExperimentConfig) -> List[ReportRow]:
    """Median wall-clock per sequence and memory per method.

    Runs use the full per-step forward pass over all masked positions and
    interleave methods so drift affects each equally.  Memory is reported as
    accounted bytes (model tables, masks, inverse table) and, optionally, as
    the tracemalloc peak of one extra decode per method.
    """
    e = cfg.efficiency
    V = e["vocab_size"]
    s = cfg.seed
    vocab = Vocabulary(V)
    source = MarkovSource(V, cfg.source["branching"], cfg.source["leak"], cfg.source["concentration"],
                          seed=derive_seed(s, "eff-source"))
    model = train_base_model(source.sample(e["train_sequences"], cfg.model["train_length"],
                                           derive_seed(s, "eff-train")),
                             order=e["order"], smoothing=cfg.model["smoothing"], vocab_size=V)
    kl, kr = WatermarkKey.from_hex(cfg.keys["left"]), WatermarkKey.from_hex(cfg.keys["right"])
    ks = WatermarkKey.from_hex(cfg.keys["single"])
    delta = e["delta"]
    injectors, build_s = {}, {}
    for m in e["methods"]:
        if m == "lr":
            injectors[m] = LRInjector(InjectorConfig(kl, kr, delta, cfg.gamma), vocab)
        elif m == "left":
            injectors[m] = LeftOnlyInjector(ks, delta, vocab, cfg.gamma)
        elif m == "dmark":
            table = build_inverse_table(ks, vocab, cfg.gamma)
            build_s[m] = table.build_seconds
            injectors[m] = DmarkInjector(table, ks, delta, vocab)
        else:
            injectors[m] = None
    P, L = cfg.prompt_len, e["gen_len"]
    total = e["warmup"] + e["sequences"]
    prompts = source.sample(total + 1, P, derive_seed(s, "eff-prompts"))

    def one(method, i):
        sch = make_schedule("random", P + L, P, seed=derive_seed(s, "eff-schedule", i))
        t0 = time.perf_counter()
        decode(model, prompts[i], sch, injector=injectors[method], vocab=vocab, audit=False, forward_all=True)
        return time.perf_counter() - t0

    times = {m: [] for m in e["methods"]}
    gc.collect()
    for i in range(total):
        order = e["methods"] if i % 2 == 0 else list(reversed(e["methods"]))
        for m in order:
            dt = one(m, i)
            if i >= e["warmup"]:
                times[m].append(dt)

    peaks = {}
    if e["measure_peak"]:
        for m in e["methods"]:
            gc.collect()
            tracemalloc.start()
            one(m, total)
            peaks[m] = tracemalloc.get_traced_memory()[1]
            tracemalloc.stop()

    base_time = float(np.median(times["none"])) if "none" in times else None
    rows = []
    for m in e["methods"]:
        inj = injectors[m]
        wm_bytes = inj.accounted_bytes() if inj is not None else 0
        med = float(np.median(times[m]))
        rows.append(ReportRow(
            "efficiency", m, delta, cfg.digest, n=len(times[m]), gen_time_ms=med * 1e3,
            peak_mem_bytes=peaks.get(m),
            extra={"vocab_size": V, "gen_len": L, "order": e["order"],
                   "accounted_bytes": model.nbytes + wm_bytes, "watermark_bytes": wm_bytes,
                   "time_ratio_vs_none": med / base_time if base_time else None,
                   "table_build_s": build_s.get(m), "p90_ms": float(np.percentile(times[m], 90)) * 1e3,
                   "cost_model": "full forward over masked positions; CPU wall-clock; bytes accounted"},
        ))
    return rows
