"""A scaled-down run of the experiment harness; writes CSV/JSONL to ./bench_out."""
import sys

from lrdwm.bench import ExperimentConfig, run_bench

cfg = ExperimentConfig({
    "vocab_size": 64, "n_generations": 60, "gen_len": 80, "prompt_len": 4,
    "model": {"train_sequences": 300, "train_length": 100, "oracle_sequences": 300},
    "null": {"calibration_sequences": 1000, "test_sequences": 1000, "length": 100},
    "deltas": [0.0, 2.0, 4.0], "target_fprs": [0.05, 0.01],
    "efficiency": {"vocab_size": 512, "sequences": 3, "warmup": 1, "gen_len": 60, "train_sequences": 100},
})
out = sys.argv[1] if len(sys.argv) > 1 else "bench_out"
report = run_bench(cfg, out)
print("config digest", cfg.digest, "->", out)
for r in report["detectability"]:
    print(f"{r.method:>6} delta={r.delta:<4g} TPR@1% {r.tpr[0.01]:.2f}  mean Z {r.mean_z:5.2f}  PPL {r.mean_ppl:.1f}")
for r in report["efficiency"]:
    print(f"{r.method:>6} {r.gen_time_ms:7.1f} ms/seq  extra bytes {r.extra['watermark_bytes']}")
