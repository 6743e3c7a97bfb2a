import json

import numpy as np
import pytest

from oracles import ref_green_set
from lrdwm.cli import main
from lrdwm.tokens_io import read_tokens, write_keys, write_tokens
from lrdwm.vocab_hash import WatermarkKey

KEYS = ["--key-left", "0123456789abcdef", "--key-right", "fedcba9876543210"]


@pytest.fixture(scope="module")
def work(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    assert main(["corpus", "--vocab-size", "64", "--n", "300", "--length", "80", "--out", str(d / "train.txt")]) == 0
    assert main(["train", "--corpus", str(d / "train.txt"), "--order", "2", "--out", str(d / "model.json")]) == 0
    assert main(["corpus", "--vocab-size", "64", "--n", "3000", "--length", "100", "--seed", "5",
                 "--out", str(d / "null.txt")]) == 0
    assert main(["calibrate", "--null-corpus", str(d / "null.txt"), "--out", str(d / "cal.json"),
                 "--fprs", "0.05,0.01", "--lengths", "100", *KEYS]) == 0
    return d


def run_json(capsys, argv):
    code = main(argv + ["--json"])
    out = capsys.readouterr().out.strip().splitlines()
    return code, [json.loads(x) for x in out]


def test_detect_json_contract(work, capsys):
    assert main(["gen", "--model", str(work / "model.json"), "--prompt", "1 2 3", "--n", "2", "--length", "60",
                 "--temperature", "1", "--delta", "6", *KEYS, "--out", str(work / "gen.txt")]) == 0
    capsys.readouterr()
    code, res = run_json(capsys, ["detect", "--input", str(work / "gen.txt"), "--calibration",
                                  str(work / "cal.json"), "--fpr", "0.01", *KEYS])
    assert code == 0 and len(res) == 2
    assert {"z", "scored_len", "decision", "threshold"} <= set(res[0])
    assert res[0]["scored_len"] == 58 and all(r["decision"] for r in res)


def test_gen_is_deterministic(work):
    args = ["gen", "--model", str(work / "model.json"), "--prompt", "4 5", "--length", "30", "--delta", "0",
            "--seed", "7", *KEYS]
    assert main(args + ["--out", str(work / "a.txt")]) == 0
    assert main(args + ["--out", str(work / "b.txt")]) == 0
    assert (work / "a.txt").read_bytes() == (work / "b.txt").read_bytes()


def test_calibrate_then_detect_null_rate(work, capsys):
    code, res = run_json(capsys, ["detect", "--input", str(work / "null.txt"), "--calibration",
                                  str(work / "cal.json"), *KEYS])
    rate = np.mean([r["decision"] for r in res])
    assert code == 0 and rate <= 0.01 and rate >= 0.005


def test_key_file_and_audit(work, capsys):
    kf = work / "keys.json"
    write_keys(kf, left=WatermarkKey.from_hex("0123456789abcdef"), right=WatermarkKey.from_hex("fedcba9876543210"))
    assert main(["gen", "--model", str(work / "model.json"), "--prompt", "1", "--length", "20", "--key-file",
                 str(kf), "--out", str(work / "k.txt"), "--audit-out", str(work / "audit.jsonl")]) == 0
    recs = [json.loads(x) for x in (work / "audit.jsonl").read_text().splitlines()]
    assert len(recs) == 20 and {"pos", "step", "token", "mode", "delta_left", "delta_right"} <= set(recs[0])
    capsys.readouterr()
    code, res = run_json(capsys, ["detect", "--input", str(work / "k.txt"), "--calibration", str(work / "cal.json"),
                                  "--key-file", str(kf)])
    assert code == 0 and res[0]["scored_len"] == 18


def test_attack_roundtrip(work, capsys):
    src = work / "gen.txt"
    assert main(["attack", "--kind", "delete", "--p", "0.5", "--input", str(src), "--output",
                 str(work / "del.txt")]) == 0
    seqs, header = read_tokens(work / "del.txt")
    assert seqs[0].size == 3 + 30 and header["attack"] == "delete"


def test_mask_dump_matches_reference(capsys):
    code, (res,) = run_json(capsys, ["mask-dump", "--context", "5", "--vocab-size", "64", "--key-left",
                                     "0123456789abcdef"])
    bits = np.unpackbits(np.frombuffer(bytes.fromhex(res["hex"]), dtype=np.uint8), bitorder="little")
    assert set(np.flatnonzero(bits)) == ref_green_set(5, 0x0123456789ABCDEF, 64)
    assert res["popcount"] == 32


def test_exit_codes(work, tmp_path, capsys):
    assert main(["detect", "--bogus"]) == 1
    assert main(["nosuch"]) == 1
    assert main(["gen", "--model", str(work / "model.json"), "--prompt", "1", "--out", str(tmp_path / "x")]) == 1
    assert main(["detect", "--input", str(tmp_path / "missing.txt"), "--calibration", str(work / "cal.json"),
                 *KEYS]) == 2
    assert main(["detect", "--input", str(work / "gen.txt"), "--calibration", str(work / "cal.json"),
                 "--fpr", "0.02", *KEYS]) == 2
    bad = tmp_path / "bad.txt"
    bad.write_text("1 2 x\n")
    assert main(["attack", "--kind", "delete", "--p", "0.1", "--input", str(bad), "--output", str(tmp_path / "y")]) == 2
    assert main(["mask-dump", "--context", "5", "--vocab-size", "64", "--key-left", "123"]) == 2


def test_bench_check_config(tmp_path, capsys):
    good = tmp_path / "exp.json"
    good.write_text(json.dumps({"deltas": [0, 1], "n_generations": 10}))
    code, (res,) = run_json(capsys, ["bench", "--config", str(good), "--check-config"])
    assert code == 0 and res["valid"]
    good.write_text(json.dumps({"deltas": "many"}))
    assert main(["bench", "--config", str(good), "--check-config"]) == 2


def test_bench_small_run(tmp_path, capsys):
    cfg = tmp_path / "exp.json"
    cfg.write_text(json.dumps({
        "vocab_size": 32, "n_generations": 10, "gen_len": 40, "prompt_len": 2, "deltas": [0, 4], "methods": ["lr"],
        "model": {"train_sequences": 100, "train_length": 50, "oracle_sequences": 100},
        "null": {"calibration_sequences": 200, "test_sequences": 50, "length": 50},
        "attacks": {"intensities": [0.1]}}))
    code, (res,) = run_json(capsys, ["bench", "--config", str(cfg), "--out", str(tmp_path / "out"),
                                     "--parts", "detectability,robustness"])
    assert code == 0 and res["rows"] == 2 + 3
    assert (tmp_path / "out" / "robustness.csv").exists()


def test_token_file_format(tmp_path):
    p = tmp_path / "t.txt"
    write_tokens(p, [[1, 2, 3], [4, 5]], {"prompt_len": 1})
    assert p.read_text().startswith("# lrdwm-tokens/1")
    seqs, header = read_tokens(p)
    assert [s.tolist() for s in seqs] == [[1, 2, 3], [4, 5]] and header == {"prompt_len": 1}
