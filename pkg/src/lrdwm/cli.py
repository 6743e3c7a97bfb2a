"""``lrdwm`` command line.

Exit codes: 0 success, 1 usage error, 2 data or configuration error.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
import warnings
from pathlib import Path

import numpy as np

from . import __version__
from .attacks import KINDS as ATTACK_KINDS, apply_attack
from .baselines import DmarkInjector, LeftOnlyInjector, build_inverse_table
from .bench import PARTS, SCHEMA, ExperimentConfig, derive_seed, run_bench
from .detector import NullCalibration, calibrate_null, detect
from .dlm_sim import KINDS as SCHEDULE_KINDS, MarkovSource, NGramModel, decode, make_schedule, train_base_model
from .errors import LRDWMError, UsageError
from .inject import InjectorConfig, LRInjector
from .tokens_io import parse_ids, read_keys, read_tokens, write_tokens
from .vocab_hash import Vocabulary, WatermarkKey, green_mask

log = logging.getLogger("lrdwm")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}\n{self.format_usage().strip()}")


def _emit(args, payload: dict, text: str = None):
    if args.json:
        print(json.dumps(payload, sort_keys=True, default=str))
    else:
        print(text if text is not None else "\n".join(f"{k}: {v}" for k, v in payload.items()))


def _keys(args, need=("left", "right")) -> dict:
    keys = read_keys(args.key_file) if getattr(args, "key_file", None) else {}
    for name in ("left", "right", "single"):
        flag = getattr(args, f"key_{name}", None)
        if flag:
            keys[name] = WatermarkKey.from_hex(flag)
    missing = [n for n in need if n not in keys]
    if missing:
        raise UsageError("missing key(s): " + ", ".join(f"--key-{n}" for n in missing) + " (or --key-file)")
    return keys


def _fprs(text):
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise UsageError(f"cannot parse FPR list {text!r}") from None


# -- subcommands ------------------------------------------------------------

def cmd_corpus(args):
    src = MarkovSource(args.vocab_size, args.branching, args.leak, args.concentration, seed=args.source_seed)
    seqs = src.sample(args.n, args.length, derive_seed(args.seed, "corpus"))
    header = {"vocab_size": args.vocab_size, "source": src.describe(), "seed": args.seed}
    write_tokens(args.out, seqs, header)
    _emit(args, {"out": str(args.out), "sequences": args.n, "length": args.length, **header})


def cmd_train(args):
    seqs, header = read_tokens(args.corpus)
    V = args.vocab_size or header.get("vocab_size")
    model = train_base_model(seqs, order=args.order, smoothing=args.smoothing, vocab_size=V)
    model.save(args.out)
    _emit(args, {"out": str(args.out), "vocab_size": model.vocab_size, "order": model.order,
                 "smoothing": model.smoothing, "tokens": int(model.unigram.sum())})


def _injector(args, vocab):
    if args.method == "none":
        return None
    if args.method == "lr":
        k = _keys(args)
        return LRInjector(InjectorConfig(k["left"], k["right"], args.delta, args.gamma), vocab)
    k = _keys(args, need=("single",))
    if args.method == "left":
        return LeftOnlyInjector(k["single"], args.delta, vocab, args.gamma)
    return DmarkInjector(build_inverse_table(k["single"], vocab, args.gamma), k["single"], args.delta, vocab)


def cmd_gen(args):
    model = NGramModel.load(args.model)
    vocab = Vocabulary(model.vocab_size)
    if args.prompts:
        prompts, _ = read_tokens(args.prompts)
    elif args.prompt is not None:
        prompts = [parse_ids(args.prompt)] * args.n
    else:
        raise UsageError("give --prompt or --prompts")
    plen = {p.size for p in prompts}
    if len(plen) != 1:
        raise UsageError("all prompts must have the same length")
    P = plen.pop()
    inj = _injector(args, vocab)
    out, audit_lines = [], []
    for i, prompt in enumerate(prompts):
        sch = make_schedule(args.schedule, P + args.length, P, steps=args.steps, block_len=args.block_len,
                            seed=derive_seed(args.seed, "schedule", i))
        res = decode(model, prompt, sch, temperature=args.temperature, injector=inj,
                     seed=derive_seed(args.seed, "sample", i), vocab=vocab, audit=bool(args.audit_out),
                     forward_all=not args.fast)
        out.append(res.tokens)
        audit_lines += [json.dumps({"seq": i, **json.loads(r.to_json())}, sort_keys=True) for r in res.audit]
    header = {"prompt_len": P, "vocab_size": vocab.size, "method": args.method, "delta": args.delta,
              "schedule": args.schedule, "temperature": args.temperature, "seed": args.seed}
    write_tokens(args.out, out, header)
    if args.audit_out:
        Path(args.audit_out).write_text("\n".join(audit_lines) + "\n")
    _emit(args, {"out": str(args.out), "sequences": len(out), **header})


def cmd_calibrate(args):
    seqs, header = read_tokens(args.null_corpus)
    V = args.vocab_size or header.get("vocab_size")
    if not V:
        raise UsageError("vocabulary size unknown: pass --vocab-size")
    k = _keys(args)
    cfg = InjectorConfig(k["left"], k["right"], 0.0, args.gamma)
    lengths = [int(x) for x in args.lengths.split(",")] if args.lengths else None
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        cal = calibrate_null(seqs, cfg, Vocabulary(int(V)), _fprs(args.fprs), lengths=lengths,
                             null_mean=args.null_mean)
    for w in caught:
        log.warning("%s", w.message)
    cal.save(args.out)
    _emit(args, {"out": str(args.out), "sigma2": cal.sigma2,
                 "thresholds": {str(f): t for f, t in cal.thresholds.items()},
                 "gaussian": {str(f): t for f, t in cal.gaussian.items()}, "sequences": len(seqs),
                 "warnings": [str(w.message) for w in caught]})


def cmd_detect(args):
    cal = NullCalibration.load(args.calibration)
    seqs, header = read_tokens(args.input)
    k = _keys(args)
    vocab = Vocabulary(int(cal.hash_params["vocab_size"]))
    cfg = InjectorConfig(k["left"], k["right"], 0.0, cal.hash_params.get("gamma", 0.5))
    plen = args.prompt_len if args.prompt_len is not None else int(header.get("prompt_len", 0))
    results = [detect(s, cfg, cal, args.fpr, vocab=vocab, prompt_len=plen) for s in seqs]
    if args.json:
        for r in results:
            print(json.dumps(r.to_dict(per_token=args.per_token), sort_keys=True))
        return
    for i, r in enumerate(results):
        verdict = {True: "WATERMARKED", False: "not detected", None: "insufficient length"}[r.decision]
        print(f"{i}\tz={r.z:.3f}\tT={r.scored_len}\tthreshold={r.threshold_used:.3f}\t{verdict}")
    pos = sum(r.decision is True for r in results)
    print(f"# {pos}/{len(results)} flagged at FPR {args.fpr}")


def cmd_attack(args):
    seqs, header = read_tokens(args.input)
    V = args.vocab_size or header.get("vocab_size")
    if args.kind == "substitute" and not V:
        raise UsageError("substitution needs --vocab-size")
    vocab = Vocabulary(int(V)) if V else None
    plen = args.prompt_len if args.prompt_len is not None else int(header.get("prompt_len", 0))
    out = []
    for i, s in enumerate(seqs):
        tail = apply_attack(args.kind, s[plen:], args.p, vocab, seed=derive_seed(args.seed, "attack", i))
        out.append(np.concatenate([s[:plen], tail]))
    header = {**header, "attack": args.kind, "attack_p": args.p, "attack_seed": args.seed}
    write_tokens(args.output, out, header)
    _emit(args, {"out": str(args.output), "sequences": len(out), "kind": args.kind, "p": args.p})


def cmd_bench(args):
    if args.print_schema:
        print(json.dumps(SCHEMA, indent=2))
        return
    if not args.config:
        cfg = ExperimentConfig({})
    else:
        cfg = ExperimentConfig.load(args.config)
    if args.seed is not None and args.seed != cfg.seed:
        cfg = cfg.replace(seed=args.seed)
    if args.check_config:
        _emit(args, {"valid": True, "config_digest": cfg.digest})
        return
    if not args.out:
        raise UsageError("--out is required unless --check-config is given")
    parts = tuple(p.strip() for p in args.parts.split(",")) if args.parts else PARTS
    res = run_bench(cfg, args.out, parts)
    _emit(args, {"out": str(args.out), "rows": len(res["rows"]), "config_digest": cfg.digest,
                 "parts": list(parts)})


def cmd_mask_dump(args):
    keys = _keys(args, need=(args.side,))
    vocab = Vocabulary(args.vocab_size)
    mask = green_mask(args.context, keys[args.side], vocab, args.gamma)
    _emit(args, {"context": args.context, "side": args.side, "vocab_size": vocab.size, "gamma": args.gamma,
                 "popcount": mask.popcount(), "digest": f"{mask.digest():016x}", "hex": mask.hex()},
          text=mask.hex())


# -- parser -----------------------------------------------------------------

def _key_flags(p, single=False):
    p.add_argument("--key-left", metavar="HEX", help="left-neighbor key (16 hex digits)")
    p.add_argument("--key-right", metavar="HEX", help="right-neighbor key")
    if single:
        p.add_argument("--key-single", "--key", dest="key_single", metavar="HEX",
                       help="single key for the left-only and dmark baselines")
    p.add_argument("--key-file", metavar="FILE", help="JSON key file (lrdwm-keys/1) instead of key flags")


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--json", action="store_true", help="machine-readable output")
    common.add_argument("--seed", type=int, help="root seed (default 0)")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = _Parser(prog="lrdwm", description="Two-sided watermarking for diffusion-style decoding.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND", parser_class=_Parser)
    sub.required = True

    p = sub.add_parser("corpus", parents=[common], help="sample synthetic text from a Markov source")
    p.add_argument("--vocab-size", type=int, default=256)
    p.add_argument("--n", type=int, default=1000, help="number of sequences")
    p.add_argument("--length", type=int, default=300)
    p.add_argument("--branching", type=int, default=8)
    p.add_argument("--leak", type=float, default=0.05)
    p.add_argument("--concentration", type=float, default=1.0)
    p.add_argument("--source-seed", type=int, default=0, help="seed fixing the chain itself")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_corpus)

    p = sub.add_parser("train", parents=[common], help="fit the n-gram base model")
    p.add_argument("--corpus", required=True)
    p.add_argument("--order", type=int, choices=(2, 3), default=3)
    p.add_argument("--smoothing", type=float, default=0.1)
    p.add_argument("--vocab-size", type=int)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("gen", parents=[common], help="decode continuations, optionally watermarked")
    p.add_argument("--model", required=True)
    p.add_argument("--prompt", help="prompt ids, e.g. '3 17 5'")
    p.add_argument("--prompts", help="token file with one prompt per line")
    p.add_argument("--n", type=int, default=1, help="copies of --prompt to decode")
    p.add_argument("--length", type=int, default=300, help="tokens to generate")
    p.add_argument("--steps", type=int, help="decoding steps (default: one token per step)")
    p.add_argument("--schedule", choices=SCHEDULE_KINDS, default="random")
    p.add_argument("--block-len", type=int)
    p.add_argument("--temperature", type=float, default=0.0, help="0 is greedy")
    p.add_argument("--method", choices=("lr", "left", "dmark", "none"), default="lr")
    p.add_argument("--delta", type=float, default=2.0)
    p.add_argument("--gamma", type=float, default=0.5)
    _key_flags(p, single=True)
    p.add_argument("--fast", action="store_true", help="score only the positions revealed each step")
    p.add_argument("--out", required=True)
    p.add_argument("--audit-out", help="write per-position audit records (JSON lines)")
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("calibrate", parents=[common], help="null calibration of sigma^2 and thresholds")
    p.add_argument("--null-corpus", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--fprs", default="0.05,0.01,0.005")
    p.add_argument("--lengths", help="comma-separated text lengths for per-length thresholds")
    p.add_argument("--vocab-size", type=int)
    p.add_argument("--gamma", type=float, default=0.5)
    p.add_argument("--null-mean", type=float, help="per-token null mean (required when gamma != 0.5)")
    _key_flags(p)
    p.set_defaults(func=cmd_calibrate)

    p = sub.add_parser("detect", parents=[common], help="score texts and decide")
    p.add_argument("--input", required=True)
    p.add_argument("--calibration", required=True)
    p.add_argument("--fpr", type=float, default=0.01)
    p.add_argument("--prompt-len", type=int, help="tokens to skip (default: from the file header, else 0)")
    p.add_argument("--per-token", action="store_true", help="include per-token scores in JSON")
    _key_flags(p)
    p.set_defaults(func=cmd_detect)

    p = sub.add_parser("attack", parents=[common], help="perturb token files")
    p.add_argument("--kind", choices=ATTACK_KINDS, required=True)
    p.add_argument("--p", type=float, required=True, help="fraction of tokens to edit")
    p.add_argument("--input", required=True)
    p.add_argument("--output", required=True)
    p.add_argument("--vocab-size", type=int)
    p.add_argument("--prompt-len", type=int, help="leave this many leading tokens untouched")
    p.set_defaults(func=cmd_attack)

    p = sub.add_parser("bench", parents=[common], help="run the experiment harness")
    p.add_argument("--config", help="experiment JSON (defaults if omitted)")
    p.add_argument("--out", help="output directory")
    p.add_argument("--parts", help=f"comma-separated subset of {','.join(PARTS)}")
    p.add_argument("--check-config", action="store_true", help="validate the config and exit")
    p.add_argument("--print-schema", action="store_true", help="print the config JSON schema")
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("mask-dump", parents=[common], help="print a green mask as hex")
    p.add_argument("--context", type=int, required=True)
    p.add_argument("--side", choices=("left", "right", "single"), default="left")
    p.add_argument("--vocab-size", type=int, required=True)
    p.add_argument("--gamma", type=float, default=0.5)
    _key_flags(p, single=True)
    p.set_defaults(func=cmd_mask_dump)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.seed is None and args.command != "bench":
            args.seed = 0
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (LRDWMError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
