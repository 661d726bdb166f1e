"""``dlvm`` command-line entry point."""

from __future__ import annotations

import argparse
import json
import os
import sys

from ..rng import Rng
from .config import Config, ConfigError, load_config, parse_overrides
from .corpus import CorpusError
from .metrics import MetricsWriter

OUTPUT_ROOT_ENV = "DLVM_OUTPUT_ROOT"


def _config(args) -> Config:
    base = load_config(args.config) if args.config else Config()
    return parse_overrides(args.set or [], base)


def _out(args, default: str) -> str:
    if args.out:
        return args.out
    return os.path.join(os.environ.get(OUTPUT_ROOT_ENV, "runs"), default)


def _print(obj: dict) -> None:
    print(json.dumps(obj, sort_keys=True, default=float))


def cmd_synth(args) -> int:
    from .synth import synth_corpus

    cfg = _config(args)
    out = _out(args, "data")
    res = synth_corpus(cfg, out)
    _print({"out_dir": out, "n_sentences": len(res.sentences), "truncated_frac": res.truncated_frac})
    return 0


def cmd_train(args) -> int:
    from .run import load_data, train

    cfg = _config(args)
    sentences, vocab = load_data(cfg, args.data)
    _print(train(cfg, sentences, vocab, _out(args, "train"), args.resume))
    return 0


def _trained(args):
    from .run import load_data, load_trained

    cfg = _config(args)
    sentences, vocab = load_data(cfg, args.data)
    model, encoder = load_trained(cfg, args.model, vocab)
    return cfg, sentences, vocab, model, encoder


def cmd_eval(args) -> int:
    from .run import evaluate

    cfg, sentences, _, model, encoder = _trained(args)
    res, rows = evaluate(cfg, model, encoder, sentences, Rng(cfg.seed).child(13))
    out = _out(args, "eval")
    os.makedirs(out, exist_ok=True)
    cfg.write(out)
    with MetricsWriter(os.path.join(out, "metrics.jsonl")) as mw:
        for row in rows:
            mw.write(row)
        mw.write(res)
    _print(res)
    return 0


def cmd_sample(args) -> int:
    from .run import load_trained, sample
    from .synth import make_vocab

    cfg = _config(args)
    vocab = make_vocab(cfg)
    model, _ = load_trained(cfg, args.model, vocab)
    out = _out(args, "sample")
    os.makedirs(out, exist_ok=True)
    path = os.path.join(out, "samples.txt")
    frac = sample(cfg, model, vocab, args.n, Rng(cfg.seed).child(14), path)
    _print({"path": path, "n": args.n, "truncated_frac": frac})
    return 0


def cmd_diagnose(args) -> int:
    from .run import diagnose

    cfg, sentences, _, model, encoder = _trained(args)
    if encoder is None:
        raise ConfigError("diagnose needs a checkpoint with an inference network")
    out = _out(args, "diagnose")
    os.makedirs(out, exist_ok=True)
    with MetricsWriter(os.path.join(out, "metrics.jsonl")) as mw:
        diagnose(cfg, model, encoder, sentences[: args.n], Rng(cfg.seed).child(15), args.steps, mw)
    _print({"out_dir": out, "n": min(args.n, len(sentences))})
    return 0


def cmd_recipe(args) -> int:
    from .recipes import RECIPES, run_recipe

    if args.name not in RECIPES:
        raise ConfigError(f"unknown recipe {args.name!r}; available: {', '.join(sorted(RECIPES))}")
    out = _out(args, args.name)
    summary = run_recipe(args.name, out, args.set)
    _print({"recipe": args.name, "out_dir": out, **summary})
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="dlvm", description="Discrete and continuous latent-variable text models.")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, data=False, model=False):
        sp.add_argument("--config", help="key = value config file")
        sp.add_argument("--set", action="append", metavar="KEY=VALUE", help="override one config key")
        sp.add_argument("--out", help=f"output directory (default under ${OUTPUT_ROOT_ENV} or ./runs)")
        if data:
            sp.add_argument("--data", help="directory written by 'dlvm synth' (default: synthesize in memory)")
        if model:
            sp.add_argument("--model", required=True, help="checkpoint written by 'dlvm train'")
        return sp

    common(sub.add_parser("synth", help="sample a synthetic corpus")).set_defaults(fn=cmd_synth)
    sp = common(sub.add_parser("train", help="fit a model"), data=True)
    sp.add_argument("--resume", help="checkpoint to initialize parameters from")
    sp.set_defaults(fn=cmd_train)
    common(sub.add_parser("eval", help="evaluate a checkpoint"), data=True, model=True).set_defaults(fn=cmd_eval)
    sp = common(sub.add_parser("sample", help="draw sentences from a checkpoint"), model=True)
    sp.add_argument("--n", type=int, default=100)
    sp.set_defaults(fn=cmd_sample)
    sp = common(sub.add_parser("diagnose", help="per-sentence inference-gap report"), data=True, model=True)
    sp.add_argument("--n", type=int, default=20)
    sp.add_argument("--steps", type=int, default=200)
    sp.set_defaults(fn=cmd_diagnose)
    sp = common(sub.add_parser("recipe", help="run a preset experiment"))
    sp.add_argument("name")
    sp.set_defaults(fn=cmd_recipe)
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except (ConfigError, CorpusError, OSError) as exc:
        print(f"dlvm {args.command}: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
