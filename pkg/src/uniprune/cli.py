"""Command-line entry points: pretrain, prune, eval, sweep, stats.

Configuration is one flat JSON object whose keys mirror the model, run, and
pretraining dataclasses; any flag of the same (dashed) name overrides the
file value.  Unknown keys are hard errors so a typo cannot silently fall
back to a default.

Exit codes: 0 success, 2 configuration error, 3 constraint not met,
4 numerical failure.
"""
from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from pathlib import Path

import numpy as np

from .autodiff import NonFiniteError
from .checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from .corpus import Corpus
from .evaluate import eval_ppl
from .model import ModelConfig
from .pipeline import run_pruning
from .pretrain import PretrainConfig, pretrain
from .stats import export_mask_stats
from .sweep import sweep
from .trainer import RunConfig

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_CONSTRAINT = 3
EXIT_NUMERIC = 4


class ConfigError(Exception):
    pass


MODEL_KEYS = {f.name: f.type for f in dataclasses.fields(ModelConfig)}
RUN_KEYS = {f.name: f.type for f in dataclasses.fields(RunConfig)
            if f.name != "model"}
PRETRAIN_KEYS = {"pretrain_" + f.name: f.type
                 for f in dataclasses.fields(PretrainConfig)}
PATH_KEYS = {"checkpoint": str, "corpus": str, "out_dir": str,
             "eval_fraction": float}
ALL_KEYS = {**MODEL_KEYS, **RUN_KEYS, **PRETRAIN_KEYS, **PATH_KEYS}

_BOOL_FIELDS = {"include_lm_loss"}
_INT_FIELDS = {"n_layers", "n_heads", "d_head", "d_hidden", "d_ff", "vocab_size",
               "seq_len", "total_iterations", "batch_size", "interval_start",
               "interval_end", "lora_rank", "seed", "pretrain_steps",
               "pretrain_batch_size", "pretrain_eval_every", "pretrain_eval_windows",
               "pretrain_seq_len", "pretrain_seed"}


def _coerce(key: str, value):
    if key in _BOOL_FIELDS:
        if isinstance(value, bool):
            return value
        raise ConfigError(f"{key} must be true or false")
    if key in PATH_KEYS and PATH_KEYS[key] is str:
        return str(value)
    if key in _INT_FIELDS:
        if value is None:
            return None
        if isinstance(value, float) and not value.is_integer():
            raise ConfigError(f"{key} must be an integer, got {value}")
        return int(value)
    return float(value) if isinstance(value, (int, float)) else value


def load_config(path: str | None, overrides: dict) -> dict:
    merged: dict = {}
    if path is not None:
        try:
            with open(path) as fh:
                raw = json.load(fh)
        except FileNotFoundError:
            raise ConfigError(f"config file not found: {path}")
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file is not valid JSON: {exc}")
        if not isinstance(raw, dict):
            raise ConfigError("config file must hold a JSON object")
        merged.update(raw)
    merged.update(overrides)
    unknown = sorted(set(merged) - set(ALL_KEYS))
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
    return {k: _coerce(k, v) for k, v in merged.items()}


def build_run_config(cfg: dict) -> RunConfig:
    model = ModelConfig(**{k: v for k, v in cfg.items() if k in MODEL_KEYS})
    run = RunConfig(model=model,
                    **{k: v for k, v in cfg.items() if k in RUN_KEYS})
    try:
        run.validate()
    except ValueError as exc:
        raise ConfigError(str(exc))
    return run


def build_pretrain_config(cfg: dict) -> PretrainConfig:
    kwargs = {k[len("pretrain_"):]: v for k, v in cfg.items() if k in PRETRAIN_KEYS}
    pcfg = PretrainConfig(**kwargs)
    try:
        pcfg.validate()
    except ValueError as exc:
        raise ConfigError(str(exc))
    return pcfg


def load_corpus(cfg: dict) -> Corpus:
    frac = cfg.get("eval_fraction", 0.1)
    if "corpus" in cfg:
        path = Path(cfg["corpus"])
        if not path.exists():
            raise ConfigError(f"corpus file not found: {path}")
        return Corpus.from_file(path, frac)
    return Corpus.bundled(frac)


# -- subcommands -----------------------------------------------------------


def cmd_pretrain(args: argparse.Namespace) -> int:
    cfg = load_config(args.config, args.overrides)
    run_cfg = build_run_config(cfg)
    pcfg = build_pretrain_config(cfg)
    corpus = load_corpus(cfg)
    params, history = pretrain(run_cfg.model, corpus, pcfg, log_every=1)
    out = Path(args.out)
    save_checkpoint(out, Checkpoint(run_cfg.model, params,
                                    extra={"pretrain_history": history}))
    print(json.dumps({"checkpoint": str(out),
                      "final_eval_ppl": history[-1]["eval_ppl"]}, indent=1))
    return EXIT_OK


def cmd_prune(args: argparse.Namespace) -> int:
    cfg = load_config(args.config, args.overrides)
    run_cfg = build_run_config(cfg)
    if "checkpoint" not in cfg:
        raise ConfigError("prune needs a 'checkpoint' pointing at the dense model")
    try:
        dense = load_checkpoint(cfg["checkpoint"])
    except FileNotFoundError as exc:
        raise ConfigError(str(exc))
    if dense.config != run_cfg.model:
        raise ConfigError("checkpoint model shape differs from the configured model")
    corpus = load_corpus(cfg)
    out_dir = cfg.get("out_dir", "runs/prune")
    result = run_pruning(run_cfg, dense.params, corpus, out_dir=out_dir,
                         log_every=args.log_every)
    s = result.summary
    print(json.dumps({k: s[k] for k in
                      ("resource_met", "masks_converged", "achieved_sparsity",
                       "materialized_sparsity", "size_after", "target_params",
                       "equivalence_diff", "pruned_eval_ppl", "dense_eval_ppl")
                      if k in s}, indent=1, sort_keys=True))
    if not (s["resource_met"] and s["masks_converged"]):
        print("constraint not met: resource or sparsity targets missed",
              file=sys.stderr)
        return EXIT_CONSTRAINT
    return EXIT_OK


def cmd_eval(args: argparse.Namespace) -> int:
    cfg = load_config(args.config, args.overrides)
    if "checkpoint" not in cfg:
        raise ConfigError("eval needs a 'checkpoint' to score")
    try:
        ckpt = load_checkpoint(cfg["checkpoint"])
    except FileNotFoundError as exc:
        raise ConfigError(str(exc))
    corpus = load_corpus(cfg)
    split = corpus.eval if args.split == "eval" else corpus.train
    ppl = eval_ppl(ckpt.config, ckpt.params, split, masks=ckpt.masks,
                   lora=ckpt.lora, max_windows=args.max_windows)
    print(json.dumps({"split": args.split, "perplexity": ppl}, indent=1))
    return EXIT_OK


def cmd_sweep(args: argparse.Namespace) -> int:
    cfg = load_config(args.config, args.overrides)
    run_cfg = build_run_config(cfg)
    if "checkpoint" not in cfg:
        raise ConfigError("sweep needs a 'checkpoint' pointing at the dense model")
    try:
        dense = load_checkpoint(cfg["checkpoint"])
    except FileNotFoundError as exc:
        raise ConfigError(str(exc))
    corpus = load_corpus(cfg)
    try:
        values = [json.loads(v) for v in args.values.split(",")]
    except json.JSONDecodeError:
        raise ConfigError(f"cannot parse sweep values: {args.values!r}")
    try:
        reports = sweep(args.parameter, values, run_cfg, dense.params, corpus,
                        out_dir=cfg.get("out_dir", "runs/sweep"),
                        log_every=args.log_every)
    except ValueError as exc:
        raise ConfigError(str(exc))
    print(json.dumps([{k: r.get(k) for k in
                       ("value", "final_loss", "achieved_sparsity",
                        "constraint_failure", "error")} for r in reports],
                     indent=1))
    return EXIT_OK


def cmd_stats(args: argparse.Namespace) -> int:
    try:
        ckpt = load_checkpoint(args.checkpoint)
    except FileNotFoundError as exc:
        raise ConfigError(str(exc))
    if ckpt.masks is None:
        raise ConfigError("checkpoint carries no masks to summarize")
    stats = export_mask_stats(ckpt.masks, args.out)
    print(json.dumps({"out": str(args.out),
                      "retained_heads": stats.retained_heads.tolist(),
                      "retained_channels": stats.retained_channels.tolist()},
                     indent=1))
    return EXIT_OK


# -- argument plumbing -------------------------------------------------------


def _add_config_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", default=None, help="flat JSON config file")
    group = parser.add_argument_group("config overrides")
    for key in sorted(ALL_KEYS):
        flag = "--" + key.replace("_", "-")
        if key in _BOOL_FIELDS:
            group.add_argument(flag, dest=key, default=None,
                               action=argparse.BooleanOptionalAction)
        elif key in _INT_FIELDS:
            group.add_argument(flag, dest=key, type=int, default=None)
        elif key in PATH_KEYS and PATH_KEYS[key] is str:
            group.add_argument(flag, dest=key, type=str, default=None)
        else:
            group.add_argument(flag, dest=key, type=float, default=None)


def _collect_overrides(args: argparse.Namespace) -> dict:
    return {k: getattr(args, k) for k in ALL_KEYS
            if getattr(args, k, None) is not None}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="uniprune",
        description="structured pruning of a toy transformer with learned masks")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("pretrain", help="train the dense byte-level model")
    _add_config_flags(p)
    p.add_argument("--out", default="teacher.npz")
    p.set_defaults(func=cmd_pretrain)

    p = sub.add_parser("prune", help="run mask learning and excise the model")
    _add_config_flags(p)
    p.add_argument("--log-every", type=int, default=100)
    p.set_defaults(func=cmd_prune)

    p = sub.add_parser("eval", help="perplexity of a checkpoint on the corpus")
    _add_config_flags(p)
    p.add_argument("--split", choices=("train", "eval"), default="eval")
    p.add_argument("--max-windows", type=int, default=None)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("sweep", help="repeat pruning across one knob")
    _add_config_flags(p)
    p.add_argument("--parameter", required=True)
    p.add_argument("--values", required=True,
                   help="comma-separated values, e.g. 1,10,50")
    p.add_argument("--log-every", type=int, default=0)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("stats", help="export mask value distribution")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out", default="mask_stats.csv")
    p.set_defaults(func=cmd_stats)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    args.overrides = _collect_overrides(args)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NonFiniteError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except RuntimeError as exc:
        print(f"constraint not met: {exc}", file=sys.stderr)
        return EXIT_CONSTRAINT


if __name__ == "__main__":
    sys.exit(main())
