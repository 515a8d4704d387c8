"""Dense-model pretraining: next-token cross-entropy on the byte corpus.

Produces the teacher checkpoint the pruning run distills from.  The quality
bar is deliberately modest: training must push eval perplexity below
``target_ratio`` times the untrained model's perplexity (the untrained model
scores roughly the vocabulary size).
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import Graph, forward, backward
from .corpus import Corpus
from .evaluate import eval_ppl
from .model import ModelConfig, ModelParams, add_weight_params, build_lm
from .optim import AdamW


@dataclass(frozen=True)
class PretrainConfig:
    steps: int = 1200
    batch_size: int = 16
    lr: float = 3e-3
    weight_decay: float = 0.01
    seq_len: int | None = None      # defaults to the model's context length
    eval_every: int = 200
    eval_windows: int = 32
    target_ratio: float = 0.8
    seed: int = 0

    def validate(self) -> None:
        if self.steps < 1 or self.batch_size < 1:
            raise ValueError("steps and batch_size must be positive")
        if self.lr <= 0:
            raise ValueError("lr must be positive")
        if not 0.0 < self.target_ratio <= 1.0:
            raise ValueError("target_ratio must be in (0, 1]")


def pretrain(cfg: ModelConfig, corpus: Corpus, pcfg: PretrainConfig = PretrainConfig(),
             log_every: int = 0) -> tuple[ModelParams, list[dict]]:
    """Train a dense model from scratch; returns (params, eval history)."""
    pcfg.validate()
    rng = np.random.default_rng(pcfg.seed)
    params = ModelParams.init(cfg, rng)
    seq = pcfg.seq_len or cfg.seq_len

    g = Graph()
    tokens = g.placeholder("tokens", (pcfg.batch_size, seq), integer=True)
    targets = g.placeholder("targets", (pcfg.batch_size, seq), integer=True)
    weights = add_weight_params(g, params, trainable=True)
    logits, _ = build_lm(g, cfg, tokens, weights, None, None, pcfg.batch_size, seq)
    loss = g.cross_entropy(logits, targets)

    opt = AdamW(lr=pcfg.lr, weight_decay=pcfg.weight_decay)
    tensors = dict(params.named_tensors())
    untrained = eval_ppl(cfg, params, corpus.eval, seq_len=seq,
                         max_windows=pcfg.eval_windows)
    history = [{"step": 0, "eval_ppl": untrained, "loss": float(np.log(untrained))}]

    for step in range(1, pcfg.steps + 1):
        inp, tgt = corpus.sample_batch(rng, pcfg.batch_size, seq)
        values = forward(g, {"tokens": inp, "targets": tgt})
        grads = backward(g, loss, values)
        for name, nid in weights.items():
            new = opt.step(name, tensors[name], grads[nid])
            tensors[name] = new
            g.set_param(name, new)
        if step % pcfg.eval_every == 0 or step == pcfg.steps:
            _write_back(params, tensors)
            ppl = eval_ppl(cfg, params, corpus.eval, seq_len=seq,
                           max_windows=pcfg.eval_windows)
            history.append({"step": step, "eval_ppl": ppl,
                            "loss": float(values[loss])})
            if log_every:
                print(f"pretrain step {step:5d}  train loss {values[loss]:.4f}  "
                      f"eval ppl {ppl:.2f}")

    _write_back(params, tensors)
    final = history[-1]["eval_ppl"]
    if final >= pcfg.target_ratio * untrained:
        raise RuntimeError(
            f"pretraining missed the perplexity target: {final:.1f} "
            f">= {pcfg.target_ratio:.2f} * {untrained:.1f}")
    return params, history


def _write_back(params: ModelParams, tensors: dict[str, np.ndarray]) -> None:
    params.embed = tensors["embed"]
    params.final_gain = tensors["final_gain"]
    params.w_out = tensors["w_out"]
    for i, layer in enumerate(params.layers):
        for name in layer.__dataclass_fields__:
            setattr(layer, name, tensors[f"layers.{i}.{name}"])
