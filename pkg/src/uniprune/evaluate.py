"""Perplexity evaluation: exp of the mean next-token negative log-likelihood."""
from __future__ import annotations

import numpy as np

from .corpus import eval_windows
from .model import ModelConfig, ModelParams, MaskSet, LoraSet, forward_lm

Array = np.ndarray


def nll_from_logits(logits: Array, targets: Array) -> float:
    """Mean negative log-likelihood per token, numerically stable."""
    shifted = logits - logits.max(axis=-1, keepdims=True)
    logz = np.log(np.exp(shifted).sum(axis=-1))
    tgt = np.take_along_axis(shifted, targets[..., None], axis=-1)[..., 0]
    return float(np.mean(logz - tgt))


def eval_ppl(cfg: ModelConfig, params: ModelParams, split: Array,
             masks: MaskSet | None = None, lora: LoraSet | None = None,
             seq_len: int | None = None, batch_size: int = 16,
             max_windows: int | None = None) -> float:
    """Perplexity over deterministic non-overlapping windows of a token split."""
    seq = seq_len or cfg.seq_len
    inputs, targets = eval_windows(split, seq)
    if max_windows is not None:
        inputs, targets = inputs[:max_windows], targets[:max_windows]
    total, count = 0.0, 0
    for i in range(0, len(inputs), batch_size):
        chunk, tgt = inputs[i:i + batch_size], targets[i:i + batch_size]
        logits, _ = forward_lm(cfg, params, masks, lora, chunk)
        total += nll_from_logits(logits, tgt) * tgt.size
        count += tgt.size
    return float(np.exp(total / count))
