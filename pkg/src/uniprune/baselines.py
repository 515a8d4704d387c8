"""One-shot magnitude pruning baseline.

Scores every prunable unit by the l2 norm of its weight group and removes
the smallest per layer, matching a requested uniform structure.  No
retraining, no masks: this is the classical comparison point.
"""
from __future__ import annotations

import numpy as np

from .model import ModelConfig, ModelParams, LoraSet, apply_lora
from .pruning import PrunePlan, materialize


def head_norms(params: ModelParams, cfg: ModelConfig) -> np.ndarray:
    """(n_layers, n_heads) group norms over each head's q/k/v/o slices."""
    out = np.zeros((cfg.n_layers, cfg.n_heads))
    dh = cfg.d_head
    for i, layer in enumerate(params.layers):
        for j in range(cfg.n_heads):
            cols = slice(j * dh, (j + 1) * dh)
            group = np.concatenate([
                layer.w_q[:, cols].ravel(), layer.w_k[:, cols].ravel(),
                layer.w_v[:, cols].ravel(), layer.w_o[cols, :].ravel()])
            out[i, j] = np.linalg.norm(group)
    return out


def channel_norms(params: ModelParams, cfg: ModelConfig) -> np.ndarray:
    """(n_layers, d_ff) group norms over each channel's gate/up/down slices."""
    out = np.zeros((cfg.n_layers, cfg.d_ff))
    for i, layer in enumerate(params.layers):
        stacked = np.concatenate([layer.w_gate, layer.w_up, layer.w_down.T])
        out[i] = np.linalg.norm(stacked, axis=0)
    return out


def magnitude_prune(params: ModelParams, cfg: ModelConfig, n_heads_drop: int,
                    n_channels_drop: int, lora: LoraSet | None = None
                    ) -> tuple[ModelParams, ModelConfig, PrunePlan]:
    """Excise the weakest units per layer to a uniform structure."""
    if n_heads_drop >= cfg.n_heads or n_channels_drop >= cfg.d_ff:
        raise ValueError("baseline would remove an entire layer dimension")
    merged = apply_lora(params, lora)
    h_norm = head_norms(merged, cfg)
    c_norm = channel_norms(merged, cfg)
    plan = PrunePlan(
        [sorted(int(j) for j in np.argsort(row, kind="stable")[:n_heads_drop])
         for row in h_norm],
        [sorted(int(j) for j in np.argsort(row, kind="stable")[:n_channels_drop])
         for row in c_norm])
    small, small_cfg = materialize(merged, plan, cfg)
    return small, small_cfg, plan
