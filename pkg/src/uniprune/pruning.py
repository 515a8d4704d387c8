"""Turn converged masks and counts into a physically smaller dense model.

Three stages: pick the units to drop (smallest mask magnitude per layer),
fold adapters and residual mask values into the base weights, then slice
the weight matrices down to the surviving rows and columns.  Each stage is
a pure function so the intermediate models remain inspectable.
"""
from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .model import ModelConfig, ModelParams, MaskSet, LoraSet, apply_lora, forward_lm
from .sparsity import SparsityState, count_ceil

Array = np.ndarray

# Non-selected masks at or below this are a sign the optimizer zeroed more
# units than the count asked for; select_pruned flags them.
DEAD_MASK_EPS = 1e-9


@dataclass
class PrunePlan:
    """Per-layer unit removals. Counts are identical across layers by construction."""
    heads: list[list[int]]
    channels: list[list[int]]

    @property
    def n_heads_removed(self) -> int:
        return len(self.heads[0]) if self.heads else 0

    @property
    def n_channels_removed(self) -> int:
        return len(self.channels[0]) if self.channels else 0

    def validate(self, cfg: ModelConfig) -> None:
        if len(self.heads) != cfg.n_layers or len(self.channels) != cfg.n_layers:
            raise ValueError("plan layer count does not match the model")
        for name, rows, dim in (("head", self.heads, cfg.n_heads),
                                ("channel", self.channels, cfg.d_ff)):
            counts = {len(r) for r in rows}
            if len(counts) > 1:
                raise ValueError(f"{name} removal counts differ across layers")
            for idx in rows:
                if len(set(idx)) != len(idx):
                    raise ValueError(f"duplicate {name} indices in plan")
                if idx and (min(idx) < 0 or max(idx) >= dim):
                    raise ValueError(f"{name} index out of range")

    def as_dict(self) -> dict:
        return {"heads": [list(map(int, r)) for r in self.heads],
                "channels": [list(map(int, r)) for r in self.channels]}

    @classmethod
    def from_dict(cls, data: dict) -> "PrunePlan":
        return cls([list(map(int, r)) for r in data["heads"]],
                   [list(map(int, r)) for r in data["channels"]])


def _smallest_indices(row: Array, k: int) -> list[int]:
    # stable sort on magnitude: ties resolve to the lowest index
    order = np.argsort(np.abs(row), kind="stable")
    return sorted(int(i) for i in order[:k])


def select_pruned(masks: MaskSet, sparsity: SparsityState,
                  warn: bool = False) -> PrunePlan:
    """Choose the ceil(count) smallest-magnitude units in every layer.

    With `warn`, prints a notice when a unit outside the selected set is
    already numerically dead (the run pruned more than the count asked for).
    """
    k_head = count_ceil(sparsity.prune_heads)
    k_channel = count_ceil(sparsity.prune_channels)
    if k_head > masks.head.shape[1] or k_channel > masks.channel.shape[1]:
        raise ValueError("prune count exceeds layer dimension")
    heads = [_smallest_indices(row, k_head) for row in masks.head]
    channels = [_smallest_indices(row, k_channel) for row in masks.channel]
    if warn:
        for kind, rows, plan in (("head", masks.head, heads),
                                 ("channel", masks.channel, channels)):
            for layer, (row, sel) in enumerate(zip(rows, plan)):
                keep = np.setdiff1d(np.arange(row.size), sel)
                dead = keep[np.abs(row[keep]) <= DEAD_MASK_EPS]
                if dead.size:
                    print(f"warning: layer {layer} has {dead.size} unselected "
                          f"{kind} mask(s) at zero")
    return PrunePlan(heads, channels)


def fuse_masks(params: ModelParams, masks: MaskSet, cfg: ModelConfig,
               lora: LoraSet | None = None) -> ModelParams:
    """Fold adapters and then mask values into the weights.

    Head masks scale the per-head column blocks of w_v, channel masks scale
    the corresponding columns of w_gate and w_up.  The forward pass applies
    masks at exactly those points, so the fused model is bit-for-bit
    equivalent up to float multiplication order.
    """
    out = apply_lora(params, lora)
    dh = cfg.d_head
    for i, layer in enumerate(out.layers):
        head_scale = np.repeat(masks.head[i], dh)         # (attn_inner,)
        layer.w_v = layer.w_v * head_scale[None, :]
        layer.w_gate = layer.w_gate * masks.channel[i][None, :]
        layer.w_up = layer.w_up * masks.channel[i][None, :]
    return out


def materialize(params: ModelParams, plan: PrunePlan,
                cfg: ModelConfig) -> tuple[ModelParams, ModelConfig]:
    """Slice fused weights down to the surviving units.

    Expects `params` to already carry any mask scaling (see fuse_masks);
    removed units should have zero weight for exact equivalence.
    """
    plan.validate(cfg)
    new_heads = cfg.n_heads - plan.n_heads_removed
    new_ff = cfg.d_ff - plan.n_channels_removed
    if new_heads < 1 or new_ff < 1:
        raise ValueError("plan would leave an empty layer")
    small_cfg = replace(cfg, n_heads=new_heads, d_ff=new_ff)
    out = params.copy()
    for i, layer in enumerate(out.layers):
        keep_h = np.setdiff1d(np.arange(cfg.n_heads), plan.heads[i])
        keep_c = np.setdiff1d(np.arange(cfg.d_ff), plan.channels[i])
        cols = (keep_h[:, None] * cfg.d_head + np.arange(cfg.d_head)).ravel()
        layer.w_q = layer.w_q[:, cols]
        layer.w_k = layer.w_k[:, cols]
        layer.w_v = layer.w_v[:, cols]
        layer.w_o = layer.w_o[cols, :]
        layer.w_gate = layer.w_gate[:, keep_c]
        layer.w_up = layer.w_up[:, keep_c]
        layer.w_down = layer.w_down[keep_c, :]
    return out, small_cfg


def prune_model(params: ModelParams, masks: MaskSet, sparsity: SparsityState,
                cfg: ModelConfig, lora: LoraSet | None = None,
                hard_zero: bool = True) -> tuple[ModelParams, ModelConfig, PrunePlan]:
    """Full pipeline: select units, fuse, excise.

    `hard_zero` snaps the selected masks to exactly 0 before fusing so the
    sliced model matches the fused one to float precision; the residual
    sub-1e-3 values are training leftovers, not learned scalings.
    """
    plan = select_pruned(masks, sparsity, warn=True)
    fused_masks = masks.copy()
    if hard_zero:
        for i in range(cfg.n_layers):
            fused_masks.head[i, plan.heads[i]] = 0.0
            fused_masks.channel[i, plan.channels[i]] = 0.0
    fused = fuse_masks(params, fused_masks, cfg, lora)
    small_params, small_cfg = materialize(fused, plan, cfg)
    return small_params, small_cfg, plan


def verify_equivalence(cfg: ModelConfig, params: ModelParams, masks: MaskSet,
                       small_cfg: ModelConfig, small_params: ModelParams,
                       lora: LoraSet | None = None, n_batches: int = 16,
                       batch_size: int = 4, seq_len: int | None = None,
                       rng: np.random.Generator | None = None) -> float:
    """Max abs logit difference between the masked and the excised model.

    The caller must hard-zero the pruned units' masks first; residual mass
    there shows up directly in the reported difference.
    """
    if small_cfg.vocab_size != cfg.vocab_size or small_cfg.seq_len != cfg.seq_len:
        raise ValueError("model pair differs in vocabulary or context length")
    if rng is None:
        rng = np.random.default_rng(0)
    seq = seq_len or min(cfg.seq_len, 32)
    worst = 0.0
    for _ in range(n_batches):
        tokens = rng.integers(0, cfg.vocab_size, size=(batch_size, seq))
        big, _ = forward_lm(cfg, params, masks, lora, tokens)
        small, _ = forward_lm(small_cfg, small_params, None, None, tokens)
        worst = max(worst, float(np.max(np.abs(big - small))))
    return worst
