"""Minimax mask-training loop.

One iteration interleaves a primal descent with two multiplier ascents:

1. masks take an AdamW step on the distillation loss, are clamped to [0, 1],
   and then decay through the proximal operator (head masks every iteration,
   channel masks only when the interval schedule fires);
2. the continuous prune counts take a descent step combining the
   straight-through smallest-k gradient with the budget pressure;
3. the sparsity multiplier ascends on the remaining smallest-k mask mass;
4. the budget multiplier ascends on the parameter excess, floored at zero;
5. LoRA adapters take their AdamW step on the same batch gradients.

The teacher branch shares weight nodes with the student inside one graph and
is recomputed every batch; frozen weights receive no backward work.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from uniprune import sparsity as sp
from uniprune.autodiff import Graph, NonFiniteError, backward, forward
from uniprune.losses import DistillConfig, distill_loss
from uniprune.model import (LoraSet, MaskSet, ModelConfig, ModelParams,
                            add_lora_params, add_mask_params, add_weight_params,
                            build_lm)
from uniprune.optim import AdamW

Array = np.ndarray
BatchFn = Callable[[np.random.Generator], tuple[Array, Array]]

MASK_CONVERGED_TOL = 1e-3  # per-layer smallest-k masks must end below this


@dataclass(frozen=True)
class RunConfig:
    model: ModelConfig = ModelConfig()
    target_sparsity: float = 0.5
    total_iterations: int = 2000
    batch_size: int = 16
    mask_lr: float = 0.01
    lora_lr: float = 0.001
    decay_rate: float = 0.02          # proximal shrink strength per multiplier unit
    sparsity_lr: float = 1e-3         # descent rate on the prune counts
    sparsity_penalty_lr: float = 1e-2 # ascent rate of the smallest-k multiplier
    resource_penalty_lr: float = 1e-4 # ascent rate of the budget multiplier
    interval_start: int = 10
    interval_end: int = 1
    alpha: float = 1.0
    include_lm_loss: bool = False
    lm_loss_weight: float = 1.0
    lora_rank: int = 4
    seed: int = 0

    def validate(self) -> None:
        if not 0.0 <= self.target_sparsity < 1.0:
            raise ValueError("target_sparsity must be in [0, 1)")
        if self.total_iterations < 1:
            raise ValueError("total_iterations must be >= 1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        for name in ("mask_lr", "lora_lr", "sparsity_lr", "sparsity_penalty_lr",
                     "resource_penalty_lr"):
            if getattr(self, name) <= 0.0:
                raise ValueError(f"{name} must be positive")
        if self.decay_rate < 0.0:
            raise ValueError("decay_rate must be >= 0")
        if self.interval_start < 1 or self.interval_end < 1:
            raise ValueError("interval bounds must be >= 1")
        if self.lora_rank < 1:
            raise ValueError("lora_rank must be >= 1")
        self.distill().validate()

    def distill(self) -> DistillConfig:
        return DistillConfig(alpha=self.alpha, include_lm_loss=self.include_lm_loss,
                             lm_loss_weight=self.lm_loss_weight)


def interval_schedule(iteration: int, cfg: RunConfig) -> int:
    """Channel-mask prox cadence: linear from interval_start to interval_end
    over the run, rounded half-up, never below 1."""
    frac = iteration / cfg.total_iterations
    raw = cfg.interval_start + (cfg.interval_end - cfg.interval_start) * frac
    return max(1, int(np.floor(raw + 0.5)))


@dataclass
class TrainingGraph:
    graph: Graph
    tokens: int
    targets: int | None
    loss: int
    parts: dict[str, int]
    student_logits: int
    teacher_logits: int


def build_training_graph(cfg: ModelConfig, params: ModelParams, masks: MaskSet,
                         lora: LoraSet, dcfg: DistillConfig, batch_size: int,
                         seq_len: int | None = None,
                         trainable_weights: bool = False) -> TrainingGraph:
    """Student (masked + adapters) and frozen teacher over shared weights,
    combined into one distillation loss."""
    seq = cfg.seq_len if seq_len is None else seq_len
    g = Graph()
    tokens = g.placeholder("tokens", (batch_size, seq), integer=True)
    targets = None
    if dcfg.include_lm_loss:
        targets = g.placeholder("targets", (batch_size, seq), integer=True)
    weights = add_weight_params(g, params, trainable=trainable_weights)
    emb = g.embedding(weights["embed"], tokens)
    teacher = build_lm(g, cfg, tokens, weights, None, None, batch_size, seq,
                       token_embedding=emb)
    mask_ids = add_mask_params(g, masks, trainable=True)
    lora_ids = add_lora_params(g, lora, trainable=True)
    student = build_lm(g, cfg, tokens, weights, mask_ids, lora_ids, batch_size,
                       seq, token_embedding=emb)
    loss, parts = distill_loss(g, student, teacher, dcfg, targets)
    return TrainingGraph(graph=g, tokens=tokens, targets=targets, loss=loss,
                         parts=parts, student_logits=student[0],
                         teacher_logits=teacher[0])


@dataclass
class TrainResult:
    config: RunConfig
    masks: MaskSet
    lora: LoraSet
    state: sp.SparsityState
    trace: list[dict] = field(repr=False, default_factory=list)
    summary: dict = field(default_factory=dict)


class MaskTrainer:
    def __init__(self, run_cfg: RunConfig, params: ModelParams, batch_fn: BatchFn) -> None:
        run_cfg.validate()
        self.cfg = run_cfg
        self.params = params
        self.batch_fn = batch_fn
        self.rng = np.random.default_rng(run_cfg.seed)
        mcfg = run_cfg.model
        self.masks = MaskSet.ones(mcfg)
        self.lora = LoraSet.init(mcfg, run_cfg.lora_rank, self.rng)
        self.state = sp.SparsityState()
        self.resource = sp.ResourceModel.from_config(mcfg, run_cfg.target_sparsity)
        self.tg = build_training_graph(mcfg, params, self.masks, self.lora,
                                       run_cfg.distill(), run_cfg.batch_size)
        self.mask_opt = AdamW(run_cfg.mask_lr)
        self.lora_opt = AdamW(run_cfg.lora_lr)
        self._mask_ids = {("head", i): self.tg.graph.params[f"mask_head.{i}"]
                          for i in range(mcfg.n_layers)}
        self._mask_ids.update({("channel", i): self.tg.graph.params[f"mask_channel.{i}"]
                               for i in range(mcfg.n_layers)})
        self._lora_ids = {name: self.tg.graph.params[name]
                          for name, _ in self.lora.named_tensors()}
        self.iteration = 0
        self.trace: list[dict] = []

    # -- one iteration -----------------------------------------------------

    def step(self) -> dict:
        self.iteration += 1
        t = self.iteration
        cfg, mcfg, state = self.cfg, self.cfg.model, self.state
        tokens, targets = self.batch_fn(self.rng)
        bindings = {"tokens": tokens}
        if self.tg.targets is not None:
            bindings["targets"] = targets
        try:
            values = forward(self.tg.graph, bindings)
            grads = backward(self.tg.graph, self.tg.loss, values)
        except NonFiniteError as exc:
            raise NonFiniteError(f"iteration {t}: {exc}") from exc

        # (1) mask descent, clamp, prox (heads every step, channels on schedule)
        interval = interval_schedule(t, cfg)
        for i in range(mcfg.n_layers):
            nid = self._mask_ids[("head", i)]
            row = self.mask_opt.step(("head", i), self.masks.head[i], grads[nid])
            np.clip(row, 0.0, 1.0, out=row)
            row = sp.prox(row, state.prune_heads, cfg.decay_rate, state.sparsity_mult)
            self.masks.head[i] = row
            self.tg.graph.set_param(f"mask_head.{i}", row)
        for i in range(mcfg.n_layers):
            nid = self._mask_ids[("channel", i)]
            row = self.mask_opt.step(("channel", i), self.masks.channel[i], grads[nid])
            np.clip(row, 0.0, 1.0, out=row)
            if t % interval == 0:
                row = sp.prox(row, state.prune_channels, cfg.decay_rate,
                              state.sparsity_mult)
            self.masks.channel[i] = row
            self.tg.graph.set_param(f"mask_channel.{i}", row)

        # (2) prune-count descent (straight-through smallest-k + budget pressure)
        grad_heads = (state.sparsity_mult
                      * sum(sp.grad_count_sparsity(row, state.prune_heads)
                            for row in self.masks.head)
                      + sp.grad_count_resource(self.resource, state.resource_mult,
                                               "head"))
        grad_channels = (state.sparsity_mult
                         * sum(sp.grad_count_sparsity(row, state.prune_channels)
                               for row in self.masks.channel)
                         + sp.grad_count_resource(self.resource, state.resource_mult,
                                                  "channel"))
        state.prune_heads = float(np.clip(
            state.prune_heads - cfg.sparsity_lr * grad_heads, 0.0, mcfg.n_heads - 1))
        state.prune_channels = float(np.clip(
            state.prune_channels - cfg.sparsity_lr * grad_channels, 0.0, mcfg.d_ff - 1))

        # (3) sparsity-multiplier ascent on the remaining smallest-k mass
        head_mass, channel_mass = sp.layer_mass(self.masks, state)
        mass_total = float(head_mass.sum() + channel_mass.sum())
        state.sparsity_mult += cfg.sparsity_penalty_lr * mass_total

        # (4) budget-multiplier ascent, floored at zero
        size_now = self.resource.size_after(state.prune_heads, state.prune_channels)
        state.resource_mult = max(
            0.0, state.resource_mult
            + cfg.resource_penalty_lr * (size_now - self.resource.target_params))

        # (5) adapter step on the same batch gradients
        for name, _ in self.lora.named_tensors():
            nid = self._lora_ids[name]
            layer_idx, mat, side = name.split(".")[1:]
            pair = self.lora.layers[int(layer_idx)][mat]
            new = self.lora_opt.step(name, getattr(pair, side), grads[nid])
            setattr(pair, side, new)
            self.tg.graph.set_param(name, new)

        row = {
            "iteration": t,
            "loss": float(values[self.tg.loss]),
            "kl": float(values[self.tg.parts["kl"]]),
            "layer_mse": float(values[self.tg.parts["layer"]]),
            "prune_heads": state.prune_heads,
            "prune_channels": state.prune_channels,
            "sparsity_mult": state.sparsity_mult,
            "resource_mult": state.resource_mult,
            "size_after": size_now,
            "grad_heads": grad_heads,
            "grad_channels": grad_channels,
            "mask_mass": mass_total,
            "interval": interval,
            "achieved_sparsity": sp.actual_sparsity(self.masks, self.resource),
            "ffn_width_var": float(np.var((self.masks.channel > 0.5).sum(axis=1))),
        }
        if "lm" in self.tg.parts:
            row["lm_ce"] = float(values[self.tg.parts["lm"]])
        for i in range(mcfg.n_layers):
            row[f"head_mass_{i}"] = float(head_mass[i])
        for i in range(mcfg.n_layers):
            row[f"channel_mass_{i}"] = float(channel_mass[i])
        self.trace.append(row)
        return row

    def run(self, log_every: int = 0) -> TrainResult:
        started = time.perf_counter()
        for _ in range(self.cfg.total_iterations):
            row = self.step()
            if log_every and (self.iteration % log_every == 0 or
                              self.iteration == self.cfg.total_iterations):
                print(f"iter {row['iteration']:5d} loss {row['loss']:.4f} "
                      f"heads {row['prune_heads']:.2f} channels {row['prune_channels']:.2f} "
                      f"mult_s {row['sparsity_mult']:.3f} mult_r {row['resource_mult']:.4f} "
                      f"size {row['size_after']:.0f}", flush=True)
        elapsed = time.perf_counter() - started
        return TrainResult(config=self.cfg, masks=self.masks, lora=self.lora,
                           state=self.state, trace=self.trace,
                           summary=self._summary(elapsed))

    def _summary(self, elapsed: float) -> dict:
        state, cfg = self.state, self.cfg
        last = self.trace[-1] if self.trace else {}
        head_mass, channel_mass = sp.layer_mass(self.masks, state)
        k_head = sp.count_ceil(state.prune_heads)
        k_channel = sp.count_ceil(state.prune_channels)
        worst = 0.0
        for row in self.masks.head:
            if k_head:
                _, idx = sp.smallest_k_sqnorm(row, k_head)
                worst = max(worst, float(np.abs(row[idx]).max()))
        for row in self.masks.channel:
            if k_channel:
                _, idx = sp.smallest_k_sqnorm(row, k_channel)
                worst = max(worst, float(np.abs(row[idx]).max()))
        size_final = self.resource.size_after(state.prune_heads, state.prune_channels)
        sparsity_loss_final = sp.sparsity_loss(self.masks, state)
        return {
            "iterations": self.iteration,
            "wall_time_s": elapsed,
            "final_loss": last.get("loss"),
            "final_kl": last.get("kl"),
            "final_layer_mse": last.get("layer_mse"),
            "prune_heads": state.prune_heads,
            "prune_channels": state.prune_channels,
            "sparsity_mult": state.sparsity_mult,
            "resource_mult": state.resource_mult,
            "size_after": size_final,
            "target_params": self.resource.target_params,
            "total_params": self.resource.total_params,
            "resource_met": bool(size_final
                                 <= self.resource.target_params
                                 + self.resource.channel_cost),
            "worst_selected_mask": worst,
            "masks_converged": bool(worst < MASK_CONVERGED_TOL),
            "sparsity_loss": sparsity_loss_final,
            "achieved_sparsity": sp.actual_sparsity(self.masks, self.resource),
            "target_sparsity": cfg.target_sparsity,
            "head_mass_per_layer": head_mass.tolist(),
            "channel_mass_per_layer": channel_mass.tolist(),
        }
