"""Sparsity bookkeeping: smallest-k mask mass, the proximal decay step,
continuous prune counts, and the parameter-budget model.

The central quantity is the squared l2 mass of the k smallest-magnitude
entries of a mask vector.  A layer satisfies "prune at least k units" exactly
when that mass is zero, which turns the combinatorial constraint into a
penalty the multiplier ascent can drive down.  Counts are continuous during
optimization; anywhere an integer is needed the ceiling is taken, and the
derivative of the ceiling is treated as 1 (straight-through) so the count
still receives a gradient.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from uniprune.model import MaskSet, ModelConfig

Array = np.ndarray

ZERO_EPS = 1e-9  # entries at or below this count as structurally zero


@dataclass
class SparsityState:
    prune_heads: float = 0.0     # continuous count of heads to prune per layer
    prune_channels: float = 0.0  # continuous count of FFN channels per layer
    sparsity_mult: float = 0.0   # ascent multiplier on smallest-k mask mass
    resource_mult: float = 0.0   # ascent multiplier on the parameter budget

    def validate(self) -> None:
        for name in ("prune_heads", "prune_channels", "sparsity_mult", "resource_mult"):
            if getattr(self, name) < 0.0:
                raise ValueError(f"{name} must be >= 0")

    def as_dict(self) -> dict[str, float]:
        return {"prune_heads": self.prune_heads, "prune_channels": self.prune_channels,
                "sparsity_mult": self.sparsity_mult, "resource_mult": self.resource_mult}

    @classmethod
    def from_dict(cls, d: dict) -> "SparsityState":
        return cls(**{k: float(d[k]) for k in ("prune_heads", "prune_channels",
                                               "sparsity_mult", "resource_mult")})


@dataclass(frozen=True)
class ResourceModel:
    """Parameter budget: how many parameters remain after pruning a continuous
    number of heads/channels uniformly from every layer."""
    total_params: int
    target_params: float
    n_layers: int
    head_cost: int
    channel_cost: int

    @classmethod
    def from_config(cls, cfg: ModelConfig, target_sparsity: float) -> "ResourceModel":
        if not 0.0 <= target_sparsity < 1.0:
            raise ValueError("target_sparsity must be in [0, 1)")
        total = cfg.param_count()
        return cls(total_params=total, target_params=(1.0 - target_sparsity) * total,
                   n_layers=cfg.n_layers, head_cost=cfg.head_cost,
                   channel_cost=cfg.channel_cost)

    def size_after(self, prune_heads: float, prune_channels: float) -> float:
        return self.total_params - self.n_layers * (self.head_cost * prune_heads
                                                    + self.channel_cost * prune_channels)


def count_ceil(count: float) -> int:
    """Integer units implied by a continuous prune count."""
    if count < 0.0:
        raise ValueError("prune count must be >= 0")
    return int(math.ceil(count))


def smallest_k_sqnorm(values: Array, k: int) -> tuple[float, Array]:
    """Squared l2 mass of the k smallest-magnitude entries and their indices.

    Ties break toward lower indices (stable sort), so repeated calls select
    the same set.
    """
    values = np.asarray(values, dtype=np.float64)
    if values.ndim != 1:
        raise ValueError("expected a 1-d mask vector")
    if not 0 <= k <= values.size:
        raise ValueError(f"k={k} out of range for length {values.size}")
    order = np.argsort(np.abs(values), kind="stable")[:k]
    return float((values[order] ** 2).sum()), np.sort(order)


def prox(candidate: Array, count: float, decay_rate: float, mult: float) -> Array:
    """Proximal step for the smallest-k squared-mass penalty.

    Minimizes 0.5*||m - candidate||^2 + decay_rate*mult*||m||^2_(k smallest)
    by shrinking the ceil(count) smallest-magnitude entries of the candidate
    by 1/(1 + 2*decay_rate*mult) and keeping the rest.
    """
    if decay_rate < 0.0 or mult < 0.0:
        raise ValueError("decay_rate and mult must be >= 0")
    k = count_ceil(count)
    out = np.array(candidate, dtype=np.float64)
    if k == 0:
        return out
    _, idx = smallest_k_sqnorm(out, min(k, out.size))
    out[idx] /= 1.0 + 2.0 * decay_rate * mult
    return out


def sparsity_loss(masks: MaskSet, state: SparsityState) -> float:
    """Multiplier-weighted smallest-k mask mass, summed over layers and kinds."""
    k_head = count_ceil(state.prune_heads)
    k_channel = count_ceil(state.prune_channels)
    total = 0.0
    for row in masks.head:
        total += smallest_k_sqnorm(row, min(k_head, row.size))[0]
    for row in masks.channel:
        total += smallest_k_sqnorm(row, min(k_channel, row.size))[0]
    return state.sparsity_mult * total


def layer_mass(masks: MaskSet, state: SparsityState) -> tuple[Array, Array]:
    """Per-layer smallest-k mass for each mask kind (unweighted)."""
    k_head = count_ceil(state.prune_heads)
    k_channel = count_ceil(state.prune_channels)
    head = np.array([smallest_k_sqnorm(row, min(k_head, row.size))[0]
                     for row in masks.head])
    channel = np.array([smallest_k_sqnorm(row, min(k_channel, row.size))[0]
                        for row in masks.channel])
    return head, channel


def grad_count_sparsity(values: Array, count: float) -> float:
    """Straight-through derivative of smallest-k mass with respect to the count.

    Raising the count by one admits the next-smallest entry into the penalized
    set, so the proxy gradient is that entry squared: the element at position
    min(dim, ceil(count)+1) in magnitude order.
    """
    values = np.asarray(values, dtype=np.float64)
    k = min(values.size, count_ceil(count) + 1)
    if k == 0:
        return 0.0
    mag = np.sort(np.abs(values), kind="stable")
    return float(mag[k - 1] ** 2)


def grad_count_resource(rm: ResourceModel, resource_mult: float, kind: str) -> float:
    """Derivative of the weighted budget term with respect to a prune count."""
    if kind == "head":
        return -resource_mult * rm.n_layers * rm.head_cost
    if kind == "channel":
        return -resource_mult * rm.n_layers * rm.channel_cost
    raise ValueError(f"unknown kind {kind!r}")


def actual_sparsity(masks: MaskSet, rm: ResourceModel) -> float:
    """Fraction of parameters removed by the masks that are exactly zero
    (threshold ZERO_EPS), relative to the dense total."""
    zero_heads = int((np.abs(masks.head) <= ZERO_EPS).sum())
    zero_channels = int((np.abs(masks.channel) <= ZERO_EPS).sum())
    removed = rm.head_cost * zero_heads + rm.channel_cost * zero_channels
    return removed / rm.total_params
