"""Distillation training objective for mask and adapter updates.

The student (masked, adapted) is trained against the frozen dense teacher:
KL between next-token distributions, mean over positions, plus a weighted
per-layer MSE between residual streams.  Token-level cross-entropy against
the data can be mixed in but is off by default.
"""

from __future__ import annotations

from dataclasses import dataclass

from uniprune.autodiff import Graph


@dataclass(frozen=True)
class DistillConfig:
    alpha: float = 1.0            # weight on the layer-matching term
    include_lm_loss: bool = False
    lm_loss_weight: float = 1.0

    def validate(self) -> None:
        if self.alpha < 0.0:
            raise ValueError("alpha must be >= 0")
        if self.lm_loss_weight < 0.0:
            raise ValueError("lm_loss_weight must be >= 0")


def kl_loss(g: Graph, student_logits: int, teacher_logits: int) -> int:
    return g.kl_div(student_logits, teacher_logits)


def layer_loss(g: Graph, student_hiddens: list[int], teacher_hiddens: list[int]) -> int:
    if len(student_hiddens) != len(teacher_hiddens):
        raise ValueError("hidden-state lists differ in length")
    if not student_hiddens:
        raise ValueError("no hidden states to match")
    total = g.mse(student_hiddens[0], teacher_hiddens[0])
    for s, t in zip(student_hiddens[1:], teacher_hiddens[1:]):
        total = g.add(total, g.mse(s, t))
    return total


def distill_loss(g: Graph, student: tuple[int, list[int]], teacher: tuple[int, list[int]],
                 cfg: DistillConfig, targets: int | None = None) -> tuple[int, dict[str, int]]:
    """Total training loss node plus the component nodes for tracing."""
    cfg.validate()
    s_logits, s_hiddens = student
    t_logits, t_hiddens = teacher
    kl = kl_loss(g, s_logits, t_logits)
    layers = layer_loss(g, s_hiddens, t_hiddens)
    total = g.add(kl, g.scale(layers, cfg.alpha))
    parts = {"kl": kl, "layer": layers}
    if cfg.include_lm_loss:
        if targets is None:
            raise ValueError("include_lm_loss requires targets")
        lm = g.cross_entropy(s_logits, targets)
        parts["lm"] = lm
        total = g.add(total, g.scale(lm, cfg.lm_loss_weight))
    return total, parts
