"""Uniform structured pruning of small decoder LMs.

Continuous pruning masks over attention heads and FFN channels are trained
jointly with per-dimension prune counts under a minimax formulation: a
proximal decay drives the smallest masks of every layer to zero while ascent
multipliers enforce a parameter-budget constraint, so every layer ends up with
the same retained shape.
"""

from uniprune.autodiff import Graph, NonFiniteError, backward, finite_diff, forward
from uniprune.baselines import magnitude_prune
from uniprune.checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from uniprune.corpus import Corpus
from uniprune.evaluate import eval_ppl
from uniprune.model import (LoraSet, MaskSet, ModelConfig, ModelParams,
                            forward_lm)
from uniprune.pipeline import PipelineResult, run_pruning
from uniprune.pretrain import PretrainConfig, pretrain
from uniprune.pruning import (PrunePlan, fuse_masks, materialize, prune_model,
                              select_pruned, verify_equivalence)
from uniprune.sparsity import (ResourceModel, SparsityState, count_ceil, prox,
                               smallest_k_sqnorm)
from uniprune.stats import mask_stats
from uniprune.sweep import sweep
from uniprune.trainer import MaskTrainer, RunConfig, TrainResult

__all__ = [
    "Checkpoint",
    "Corpus",
    "Graph",
    "LoraSet",
    "MaskSet",
    "MaskTrainer",
    "ModelConfig",
    "ModelParams",
    "NonFiniteError",
    "PipelineResult",
    "PretrainConfig",
    "PrunePlan",
    "ResourceModel",
    "RunConfig",
    "SparsityState",
    "TrainResult",
    "backward",
    "count_ceil",
    "eval_ppl",
    "finite_diff",
    "forward",
    "forward_lm",
    "fuse_masks",
    "load_checkpoint",
    "magnitude_prune",
    "mask_stats",
    "materialize",
    "pretrain",
    "prox",
    "prune_model",
    "run_pruning",
    "save_checkpoint",
    "select_pruned",
    "smallest_k_sqnorm",
    "sweep",
    "verify_equivalence",
]

__version__ = "0.1.0"
