"""Mask-trained pruning vs one-shot magnitude pruning, same structure.

The baseline ranks heads and channels by weight norm and excises the
smallest in one shot, no adaptation. The mask-trained run spends its budget
deciding WHICH units to drop while low-rank adapters absorb the damage, so
it should land at a lower perplexity for the same shape. Takes ~30 s.
"""
from uniprune.baselines import magnitude_prune
from uniprune.corpus import Corpus
from uniprune.evaluate import eval_ppl
from uniprune.model import ModelConfig
from uniprune.pipeline import run_pruning
from uniprune.pretrain import PretrainConfig, pretrain
from uniprune.trainer import RunConfig

cfg = ModelConfig(n_layers=2, n_heads=2, d_head=4, d_hidden=16, d_ff=64,
                  vocab_size=256, seq_len=32)
corpus = Corpus.bundled()
teacher, hist = pretrain(cfg, corpus, PretrainConfig(steps=300, eval_every=300, seed=0))

run_cfg = RunConfig(model=cfg, target_sparsity=0.25, total_iterations=600,
                    batch_size=16, interval_start=5, interval_end=1,
                    sparsity_penalty_lr=0.05, resource_penalty_lr=2e-3,
                    lora_rank=8, lora_lr=3e-3, seed=11)
res = run_pruning(run_cfg, teacher, corpus, eval_windows=96)
plan = res.plan

# Prune the dense teacher to the exact same per-layer unit counts by norm.
small, small_cfg, mag_plan = magnitude_prune(teacher, cfg, plan.n_heads_removed,
                                             plan.n_channels_removed)
mag_ppl = eval_ppl(small_cfg, small, corpus.eval, max_windows=96)

print(f"\nstructure: -{plan.n_heads_removed} heads, "
      f"-{plan.n_channels_removed} channels per layer "
      f"({res.summary['pruned_param_count']} params, "
      f"{res.summary['achieved_sparsity']:.1%} sparsity)")
print(f"{'model':<28} {'eval ppl':>9}")
print(f"{'dense teacher':<28} {res.summary['dense_eval_ppl']:>9.3f}")
print(f"{'mask-trained + adapters':<28} {res.summary['pruned_eval_ppl']:>9.3f}")
print(f"{'one-shot magnitude':<28} {mag_ppl:>9.3f}")

overlap = [len(set(a) & set(b)) for a, b in zip(plan.channels, mag_plan.channels)]
print(f"\nchannel-choice overlap with the norm ranking, by layer: {overlap} "
      f"of {[len(c) for c in plan.channels]}")
assert res.summary["pruned_eval_ppl"] < mag_ppl
print("mask-trained pruning beats the one-shot baseline at equal structure.")
