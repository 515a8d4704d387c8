"""Sweep one knob across otherwise-identical runs.

The shrink strength of the proximal step is the knob that actually kills
masks: with decay 0 the masks never reach zero and the run reports a
constraint failure. The sweep records that failure and keeps going; one bad
setting never aborts the grid. Takes ~1 min.
"""
import json

from uniprune.corpus import Corpus
from uniprune.model import ModelConfig
from uniprune.pretrain import PretrainConfig, pretrain
from uniprune.sweep import sweep
from uniprune.trainer import RunConfig

cfg = ModelConfig(n_layers=2, n_heads=2, d_head=4, d_hidden=16, d_ff=64,
                  vocab_size=256, seq_len=32)
corpus = Corpus.bundled()
teacher, _ = pretrain(cfg, corpus, PretrainConfig(steps=300, eval_every=300, seed=0))

base = RunConfig(model=cfg, target_sparsity=0.25, total_iterations=400,
                 batch_size=16, interval_start=5, interval_end=1,
                 sparsity_penalty_lr=0.05, resource_penalty_lr=2e-3,
                 lora_rank=8, lora_lr=3e-3, seed=11)

out_dir = "runs/demos/sweep"
reports = sweep("decay_rate", [0.0, 0.02, 0.05], base, teacher, corpus,
                out_dir=out_dir)

print(f"\n{'decay':>8} {'final loss':>11} {'achieved':>9} {'failure':>8}")
for entry in reports:
    print(f"{entry['value']:>8} {entry.get('final_loss', float('nan')):>11.4f} "
          f"{entry.get('achieved_sparsity', float('nan')):>9.3f} "
          f"{str(entry['constraint_failure']):>8}")

with open(f"{out_dir}/sweep.json") as fh:
    on_disk = json.load(fh)
print(f"\nsweep.json records {len(on_disk)} runs of parameter "
      f"{on_disk[0]['parameter']!r}")
assert on_disk[0]["constraint_failure"] is True   # decay 0 cannot converge
assert on_disk[1]["constraint_failure"] is False  # default decay does
