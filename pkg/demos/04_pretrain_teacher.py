"""Pretrain a miniature byte-level teacher on the bundled corpus.

A few hundred AdamW steps take perplexity from noise (~256) to single
digits on this template-generated text. The result is saved as a
checkpoint container that the pruning demos reuse.
"""
from uniprune.checkpoint import Checkpoint, save_checkpoint
from uniprune.corpus import Corpus
from uniprune.model import ModelConfig
from uniprune.pretrain import PretrainConfig, pretrain

cfg = ModelConfig(n_layers=2, n_heads=2, d_head=4, d_hidden=8, d_ff=12,
                  vocab_size=256, seq_len=16)
corpus = Corpus.bundled()
print(f"corpus: {corpus.tokens.size} bytes "
      f"({corpus.train.size} train / {corpus.eval.size} eval)")

pcfg = PretrainConfig(steps=240, batch_size=16, eval_every=80, seed=0)
params, history = pretrain(cfg, corpus, pcfg)

for row in history:
    print(f"  step {row['step']:>4}: eval ppl {row['eval_ppl']:.2f}")
start, end = history[0]["eval_ppl"], history[-1]["eval_ppl"]
print(f"perplexity {start:.1f} -> {end:.1f} "
      f"({end / start:.2%} of the untrained value)")

out = "runs/demos/teacher.npz"
save_checkpoint(out, Checkpoint(config=cfg, params=params))
print(f"saved teacher to {out}")
