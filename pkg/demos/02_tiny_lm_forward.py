"""Forward pass of the byte-level toy transformer, with and without masks.

Every prunable unit (attention head, FFN channel) carries a multiplier in
[0, 1]. Ones reproduce the dense model bit for bit; zeroing an entry removes
that unit's contribution without touching the weights.
"""
import numpy as np

from uniprune.corpus import Corpus
from uniprune.model import MaskSet, ModelConfig, ModelParams, forward_lm

rng = np.random.default_rng(7)
cfg = ModelConfig(n_layers=2, n_heads=2, d_head=8, d_hidden=16, d_ff=24,
                  vocab_size=256, seq_len=32)
params = ModelParams.init(cfg, rng)
print(f"model: {cfg.n_layers} layers, {cfg.n_heads} heads, d_ff={cfg.d_ff}, "
      f"{cfg.param_count()} parameters")

# Bytes straight from the bundled corpus are the token stream.
corpus = Corpus.bundled()
tokens = corpus.train[: cfg.seq_len][None, :]
text = bytes(tokens[0].tolist()).decode("ascii")
print(f"prompt: {text!r}")

logits, hiddens = forward_lm(cfg, params, None, None, tokens)
print(f"logits shape {logits.shape}, {len(hiddens)} per-layer hidden states")

top = np.argsort(logits[0, -1])[::-1][:3]
probs = np.exp(logits[0, -1] - logits[0, -1].max())
probs /= probs.sum()
ranked = ", ".join(f"{chr(t) if 32 <= t < 127 else int(t)!r}: {probs[t]:.3f}"
                   for t in map(int, top))
print(f"untrained next-byte guesses: {ranked}")

# Dense forward == all-ones masks, exactly.
ones = MaskSet.ones(cfg)
masked_logits, _ = forward_lm(cfg, params, ones, None, tokens)
print(f"all-ones masks change nothing: max diff "
      f"{np.max(np.abs(masked_logits - logits)):.2e}")

# Zero one head: outputs move, shapes stay (structure is removed later, at
# materialization time).
masks = MaskSet.ones(cfg)
masks.head[0][1] = 0.0
cut_logits, _ = forward_lm(cfg, params, masks, None, tokens)
print(f"zeroing layer-0 head 1 shifts logits by "
      f"{np.max(np.abs(cut_logits - logits)):.3f} (same shape {cut_logits.shape})")
assert np.max(np.abs(masked_logits - logits)) == 0.0
