"""The sparsity machinery: smallest-k norms, the proximal step, and the
straight-through gradient on the continuous prune counts.

The regularizer charges each layer the squared l2 mass of its ceil(s)
smallest-magnitude mask entries, so it is zero exactly when s units are
already dead. The prox shrinks only that bottom set; everything else is
untouched.
"""
import numpy as np

from uniprune.model import MaskSet, ModelConfig
from uniprune.sparsity import (ResourceModel, SparsityState, count_ceil,
                               grad_count_resource, grad_count_sparsity, prox,
                               smallest_k_sqnorm)

m = np.array([0.9, 0.05, 0.7, 0.02, 0.4])
print(f"mask row: {m}")

# Smallest-k squared mass: the pieces the regularizer sees.
for k in range(len(m) + 1):
    mass, idx = smallest_k_sqnorm(m, k)
    print(f"  k={k}: mass={mass:.4f} over entries {idx.tolist()}")

# Fractional counts round up: s=1.3 already targets two entries.
print(f"count_ceil(1.3) = {count_ceil(1.3)}")

# One prox application shrinks the bottom ceil(s) entries by 1/(1+2*decay*y).
decay, y = 0.02, 25.0
shrunk = prox(m, 1.3, decay, y)
print(f"prox(s=1.3, decay={decay}, y={y}): {np.round(shrunk, 4)}")
print(f"  shrink factor 1/(1+2*decay*y) = {1.0 / (1.0 + 2.0 * decay * y):.4f}")
assert np.allclose(shrunk[[0, 2, 4]], m[[0, 2, 4]])  # survivors untouched

# Iterating the prox is what actually kills the bottom set.
it = m.copy()
for _ in range(60):
    it = prox(it, 1.3, decay, y)
print(f"after 60 prox steps: {np.array2string(it, precision=6)}")

# The count gradient pairs a straight-through sparsity term (the next entry
# the regularizer would swallow) against the budget pressure freed per unit.
cfg = ModelConfig(n_layers=2, n_heads=2, d_head=4, d_hidden=8, d_ff=5,
                  vocab_size=32, seq_len=8)
rm = ResourceModel.from_config(cfg, target_sparsity=0.5)
state = SparsityState(prune_channels=1.3, sparsity_mult=y, resource_mult=2.0)

pull_up = state.sparsity_mult * grad_count_sparsity(m, state.prune_channels)
push_down = grad_count_resource(rm, state.resource_mult, "channel")
print(f"\nd(loss)/d(s_channels) = sparsity term {pull_up:+.4f} "
      f"+ resource term {push_down:+.4f} = {pull_up + push_down:+.4f}")
print("negative total -> gradient descent RAISES the prune count while the "
      "budget multiplier is active")
