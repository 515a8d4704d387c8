"""Shared test utilities: scalarization for gradient checks, comparisons, and
an independent plain-numpy reference forward used as the oracle for the graph
implementation."""

from __future__ import annotations

import numpy as np

from uniprune import autodiff as ad
from uniprune import model as md


def scalarize(g: ad.Graph, node: int, shape: tuple[int, ...], rng) -> int:
    """Reduce a tensor node to a scalar via a fixed random weighting.

    A weighted sum catches per-element gradient errors that a plain sum can
    cancel out.  Built from mul/matmul/reshape only, so it adds no gradient
    rules beyond the ones under test.
    """
    size = int(np.prod(shape)) if shape else 1
    w = g.constant(rng.normal(size=shape))
    weighted = g.mul(node, w)
    flat = g.reshape(weighted, (1, size))
    total = g.matmul(flat, g.constant(np.ones((size, 1))))
    return g.reshape(total, ())


def rel_err(got: np.ndarray, want: np.ndarray) -> float:
    got, want = np.asarray(got), np.asarray(want)
    denom = max(np.abs(want).max(), 1e-12) if want.size else 1.0
    return float(np.abs(got - want).max() / denom)


def check_grads(g: ad.Graph, loss: int, bindings=None, eps: float = 1e-5,
                tol: float = 1e-6) -> None:
    """Compare backward() against central finite differences for every
    trainable parameter in the graph."""
    values = ad.forward(g, bindings)
    grads = ad.backward(g, loss, values)
    for pid in g.trainable_ids():
        name = g.nodes[pid].name
        base = g.nodes[pid].value

        def f(x, _name=name):
            g.set_param(_name, x)
            out = float(ad.forward(g, bindings)[loss])
            return out

        fd = ad.finite_diff(f, base, eps)
        g.set_param(name, base)
        err = rel_err(grads[pid], fd)
        assert err < tol, f"param {name!r}: rel err {err:.3e} (tol {tol})"


# -- reference model (flat numpy, no graph) ----------------------------------


def _sigmoid(x):
    return 1.0 / (1.0 + np.exp(-x))


def _rms(x, gain, eps):
    return x / np.sqrt((x * x).mean(axis=-1, keepdims=True) + eps) * gain


def _apply_rope(x, cos, sin):
    half = x.shape[-1] // 2
    xa, xb = x[..., :half], x[..., half:]
    return np.concatenate([xa * cos - xb * sin, xa * sin + xb * cos], axis=-1)


def reference_forward(cfg, params, masks, lora, tokens):
    """Straight-line numpy forward pass, written independently of the graph
    builder; the oracle for forward_lm."""
    tokens = np.asarray(tokens)
    bsz, seq = tokens.shape
    h, dh = cfg.n_heads, cfg.d_head
    cos, sin = md.rope_tables(cfg, seq)
    bias = md.causal_bias(seq)

    def w_eff(idx, name):
        w = getattr(params.layers[idx], name)
        if lora is not None:
            pair = lora.layers[idx][name]
            w = w + pair.left @ pair.right
        return w

    x = params.embed[tokens]
    hiddens = []
    for i, layer in enumerate(params.layers):
        xn = _rms(x, layer.attn_gain, cfg.norm_eps)
        q = (xn @ w_eff(i, "w_q")).reshape(bsz, seq, h, dh).transpose(0, 2, 1, 3)
        k = (xn @ w_eff(i, "w_k")).reshape(bsz, seq, h, dh).transpose(0, 2, 1, 3)
        v = (xn @ w_eff(i, "w_v")).reshape(bsz, seq, h, dh).transpose(0, 2, 1, 3)
        q, k = _apply_rope(q, cos, sin), _apply_rope(k, cos, sin)
        scores = q @ k.transpose(0, 1, 3, 2) / np.sqrt(dh) + bias
        e = np.exp(scores - scores.max(axis=-1, keepdims=True))
        probs = e / e.sum(axis=-1, keepdims=True)
        ctx = probs @ v
        if masks is not None:
            ctx = ctx * masks.head[i][None, :, None, None]
        x = x + ctx.transpose(0, 2, 1, 3).reshape(bsz, seq, h * dh) @ w_eff(i, "w_o")
        xn2 = _rms(x, layer.ffn_gain, cfg.norm_eps)
        gate = xn2 @ w_eff(i, "w_gate")
        up = xn2 @ w_eff(i, "w_up")
        if masks is not None:
            gate = gate * masks.channel[i]
            up = up * masks.channel[i]
        x = x + (gate * _sigmoid(gate) * up) @ w_eff(i, "w_down")
        hiddens.append(x)
    logits = _rms(x, params.final_gain, cfg.norm_eps) @ params.w_out
    return logits, hiddens


# -- sparsity oracles ---------------------------------------------------------


def smallest_k_bruteforce(values, k):
    """Minimum squared mass over all k-subsets, by enumeration."""
    from itertools import combinations
    v = np.asarray(values, dtype=float)
    if k == 0:
        return 0.0
    return min(float((v[list(s)] ** 2).sum())
               for s in combinations(range(v.size), k))


def prox_bruteforce(values, count, decay_rate, mult):
    """Exhaustive prox oracle.

    For every k-subset, shrink exactly those entries by the closed-form factor
    and evaluate the genuine objective (quadratic distance plus the penalty on
    the actual k smallest of the result); return the best candidate.  Subsets
    iterate in lexicographic order so ties resolve toward lower indices.
    """
    import math
    from itertools import combinations
    v = np.asarray(values, dtype=float)
    k = int(math.ceil(count))
    if k == 0:
        return v.copy()
    shrink = 1.0 / (1.0 + 2.0 * decay_rate * mult)
    best, best_obj = None, np.inf
    for subset in combinations(range(v.size), k):
        m = v.copy()
        m[list(subset)] *= shrink
        mass = float(np.sort(m * m)[:k].sum())
        obj = 0.5 * float(((m - v) ** 2).sum()) + decay_rate * mult * mass
        if obj < best_obj - 1e-13:
            best_obj, best = obj, m
    return best


def excise_units(cfg, params, drop_heads=(), drop_channels=()):
    """Physically remove heads/channels from every layer; the oracle for
    zero-mask equivalence and materialization."""
    keep_h = [j for j in range(cfg.n_heads) if j not in set(drop_heads)]
    keep_c = [j for j in range(cfg.d_ff) if j not in set(drop_channels)]
    col_idx = np.concatenate([np.arange(j * cfg.d_head, (j + 1) * cfg.d_head)
                              for j in keep_h]) if keep_h else np.array([], int)
    small_cfg = md.ModelConfig(
        n_layers=cfg.n_layers, n_heads=len(keep_h), d_head=cfg.d_head,
        d_hidden=cfg.d_hidden, d_ff=len(keep_c), vocab_size=cfg.vocab_size,
        seq_len=cfg.seq_len, norm_eps=cfg.norm_eps)
    layers = []
    for layer in params.layers:
        layers.append(md.LayerParams(
            w_q=layer.w_q[:, col_idx].copy(), w_k=layer.w_k[:, col_idx].copy(),
            w_v=layer.w_v[:, col_idx].copy(), w_o=layer.w_o[col_idx, :].copy(),
            w_gate=layer.w_gate[:, keep_c].copy(), w_up=layer.w_up[:, keep_c].copy(),
            w_down=layer.w_down[keep_c, :].copy(),
            attn_gain=layer.attn_gain.copy(), ffn_gain=layer.ffn_gain.copy()))
    small = md.ModelParams(params.embed.copy(), layers, params.final_gain.copy(),
                           params.w_out.copy())
    return small_cfg, small
