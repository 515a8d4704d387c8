"""Model tests: the graph forward against an independent flat-numpy reference,
mask identity/zero/linearity behavior, LoRA merge equivalence, causality."""

import numpy as np
import pytest

from uniprune import autodiff as ad
from uniprune import model as md
from helpers import excise_units, reference_forward

TINY = md.ModelConfig(n_layers=2, n_heads=2, d_head=4, d_hidden=8, d_ff=12,
                      vocab_size=16, seq_len=8)


def random_setup(cfg, seed=0, with_masks=True, lora_rank=0, mask_low=0.2):
    rng = np.random.default_rng(seed)
    params = md.ModelParams.init(cfg, rng)
    masks = None
    if with_masks:
        masks = md.MaskSet(
            head=rng.uniform(mask_low, 1.0, (cfg.n_layers, cfg.n_heads)),
            channel=rng.uniform(mask_low, 1.0, (cfg.n_layers, cfg.d_ff)))
    lora = None
    if lora_rank:
        lora = md.LoraSet.init(cfg, lora_rank, rng)
        for layer in lora.layers:  # nonzero adapters so the test is not vacuous
            for pair in layer.values():
                pair.left = rng.normal(0.0, 0.05, pair.left.shape)
    tokens = rng.integers(0, cfg.vocab_size, (3, cfg.seq_len))
    return params, masks, lora, tokens


def test_graph_matches_reference_dense():
    params, _, _, tokens = random_setup(TINY, seed=1, with_masks=False)
    got_logits, got_hiddens = md.forward_lm(TINY, params, None, None, tokens)
    want_logits, want_hiddens = reference_forward(TINY, params, None, None, tokens)
    assert np.allclose(got_logits, want_logits, atol=1e-12)
    for g, w in zip(got_hiddens, want_hiddens):
        assert np.allclose(g, w, atol=1e-12)


def test_graph_matches_reference_masked_lora():
    params, masks, lora, tokens = random_setup(TINY, seed=2, lora_rank=3)
    got, _ = md.forward_lm(TINY, params, masks, lora, tokens)
    want, _ = reference_forward(TINY, params, masks, lora, tokens)
    assert np.allclose(got, want, atol=1e-12)


def test_all_ones_masks_and_fresh_lora_bit_identical_to_dense():
    rng = np.random.default_rng(3)
    params = md.ModelParams.init(TINY, rng)
    lora = md.LoraSet.init(TINY, 4, rng)  # left factors are zero at init
    tokens = rng.integers(0, TINY.vocab_size, (2, TINY.seq_len))
    dense, _ = md.forward_lm(TINY, params, None, None, tokens)
    masked, _ = md.forward_lm(TINY, params, md.MaskSet.ones(TINY), lora, tokens)
    assert np.array_equal(dense, masked)


def test_zero_head_mask_equals_head_removal():
    params, masks, _, tokens = random_setup(TINY, seed=4)
    drop = 1
    masks.head[:, drop] = 0.0
    got, _ = md.forward_lm(TINY, params, masks, None, tokens)
    small_cfg, small = excise_units(TINY, params, drop_heads=(drop,))
    small_masks = md.MaskSet(head=np.delete(masks.head, drop, axis=1),
                             channel=masks.channel)
    want, _ = reference_forward(small_cfg, small, small_masks, None, tokens)
    assert np.abs(got - want).max() < 1e-12


def test_zero_channel_mask_equals_channel_removal():
    params, masks, _, tokens = random_setup(TINY, seed=5)
    drop = (0, 7)
    masks.channel[:, list(drop)] = 0.0
    got, _ = md.forward_lm(TINY, params, masks, None, tokens)
    small_cfg, small = excise_units(TINY, params, drop_channels=drop)
    small_masks = md.MaskSet(head=masks.head,
                             channel=np.delete(masks.channel, list(drop), axis=1))
    want, _ = reference_forward(small_cfg, small, small_masks, None, tokens)
    assert np.abs(got - want).max() < 1e-12


def test_attention_block_affine_in_head_mask():
    # block output must be affine in each head mask scalar
    cfg = TINY
    rng = np.random.default_rng(6)
    params = md.ModelParams.init(cfg, rng)
    x_val = rng.normal(size=(2, cfg.seq_len, cfg.d_hidden))

    def block_out(head_mask_value):
        g = ad.Graph()
        x = g.constant(x_val)
        weights = md.add_weight_params(g, params)
        masks = md.MaskSet.ones(cfg)
        masks.head[0, 1] = head_mask_value
        mask_ids = md.add_mask_params(g, masks, trainable=False)
        cos, sin = md.rope_tables(cfg)
        bias = g.constant(md.causal_bias(cfg.seq_len))
        out = md.attention_block(g, cfg, x, 0, weights, mask_ids, None,
                                 2, cfg.seq_len, cos, sin, bias)
        return ad.forward(g)[out]

    lo, mid, hi = block_out(0.0), block_out(0.5), block_out(1.0)
    assert np.abs(mid - (lo + 0.5 * (hi - lo))).max() < 1e-12
    assert np.abs(hi - lo).max() > 1e-6  # the head actually contributes


def test_ffn_block_zero_input_returns_zero():
    cfg = TINY
    rng = np.random.default_rng(7)
    params = md.ModelParams.init(cfg, rng)
    g = ad.Graph()
    x = g.constant(np.zeros((1, 4, cfg.d_hidden)))
    weights = md.add_weight_params(g, params)
    out = md.ffn_block(g, cfg, x, 0, weights, None, None)
    assert np.array_equal(ad.forward(g)[out], np.zeros((1, 4, cfg.d_hidden)))


def test_apply_lora_matches_in_graph_adapters():
    params, masks, lora, tokens = random_setup(TINY, seed=8, lora_rank=2)
    with_adapters, _ = md.forward_lm(TINY, params, masks, lora, tokens)
    merged = md.apply_lora(params, lora)
    merged_out, _ = md.forward_lm(TINY, merged, masks, None, tokens)
    assert np.array_equal(with_adapters, merged_out)


def test_apply_lora_leaves_base_untouched():
    rng = np.random.default_rng(9)
    params = md.ModelParams.init(TINY, rng)
    before = params.layers[0].w_q.copy()
    lora = md.LoraSet.init(TINY, 2, rng)
    lora.layers[0]["w_q"].left[:] = 1.0
    md.apply_lora(params, lora)
    assert np.array_equal(params.layers[0].w_q, before)


def test_causal_masking():
    # changing future tokens must not change logits at earlier positions
    params, masks, _, tokens = random_setup(TINY, seed=10)
    cut = 3
    logits_a, _ = md.forward_lm(TINY, params, masks, None, tokens)
    tokens_b = tokens.copy()
    tokens_b[:, cut + 1:] = (tokens_b[:, cut + 1:] + 5) % TINY.vocab_size
    logits_b, _ = md.forward_lm(TINY, params, masks, None, tokens_b)
    assert np.array_equal(logits_a[:, :cut + 1], logits_b[:, :cut + 1])
    assert not np.array_equal(logits_a[:, cut + 1:], logits_b[:, cut + 1:])


def test_rope_preserves_norm():
    cfg = TINY
    rng = np.random.default_rng(11)
    cos, sin = md.rope_tables(cfg, 6)
    g = ad.Graph()
    x_val = rng.normal(size=(2, 6, cfg.d_head))
    y = g.rope(g.constant(x_val), cos, sin)
    out = ad.forward(g)[y]
    half = cfg.d_head // 2
    norm_in = x_val[..., :half] ** 2 + x_val[..., half:] ** 2
    norm_out = out[..., :half] ** 2 + out[..., half:] ** 2
    assert np.abs(norm_in - norm_out).max() < 1e-12


def test_param_count_matches_tensor_sizes():
    for cfg in (TINY, md.ModelConfig()):
        params = md.ModelParams.init(cfg, np.random.default_rng(0))
        assert cfg.param_count() == params.count()


def test_default_config_values():
    cfg = md.ModelConfig()
    assert (cfg.n_layers, cfg.n_heads, cfg.d_head) == (4, 4, 16)
    assert (cfg.d_hidden, cfg.d_ff, cfg.vocab_size, cfg.seq_len) == (64, 172, 256, 128)
    assert cfg.head_cost == 4 * 64 * 16
    assert cfg.channel_cost == 3 * 64


def test_config_validation():
    with pytest.raises(ValueError, match="positive"):
        md.ModelConfig(n_layers=0)
    with pytest.raises(ValueError, match="even"):
        md.ModelConfig(d_head=3, d_hidden=12, n_heads=4)


def test_mask_validation():
    masks = md.MaskSet.ones(TINY)
    masks.validate()
    masks.head[0, 0] = 1.5
    with pytest.raises(ValueError, match="outside"):
        masks.validate()


def test_forward_lm_rejects_bad_tokens():
    params, masks, _, _ = random_setup(TINY, seed=12)
    with pytest.raises(ValueError, match="batch"):
        md.forward_lm(TINY, params, masks, None, np.zeros(4, dtype=int))
    with pytest.raises(ValueError, match="range"):
        bad = np.full((1, TINY.seq_len), TINY.vocab_size)
        md.forward_lm(TINY, params, masks, None, bad)
