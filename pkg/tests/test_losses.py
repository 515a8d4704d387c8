"""Distillation loss assembly and end-to-end gradients through the shared
teacher/student graph."""

import numpy as np
import pytest

from helpers import check_grads
from uniprune import autodiff as ad
from uniprune.losses import DistillConfig, distill_loss, kl_loss, layer_loss
from uniprune.model import LoraSet, MaskSet, ModelConfig, ModelParams
from uniprune.trainer import build_training_graph

TINY = ModelConfig(n_layers=2, n_heads=2, d_head=4, d_hidden=8, d_ff=12,
                   vocab_size=16, seq_len=8)


def tiny_setup(seed=0, perturb=True):
    """Params plus masks/adapters moved off the identity point so the student
    actually differs from the teacher."""
    rng = np.random.default_rng(seed)
    params = ModelParams.init(TINY, rng)
    masks = MaskSet.ones(TINY)
    lora = LoraSet.init(TINY, 2, rng)
    if perturb:
        masks.head = rng.uniform(0.3, 1.0, masks.head.shape)
        masks.channel = rng.uniform(0.3, 1.0, masks.channel.shape)
        for layer in lora.layers:
            for pair in layer.values():
                pair.left = rng.normal(0.0, 0.05, pair.left.shape)
    return params, masks, lora


def test_distill_total_is_weighted_sum():
    g = ad.Graph()
    rng = np.random.default_rng(1)
    s_logits = g.constant(rng.normal(size=(2, 3, 5)))
    t_logits = g.constant(rng.normal(size=(2, 3, 5)))
    s_h = [g.constant(rng.normal(size=(2, 3, 4))) for _ in range(2)]
    t_h = [g.constant(rng.normal(size=(2, 3, 4))) for _ in range(2)]
    cfg = DistillConfig(alpha=0.7)
    total, parts = distill_loss(g, (s_logits, s_h), (t_logits, t_h), cfg)
    v = ad.forward(g)
    assert v[total] == pytest.approx(v[parts["kl"]] + 0.7 * v[parts["layer"]],
                                     abs=1e-12)
    assert "lm" not in parts


def test_distill_includes_next_token_term_when_asked():
    g = ad.Graph()
    rng = np.random.default_rng(2)
    s_logits = g.constant(rng.normal(size=(2, 3, 5)))
    t_logits = g.constant(rng.normal(size=(2, 3, 5)))
    s_h = [g.constant(rng.normal(size=(2, 3, 4)))]
    t_h = [g.constant(rng.normal(size=(2, 3, 4)))]
    targets = g.constant(rng.integers(0, 5, (2, 3)))
    cfg = DistillConfig(alpha=0.5, include_lm_loss=True, lm_loss_weight=0.25)
    total, parts = distill_loss(g, (s_logits, s_h), (t_logits, t_h), cfg, targets)
    v = ad.forward(g)
    want = v[parts["kl"]] + 0.5 * v[parts["layer"]] + 0.25 * v[parts["lm"]]
    assert v[total] == pytest.approx(want, abs=1e-12)


def test_distill_requires_targets_for_lm_loss():
    g = ad.Graph()
    a = g.constant(np.zeros((1, 2, 3)))
    h = [g.constant(np.zeros((1, 2, 3)))]
    cfg = DistillConfig(include_lm_loss=True)
    with pytest.raises(ValueError):
        distill_loss(g, (a, h), (a, h), cfg, targets=None)


def test_layer_loss_rejects_mismatch_and_empty():
    g = ad.Graph()
    a = g.constant(np.zeros((1, 2)))
    with pytest.raises(ValueError):
        layer_loss(g, [a], [a, a])
    with pytest.raises(ValueError):
        layer_loss(g, [], [])


def test_layer_loss_sums_mse():
    g = ad.Graph()
    s = [g.constant(np.zeros((1, 2))), g.constant(np.ones((1, 2)))]
    t = [g.constant(np.ones((1, 2))), g.constant(np.ones((1, 2)))]
    loss = layer_loss(g, s, t)
    assert ad.forward(g)[loss] == pytest.approx(1.0, abs=1e-15)


def test_config_validation():
    with pytest.raises(ValueError):
        DistillConfig(alpha=-0.1).validate()
    with pytest.raises(ValueError):
        DistillConfig(lm_loss_weight=-1.0).validate()


# -- shared-graph properties ---------------------------------------------------


def test_loss_is_exactly_zero_at_identity():
    # all-ones masks and zero-initialized adapters leave the student equal to
    # the teacher bit for bit, so every distillation term vanishes exactly
    params, _, _ = tiny_setup(perturb=False)
    masks = MaskSet.ones(TINY)
    lora = LoraSet.init(TINY, 2, np.random.default_rng(5))
    tg = build_training_graph(TINY, params, masks, lora, DistillConfig(),
                              batch_size=2, seq_len=6)
    tokens = np.random.default_rng(6).integers(0, TINY.vocab_size, (2, 6))
    v = ad.forward(tg.graph, {"tokens": tokens})
    assert v[tg.loss] == 0.0
    assert np.array_equal(v[tg.student_logits], v[tg.teacher_logits])


def test_frozen_weights_get_no_gradients():
    params, masks, lora = tiny_setup()
    tg = build_training_graph(TINY, params, masks, lora, DistillConfig(),
                              batch_size=2, seq_len=6)
    tokens = np.random.default_rng(7).integers(0, TINY.vocab_size, (2, 6))
    v = ad.forward(tg.graph, {"tokens": tokens})
    grads = ad.backward(tg.graph, tg.loss, v)
    names = {tg.graph.nodes[nid].name for nid in grads}
    assert any(n.startswith("mask_") for n in names)
    assert any(n.startswith("lora.") for n in names)
    assert not any(n.startswith("layers.") or n in ("embed", "w_out") for n in names)


def test_student_responds_to_masks_teacher_does_not():
    params, masks, lora = tiny_setup()
    tg = build_training_graph(TINY, params, masks, lora, DistillConfig(),
                              batch_size=2, seq_len=6)
    tokens = np.random.default_rng(8).integers(0, TINY.vocab_size, (2, 6))
    v1 = ad.forward(tg.graph, {"tokens": tokens})
    tg.graph.set_param("mask_head.0", masks.head[0] * 0.5)
    v2 = ad.forward(tg.graph, {"tokens": tokens})
    assert np.array_equal(v1[tg.teacher_logits], v2[tg.teacher_logits])
    assert not np.allclose(v1[tg.student_logits], v2[tg.student_logits])


def test_gradients_match_finite_differences_whole_model():
    # masks, adapters, and every base weight, through both branches and all
    # three loss terms
    params, masks, lora = tiny_setup(seed=11)
    dcfg = DistillConfig(alpha=0.7, include_lm_loss=True, lm_loss_weight=0.3)
    tg = build_training_graph(TINY, params, masks, lora, dcfg, batch_size=2,
                              seq_len=6, trainable_weights=True)
    rng = np.random.default_rng(12)
    tokens = rng.integers(0, TINY.vocab_size, (2, 6))
    targets = rng.integers(0, TINY.vocab_size, (2, 6))
    # eps balances truncation against roundoff: some adapter gradients sit
    # near 1e-7 where the 1e-5 step's cancellation noise alone exceeds rtol
    check_grads(tg.graph, tg.loss, {"tokens": tokens, "targets": targets},
                eps=3e-5, tol=1e-4)
