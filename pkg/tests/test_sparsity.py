"""Sparsity machinery: smallest-k mass, prox, count gradients, budget model.

Frozen values are hand arithmetic; the enumeration oracles live in helpers.
"""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from helpers import prox_bruteforce, smallest_k_bruteforce
from uniprune import sparsity as sp
from uniprune.model import MaskSet, ModelConfig


def masks_of(head_rows, channel_rows):
    return MaskSet(np.array(head_rows, dtype=float),
                   np.array(channel_rows, dtype=float))


# -- smallest-k mass ------------------------------------------------------------


def test_smallest_k_hand_value():
    mass, idx = sp.smallest_k_sqnorm(np.array([0.9, 0.2, 0.5]), 2)
    # 0.2^2 + 0.5^2
    assert mass == pytest.approx(0.29, abs=1e-15)
    assert idx.tolist() == [1, 2]


def test_smallest_k_zero_k():
    mass, idx = sp.smallest_k_sqnorm(np.array([0.9, 0.2]), 0)
    assert mass == 0.0 and idx.size == 0


def test_smallest_k_full_vector():
    v = np.array([0.3, -0.4])
    mass, idx = sp.smallest_k_sqnorm(v, 2)
    assert mass == pytest.approx(0.25, abs=1e-15)
    assert idx.tolist() == [0, 1]


def test_smallest_k_tie_breaks_low_index():
    _, idx = sp.smallest_k_sqnorm(np.array([0.5, 0.3, 0.3, 0.3]), 2)
    assert idx.tolist() == [1, 2]


def test_smallest_k_uses_magnitude():
    _, idx = sp.smallest_k_sqnorm(np.array([-0.1, 0.9, 0.05]), 1)
    assert idx.tolist() == [2]


def test_smallest_k_rejects_bad_k():
    with pytest.raises(ValueError):
        sp.smallest_k_sqnorm(np.array([1.0]), 2)
    with pytest.raises(ValueError):
        sp.smallest_k_sqnorm(np.array([1.0]), -1)
    with pytest.raises(ValueError):
        sp.smallest_k_sqnorm(np.ones((2, 2)), 1)


@given(st.lists(st.floats(-2, 2, allow_nan=False), min_size=1, max_size=7),
       st.integers(0, 7))
@settings(max_examples=200, deadline=None)
def test_smallest_k_matches_enumeration(values, k):
    v = np.array(values)
    k = min(k, v.size)
    mass, idx = sp.smallest_k_sqnorm(v, k)
    assert mass == pytest.approx(smallest_k_bruteforce(v, k), abs=1e-12)
    assert idx.size == k
    # reported indices actually account for the reported mass
    assert float((v[idx] ** 2).sum()) == pytest.approx(mass, abs=1e-12)


@given(st.lists(st.integers(0, 1), min_size=1, max_size=8), st.integers(0, 8))
@settings(max_examples=200, deadline=None)
def test_zero_mass_iff_enough_zeros(bits, k):
    v = np.array(bits, dtype=float)
    k = min(k, v.size)
    mass, _ = sp.smallest_k_sqnorm(v, k)
    assert (mass == 0.0) == (int((v == 0.0).sum()) >= k)


# -- prox ------------------------------------------------------------------


def test_prox_hand_value():
    # shrink factor 1/(1 + 2*0.5*1.0) = 0.5 applied to the single smallest entry
    out = sp.prox(np.array([0.9, 0.2, 0.5]), 1, decay_rate=0.5, mult=1.0)
    np.testing.assert_allclose(out, [0.9, 0.1, 0.5], atol=1e-15)


def test_prox_zero_count_is_identity():
    v = np.array([0.4, 0.8])
    out = sp.prox(v, 0, 0.02, 5.0)
    assert np.array_equal(out, v)
    assert out is not v


def test_prox_fractional_count_rounds_up():
    out = sp.prox(np.array([0.9, 0.2, 0.5]), 1.2, decay_rate=0.5, mult=1.0)
    np.testing.assert_allclose(out, [0.9, 0.1, 0.25], atol=1e-15)


def test_prox_zero_multiplier_is_identity():
    v = np.array([0.3, 0.6, 0.1])
    assert np.array_equal(sp.prox(v, 2, 0.02, 0.0), v)


def test_prox_matches_bruteforce_examples():
    rng = np.random.default_rng(7)
    for _ in range(60):
        n = int(rng.integers(1, 7))
        v = rng.uniform(-1.0, 1.0, n)
        count = float(rng.uniform(0, n - 1)) if n > 1 else 0.0
        decay, mult = float(rng.uniform(0.01, 1.0)), float(rng.uniform(0.0, 20.0))
        got = sp.prox(v, count, decay, mult)
        want = prox_bruteforce(v, count, decay, mult)
        np.testing.assert_allclose(got, want, atol=1e-10)


@given(st.lists(st.floats(-1, 1, allow_nan=False), min_size=1, max_size=6),
       st.floats(0, 5, allow_nan=False), st.floats(0, 0.5), st.floats(0, 30))
@settings(max_examples=150, deadline=None)
def test_prox_shrinks_selected_leaves_rest(values, count, decay, mult):
    v = np.array(values)
    count = min(count, float(v.size))
    out = sp.prox(v, count, decay, mult)
    k = sp.count_ceil(count)
    _, idx = sp.smallest_k_sqnorm(v, min(k, v.size))
    factor = 1.0 / (1.0 + 2.0 * decay * mult)
    np.testing.assert_allclose(out[idx], v[idx] * factor, atol=1e-12)
    rest = np.setdiff1d(np.arange(v.size), idx)
    assert np.array_equal(out[rest], v[rest])


# -- losses over mask sets ---------------------------------------------------


def test_sparsity_loss_hand_value():
    m = masks_of([[1.0, 0.2]], [[1.0, 0.4]])
    state = sp.SparsityState(prune_heads=1.0, prune_channels=1.0,
                             sparsity_mult=1.0, resource_mult=0.0)
    # 0.2^2 + 0.4^2
    assert sp.sparsity_loss(m, state) == pytest.approx(0.2, abs=1e-15)


def test_sparsity_loss_scales_with_multiplier():
    m = masks_of([[1.0, 0.2]], [[1.0, 0.4]])
    state = sp.SparsityState(1.0, 1.0, 3.0, 0.0)
    assert sp.sparsity_loss(m, state) == pytest.approx(0.6, abs=1e-15)


def test_layer_mass_per_layer():
    m = masks_of([[1.0, 0.2], [0.3, 1.0]], [[1.0, 0.4], [1.0, 0.0]])
    state = sp.SparsityState(1.0, 1.0, 2.0, 0.0)
    head, channel = sp.layer_mass(m, state)
    np.testing.assert_allclose(head, [0.04, 0.09], atol=1e-15)
    np.testing.assert_allclose(channel, [0.16, 0.0], atol=1e-15)


def test_zero_counts_give_zero_loss():
    m = masks_of([[0.5, 0.5]], [[0.5, 0.5]])
    state = sp.SparsityState(0.0, 0.0, 10.0, 0.0)
    assert sp.sparsity_loss(m, state) == 0.0


# -- straight-through count gradients ----------------------------------------


def test_grad_count_sparsity_hand_values():
    v = np.array([0.9, 0.3, 0.5])
    # count 0: next admitted entry is the smallest, 0.3
    assert sp.grad_count_sparsity(v, 0.0) == pytest.approx(0.09, abs=1e-15)
    # count 0.4 -> ceil 1: next admitted is second-smallest, 0.5
    assert sp.grad_count_sparsity(v, 0.4) == pytest.approx(0.25, abs=1e-15)
    # saturated: stays at the largest entry
    assert sp.grad_count_sparsity(v, 2.5) == pytest.approx(0.81, abs=1e-15)


def test_grad_count_sparsity_matches_mass_difference():
    # the straight-through value equals the increase in mass from k to k+1
    rng = np.random.default_rng(3)
    for _ in range(40):
        v = rng.uniform(-1, 1, int(rng.integers(2, 8)))
        count = float(rng.uniform(0, v.size - 2))
        k = sp.count_ceil(count)
        lo, _ = sp.smallest_k_sqnorm(v, k)
        hi, _ = sp.smallest_k_sqnorm(v, k + 1)
        assert sp.grad_count_sparsity(v, count) == pytest.approx(hi - lo, abs=1e-12)


def test_grad_count_resource_hand_values():
    rm = sp.ResourceModel(total_params=10000, target_params=5000, n_layers=2,
                          head_cost=128, channel_cost=24)
    assert sp.grad_count_resource(rm, 1.0, "head") == -256.0
    assert sp.grad_count_resource(rm, 1.0, "channel") == -48.0
    assert sp.grad_count_resource(rm, 0.5, "head") == -128.0
    assert sp.grad_count_resource(rm, 0.0, "channel") == 0.0
    with pytest.raises(ValueError):
        sp.grad_count_resource(rm, 1.0, "embedding")


# -- budget model ------------------------------------------------------------


def test_size_after_hand_value():
    rm = sp.ResourceModel(total_params=10000, target_params=5000, n_layers=2,
                          head_cost=128, channel_cost=24)
    assert rm.size_after(1.0, 4.0) == pytest.approx(9552.0)
    assert rm.size_after(0.0, 0.0) == 10000.0


def test_from_config_default_budget():
    rm = sp.ResourceModel.from_config(ModelConfig(), 0.5)
    assert rm.total_params == 230976
    assert rm.target_params == 115488.0
    assert rm.head_cost == 4096 and rm.channel_cost == 192
    assert rm.n_layers == 4


def test_from_config_rejects_bad_target():
    with pytest.raises(ValueError):
        sp.ResourceModel.from_config(ModelConfig(), 1.0)
    with pytest.raises(ValueError):
        sp.ResourceModel.from_config(ModelConfig(), -0.1)
    # a fully dense target is a legal no-op budget
    rm = sp.ResourceModel.from_config(ModelConfig(), 0.0)
    assert rm.target_params == rm.total_params


def test_actual_sparsity_hand_value():
    rm = sp.ResourceModel(total_params=10000, target_params=5000, n_layers=2,
                          head_cost=128, channel_cost=24)
    head = np.ones((2, 4))
    head[0, 1] = 0.0
    head[1, 3] = 0.0
    channel = np.ones((2, 8))
    channel[0, :4] = 0.0
    channel[1, :4] = 0.0
    m = MaskSet(head, channel)
    # (2*128 + 8*24) / 10000
    assert sp.actual_sparsity(m, rm) == pytest.approx(0.0448, abs=1e-15)


def test_actual_sparsity_threshold():
    rm = sp.ResourceModel(total_params=1000, target_params=500, n_layers=1,
                          head_cost=100, channel_cost=10)
    m = MaskSet(np.array([[sp.ZERO_EPS / 2, 1.0]]), np.ones((1, 3)))
    assert sp.actual_sparsity(m, rm) == pytest.approx(0.1)
    m2 = MaskSet(np.array([[sp.ZERO_EPS * 10, 1.0]]), np.ones((1, 3)))
    assert sp.actual_sparsity(m2, rm) == 0.0


def test_count_ceil():
    assert sp.count_ceil(0.0) == 0
    assert sp.count_ceil(0.3) == 1
    assert sp.count_ceil(1.0) == 1
    assert sp.count_ceil(1.2) == 2
    with pytest.raises(ValueError):
        sp.count_ceil(-0.1)


def test_state_roundtrip_and_validation():
    state = sp.SparsityState(1.5, 20.25, 3.0, 0.125)
    again = sp.SparsityState.from_dict(state.as_dict())
    assert again == state
    with pytest.raises(ValueError):
        sp.SparsityState(-1.0, 0.0, 0.0, 0.0).validate()
