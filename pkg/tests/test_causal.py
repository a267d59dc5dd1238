import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from cip.causal import (
    ActionWeights,
    CausalMatrices,
    DegenerateInputError,
    action_weights,
    approx_entropy,
    direct_lingam,
    fit_action_reward_weights,
    fit_reward_matrices,
    fit_state_reward_mask,
    matrices_from_json,
    matrices_to_json,
    reweight_actions,
    threshold_support,
    uncontrollable_set,
)
from cip.envs import PRESETS, SemSpec, collect_random, random_sem, sem_generate


def test_approx_entropy_reference_values():
    rng = np.random.default_rng(0)
    g = rng.standard_normal(200_000)
    assert abs(approx_entropy(g) - 0.5 * np.log(2 * np.pi * np.e)) < 0.01
    u = rng.uniform(-np.sqrt(3), np.sqrt(3), 200_000)
    lap = rng.laplace(0, 1 / np.sqrt(2), 200_000)
    # the Gaussian maximizes entropy at unit variance
    assert approx_entropy(u) < approx_entropy(g) and approx_entropy(lap) < approx_entropy(g)


def test_two_variable_direction_and_coefficient():
    rng = np.random.default_rng(1)
    x = rng.uniform(-1, 1, 10_000)
    y = 0.8 * x + rng.uniform(-0.5, 0.5, 10_000)
    res = direct_lingam(np.column_stack([y, x]))
    assert res.order == [1, 0]
    assert abs(res.B[0, 1] - 0.8) < 0.02 and res.B[1, 0] == 0.0


def test_known_sem_recovered():
    B = np.zeros((4, 4))
    B[1, 0], B[2, 0], B[3, 1], B[3, 2] = 0.9, -0.7, 0.6, 0.8
    spec = SemSpec(B, ["uniform", "laplace", "uniform", "laplace"], [1, 0.7, 0.8, 0.6])
    res = direct_lingam(sem_generate(spec, 10_000, 0))
    assert np.array_equal(threshold_support(res, 0.1), (B != 0).astype(int))
    assert np.abs(res.B[B != 0] - B[B != 0]).max() < 0.05


@given(st.integers(0, 10_000))
def test_scaling_a_column_rescales_coefficients(seed):
    rng = np.random.default_rng(seed)
    spec = random_sem(4, rng)
    X = sem_generate(spec, 3000, seed)
    c = rng.uniform(0.5, 3.0, 4)
    a = direct_lingam(X)
    b = direct_lingam(X * c)
    assert a.order == b.order
    np.testing.assert_allclose(a.B_std, b.B_std, atol=1e-8)
    np.testing.assert_allclose(b.B, a.B * c[:, None] / c[None, :], atol=1e-8)


@given(st.integers(0, 10_000))
def test_column_permutation_equivariance(seed):
    rng = np.random.default_rng(seed)
    spec = random_sem(5, rng)
    X = sem_generate(spec, 3000, seed)
    perm = rng.permutation(5)
    a = direct_lingam(X)
    b = direct_lingam(X[:, perm])
    np.testing.assert_allclose(b.B, a.B[np.ix_(perm, perm)], atol=1e-8)


def test_sink_row_equals_least_squares():
    data = collect_random(PRESETS["distractor_reacher"], 3000, 0)
    m = fit_reward_matrices(data)
    Z = np.column_stack([data.s, data.a, np.ones(len(data))])
    coef, *_ = np.linalg.lstsq(Z, data.r, rcond=None)
    np.testing.assert_allclose(np.concatenate([m.m_s_to_r, m.m_a_to_r]), coef[:-1], atol=1e-8)


def test_degenerate_inputs():
    rng = np.random.default_rng(0)
    with pytest.raises(DegenerateInputError, match="at least"):
        direct_lingam(rng.standard_normal((4, 3)))
    X = rng.standard_normal((50, 3))
    X[:, 2] = 1.0
    with pytest.raises(DegenerateInputError, match="'r'"):
        direct_lingam(X, names=["a", "b", "r"])
    b = collect_random(PRESETS["reacher"], 50, 0)
    with pytest.raises(DegenerateInputError, match="at least 100"):
        fit_reward_matrices(b, min_samples=100)


def test_uncontrollable_set_on_distractor_reacher():
    spec = PRESETS["distractor_reacher"]
    m = fit_state_reward_mask(collect_random(spec, 10_000, 0))
    assert list(uncontrollable_set(m, 0.05).indices) == list(range(4, 12))
    assert uncontrollable_set(m, 0.0).indices == ()
    assert not m.m_a_to_r.any()


def test_dead_actuator_weights():
    spec = PRESETS["dead_actuator"]
    _, w = fit_action_reward_weights(collect_random(spec, 10_000, 0))
    assert np.all(w.omega[2:] < 0.5) and np.all(w.omega[:2] > 1.5)
    assert abs(w.omega.sum() - 6) < 1e-12


@given(st.lists(st.floats(-5, 5), min_size=1, max_size=8), st.floats(0.001, 0.5))
def test_action_weights_properties(coefs, w_min):
    w = action_weights(np.array(coefs), w_min).omega
    d = len(coefs)
    assert abs(w.sum() - d) < 1e-9 * d
    assert np.all(w > 0)
    if d == 1:
        assert w[0] == 1.0
    order = np.argsort(np.abs(coefs), kind="stable")
    assert np.all(np.diff(w[order]) >= -1e-12)


def test_reweight_actions():
    w = ActionWeights(np.array([2.0, 0.5]))
    np.testing.assert_array_equal(reweight_actions(np.array([[1.0, 1.0]]), w), [[2.0, 0.5]])
    with pytest.raises(ValueError):
        reweight_actions(np.ones(3), w)


def test_matrices_json_roundtrip():
    m = CausalMatrices(np.array([0.3, 0.01]), np.array([0.2]), 500,
                       m_s_to_r_std=np.array([0.4, 0.02]), m_a_to_r_std=np.array([0.3]))
    doc = json.loads(json.dumps(matrices_to_json(m, action_weights(m.m_a_to_r_std), 0.05)))
    assert doc["uncontrollable"] == [1]
    back, w, theta = matrices_from_json(doc)
    assert back.digest() == m.digest() and theta == 0.05
    np.testing.assert_array_equal(back.m_s_to_r_std, m.m_s_to_r_std)
    assert w.omega.tolist() == [1.0]


def test_non_finite_matrices_rejected():
    with pytest.raises(ValueError):
        CausalMatrices(np.array([np.nan]), np.zeros(1), 10)
