import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sedlnl import model as M
from sedlnl.dataset import TrainingView
from sedlnl.selection import (
    ThresholdState,
    local_thresholds,
    make_probe,
    partition,
    probe_epoch,
    update_class_expectations,
    update_global_threshold,
    update_thresholds,
)


def random_probs(rng, n, c):
    z = rng.normal(size=(n, c)) * 2
    return M.softmax_probs(z)


def test_initial_state():
    st0 = ThresholdState.initial(100)
    assert st0.global_T == 0.01
    assert np.all(st0.class_E == 0.01)


def test_zero_student_probe_is_uniform():
    p = M.init_params([2, 4, 5], 0).map(np.zeros_like)
    view = TrainingView(np.random.default_rng(0).normal(size=(7, 2)), np.arange(7) % 5, 5)
    probe = probe_epoch(p, view)
    np.testing.assert_allclose(probe.given_label_prob, 0.2)


def test_probe_is_pure_and_recomposes():
    p = M.init_params([3, 6, 4], 1)
    rng = np.random.default_rng(1)
    view = TrainingView(rng.normal(size=(50, 3)), rng.integers(0, 4, 50), 4)
    a, b = probe_epoch(p, view), probe_epoch(p, view)
    assert a.probs.tobytes() == b.probs.tobytes()
    ref = M.softmax_probs(M.forward(p, view.features))
    np.testing.assert_allclose(a.probs, ref, atol=1e-12, rtol=0)
    np.testing.assert_array_equal(a.given_label_prob, a.probs[np.arange(50), view.given_labels])
    np.testing.assert_allclose(a.probs.sum(axis=1), 1, atol=1e-9)


def _probe_with_mean(mean, n=4, c=4):
    # given-label probabilities all equal to `mean`
    probs = np.full((n, c), (1 - mean) / (c - 1))
    probs[:, 0] = mean
    return make_probe(probs, np.zeros(n, dtype=int))


def test_global_threshold_step():
    state = ThresholdState(0.01, np.full(4, 0.25), 0.99, 3)
    out = update_global_threshold(state, _probe_with_mean(0.5), epoch=4)
    assert out.global_T == pytest.approx(0.0149, abs=1e-15)
    assert out.epoch_index == 4


def test_epoch_zero_branch_ignores_probe():
    state = ThresholdState.initial(4)
    out = update_thresholds(state, _probe_with_mean(0.9), epoch=0)
    assert out.global_T == 0.25
    assert np.all(out.class_E == 0.25)


def test_global_threshold_converges_to_constant_mean():
    state = ThresholdState.initial(4, 0.9)
    for t in range(1, 400):
        state = update_global_threshold(state, _probe_with_mean(0.7), t)
    assert state.global_T == pytest.approx(0.7, abs=1e-12)


def test_class_expectation_step():
    probs = np.tile([0.3, 0.7, 0.0, 0.0], (5, 1))
    state = ThresholdState(0.25, np.array([0.01, 0.99, 0.0, 0.0]), 0.99, 1)
    out = update_class_expectations(state, make_probe(probs, np.zeros(5, dtype=int)), 2)
    assert out.class_E[0] == pytest.approx(0.0129, abs=1e-15)


@settings(max_examples=40, deadline=None)
@given(C=st.integers(2, 12), epochs=st.integers(1, 20), seed=st.integers(0, 10_000))
def test_class_expectations_stay_on_simplex(C, epochs, seed):
    rng = np.random.default_rng(seed)
    state = ThresholdState.initial(C, 0.99)
    for t in range(epochs):
        probs = random_probs(rng, 30, C)
        state = update_thresholds(state, make_probe(probs, rng.integers(0, C, 30)), t)
        assert abs(state.class_E.sum() - 1.0) <= 1e-12
        assert 0 < state.global_T <= 1
        assert np.all((state.class_E > 0) & (state.class_E <= 1))


def test_local_threshold_examples():
    st1 = ThresholdState(0.3, np.array([0.2, 0.4]))
    np.testing.assert_allclose(local_thresholds(st1), [0.15, 0.30])
    st2 = ThresholdState(0.42, np.full(5, 0.2))
    np.testing.assert_allclose(local_thresholds(st2), 0.42)


@settings(max_examples=50, deadline=None)
@given(
    E=st.lists(st.floats(0.001, 1.0), min_size=2, max_size=10),
    T=st.floats(0.01, 1.0),
    k=st.floats(0.01, 100.0),
)
def test_local_thresholds_ratio_invariant_and_bounded(E, T, k):
    E = np.array(E)
    a = local_thresholds(ThresholdState(T, E))
    b = local_thresholds(ThresholdState(T, E * k))
    np.testing.assert_allclose(a, b, rtol=1e-12)
    assert np.all(a > 0) and np.all(a <= T * (1 + 1e-15))
    assert a[np.argmax(E)] == T


def test_partition_strict_boundary():
    probs = np.array([[0.6, 0.4], [0.3, 0.7], [0.5, 0.5]])
    probe = make_probe(probs, np.array([0, 1, 0]))
    part = partition(probe, np.array([0, 1, 0]), np.array([0.5, 0.7]))
    assert part.clean_indices.tolist() == [0]
    assert part.noisy_indices.tolist() == [1, 2]


def test_partition_zero_thresholds_selects_all():
    rng = np.random.default_rng(0)
    probs = random_probs(rng, 20, 3)
    y = rng.integers(0, 3, 20)
    part = partition(make_probe(probs, y), y, np.zeros(3))
    assert part.clean_indices.tolist() == list(range(20))
    assert part.noisy_indices.size == 0


def test_partition_matches_brute_force():
    rng = np.random.default_rng(7)
    probs = random_probs(rng, 1000, 10)
    y = rng.integers(0, 10, 1000)
    T = rng.uniform(0, 0.5, 10)
    part = partition(make_probe(probs, y), y, T)
    clean = [i for i in range(1000) if probs[i][y[i]] > T[y[i]]]
    noisy = [i for i in range(1000) if not probs[i][y[i]] > T[y[i]]]
    assert part.clean_indices.tolist() == clean
    assert part.noisy_indices.tolist() == noisy


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 10_000), bump=st.floats(0.0, 0.5), cls=st.integers(0, 4))
def test_raising_a_threshold_never_grows_clean_set(seed, bump, cls):
    rng = np.random.default_rng(seed)
    probs = random_probs(rng, 200, 5)
    y = rng.integers(0, 5, 200)
    T = rng.uniform(0, 0.6, 5)
    probe = make_probe(probs, y)
    before = set(partition(probe, y, T).clean_indices.tolist())
    T2 = T.copy()
    T2[cls] += bump
    after = set(partition(probe, y, T2).clean_indices.tolist())
    assert after <= before


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 10_000), T=st.floats(0.3, 0.95), epochs=st.integers(1, 30))
def test_local_thresholds_balance_selection(seed, T, epochs):
    # class 0 is learnt better than class 1: its given-label probabilities dominate
    rng = np.random.default_rng(seed)
    n = 400
    y = np.repeat([0, 1], n // 2)
    p_given = np.where(y == 0, rng.uniform(0.5, 1.0, n), rng.uniform(0.2, 0.8, n))
    probs = np.empty((n, 2))
    probs[np.arange(n), y] = p_given
    probs[np.arange(n), 1 - y] = 1 - p_given
    probe = make_probe(probs, y)
    state = ThresholdState.initial(2, 0.9)
    for t in range(1, epochs + 1):
        state = update_class_expectations(state, probe, t)
    state = ThresholdState(T, state.class_E, state.ema_m, epochs)

    def ratio(th):
        counts = np.bincount(y[partition(probe, y, th).clean_indices], minlength=2)
        return np.inf if counts.min() == 0 else counts.max() / counts.min()

    local = ratio(local_thresholds(state))
    global_only = ratio(np.full(2, T))
    assert local <= global_only
