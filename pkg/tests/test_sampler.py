import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from arcnet.sampler import compute_weights, draw, proxy_metric, weights_for_labels


@pytest.mark.parametrize(
    "total,expected",
    [(0, 0), (1, 1), (99, 5)],
)
def test_proxy_metric_examples(total, expected):
    labels = np.zeros(224, dtype=int)
    labels[: total // 2] = 2
    labels[total // 2 : total // 2 + total % 2] = 1
    assert labels.sum() == total
    assert proxy_metric(labels) == expected


def test_proxy_metric_counts_severe_twice():
    assert proxy_metric([2] * 3) == math.ceil(math.log(7))
    assert proxy_metric([1] * 3) == math.ceil(math.log(4))


@given(st.integers(0, 447), st.integers(0, 447))
def test_proxy_metric_monotone(a, b):
    lo, hi = sorted((a, b))
    assert proxy_metric([lo]) <= proxy_metric([hi])


def test_weights_example():
    w = compute_weights([0, 0, 0, 5, 5, 7])
    assert w.M == 3
    assert w.weights.tolist() == [1.0, 1.0, 1.0, 1.5, 1.5, 3.0]


def test_equal_values_give_unit_weights():
    assert compute_weights([4] * 9).weights.tolist() == [1.0] * 9


def test_clipping():
    w = compute_weights([0] * 200 + [3])
    assert w.weights[-1] == 50.0
    assert (w.weights[:-1] == 1.0).all()


def test_mode_tie_uses_shared_cardinality():
    w = compute_weights([1, 1, 2, 2, 3])
    assert w.M == 2
    assert w.weights.tolist() == [1.0, 1.0, 1.0, 1.0, 2.0]


def test_empty_rejected():
    with pytest.raises(ValueError):
        compute_weights([])


@given(st.lists(st.integers(0, 7), min_size=1, max_size=300))
def test_weight_bounds(K):
    w = compute_weights(K)
    counts = np.bincount(K)
    assert (w.weights <= 50).all()
    assert (w.weights >= w.M / counts.max() - 1e-12).all()
    assert (w.weights > 0).all()


def test_weights_for_labels():
    rows = [np.zeros(8, int), np.zeros(8, int), np.array([1, 1, 0, 0, 0, 0, 0, 0])]
    w = weights_for_labels(rows)
    assert w.K.tolist() == [0, 0, 2]
    assert w.weights.tolist() == [1.0, 1.0, 2.0]


def test_uniform_draws_within_three_sigma():
    w = compute_weights([0] * 10)
    idx = draw(w, np.random.default_rng(0), 1_000_000)
    freq = np.bincount(idx, minlength=10) / idx.size
    sigma = math.sqrt(0.1 * 0.9 / idx.size)
    assert np.abs(freq - 0.1).max() <= 3 * sigma


def test_one_to_three_ratio():
    idx = draw(np.array([1.0, 3.0]), np.random.default_rng(1), 1_000_000)
    counts = np.bincount(idx)
    assert counts[1] / counts[0] == pytest.approx(3.0, rel=0.01)


def test_draws_are_seeded():
    w = compute_weights([0, 0, 1, 2])
    a = draw(w, np.random.default_rng(42), 100)
    b = draw(w, np.random.default_rng(42), 100)
    assert np.array_equal(a, b)


def test_scaling_weights_leaves_distribution_unchanged():
    base = np.array([1.0, 2.0, 5.0])
    a = draw(base, np.random.default_rng(3), 500)
    b = draw(base * 7.5, np.random.default_rng(3), 500)
    assert np.array_equal(a, b)


def test_batch_size_validation():
    with pytest.raises(ValueError):
        draw(np.ones(3), np.random.default_rng(0), 0)
