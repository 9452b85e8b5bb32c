"""Tests for the dynamic threshold and the multi-label decision rule."""
import math

import numpy as np
import pytest

from lgp.errors import InvalidArgumentError
from lgp.inference import ThresholdParams, dynamic_threshold, predict

PARAMS = ThresholdParams(alpha=0.3, beta=0.7, gamma=0.7)


def oracle_threshold(ys, alpha, beta, gamma):
    mean = sum(ys) / len(ys)
    std = math.sqrt(sum((v - mean) ** 2 for v in ys) / len(ys))
    return alpha * mean + beta * std + gamma * max(ys) + (1 - gamma) * min(ys)


def test_threshold_derived_example():
    ys = [-1.22474, 0.0, 1.22474]
    expected = oracle_threshold(ys, 0.3, 0.7, 0.7)
    assert expected == pytest.approx(1.18990, abs=1e-4)
    assert dynamic_threshold(ys, PARAMS) == pytest.approx(expected, abs=1e-12)


def test_threshold_constant_scores():
    for c in (-2.0, 0.0, 3.5):
        t = dynamic_threshold([c, c, c], PARAMS)
        assert t == pytest.approx((PARAMS.alpha + 1.0) * c, abs=1e-12)


def test_threshold_single_score():
    assert dynamic_threshold([0.0], PARAMS) == pytest.approx(0.0, abs=1e-15)


def test_threshold_term_by_term_on_random_vectors():
    rng = np.random.default_rng(0)
    for _ in range(200):
        ys = rng.normal(size=int(rng.integers(1, 9))).tolist()
        a, b, g = rng.uniform(-1, 1, size=3)
        params = ThresholdParams(alpha=a, beta=b, gamma=g)
        assert dynamic_threshold(ys, params) == pytest.approx(
            oracle_threshold(ys, a, b, g), abs=1e-12
        )


def test_threshold_rejects_nonfinite_coefficients():
    with pytest.raises(InvalidArgumentError):
        ThresholdParams(alpha=float("nan"))


def test_predict_derived_example():
    pred = predict([-1.22474, 0.0, 1.22474], PARAMS)
    assert pred.positives == {2}
    assert not pred.fallback_used
    assert pred.threshold == pytest.approx(1.18990, abs=1e-4)


def test_predict_fallback_argmax():
    # constant scores: threshold (alpha+1)*c > c for c > 0, so nothing clears it
    pred = predict([1.0, 1.0, 1.0], PARAMS)
    assert pred.fallback_used
    assert pred.positives == {0}


def test_predict_fallback_none_can_be_empty():
    pred = predict([1.0, 1.0, 1.0], PARAMS, fallback="none")
    assert pred.positives == frozenset()
    assert not pred.fallback_used


def test_predict_threshold_ties_excluded():
    # gamma=1, alpha=beta=0 makes t exactly the max; strict > excludes the max itself
    params = ThresholdParams(alpha=0.0, beta=0.0, gamma=1.0)
    pred = predict([0.2, 0.9], params, fallback="none")
    assert pred.threshold == pytest.approx(0.9, abs=1e-15)
    assert pred.positives == frozenset()


def test_predict_always_nonempty_with_argmax_fallback():
    rng = np.random.default_rng(1)
    for _ in range(500):
        ys = rng.normal(size=int(rng.integers(1, 8)))
        pred = predict(ys, PARAMS)
        assert len(pred.positives) >= 1


def test_predict_monotone_fixed_threshold():
    # with the threshold held fixed, raising one score never removes it
    rng = np.random.default_rng(2)
    for _ in range(200):
        ys = rng.normal(size=6)
        base = predict(ys, PARAMS, fallback="none")
        i = int(rng.integers(6))
        if i in base.positives:
            ys2 = ys.copy()
            ys2[i] += abs(rng.normal())
            assert ys2[i] > base.threshold


def test_predict_monotone_with_recomputed_threshold_and_fallback():
    # raising one score (threshold recomputed) never drops that index under
    # the default argmax fallback: either it clears the new threshold or it
    # has become the argmax
    rng = np.random.default_rng(3)
    checked = 0
    for _ in range(1000):
        ys = rng.normal(size=int(rng.integers(2, 8)))
        i = int(rng.integers(ys.size))
        before = predict(ys, PARAMS, fallback="argmax")
        ys2 = ys.copy()
        ys2[i] += abs(rng.normal()) + 1e-6
        after = predict(ys2, PARAMS, fallback="argmax")
        if i in before.positives and not before.fallback_used:
            checked += 1
            assert i in after.positives
    assert checked > 100


def test_predict_threshold_can_outrun_raised_max_without_fallback():
    # without the fallback the rule is NOT monotone under recomputation:
    # for the raised argmax, dt/dy = alpha/N + beta*z/N + gamma can exceed 1
    ys = [0.7597, -1.7565]
    before = predict(ys, PARAMS, fallback="none")
    assert 0 in before.positives
    after = predict([ys[0] + 0.6527, ys[1]], PARAMS, fallback="none")
    assert 0 not in after.positives
