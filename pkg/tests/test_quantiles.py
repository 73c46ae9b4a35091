import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ema_fl.errors import SampleTooSmall
from ema_fl.quantiles import (
    QuartileRule,
    QuartileSummary,
    SortedSample,
    estimated_mean,
    estimator_weight,
    median,
    median_rows,
    quartiles,
    quartiles_rows,
    sample_estimated_mean,
)


def brute_median(values):
    s = sorted(values)
    n = len(s)
    return s[n // 2] if n % 2 else (s[n // 2 - 1] + s[n // 2]) / 2


@pytest.mark.parametrize(
    "values, expected", [([1, 2, 3], 2), ([1, 2, 3, 4], 2.5), ([7], 7)]
)
def test_median_examples(values, expected):
    assert median(SortedSample(values)) == expected


def test_median_matches_sort_and_pick():
    rng = np.random.default_rng(0)
    for n in range(1, 201):
        x = rng.normal(size=n)
        assert median(x) == brute_median(x.tolist())


def test_sorted_sample_validation():
    with pytest.raises(ValueError):
        SortedSample([2.0, 1.0])
    with pytest.raises(SampleTooSmall):
        SortedSample([])
    assert SortedSample.from_unsorted([3, 1, 2]).values.tolist() == [1, 2, 3]


def test_quartiles_examples():
    # Hand evaluation: n=8 -> quar1=2 (index 1), quar3=6 (index 5).
    assert quartiles(SortedSample(range(1, 9))) == QuartileSummary(2, 4.5, 6, 8)
    # n=5 -> quar1=1 (index 0), quar3=3 (index 2).
    assert quartiles(SortedSample([1, 2, 3, 4, 100])) == QuartileSummary(1, 3, 3, 5)
    assert quartiles(SortedSample([2.5] * 4)) == QuartileSummary(2.5, 2.5, 2.5, 4)


def test_quartiles_need_four_points():
    with pytest.raises(SampleTooSmall):
        quartiles(SortedSample([1, 2, 3]))


@pytest.mark.parametrize("n", [4, 5, 8, 9, 10, 11, 12, 50, 201])
def test_quartile_ordering_holds(n):
    rng = np.random.default_rng(n)
    for _ in range(50):
        assert quartiles(rng.normal(size=n)).ordered


@pytest.mark.parametrize("n", [6, 7])
def test_quartile_ordering_can_fail_for_six_and_seven(n):
    # The index rule picks q3 below the upper middle element for these sizes.
    assert not quartiles(np.arange(n, dtype=float)).ordered


def test_estimator_weight():
    assert estimator_weight(50).w == pytest.approx(0.7078, abs=1e-15)
    assert estimator_weight(8).w == pytest.approx(0.74875, abs=1e-15)
    with pytest.raises(ValueError):
        estimator_weight(1)
    ws = [estimator_weight(n).w for n in range(2, 2000)]
    assert all(a > b for a, b in zip(ws, ws[1:]))
    assert abs(estimator_weight(10**9).w - 0.699) < 2e-3


def test_estimated_mean_examples():
    w = estimator_weight(8)
    # 0.74875 * (2 + 6) / 2 + 0.25125 * 4.5
    assert estimated_mean(QuartileSummary(2, 4.5, 6, 8), w) == pytest.approx(4.125625, abs=1e-12)
    for weight in (0.1, 0.5, 0.9):
        assert estimated_mean(QuartileSummary(3.0, 3.0, 3.0, 4), weight) == 3.0
        assert estimated_mean(QuartileSummary(-2.0, 0.0, 2.0, 9), weight) == 0.0


@settings(max_examples=200, deadline=None)
@given(
    st.lists(st.floats(-1e3, 1e3), min_size=4, max_size=60),
    st.floats(0.01, 100),
    st.floats(-100, 100),
)
def test_estimated_mean_location_scale_equivariant(xs, a, b):
    x = np.array(xs)
    w = estimator_weight(x.size)
    base = estimated_mean(quartiles(x), w)
    moved = estimated_mean(quartiles(a * x + b), w)
    assert moved == pytest.approx(a * base + b, rel=1e-9, abs=1e-7)


def _monte_carlo(mu, sigma, rule, reps=10_000, n=50):
    rng = np.random.default_rng(12345)
    rows = np.sort(rng.normal(mu, sigma, size=(reps, n)), axis=1)
    q1, q3 = quartiles_rows(rows, rule)
    w = estimator_weight(n).w
    est = w * (q1 + q3) / 2 + (1 - w) * median_rows(rows)
    return est.mean(), est.std(ddof=1) / np.sqrt(reps)


@pytest.mark.parametrize("mu, sigma", [(0, 1), (5, 2), (-3, 0.5)])
def test_mirrored_rule_unbiased_on_normal_samples(mu, sigma):
    mean, se = _monte_carlo(mu, sigma, QuartileRule.MIRRORED)
    assert abs(mean - mu) < 4 * se


def test_index_rule_sits_low_on_normal_samples():
    # q1 is the 12th and q3 the 36th of 50 values: the midpoint is not centred.
    mean, se = _monte_carlo(0, 1, QuartileRule.INDEX)
    assert -0.08 < mean < -0.05 and se < 0.01


def test_mirrored_quartiles_are_mirror_positions():
    x = np.arange(1.0, 9.0)
    assert quartiles(x, "mirrored") == QuartileSummary(2, 4.5, 7, 8)
    assert quartiles(-x, "mirrored").q1 == -quartiles(x, "mirrored").q3


@pytest.mark.parametrize("n", range(4, 60))
def test_mirrored_rule_always_ordered(n):
    rng = np.random.default_rng(n)
    for _ in range(20):
        assert quartiles(rng.normal(size=n), QuartileRule.MIRRORED).ordered


def test_batched_forms_match_scalar():
    rng = np.random.default_rng(5)
    for n in (4, 5, 9, 50):
        rows = np.sort(rng.normal(size=(20, n)), axis=1)
        med = median_rows(rows)
        for rule in QuartileRule:
            q1, q3 = quartiles_rows(rows, rule)
            for i, row in enumerate(rows):
                s = quartiles(row, rule)
                assert (s.q1, s.m, s.q3) == (q1[i], med[i], q3[i])


def test_sample_estimated_mean():
    x = np.arange(1.0, 9.0)
    assert sample_estimated_mean(x, "index") == pytest.approx(4.125625, abs=1e-12)
    assert sample_estimated_mean(x) == pytest.approx(4.5, abs=1e-12)
    with pytest.raises(SampleTooSmall):
        sample_estimated_mean([1.0, 2.0])
