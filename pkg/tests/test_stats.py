import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from perpetuity_is.stats import (SummaryStats, bernoulli_summary, cv_spread,
                                 efficiency_report, merge, summarize)


def test_constant_batch():
    s = summarize([1, 1, 1])
    assert (s.mean, s.variance, s.cv) == (1.0, 0.0, 0.0)
    assert s.ci95_halfwidth == 0.0


def test_two_point_batch():
    s = summarize([0, 2])
    assert s.mean == 1.0 and s.variance == 2.0
    assert s.cv == pytest.approx(math.sqrt(2))
    assert s.ci95_halfwidth == pytest.approx(1.96 * math.sqrt(2 / 2))


def test_too_few_samples():
    with pytest.raises(ValueError):
        summarize([1.0])


def test_tiny_values_keep_precision():
    x = np.array([1e-300, 3e-300, 2e-300])
    s = summarize(x)
    assert s.mean == pytest.approx(2e-300, rel=1e-14)


floats = st.floats(min_value=0.0, max_value=1e6, allow_nan=False)


@settings(max_examples=80, deadline=None)
@given(st.lists(floats, min_size=2, max_size=60), st.lists(floats, min_size=2, max_size=60))
def test_merge_consistent(a, b):
    whole = summarize(a + b)
    m = merge(summarize(a), summarize(b))
    assert m.n == whole.n
    assert m.mean == pytest.approx(whole.mean, rel=1e-12, abs=1e-300)
    assert m.variance == pytest.approx(whole.variance, rel=1e-10, abs=1e-9)


@settings(max_examples=50, deadline=None)
@given(st.lists(floats, min_size=2, max_size=80), st.randoms())
def test_permutation_invariant(a, rnd):
    b = list(a)
    rnd.shuffle(b)
    sa, sb = summarize(a), summarize(b)
    assert sa.mean == sb.mean
    assert sa.variance == pytest.approx(sb.variance, rel=1e-12, abs=1e-12)


@settings(max_examples=50, deadline=None)
@given(st.lists(floats, min_size=2, max_size=80))
def test_invariants(a):
    s = summarize(a)
    assert s.cv >= 0 and s.ci95_halfwidth >= 0
    assert min(a) - 1e-9 * max(1, abs(min(a))) <= s.mean <= max(a) * (1 + 1e-12) + 1e-300


def test_bernoulli_summary_matches_summarize():
    x = [1.0] * 7 + [0.0] * 13
    a, b = bernoulli_summary(7, 20), summarize(x)
    assert a.mean == b.mean and a.variance == pytest.approx(b.variance, rel=1e-14)


def test_overlap():
    a = SummaryStats(100, 1.0, 1.0)
    assert a.overlaps(SummaryStats(100, 1.3, 1.0))
    assert not a.overlaps(SummaryStats(100, 2.0, 1.0))


def test_efficiency_constant_estimator():
    s = summarize([1.0, 3.0, 2.0, 2.0])
    rep = efficiency_report({8.0: s, 16.0: s, 32.0: s}, {8.0: 1.0, 16.0: 1.0, 32.0: 1.0})
    assert rep.spread == pytest.approx(1.0) and not rep.flagged
    assert "spread=1.000" in rep.format()


def test_efficiency_flags_spread():
    a = summarize([1.0, 1.1, 0.9, 1.0])
    b = summarize([0.0] * 99 + [100.0])
    rep = efficiency_report({8.0: a, 64.0: b}, {})
    assert rep.flagged


def test_efficiency_needs_two_points():
    with pytest.raises(ValueError):
        efficiency_report({8.0: summarize([1, 2])}, {})


def test_cv_spread():
    a = SummaryStats(10, 1.0, 4.0)
    b = SummaryStats(10, 1.0, 1.0)
    assert cv_spread({1: a, 2: b}) == pytest.approx(2.0)
