import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from miscite.metrics import auc, evaluate_scores, f1_precision


def pair_auc(scores, labels):
    pos = [s for s, y in zip(scores, labels) if y == 1]
    neg = [s for s, y in zip(scores, labels) if y == 0]
    total = sum(1.0 if p > n else 0.5 if p == n else 0.0 for p in pos for n in neg)
    return total / (len(pos) * len(neg))


def test_auc_examples():
    assert auc([0.9, 0.8, 0.3, 0.1], [1, 1, 0, 0]) == 1.0
    assert auc([0.9, 0.6, 0.4, 0.2], [1, 0, 1, 0]) == pytest.approx(0.75)
    assert auc([0.3] * 5, [1, 0, 1, 0, 0]) == 0.5
    with pytest.raises(ValueError):
        auc([0.1, 0.2], [1, 1])


@st.composite
def scored(draw):
    n = draw(st.integers(2, 40))
    labels = draw(st.lists(st.integers(0, 1), min_size=n, max_size=n).filter(lambda l: 0 < sum(l) < len(l)))
    # a coarse grid makes ties common
    scores = draw(st.lists(st.integers(0, 10).map(lambda k: k / 10), min_size=n, max_size=n))
    return scores, labels


@settings(max_examples=1000, deadline=None)
@given(scored())
def test_auc_matches_pair_counting(case):
    scores, labels = case
    assert auc(scores, labels) == pytest.approx(pair_auc(scores, labels), abs=1e-9)


@settings(max_examples=200, deadline=None)
@given(scored())
def test_auc_invariant_under_monotone_transform(case):
    scores, labels = case
    assert auc(np.exp(3 * np.array(scores)), labels) == pytest.approx(auc(scores, labels), abs=1e-12)


def test_f1_examples():
    assert f1_precision([0.9, 0.1], [1, 0]) == (1.0, 1.0, 1.0)
    assert f1_precision([1, 1, 0, 0], [1, 0, 1, 0]) == (0.5, 0.5, 0.5)
    assert f1_precision([0.1, 0.2], [1, 0]) == (0.0, 0.0, 0.0)
    with pytest.raises(ValueError):
        f1_precision([0.1, 0.2], [1, 0], threshold=1.0)


def test_report_ranges():
    r = evaluate_scores([0.2, 0.7, 0.9], [0, 1, 0])
    assert r.n == 3 and all(0 <= v <= 1 for v in (r.auc, r.f1, r.precision, r.recall))
