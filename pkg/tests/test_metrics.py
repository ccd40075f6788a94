import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import auprc_thresholds, auroc_pairs
from snd.metrics import UndefinedMetricError, auprc, auroc


def test_auroc_perfect_and_ties():
    assert auroc([0.9, 0.8, 0.1, 0.2], [1, 1, 0, 0]) == 1.0
    assert auroc([0.3] * 6, [1, 0, 1, 0, 0, 0]) == 0.5


def test_auroc_six_mixed():
    s, y = [0.1, 0.4, 0.35, 0.8, 0.4, 0.2], [0, 0, 1, 1, 1, 0]
    assert auroc(s, y) == auroc_pairs(s, y)


def test_auprc_perfect_and_all_equal():
    assert auprc([0.9, 0.8, 0.1, 0.2], [1, 1, 0, 0]) == 1.0
    assert auprc([0.5] * 8, [1, 0, 0, 1, 0, 0, 0, 0]) == 0.25


def test_auprc_eight_mixed():
    s, y = [0.9, 0.1, 0.5, 0.5, 0.3, 0.7, 0.2, 0.5], [1, 0, 1, 0, 1, 0, 0, 1]
    assert auprc(s, y) == auprc_thresholds(s, y)


def test_undefined():
    with pytest.raises(UndefinedMetricError):
        auroc([0.1, 0.2], [1, 1])
    with pytest.raises(UndefinedMetricError):
        auprc([0.1, 0.2], [0, 0])
    with pytest.raises(ValueError):
        auroc([0.1, 0.2], [0, 1, 0])


scores_and_labels = st.integers(2, 60).flatmap(
    lambda n: st.tuples(
        st.lists(st.integers(0, 6), min_size=n, max_size=n),
        st.lists(st.booleans(), min_size=n, max_size=n),
    )
).filter(lambda t: 0 < sum(t[1]) < len(t[1]))


@settings(max_examples=60, deadline=None)
@given(scores_and_labels)
def test_tie_heavy_oracles(data):
    s, y = data
    s = [v / 7 for v in s]
    assert auroc(s, y) == auroc_pairs(s, y)
    assert auprc(s, y) == auprc_thresholds(s, y)


@settings(max_examples=30, deadline=None)
@given(scores_and_labels)
def test_auroc_monotone_invariance(data):
    s, y = data
    s = np.asarray(s, float)
    assert auroc(s, y) == auroc(np.exp(3 * s) - 7, y) == auroc(np.arctan(s), y)
