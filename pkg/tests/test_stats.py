import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.stats import mannwhitneyu

from chatemg.errors import InvalidArgument
from chatemg.eval.stats import _u_counts, exact_sf, nrmse, wilcoxon_rank_sum_one_sided


def brute_p(x, y):
    """Enumerate every assignment of the pooled ranks to x; P(W >= observed W)."""
    pooled = sorted(list(x) + list(y))
    rank = {v: i + 1 for i, v in enumerate(pooled)}
    w_obs = sum(rank[v] for v in x)
    n = len(pooled)
    hits = total = 0
    for combo in itertools.combinations(range(1, n + 1), len(x)):
        total += 1
        hits += sum(combo) >= w_obs
    return hits / total


def test_counts_sum_to_binomial():
    for n1 in range(1, 7):
        for n2 in range(1, 7):
            assert sum(_u_counts(n1, n2)) == math.comb(n1 + n2, n1)
            c = _u_counts(n1, n2)
            assert c == c[::-1]


def test_exact_matches_enumeration_50_instances():
    rng = np.random.default_rng(0)
    for _ in range(50):
        n1, n2 = rng.integers(1, 7, size=2)
        vals = rng.permutation(100)[:n1 + n2].astype(float)
        x, y = vals[:n1], vals[n1:]
        assert wilcoxon_rank_sum_one_sided(x, y) == brute_p(x, y)


def test_reference_values():
    assert wilcoxon_rank_sum_one_sided([4, 5, 6], [1, 2, 3]) == pytest.approx(0.05)
    assert wilcoxon_rank_sum_one_sided([1, 2, 3], [4, 5, 6]) == 1.0


def test_matches_scipy_exact():
    rng = np.random.default_rng(1)
    for _ in range(20):
        x, y = rng.normal(size=5), rng.normal(size=6)
        ref = mannwhitneyu(x, y, alternative="greater", method="exact").pvalue
        assert wilcoxon_rank_sum_one_sided(x, y) == pytest.approx(ref, abs=1e-12)


def test_normal_approximation_close_to_exact():
    rng = np.random.default_rng(2)
    for _ in range(20):
        x, y = rng.normal(size=20), rng.normal(0.3, 1, size=20)
        ref = mannwhitneyu(x, y, alternative="greater", method="exact").pvalue
        assert abs(wilcoxon_rank_sum_one_sided(x, y) - ref) < 0.02


def test_ties_use_corrected_approximation():
    x, y = [1, 1, 2, 3], [1, 2, 2, 4]
    ref = mannwhitneyu(x, y, alternative="greater", method="asymptotic", use_continuity=True).pvalue
    assert wilcoxon_rank_sum_one_sided(x, y) == pytest.approx(ref, abs=1e-12)


def test_empty_rejected():
    with pytest.raises(InvalidArgument):
        wilcoxon_rank_sum_one_sided([], [1.0])


@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(-100, 100), min_size=1, max_size=15),
       st.lists(st.floats(-100, 100), min_size=1, max_size=15))
def test_p_in_unit_interval(x, y):
    p = wilcoxon_rank_sum_one_sided(x, y)
    assert 0 < p <= 1


def test_exact_sf_bounds():
    assert exact_sf(0, 3, 3) == 1.0
    assert exact_sf(9, 3, 3) == pytest.approx(1 / 20)


class TestNRMSE:
    def test_identical(self):
        x = np.random.default_rng(0).integers(0, 1001, (256, 8))
        assert nrmse(x, x) == 0.0

    def test_offset(self):
        real = np.random.default_rng(0).integers(0, 900, (256, 8))
        syn = real.copy()
        syn[150:] += 100
        assert abs(nrmse(syn, real) - 0.10) <= 1e-12

    def test_prompt_rows_ignored(self):
        real = np.zeros((256, 8))
        syn = real.copy()
        syn[:150] = 999
        assert nrmse(syn, real) == 0.0

    def test_hand_value(self):
        real = np.zeros((4, 2))
        syn = np.array([[0, 0], [0, 0], [30, 40], [0, 0]], dtype=float)
        assert nrmse(syn, real, prompt_len=2) == pytest.approx(math.sqrt((900 + 1600) / 4) / 1000)

    def test_errors(self):
        with pytest.raises(InvalidArgument):
            nrmse(np.zeros((10, 8)), np.zeros((9, 8)))
        with pytest.raises(InvalidArgument):
            nrmse(np.zeros((10, 8)), np.zeros((10, 8)), prompt_len=10)
