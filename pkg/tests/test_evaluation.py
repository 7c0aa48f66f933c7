import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats
from scipy.special import ndtr

from transferhub.evaluation import (
    GridSpec,
    crps_gaussian,
    crps_numeric,
    gaussian_grid,
    nrmse,
    rank_table,
    skill,
    verdict_marker,
    wilcoxon_signed_rank,
)


def enumerate_p(d):
    """Brute-force two-sided p over all 2^n sign flips of |d| ranks."""
    ranks = stats.rankdata(np.abs(d))
    observed = ranks[d > 0].sum()
    sums = np.array([sum(r for r, s in zip(ranks, signs) if s)
                     for signs in itertools.product((0, 1), repeat=len(d))])
    lo = np.mean(sums <= observed + 1e-9)
    hi = np.mean(sums >= observed - 1e-9)
    return min(1.0, 2 * min(lo, hi))


class TestNrmse:
    def test_perfect(self):
        assert nrmse([0.1, 0.5], [0.1, 0.5]) == 0.0

    def test_hand(self):
        assert nrmse([0, 1], [1, 0]) == 1.0

    def test_permutation(self):
        rng = np.random.default_rng(0)
        y, f = rng.random(20), rng.random(20)
        p = rng.permutation(20)
        assert nrmse(y, f) == pytest.approx(nrmse(y[p], f[p]), abs=1e-15)

    def test_empty(self):
        with pytest.raises(ValueError):
            nrmse([], [])


class TestCrps:
    def test_standard_normal_at_zero(self):
        assert crps_gaussian(0.0, 1.0, 0.0) == pytest.approx(0.23370, abs=1e-4)

    def test_symmetry(self):
        assert crps_gaussian(0.3, 0.7, 1.1) == pytest.approx(crps_gaussian(-0.3, 0.7, -1.1), abs=1e-15)

    def test_sharp_forecast_on_truth(self):
        assert crps_gaussian(0.5, 1e-9, 0.5) < 1e-8

    def test_sigma_positive(self):
        with pytest.raises(ValueError):
            crps_gaussian(0.0, 0.0, 0.0)

    def test_numeric_matches_closed_form(self):
        rng = np.random.default_rng(7)
        for _ in range(200):
            mu, sigma, y = rng.normal(), rng.uniform(0.05, 2.0), rng.normal()
            num = crps_numeric(lambda x: ndtr((x - mu) / sigma), y, gaussian_grid(mu, sigma, y))
            assert num == pytest.approx(crps_gaussian(mu, sigma, y), abs=1e-6)

    def test_refinement_converges(self):
        cdf = lambda x: ndtr(x - 0.2)  # noqa: E731
        a = crps_numeric(cdf, 0.5, GridSpec(-10, 10, 20001))
        b = crps_numeric(cdf, 0.5, GridSpec(-10, 10, 40001))
        assert abs(a - b) < 1e-7

    def test_step_cdf_scores_zero(self):
        assert crps_numeric(lambda x: (x >= 0.3).astype(float), 0.3, GridSpec(-1, 1, 2001)) == 0.0

    def test_non_monotone_rejected(self):
        with pytest.raises(ValueError, match="monotone"):
            crps_numeric(lambda x: np.cos(x) ** 2, 0.0, GridSpec(-3, 3, 101))

    def test_proper_score(self):
        rng = np.random.default_rng(11)
        y = rng.normal(0.4, 0.2, 10_000)
        true = np.mean(crps_gaussian(0.4, 0.2, y))
        assert true <= np.mean(crps_gaussian(0.9, 0.2, y))
        assert true <= np.mean(crps_gaussian(-0.1, 0.2, y))


class TestSkillAndRanks:
    def test_skill_table_value(self):
        assert skill(0.190, 0.152) == pytest.approx(0.038, abs=1e-15)

    def test_antisymmetry(self):
        assert skill(0.2, 0.3) == -skill(0.3, 0.2)

    def test_rank_hand(self):
        np.testing.assert_array_equal(rank_table([[1, 2], [1, 2]]), [1.0, 2.0])

    def test_all_ties(self):
        np.testing.assert_array_equal(rank_table(np.ones((3, 4))), [2.5] * 4)

    @settings(max_examples=50, deadline=None)
    @given(st.integers(1, 10), st.integers(1, 6), st.integers(0, 1000))
    def test_rank_sum_and_monotone_invariance(self, parks, methods, seed):
        E = np.random.default_rng(seed).random((parks, methods)).round(2)
        r = rank_table(E)
        assert r.sum() == pytest.approx(methods * (methods + 1) / 2)
        np.testing.assert_allclose(rank_table(np.exp(3 * E) - 1), r)

    def test_ragged(self):
        with pytest.raises(ValueError):
            rank_table([[1, 2], [1]])

    def test_nan(self):
        with pytest.raises(ValueError):
            rank_table([[1, np.nan]])


class TestWilcoxon:
    def test_extreme_six(self):
        res = wilcoxon_signed_rank(np.arange(1.0, 7.0), np.zeros(6), alpha=0.05)
        assert res.p == 0.03125
        assert res.verdict == "worse"

    def test_identical(self):
        res = wilcoxon_signed_rank([1, 2, 3], [1, 2, 3])
        assert (res.p, res.verdict) == (1.0, "no_diff")

    def test_too_few(self):
        with pytest.raises(ValueError):
            wilcoxon_signed_rank([1, 2, 3, 4], [0, 0, 0, 0])

    @settings(max_examples=60, deadline=None)
    @given(n=st.integers(5, 10), seed=st.integers(0, 10_000), ties=st.booleans())
    def test_exact_matches_enumeration(self, n, seed, ties):
        rng = np.random.default_rng(seed)
        d = rng.normal(size=n)
        if ties:
            d = np.round(d * 2) / 2
            d[d == 0] = 0.5
        res = wilcoxon_signed_rank(d, np.zeros(n))
        assert res.p == pytest.approx(enumerate_p(d), abs=1e-12)

    def test_swap_flips_verdict(self):
        a = np.linspace(0.1, 0.3, 25)
        b = a + 0.05 + np.linspace(0, 0.01, 25)
        ab, ba = wilcoxon_signed_rank(a, b), wilcoxon_signed_rank(b, a)
        assert (ab.verdict, ba.verdict) == ("better", "worse")
        assert ab.p == pytest.approx(ba.p)

    def test_exact_agrees_with_scipy(self):
        d = np.random.default_rng(3).normal(size=15)
        ours = wilcoxon_signed_rank(d, np.zeros(15)).p
        assert ours == pytest.approx(stats.wilcoxon(d, method="exact").pvalue, rel=1e-12)

    def test_normal_approximation_agrees_with_scipy(self):
        d = np.round(np.random.default_rng(4).normal(size=40), 1)
        d = d[d != 0]
        ours = wilcoxon_signed_rank(d, np.zeros(len(d))).p
        ref = stats.wilcoxon(d, method="approx", correction=True).pvalue
        assert ours == pytest.approx(ref, rel=1e-9)

    def test_markers(self):
        assert [verdict_marker(v) for v in ("better", "worse", "no_diff")] == ["v", "^", "o"]
