import numpy as np
import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st
from scipy.special import ndtr

from transferhub import blr
from transferhub.adaptation import POOLED, Forecaster, IdentityExtractor
from transferhub.ensembles import (
    Mixture,
    bma_fit,
    bma_predict,
    bma_weights,
    csge_cross_fit,
    csge_fit,
    csge_predict,
    day_folds,
    knn_indices,
    knn_mean,
    pca_fit,
    pca_transform,
    soft_gate,
)
from transferhub.evaluation import crps_numeric, gaussian_grid


class Fixed:
    """Point forecaster returning a column of X (or a constant)."""

    def __init__(self, col=None, const=0.0):
        self.col, self.const = col, const

    def point(self, X, horizon=None):
        X = np.atleast_2d(X)
        return X[:, self.col].astype(float) if self.col is not None else np.full(len(X), self.const)


def blr_member(mean, alpha=1.0, beta=4.0, dim=1):
    head = blr.GaussianLinear.prior(dim, alpha, beta)
    return Forecaster("DILI", IdentityExtractor(dim), {POOLED: head}, {POOLED: head})


class TestSoftGate:
    def test_hand_case(self):
        np.testing.assert_allclose(soft_gate([1.0, 3.0], 1.0), [0.75, 0.25], atol=1e-6)

    def test_eta_zero_uniform(self):
        np.testing.assert_allclose(soft_gate([0.1, 5.0, 2.0], 0.0), [1 / 3] * 3, atol=1e-12)

    @settings(max_examples=50, deadline=None)
    @given(st.lists(st.floats(1.0, 10.0), min_size=2, max_size=6, unique=True))
    def test_gating_limit(self, errors):
        # errors of order one: e**50 stays far above eps
        w = soft_gate(errors, 50.0)
        if sorted(errors)[1] / min(errors) > 1.5:  # 1.5**50 ~ 6e8
            assert w[int(np.argmin(errors))] > 1 - 1e-6

    def test_eps_dominates_tiny_powers(self):
        # 0.3**50 and 0.5**50 both sit far below eps, so the gate cannot separate them
        w = soft_gate([0.3, 0.5], 50.0)
        assert abs(w[0] - w[1]) < 1e-6

    def test_equal_errors(self):
        np.testing.assert_allclose(soft_gate([2.0, 2.0], 1.7), [0.5, 0.5])

    def test_zero_error_member_dominates(self):
        assert soft_gate([0.0, 0.2], 1.0)[0] > 1 - 1e-6

    def test_errors(self):
        with pytest.raises(ValueError):
            soft_gate([], 1.0)
        with pytest.raises(ValueError):
            soft_gate([-1.0, 1.0], 1.0)

    @settings(max_examples=100, deadline=None)
    @given(st.lists(st.floats(1e-3, 10.0), min_size=1, max_size=8), st.sampled_from([0.0, 1.0, 2.0, 3.5]),
           st.floats(0.1, 10.0))
    def test_probability_vector_and_scale_invariance(self, errors, eta, c):
        w = soft_gate(errors, eta)
        assert abs(w.sum() - 1) < 1e-12 and np.all(w >= 0)
        # invariance only holds while every e**eta stays well above eps
        assume(min(min(errors), min(errors) * c) ** eta >= 1e-3)
        np.testing.assert_allclose(soft_gate(np.array(errors) * c, eta), w, atol=1e-5)


class TestPca:
    def test_x_axis(self):
        X = np.column_stack([np.linspace(-3, 3, 20), np.zeros(20)])
        basis = pca_fit(X, 1)
        assert abs(basis.components[0] @ [1.0, 0.0]) > 1 - 1e-9
        assert basis.components[0, 0] > 0

    def test_orthonormal_and_centered(self):
        X = np.random.default_rng(0).normal(size=(50, 4)) @ np.diag([3, 2, 1, 0.5])
        basis = pca_fit(X, 2)
        np.testing.assert_allclose(basis.components @ basis.components.T, np.eye(2), atol=1e-10)
        np.testing.assert_allclose(pca_transform(basis, X.mean(axis=0, keepdims=True)), 0, atol=1e-12)

    def test_full_rank_preserves_distances(self):
        X = np.random.default_rng(1).normal(size=(15, 2))
        Z = pca_transform(pca_fit(X, 2), X)
        d = lambda A: np.linalg.norm(A[:, None] - A[None], axis=-1)  # noqa: E731
        np.testing.assert_allclose(d(Z), d(X), atol=1e-9)

    def test_zero_variance_flagged(self):
        basis = pca_fit(np.ones((5, 3)), 2)
        assert basis.degenerate
        np.testing.assert_allclose(basis.components @ basis.components.T, np.eye(2), atol=1e-10)


class TestKnn:
    def test_tie_lowest_index(self):
        P = np.array([[1.0, 0], [-1.0, 0], [0, 1.0], [0, -1.0], [5.0, 5.0]])
        np.testing.assert_array_equal(knn_indices(P, [[0.0, 0.0]]), [[0, 1, 2]])

    def test_mean(self):
        P = np.array([[0.0, 0], [1.0, 0], [2.0, 0], [10.0, 0]])
        assert knn_mean(P, [1.0, 2.0, 3.0, 100.0], [0.5, 0.0]) == 2.0

    def test_too_few_points(self):
        with pytest.raises(ValueError):
            knn_mean(np.zeros((2, 2)), [1.0, 2.0], [0.0, 0.0])

    @settings(max_examples=50, deadline=None)
    @given(st.integers(3, 30), st.integers(0, 1000))
    def test_matches_full_stable_sort(self, n, seed):
        rng = np.random.default_rng(seed)
        P = rng.integers(0, 3, size=(n, 2)).astype(float)
        Q = rng.integers(0, 3, size=(7, 2)).astype(float)
        d = ((Q[:, None] - P[None]) ** 2).sum(-1)
        np.testing.assert_array_equal(knn_indices(P, Q), np.argsort(d, axis=1, kind="stable")[:, :3])


class TestCsge:
    def setup_data(self, n=12, k=2):
        rng = np.random.default_rng(0)
        X = rng.normal(size=(n, 2))
        return X, np.zeros(n), np.tile(np.arange(1, k + 1), n // k)

    def test_single_member_is_identity(self):
        X, y, h = self.setup_data()
        m = Fixed(col=0)
        model = csge_fit([m], X, y + 0.3, h)
        np.testing.assert_array_equal(csge_predict(model, X, h), m.point(X))

    def test_uniform_errors_give_mean(self):
        X, _, h = self.setup_data()
        members = [Fixed(const=1.0), Fixed(const=-1.0), Fixed(const=0.5)]
        y = np.full(len(X), 0.0)
        members = [Fixed(const=1.0), Fixed(const=-1.0)]
        model = csge_fit(members, X, y, h)
        np.testing.assert_allclose(csge_predict(model, X, h), 0.0, atol=1e-12)

    def test_global_hand_composition(self):
        X, _, h = self.setup_data()
        members = [Fixed(const=1.0), Fixed(const=3.0)]
        model = csge_fit(members, X, np.zeros(len(X)), h, etas=(1.0, 0.0, 0.0))
        # global errors [1, 3] -> weights [0.75, 0.25]
        np.testing.assert_allclose(model.weights(X, h), [[0.75, 0.25]] * len(X), atol=1e-6)
        np.testing.assert_allclose(csge_predict(model, X, h), 0.75 * 1 + 0.25 * 3, atol=1e-6)

    def test_horizon_errors(self):
        # 8 rows, K=2; member A errs only on horizon 2
        X = np.arange(16, dtype=float).reshape(8, 2)
        h = np.tile([1, 2], 4)
        y = np.zeros(8)

        class A:
            def point(self, X, horizon=None):
                return np.where(np.tile([1, 2], 4) == 2, 1.0, 0.0)

        model = csge_fit([A(), Fixed(const=0.5)], X, y, h)
        assert model.horizon_errors[0, 1] > model.horizon_errors[0, 0]
        np.testing.assert_allclose(model.global_errors, [0.5, 0.5])

    def test_weights_normalized_and_nonnegative_stats(self):
        rng = np.random.default_rng(3)
        X, h = rng.normal(size=(40, 3)), np.tile([1, 2, 3, 4], 10)
        y = X[:, 0] + 0.1 * rng.normal(size=40)
        model = csge_fit([Fixed(col=0), Fixed(col=1), Fixed(const=0.0)], X, y, h, etas=(2.0, 2.0, 2.0))
        W = model.weights(X, h)
        np.testing.assert_allclose(W.sum(axis=1), 1.0, atol=1e-12)
        assert np.all(model.global_errors >= 0) and np.all(model.local_errors >= 0)
        assert np.all(W[:, 0] > W[:, 1])

    def test_empty_horizon_falls_back_to_global(self):
        X, y, _ = self.setup_data()
        h = np.ones(len(X), dtype=int)
        model = csge_fit([Fixed(col=0)], X, y, h, n_horizons=3)
        assert model.empty_horizons == (2, 3)
        np.testing.assert_allclose(model.horizon_errors[:, 1], model.global_errors)

    def test_horizon_out_of_range(self):
        X, y, h = self.setup_data()
        model = csge_fit([Fixed(col=0)], X, y, h)
        with pytest.raises(ValueError):
            csge_predict(model, X[:1], 5)


class TestCrossFit:
    def test_day_folds_keep_days_together(self):
        groups = np.repeat(np.arange(7), 4)
        folds = day_folds(groups, 3, seed=1)
        for g in range(7):
            assert len(set(folds[groups == g])) == 1
        assert sorted(np.bincount(folds)) == [8, 8, 12]

    def test_out_of_fold_statistics(self):
        rng = np.random.default_rng(4)
        X = rng.normal(size=(60, 2))
        y = X[:, 0] + 0.1 * rng.normal(size=60)
        groups = np.repeat(np.arange(6), 10)
        h = np.tile(np.arange(1, 11), 6)
        calls = []

        def fit_members(Xa, ya):
            calls.append(len(ya))
            # the "memorizer" is perfect on rows it saw and useless elsewhere
            seen = {tuple(r) for r in Xa}

            class Memo:
                def point(self, X, horizon=None):
                    return np.array([X[i, 0] if tuple(X[i]) in seen else 5.0 for i in range(len(X))])

            return [Memo(), Fixed(col=0)]

        model = csge_cross_fit(fit_members, X, y, h, groups, seed=0)
        assert calls == [40, 40, 40, 60]
        assert model.global_errors[0] > model.global_errors[1]


class TestBma:
    def test_hand_moments(self):
        mix = Mixture(np.array([0.5, 0.5]), np.array([[0.0], [2.0]]), np.array([[1.0], [1.0]]))
        assert abs(mix.mean[0] - 1.0) < 1e-12 and abs(mix.variance[0] - 2.0) < 1e-12

    def test_single_member(self):
        mix = Mixture(np.array([1.0]), np.array([[0.3, 0.4]]), np.array([[0.1, 0.2]]))
        np.testing.assert_array_equal(mix.mean, [0.3, 0.4])
        np.testing.assert_allclose(mix.variance, [0.1, 0.2], atol=1e-15)

    @settings(max_examples=50, deadline=None)
    @given(st.integers(1, 5), st.integers(0, 1000))
    def test_variance_at_least_min_component(self, m, seed):
        rng = np.random.default_rng(seed)
        mix = Mixture(rng.dirichlet(np.ones(m)), rng.normal(size=(m, 4)), rng.uniform(0.1, 2, (m, 4)))
        assert np.all(mix.variance >= mix.sigma2.min(axis=0) - 1e-12)

    def test_cdf_limits_and_monotone(self):
        mix = Mixture(np.array([0.3, 0.7]), np.array([[0.0], [1.0]]), np.array([[0.2], [0.5]]))
        x = np.linspace(-50, 50, 1001)
        F = mix.cdf(x)
        assert F[0] < 1e-12 and F[-1] > 1 - 1e-12 and np.all(np.diff(F) >= 0)

    def test_crps_matches_numeric_oracle(self):
        rng = np.random.default_rng(5)
        w = np.array([0.2, 0.5, 0.3])
        mix = Mixture(w, rng.normal(size=(3, 6)), rng.uniform(0.05, 0.5, (3, 6)))
        y = rng.normal(size=6)
        fast = mix.crps(y)
        for i in range(6):
            ref = crps_numeric(lambda x: mix.cdf(x, i), y[i],
                               gaussian_grid(mix.mu[:, i], np.sqrt(mix.sigma2[:, i]), y[i]))
            assert fast[i] == pytest.approx(ref, abs=1e-6)

    def test_single_component_crps_is_gaussian(self):
        from transferhub.evaluation import crps_gaussian

        mix = Mixture(np.array([1.0]), np.array([[0.2, -0.4]]), np.array([[0.09, 0.25]]))
        y = np.array([0.5, 0.0])
        np.testing.assert_allclose(mix.crps(y), crps_gaussian(mix.mu[0], np.sqrt(mix.sigma2[0]), y), atol=1e-6)

    def test_weights_from_evidence(self):
        lw, degenerate = bma_weights([np.log(1.0), np.log(3.0)])
        np.testing.assert_allclose(np.exp(lw), [0.25, 0.75])
        assert not degenerate
        lw, degenerate = bma_weights([-np.inf, -np.inf])
        assert degenerate and np.allclose(np.exp(lw), 0.5)

    def test_fit_and_predict(self):
        rng = np.random.default_rng(6)
        X = rng.normal(size=(30, 1))
        y = 0.8 * X[:, 0] + 0.1 * rng.normal(size=30)
        members = [blr_member(0.0, alpha=a) for a in (0.5, 50.0)]
        bma = bma_fit(members, X, y)
        assert abs(bma.weights.sum() - 1) < 1e-12
        expected = [m.log_evidence(X, y) for m in members]
        np.testing.assert_allclose(bma.log_evidence, expected)
        mix = bma_predict(bma, X)
        assert mix.mean.shape == (30,)

    def test_single_member_equals_member(self):
        X = np.linspace(-1, 1, 10)[:, None]
        m = blr_member(0.0)
        mix = bma_predict(bma_fit([m], X, X[:, 0]), X)
        p = m.predictive(X)
        np.testing.assert_array_equal(mix.mean, p.mu)
        np.testing.assert_allclose(mix.variance, p.sigma2, rtol=1e-12)

    def test_needs_probabilistic_members(self):
        with pytest.raises(ValueError):
            bma_fit([Forecaster("DI", IdentityExtractor(1))], np.zeros((3, 1)), np.zeros(3))


def test_mixture_cdf_matches_hand():
    mix = Mixture(np.array([0.5, 0.5]), np.array([[0.0], [2.0]]), np.array([[1.0], [1.0]]))
    assert mix.cdf(np.array([1.0]))[0] == pytest.approx(0.5 * ndtr(1.0) + 0.5 * ndtr(-1.0))
