"""Combining adapted source models.

Two schemes: Bayesian model averaging over members with BLR heads (weights
from their evidence on the target data) and a coopetitive soft-gating
ensemble whose weights multiply a global, a local (PCA + kNN) and a
per-horizon term, each derived from member errors by soft gating.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp, ndtr

from .evaluation import GridSpec, crps_numeric, nrmse

EPS = 1e-9
ETA_GRID = (1.0, 2.0)
N_NEIGHBORS = 3


def soft_gate(errors, eta: float, eps: float = EPS) -> np.ndarray:
    """Weights ``sum(e) / (e_j**eta + eps)``, normalized to sum to one."""
    e = np.asarray(errors, dtype=float)
    if e.size == 0:
        raise ValueError("no errors to gate")
    if np.any(e < 0) or eta < 0 or not eps > 0:
        raise ValueError("errors and eta must be nonnegative, eps positive")
    w = e.sum(axis=-1, keepdims=True) / (e**eta + eps)
    total = w.sum(axis=-1, keepdims=True)
    # all-zero errors give 0/eps everywhere; fall back to uniform
    w = np.where(total > 0, w / np.where(total > 0, total, 1.0), 1.0 / e.shape[-1])
    return w


# --- PCA and nearest neighbours -------------------------------------------

@dataclass(frozen=True, eq=False)
class PcaBasis:
    mean: np.ndarray
    components: np.ndarray  # (n_components, D), orthonormal rows
    degenerate: bool = False


def pca_fit(X, n_components: int = 2) -> PcaBasis:
    """Top eigenvectors of the sample covariance; largest-magnitude entry made positive."""
    X = np.asarray(X, dtype=float)
    if X.ndim != 2 or len(X) < 2:
        raise ValueError("need at least 2 rows")
    if n_components > X.shape[1]:
        raise ValueError("n_components exceeds the input dimension")
    mean = X.mean(axis=0)
    C = np.cov(X - mean, rowvar=False).reshape(X.shape[1], X.shape[1])
    vals, vecs = np.linalg.eigh(C)
    order = np.argsort(vals, kind="stable")[::-1][:n_components]
    comps = vecs[:, order].T.copy()
    for c in comps:
        if c[np.argmax(np.abs(c))] < 0:
            c *= -1.0
    degenerate = bool(np.all(vals <= 1e-12 * max(1.0, float(np.abs(vals).max()))))
    return PcaBasis(mean, comps, degenerate)


def pca_transform(basis: PcaBasis, X) -> np.ndarray:
    return (np.asarray(X, dtype=float) - basis.mean) @ basis.components.T


def knn_indices(points, queries, k: int = N_NEIGHBORS, chunk: int = 2048) -> np.ndarray:
    """Indices of the k nearest stored points per query; distance ties go to the lowest index."""
    P = np.asarray(points, dtype=float)
    Q = np.atleast_2d(np.asarray(queries, dtype=float))
    if len(P) < k:
        raise ValueError(f"need at least {k} stored points, got {len(P)}")
    out = np.empty((len(Q), k), dtype=np.intp)
    for lo in range(0, len(Q), chunk):
        q = Q[lo:lo + chunk]
        d2 = np.zeros((len(q), len(P)))
        for j in range(P.shape[1]):
            d2 += (q[:, j, None] - P[None, :, j]) ** 2
        if len(P) == k:
            out[lo:lo + chunk] = np.argsort(d2, axis=1, kind="stable")
            continue
        # partial selection, then a stable sort only where the k-th distance is tied
        idx = np.argpartition(d2, k - 1, axis=1)[:, :k]
        dk = np.take_along_axis(d2, idx, axis=1)
        kth = dk.max(axis=1, keepdims=True)
        tied = np.count_nonzero(d2 <= kth, axis=1) > k
        if tied.any():
            idx[tied] = np.argsort(d2[tied], axis=1, kind="stable")[:, :k]
            dk[tied] = np.take_along_axis(d2[tied], idx[tied], axis=1)
        within = np.lexsort((idx, dk), axis=1)
        out[lo:lo + chunk] = np.take_along_axis(idx, within, axis=1)
    return out


def knn_mean(points, values, query, k: int = N_NEIGHBORS) -> float:
    idx = knn_indices(points, np.asarray(query, dtype=float)[None, :], k)[0]
    return float(np.mean(np.asarray(values, dtype=float)[idx]))


# --- CSGE -----------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class CsgeModel:
    members: tuple
    global_errors: np.ndarray  # (M,)
    horizon_errors: np.ndarray  # (M, K); column k-1 is horizon k
    pca: PcaBasis
    points: np.ndarray  # (N, 2) projected training inputs
    local_errors: np.ndarray  # (M, N) absolute errors
    etas: tuple = (1.0, 1.0, 1.0)
    eps: float = EPS
    x_scale: np.ndarray | None = None
    empty_horizons: tuple = ()
    k_neighbors: int = N_NEIGHBORS

    @property
    def n_horizons(self) -> int:
        return self.horizon_errors.shape[1]

    def project(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        if self.x_scale is not None:
            X = X / self.x_scale
        return pca_transform(self.pca, X)

    def weights(self, X, horizon) -> np.ndarray:
        """Normalized member weights, shape (N, M)."""
        horizon = np.atleast_1d(np.asarray(horizon, dtype=int))
        if np.any(horizon < 1) or np.any(horizon > self.n_horizons):
            raise ValueError(f"horizon must lie in 1..{self.n_horizons}")
        eta_g, eta_l, eta_h = self.etas
        w_g = soft_gate(self.global_errors, eta_g, self.eps)
        w_h = soft_gate(self.horizon_errors.T[horizon - 1], eta_h, self.eps)
        nn = knn_indices(self.points, self.project(X), self.k_neighbors)
        q_hat = self.local_errors[:, nn].mean(axis=-1).T  # (N, M)
        w_l = soft_gate(q_hat, eta_l, self.eps)
        w = w_g[None, :] * w_l * w_h
        return w / w.sum(axis=1, keepdims=True)


def member_predictions(members, X, horizon=None) -> np.ndarray:
    return np.array([m.point(X, horizon) for m in members])


def csge_fit(members, X_train, y_train, horizon, etas=(1.0, 1.0, 1.0), n_horizons: int | None = None,
             preds=None, standardize: bool = True, eps: float = EPS) -> CsgeModel:
    """Collect global, per-horizon and local absolute errors of every member.

    ``preds`` may hold precomputed member forecasts (M x N).  With
    ``standardize`` the inputs are divided by their standard deviation
    before PCA so that no single feature's units dominate the projection.
    """
    X = np.asarray(X_train, dtype=float)
    y = np.asarray(y_train, dtype=float)
    horizon = np.asarray(horizon, dtype=int)
    if preds is None:
        preds = member_predictions(members, X, horizon)
    abs_err = np.abs(np.asarray(preds, dtype=float) - y[None, :])
    K = int(n_horizons or horizon.max())
    r = abs_err.mean(axis=1)
    p = np.empty((len(abs_err), K))
    empty = []
    for k in range(1, K + 1):
        rows = horizon == k
        if rows.any():
            p[:, k - 1] = abs_err[:, rows].mean(axis=1)
        else:
            p[:, k - 1] = r
            empty.append(k)
    x_scale = None
    if standardize:
        x_scale = X.std(axis=0)
        x_scale[x_scale < 1e-12] = 1.0
    Z = X / x_scale if x_scale is not None else X
    basis = pca_fit(Z, min(2, X.shape[1]))
    if len(etas) == 1 or np.isscalar(etas):
        etas = (float(np.atleast_1d(etas)[0]),) * 3
    return CsgeModel(tuple(members), r, p, basis, pca_transform(basis, Z), abs_err,
                     tuple(float(e) for e in etas), eps, x_scale, tuple(empty))


def csge_predict(csge: CsgeModel, X, horizon, preds=None) -> np.ndarray:
    """Weighted member forecasts; ``X`` may be one row or a matrix."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    horizon = np.broadcast_to(np.asarray(horizon, dtype=int), (len(X),))
    if preds is None:
        preds = member_predictions(csge.members, X, horizon)
    w = csge.weights(X, horizon)
    return np.einsum("nm,mn->n", w, np.asarray(preds, dtype=float))


def csge_select_eta(members, X, y, horizon, groups, seed: int, grid=ETA_GRID, preds=None,
                    n_horizons: int | None = None) -> float:
    """Shared eta with the lowest holdout nRMSE on a 70/30 day split."""
    from .adaptation import holdout_split

    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    horizon = np.asarray(horizon, dtype=int)
    if preds is None:
        preds = member_predictions(members, X, horizon)
    preds = np.asarray(preds)
    if len(np.unique(groups)) < 2:
        return float(grid[0])
    tr, va = holdout_split(len(y), groups, seed)
    best = None
    for eta in grid:
        model = csge_fit(members, X[tr], y[tr], horizon[tr], (eta,) * 3, n_horizons, preds[:, tr])
        err = nrmse(y[va], csge_predict(model, X[va], horizon[va], preds[:, va]))
        if best is None or err < best[0]:
            best = (err, float(eta))
    return best[1]


# --- BMA ------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class BmaModel:
    members: tuple
    log_weights: np.ndarray
    log_evidence: np.ndarray
    degenerate: bool = False

    @property
    def weights(self) -> np.ndarray:
        return np.exp(self.log_weights)


def bma_weights(log_evidence, log_prior=None) -> tuple[np.ndarray, bool]:
    """Normalized log weights from log evidences (equal prior by default)."""
    le = np.asarray(log_evidence, dtype=float)
    if le.size == 0:
        raise ValueError("no members")
    if log_prior is None:
        log_prior = np.full(le.shape, -np.log(len(le)))
    if np.all(le == -np.inf):
        return np.full(le.shape, -np.log(len(le))), True
    s = le + log_prior
    return s - logsumexp(s), False


def bma_fit(members, X_t, y_t, horizon=None) -> BmaModel:
    for m in members:
        if not getattr(m, "probabilistic", False):
            raise ValueError("every BMA member needs a BLR head")
    le = np.array([m.log_evidence(X_t, y_t, horizon) for m in members])
    lw, degenerate = bma_weights(le)
    return BmaModel(tuple(members), lw, le, degenerate)


@dataclass(frozen=True, eq=False)
class Mixture:
    weights: np.ndarray  # (M,)
    mu: np.ndarray  # (M, N)
    sigma2: np.ndarray  # (M, N)
    mean: np.ndarray = field(init=False)
    variance: np.ndarray = field(init=False)

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float)[:, None]
        mean = np.sum(w * self.mu, axis=0)
        var = np.sum(w * (self.sigma2 + self.mu**2), axis=0) - mean**2
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "variance", np.maximum(var, 0.0))

    def cdf(self, x, i: int = 0) -> np.ndarray:
        """Mixture CDF of point ``i`` evaluated at the values ``x``."""
        x = np.asarray(x, dtype=float)
        sd = np.sqrt(self.sigma2[:, i])
        z = (x[..., None] - self.mu[:, i]) / sd
        return ndtr(z) @ self.weights

    def grid(self, i: int, y: float, n_sd: float = 10.0, n: int = 20001) -> GridSpec:
        sd = np.sqrt(self.sigma2[:, i])
        keep = self.weights > 0
        lo = min(float(np.min((self.mu[:, i] - n_sd * sd)[keep])), y - n_sd * float(sd.min()))
        hi = max(float(np.max((self.mu[:, i] + n_sd * sd)[keep])), y + n_sd * float(sd.min()))
        return GridSpec(lo, hi, n)

    def crps(self, y, n: int = 4001, n_sd: float = 10.0, chunk: int = 256) -> np.ndarray:
        """Numeric CRPS at each point (trapezoid rule, grid split at the observation).

        Components with weight below 1e-12 are dropped before integrating.
        """
        y = np.asarray(y, dtype=float)
        keep = self.weights > 1e-12
        w = self.weights[keep] / self.weights[keep].sum()
        mu, sd = self.mu[keep], np.sqrt(self.sigma2[keep])
        lo = np.minimum((mu - n_sd * sd).min(axis=0), y - n_sd * sd.min(axis=0))
        hi = np.maximum((mu + n_sd * sd).max(axis=0), y + n_sd * sd.min(axis=0))
        t = np.linspace(0.0, 1.0, n)
        out = np.empty(len(y))
        for a in range(0, len(y), chunk):
            b = slice(a, a + chunk)
            total = 0.0
            for start, end, below in ((lo[b], y[b], True), (y[b], hi[b], False)):
                x = start[:, None] + t[None, :] * (end - start)[:, None]
                F = np.einsum("m,mnk->nk", w, ndtr((x[None] - mu[:, b, None]) / sd[:, b, None]))
                g = F**2 if below else (1.0 - F) ** 2
                total = total + (end - start) / (n - 1) * (g.sum(axis=1) - 0.5 * (g[:, 0] + g[:, -1]))
            out[b] = total
        return out


def bma_predict(bma: BmaModel, X, horizon=None) -> Mixture:
    preds = [m.predictive(X, horizon) for m in bma.members]
    return Mixture(bma.weights, np.array([p.mu for p in preds]), np.array([p.sigma2 for p in preds]))


def day_folds(groups, n_folds: int, seed: int) -> np.ndarray:
    """Fold label per row; whole days stay together, fold sizes differ by at most one day."""
    groups = np.asarray(groups)
    uniq = np.unique(groups)
    if len(uniq) < n_folds:
        raise ValueError(f"need at least {n_folds} distinct days, got {len(uniq)}")
    perm = np.random.default_rng(seed).permutation(len(uniq))
    fold_of = np.empty(len(uniq), dtype=int)
    fold_of[perm] = np.arange(len(uniq)) % n_folds
    return fold_of[np.searchsorted(uniq, groups)]


def csge_cross_fit(fit_members, X, y, horizon, groups, seed: int, grid=ETA_GRID, n_folds: int = 3,
                   n_horizons: int | None = None) -> CsgeModel:
    """CSGE whose error statistics come from out-of-fold member forecasts.

    ``fit_members(X, y)`` adapts every member on the given rows and returns
    them as Forecasters.  Members are refit with each day-fold held out; the
    held-out forecasts feed the global, horizon and local error statistics, so
    a member that merely memorizes the target rows gets no credit.  Eta is
    chosen by the out-of-fold nRMSE of the ensemble itself.  The returned
    members are the ones adapted on all rows.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    horizon = np.asarray(horizon, dtype=int)
    folds = day_folds(groups, n_folds, seed)
    oof = None
    for f in range(n_folds):
        held = folds == f
        members = fit_members(X[~held], y[~held])
        P = member_predictions(members, X[held], horizon[held])
        if oof is None:
            oof = np.empty((len(P), len(y)))
        oof[:, held] = P
    best = None
    for eta in grid:
        pred = np.empty(len(y))
        for f in range(n_folds):
            held = folds == f
            model = csge_fit(range(len(oof)), X[~held], y[~held], horizon[~held], (eta,) * 3, n_horizons,
                             oof[:, ~held])
            pred[held] = csge_predict(model, X[held], horizon[held], oof[:, held])
        err = nrmse(y, pred)
        if best is None or err < best[0]:
            best = (err, float(eta))
    final = fit_members(X, y)
    return csge_fit(final, X, y, horizon, (best[1],) * 3, n_horizons, oof)
