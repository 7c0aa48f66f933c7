"""Gradient boosted regression trees with squared loss, written from scratch.

Trees are CART regressors grown greedily.  Each split scans every feature's
sorted unique values and takes the threshold with the largest reduction in
squared error; ties go to the lowest feature index, then the lowest threshold.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

GBRT_LR_GRID = tuple(float(v) for v in np.logspace(-6, 0, 13))
GBRT_DEPTH_GRID = (2, 4, 6, 8)
_MIN_GAIN = 1e-12


@dataclass(frozen=True, eq=False)
class RegressionTree:
    """Flat node arrays; ``feature == -1`` marks a leaf."""

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray

    @property
    def n_leaves(self) -> int:
        return int(np.sum(self.feature < 0))

    def predict(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        node = np.zeros(len(X), dtype=np.intp)
        active = self.feature[node] >= 0
        while np.any(active):
            idx = np.flatnonzero(active)
            nd = node[idx]
            go_left = X[idx, self.feature[nd]] <= self.threshold[nd]
            node[idx] = np.where(go_left, self.left[nd], self.right[nd])
            active[idx] = self.feature[node[idx]] >= 0
        return self.value[node]


def _best_split(order, X, r):
    """Best ``(gain, feature, threshold, left mean, right mean)`` for one node.

    ``order`` is a (D, n) array: row ``f`` lists the node's rows sorted by
    feature ``f``.  A row-major argmax over (feature, position) realizes the
    tie rule: lowest feature first, then lowest threshold.
    """
    d, n = order.shape
    xs = X[order, np.arange(d)[:, None]]
    rs = r[order]
    total = rs[0].sum()
    cs = np.cumsum(rs, axis=1)[:, :-1]
    n_left = np.arange(1, n)
    gain = cs**2 / n_left + (total - cs) ** 2 / (n - n_left) - total * total / n
    gain[xs[:, :-1] >= xs[:, 1:]] = -np.inf
    flat = int(np.argmax(gain))
    f, i = divmod(flat, n - 1)
    if not gain[f, i] > _MIN_GAIN:
        return 0.0, -1, 0.0, 0.0, 0.0
    s_left = cs[f, i]
    return float(gain[f, i]), f, float(xs[f, i]), s_left / (i + 1), (total - s_left) / (n - i - 1)


def _presort(X) -> np.ndarray:
    return np.argsort(X, axis=0, kind="stable").T.copy()


def fit_tree(X, r, max_depth: int, presorted=None, train_pred: np.ndarray | None = None) -> RegressionTree:
    """Grow one CART regressor on targets ``r``.

    If ``train_pred`` is given it receives the tree's output on the training
    rows, which saves a separate prediction pass during boosting.
    """
    X = np.asarray(X, dtype=float)
    r = np.asarray(r, dtype=float)
    n = len(X)
    if presorted is None:
        presorted = _presort(X)
    feature, threshold, left, right, value = [], [], [], [], []

    def new_node(order, mean):
        feature.append(-1)
        threshold.append(0.0)
        left.append(-1)
        right.append(-1)
        value.append(float(mean))
        if train_pred is not None:
            train_pred[order[0]] = value[-1]
        return len(value) - 1

    go_left = np.zeros(n, dtype=bool)
    # stack of (node id, per-feature sorted rows, depth)
    stack = [(new_node(presorted, r.mean()), presorted, 0)]
    while stack:
        node, order, depth = stack.pop()
        n_node = order.shape[1]
        if depth >= max_depth or n_node < 2:
            continue
        _, f, t, mean_l, mean_r = _best_split(order, X, r)
        if f < 0:
            continue
        rows = order[0]
        go_left[rows] = X[rows, f] <= t
        mask = go_left[order]
        n_left = int(mask[0].sum())
        left_order = order[mask].reshape(len(order), n_left)
        right_order = order[~mask].reshape(len(order), n_node - n_left)
        feature[node], threshold[node] = f, t
        left[node] = new_node(left_order, mean_l)
        right[node] = new_node(right_order, mean_r)
        stack.append((right[node], right_order, depth + 1))
        stack.append((left[node], left_order, depth + 1))
    return RegressionTree(
        np.array(feature, dtype=np.intp),
        np.array(threshold),
        np.array(left, dtype=np.intp),
        np.array(right, dtype=np.intp),
        np.array(value),
    )


@dataclass(frozen=True, eq=False)
class Gbrt:
    base_prediction: float
    learning_rate: float
    max_depth: int
    trees: tuple

    @property
    def n_estimators(self) -> int:
        return len(self.trees)

    def predict(self, X) -> np.ndarray:
        return gbrt_predict(self, X)


def gbrt_fit(X, y, n_estimators: int = 300, lr: float = 0.1, max_depth: int = 2, seed: int = 0,
             record_loss: list | None = None) -> Gbrt:
    """Stagewise squared-loss boosting from the training mean.

    CART here is deterministic, so ``seed`` only exists for interface
    symmetry with the other models.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    if X.ndim != 2 or len(X) != len(y):
        raise ValueError("X must be 2-D with one row per target")
    if len(y) < 2:
        raise ValueError("need at least 2 samples")
    if n_estimators < 1 or max_depth < 1 or not lr > 0:
        raise ValueError("n_estimators and max_depth must be >= 1 and lr > 0")
    presorted = _presort(X)
    base = float(y.mean())
    f = np.full(len(y), base)
    trees = []
    step = np.empty(len(y))
    for _ in range(n_estimators):
        resid = y - f
        if record_loss is not None:
            record_loss.append(float(np.mean(resid**2)))
        trees.append(fit_tree(X, resid, max_depth, presorted, step))
        f = f + lr * step
    if record_loss is not None:
        record_loss.append(float(np.mean((y - f) ** 2)))
    return Gbrt(base, float(lr), int(max_depth), tuple(trees))


def gbrt_predict(model: Gbrt, X) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    out = np.full(len(X), model.base_prediction)
    for tree in model.trees:
        out += model.learning_rate * tree.predict(X)
    return out


def staged_predictions(model: Gbrt, X):
    """Yield predictions after 1, 2, ... trees."""
    X = np.asarray(X, dtype=float)
    out = np.full(len(X), model.base_prediction)
    for tree in model.trees:
        out = out + model.learning_rate * tree.predict(X)
        yield out


def gbrt_grid_search(X, y, lrs=GBRT_LR_GRID, depths=GBRT_DEPTH_GRID, n_estimators: int = 300,
                     n_folds: int = 3, seed: int = 0, groups=None) -> tuple[dict, dict]:
    """K-fold CV over (lr, depth); returns the best params and every CV score.

    ``groups`` (e.g. day numbers) keeps related rows in the same fold.
    Ties go to the first grid entry in (depth, lr) order.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    if groups is None:
        groups = np.arange(len(y))
    uniq = np.unique(groups)
    if len(uniq) < n_folds:
        raise ValueError(f"{len(uniq)} groups cannot form {n_folds} folds")
    perm = np.random.default_rng(seed).permutation(uniq)
    fold_of_group = {g: i % n_folds for i, g in enumerate(perm)}
    fold = np.array([fold_of_group[g] for g in groups])
    scores = {}
    for depth in depths:
        for lr in lrs:
            sse = 0.0
            for k in range(n_folds):
                tr, te = fold != k, fold == k
                model = gbrt_fit(X[tr], y[tr], n_estimators, lr, depth, seed)
                sse += float(np.sum((model.predict(X[te]) - y[te]) ** 2))
            scores[(lr, depth)] = np.sqrt(sse / len(y))
    best = min(scores, key=lambda key: scores[key])
    return {"lr": best[0], "max_depth": best[1], "n_estimators": n_estimators}, scores
