"""Bayesian extreme learning machine: fixed random features with a BLR head."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from .. import blr

ACTIVATIONS = ("relu", "sigmoid", "relu_and_sigmoid")
MAX_RANDOM_FEATURES = 2000


@dataclass(frozen=True)
class BelmSpec:
    n_hidden: int = 100
    activation: str = "relu"
    include_raw: bool = True

    def __post_init__(self):
        if not 10 <= self.n_hidden <= 1000:
            raise ValueError(f"n_hidden must lie in [10, 1000], got {self.n_hidden}")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")


@dataclass(frozen=True, eq=False)
class Belm:
    W: np.ndarray  # (D + 1, H); last row is the bias
    activation: str
    include_raw: bool
    head: blr.GaussianLinear
    x_mean: np.ndarray | None = None
    x_scale: np.ndarray | None = None

    @property
    def n_inputs(self) -> int:
        return self.W.shape[0] - 1

    @property
    def out_dim(self) -> int:
        h = self.W.shape[1] * (2 if self.activation == "relu_and_sigmoid" else 1)
        return h + (self.n_inputs if self.include_raw else 0)

    def transform(self, X) -> np.ndarray:
        return random_features(X, self.W, self.activation, self.include_raw, self.x_mean, self.x_scale)

    def predict(self, X) -> blr.PredictiveGaussian:
        return blr.predict(self.head, self.transform(X))

    def with_head(self, head: blr.GaussianLinear) -> "Belm":
        return Belm(self.W, self.activation, self.include_raw, head, self.x_mean, self.x_scale)


def random_features(X, W, activation, include_raw, x_mean=None, x_scale=None) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    if X.ndim != 2 or X.shape[1] != W.shape[0] - 1:
        raise ValueError(f"dimension mismatch: expected {W.shape[0] - 1} input columns")
    if x_mean is not None:
        X = (X - x_mean) / x_scale
    A = X @ W[:-1] + W[-1]
    if activation == "relu":
        parts = [np.maximum(A, 0.0)]
    elif activation == "sigmoid":
        parts = [expit(A)]
    else:
        parts = [np.maximum(A, 0.0), expit(A)]
    if include_raw:
        parts.append(X)
    return np.hstack(parts)


def belm_fit(X, y, spec: BelmSpec, seed: int, standardize: bool = True) -> Belm:
    """Draw W ~ N(0, 1) from ``seed`` and fit the head by empirical Bayes."""
    X = np.asarray(X, dtype=float)
    rng = np.random.default_rng(seed)
    W = rng.standard_normal((X.shape[1] + 1, spec.n_hidden))
    x_mean = x_scale = None
    if standardize:
        x_mean = X.mean(axis=0)
        x_scale = X.std(axis=0)
        x_scale[x_scale < 1e-12] = 1.0
    Phi = random_features(X, W, spec.activation, spec.include_raw, x_mean, x_scale)
    head = blr.empirical_bayes(Phi, y).model
    return Belm(W, spec.activation, spec.include_raw, head, x_mean, x_scale)


def belm_search(X, y, X_val, y_val, seed: int, hidden_grid=(50, 100, 200),
                activations=ACTIVATIONS, include_raw=(True,)) -> tuple[Belm, float, dict]:
    """Pick the configuration with the largest validation evidence."""
    best = None
    for h in hidden_grid:
        for act in activations:
            for raw in include_raw:
                spec = BelmSpec(h, act, raw)
                model = belm_fit(X, y, spec, seed)
                score = blr.log_evidence(model.head.alpha, model.head.beta, model.transform(X_val), y_val)
                if best is None or score > best[1]:
                    best = (model, score, {"n_hidden": h, "activation": act, "include_raw": raw})
    return best
