"""Exact Bayesian linear regression with an isotropic zero-mean prior.

The posterior is kept in precision form (``S_inv``) so absorbing new rows is a
plain addition.  Hyperparameters are ``alpha`` (prior precision) and ``beta``
(noise precision).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cho_factor, cho_solve, solve_triangular

ALPHA_MAX = 1e6
BETA_MAX = 1e10
LOG_2PI = math.log(2.0 * math.pi)


def _as_design(X, y=None):
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    if X.ndim != 2:
        raise ValueError("X must be 2-D")
    if not np.all(np.isfinite(X)):
        raise ValueError("non-finite values in X")
    if y is None:
        return X
    y = np.asarray(y, dtype=float).ravel()
    if len(y) != len(X):
        raise ValueError(f"dimension mismatch: X has {len(X)} rows, y has {len(y)}")
    if not np.all(np.isfinite(y)):
        raise ValueError("non-finite values in y")
    return X, y


@dataclass(frozen=True, eq=False)
class GaussianLinear:
    """Posterior N(mean, S_inv^-1) over the weights of a linear model."""

    alpha: float
    beta: float
    mean: np.ndarray
    S_inv: np.ndarray
    n_obs: int = 0
    flags: frozenset = field(default_factory=frozenset)

    def __post_init__(self):
        m = np.array(self.mean, dtype=float).ravel()
        P = np.array(self.S_inv, dtype=float)
        if P.shape != (len(m), len(m)):
            raise ValueError("S_inv shape does not match mean")
        m.setflags(write=False)
        P.setflags(write=False)
        object.__setattr__(self, "mean", m)
        object.__setattr__(self, "S_inv", P)

    @property
    def dim(self) -> int:
        return len(self.mean)

    @classmethod
    def prior(cls, dim: int, alpha: float, beta: float) -> "GaussianLinear":
        if not (alpha > 0 and beta > 0):
            raise ValueError("alpha and beta must be positive")
        return cls(alpha, beta, np.zeros(dim), alpha * np.eye(dim), 0)

    def covariance(self) -> np.ndarray:
        return cho_solve(cho_factor(self.S_inv, lower=True), np.eye(self.dim))

    def to_text(self) -> str:
        """Flat CSV-like block; 17 significant digits round-trip exactly."""
        f = lambda v: format(float(v), ".17g")  # noqa: E731
        lines = [
            f"alpha,{f(self.alpha)}",
            f"beta,{f(self.beta)}",
            f"n_obs,{self.n_obs}",
            "m," + ",".join(f(v) for v in self.mean),
        ]
        lines += ["S_inv," + ",".join(f(v) for v in row) for row in self.S_inv]
        if self.flags:
            lines.append("flags," + ",".join(sorted(self.flags)))
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "GaussianLinear":
        rows = [ln.split(",") for ln in text.strip().splitlines() if ln.strip()]
        kv = {r[0]: r[1:] for r in rows if r[0] not in ("S_inv",)}
        S_inv = [[float(v) for v in r[1:]] for r in rows if r[0] == "S_inv"]
        mean = [float(v) for v in kv["m"] if v != ""]
        return cls(
            alpha=float(kv["alpha"][0]),
            beta=float(kv["beta"][0]),
            mean=np.array(mean),
            S_inv=np.array(S_inv).reshape(len(mean), len(mean)),
            n_obs=int(kv["n_obs"][0]),
            flags=frozenset(kv.get("flags", [])),
        )


@dataclass(frozen=True, eq=False)
class PredictiveGaussian:
    mu: np.ndarray
    sigma2: np.ndarray


def fit(X, y, alpha: float, beta: float) -> GaussianLinear:
    """Posterior after observing ``(X, y)`` under the N(0, alpha^-1 I) prior."""
    X, y = _as_design(X, y)
    return update(GaussianLinear.prior(X.shape[1], alpha, beta), X, y)


def update(model: GaussianLinear, X, y) -> GaussianLinear:
    """Absorb more rows; the current posterior acts as the prior."""
    X, y = _as_design(X, y)
    if X.shape[1] != model.dim:
        raise ValueError(f"dimension mismatch: model has {model.dim} features, X has {X.shape[1]}")
    if len(y) == 0:
        return model
    P = model.S_inv + model.beta * (X.T @ X)
    P = 0.5 * (P + P.T)
    rhs = model.S_inv @ model.mean + model.beta * (X.T @ y)
    m = cho_solve(cho_factor(P, lower=True), rhs)
    return GaussianLinear(model.alpha, model.beta, m, P, model.n_obs + len(y), model.flags)


def predict(model: GaussianLinear, X) -> PredictiveGaussian:
    X = _as_design(X)
    if X.shape[1] != model.dim:
        raise ValueError(f"dimension mismatch: model has {model.dim} features, X has {X.shape[1]}")
    L = np.linalg.cholesky(model.S_inv)
    Z = solve_triangular(L, X.T, lower=True)
    sigma2 = 1.0 / model.beta + np.einsum("ij,ij->j", Z, Z)
    return PredictiveGaussian(X @ model.mean, sigma2)


def log_evidence(alpha: float, beta: float, X, y) -> float:
    """Log marginal likelihood ln p(y | X, alpha, beta)."""
    X, y = _as_design(X, y)
    if not (alpha > 0 and beta > 0):
        raise ValueError("alpha and beta must be positive")
    N, D = X.shape
    if N == 0:
        return 0.0
    P = alpha * np.eye(D) + beta * (X.T @ X)
    c, low = cho_factor(P, lower=True)
    m = beta * cho_solve((c, low), X.T @ y)
    resid = y - X @ m
    energy = 0.5 * beta * resid @ resid + 0.5 * alpha * m @ m
    logdet = 2.0 * np.sum(np.log(np.diag(c)))
    return float(0.5 * D * math.log(alpha) + 0.5 * N * math.log(beta) - energy - 0.5 * logdet - 0.5 * N * LOG_2PI)


def log_evidence_under(prior: GaussianLinear, X, y) -> float:
    """ln p(y | X) when ``prior`` (any Gaussian, e.g. a source posterior) is the weight prior."""
    X, y = _as_design(X, y)
    N = len(y)
    if N == 0:
        return 0.0
    post = update(prior, X, y)
    resid = y - X @ post.mean
    dm = post.mean - prior.mean
    logdet_prior = 2.0 * np.sum(np.log(np.diag(np.linalg.cholesky(prior.S_inv))))
    logdet_post = 2.0 * np.sum(np.log(np.diag(np.linalg.cholesky(post.S_inv))))
    return float(
        0.5 * N * math.log(prior.beta) - 0.5 * prior.beta * resid @ resid - 0.5 * dm @ prior.S_inv @ dm
        + 0.5 * logdet_prior - 0.5 * logdet_post - 0.5 * N * LOG_2PI
    )


@dataclass(frozen=True, eq=False)
class EvidenceFit:
    alpha: float
    beta: float
    model: GaussianLinear
    n_iter: int
    converged: bool
    degenerate: bool = False
    beta_frozen: bool = False

    def __iter__(self):
        return iter((self.alpha, self.beta, self.model))


def empirical_bayes(X, y, alpha0: float = 1.0, beta0: float = 1.0, tol: float = 1e-4,
                    max_iter: int = 200) -> EvidenceFit:
    """Maximize the evidence over (alpha, beta) by the fixed-point updates.

    With ``lam`` the eigenvalues of ``beta X^T X``, ``gamma = sum lam/(alpha+lam)``
    is the effective number of parameters; ``alpha = gamma / m^T m`` and
    ``1/beta = |y - X m|^2 / (N - gamma)``.
    """
    X, y = _as_design(X, y)
    if not (alpha0 > 0 and beta0 > 0):
        raise ValueError("alpha0 and beta0 must be positive")
    N, D = X.shape
    eig, V = np.linalg.eigh(X.T @ X)
    eig = np.clip(eig, 0.0, None)
    Vty = V.T @ (X.T @ y)
    alpha, beta = float(alpha0), float(beta0)
    degenerate = beta_frozen = converged = False
    n_iter = 0

    def posterior_mean(a, b):
        return V @ (b * Vty / (a + b * eig))

    for n_iter in range(1, max_iter + 1):
        m = posterior_mean(alpha, beta)
        lam = beta * eig
        gamma = float(np.sum(lam / (alpha + lam)))
        mm = float(m @ m)
        degenerate = mm < 1e-12
        if degenerate:
            new_alpha = ALPHA_MAX
        else:
            new_alpha = min(gamma / mm, ALPHA_MAX)
        resid = y - X @ m
        rss = float(resid @ resid)
        beta_frozen = N - gamma <= 0
        if beta_frozen:
            new_beta = beta
        elif rss <= (N - gamma) / BETA_MAX:
            new_beta = BETA_MAX
        else:
            new_beta = (N - gamma) / rss
        d_alpha = abs(new_alpha - alpha) / alpha
        d_beta = abs(new_beta - beta) / beta
        alpha, beta = new_alpha, new_beta
        if d_alpha < tol and d_beta < tol:
            converged = True
            break
        if degenerate and d_beta < tol:
            break

    flags = set()
    if degenerate:
        flags.add("degenerate")
    if beta_frozen:
        flags.add("beta_frozen")
    post = fit(X, y, alpha, beta)
    post = GaussianLinear(post.alpha, post.beta, post.mean, post.S_inv, post.n_obs, frozenset(flags))
    return EvidenceFit(alpha, beta, post, n_iter, converged, degenerate, beta_frozen)
