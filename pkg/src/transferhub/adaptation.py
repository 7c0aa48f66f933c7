"""Adapting a hub model to a target park with little data.

Strategies: direct use (DI), a target-fitted BLR head on frozen features
(DILI), online update of a BELM head, and fine-tuning an MLP with one of three
penalties (WD toward zero, WDS toward the source weights, BT toward the
prediction of an evidence-ranked source ensemble).
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from . import blr
from .dataset import split_days
from .evaluation import nrmse
from .models.belm import Belm
from .models.mlp import Mlp, sgd_train

MODES = ("DI", "DILI", "ONLINE", "FT-WD", "FT-WDS", "FT-BT")
PENALTY_KINDS = ("WD", "WDS", "BT")

LR_GRID = tuple(float(v) for v in np.logspace(-4, -1, 7))
LAMBDA_GRIDS = {
    "WD": tuple(float(v) for v in np.logspace(-6, -3, 7)),
    "WDS": (1.0, 0.1),
    "BT": (0.1, 0.25, 0.5, 1.0, 2.0, 4.0, 8.0),
}
POOLED = 0  # head key used when no per-horizon head applies


def head_features(source, X) -> np.ndarray:
    """Features a BLR head sees: MLP penultimate units get a bias column."""
    if isinstance(source, Mlp):
        F = source.transform(X)
        return np.hstack([F, np.ones((len(F), 1))])
    return np.asarray(source.transform(X), dtype=float)


class IdentityExtractor:
    """Raw input columns as features."""

    def __init__(self, n_inputs: int):
        self.out_dim = n_inputs

    def transform(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        if X.ndim != 2 or X.shape[1] != self.out_dim:
            raise ValueError(f"dimension mismatch: expected {self.out_dim} columns")
        return X


@dataclass(frozen=True, eq=False)
class Forecaster:
    """A source model together with whatever was adapted on the target.

    ``heads`` maps horizon index to a BLR posterior (``POOLED`` for the shared
    head); ``priors`` holds the matching prior each head started from, which is
    what the evidence of target data is measured against.
    """

    mode: str
    source: object
    heads: dict | None = None
    priors: dict | None = None
    per_horizon: bool = False
    n_target_used: int = 0
    info: dict = field(default_factory=dict)

    @property
    def probabilistic(self) -> bool:
        return self.heads is not None

    def _groups(self, n, horizon):
        if not self.per_horizon:
            return {POOLED: np.arange(n)}
        if horizon is None:
            raise ValueError("per-horizon forecaster needs horizon indices")
        horizon = np.asarray(horizon)
        out = {}
        for h in np.unique(horizon):
            key = int(h) if int(h) in self.heads else POOLED
            rows = np.flatnonzero(horizon == h)
            out[key] = np.concatenate([out[key], rows]) if key in out else rows
        return out

    def predictive(self, X, horizon=None) -> blr.PredictiveGaussian:
        if not self.probabilistic:
            raise ValueError(f"{self.mode} forecaster has no probabilistic head")
        Phi = head_features(self.source, X)
        mu = np.empty(len(Phi))
        s2 = np.empty(len(Phi))
        for key, rows in self._groups(len(Phi), horizon).items():
            pred = blr.predict(self.heads[key], Phi[rows])
            mu[rows], s2[rows] = pred.mu, pred.sigma2
        return blr.PredictiveGaussian(mu, s2)

    def point(self, X, horizon=None) -> np.ndarray:
        if self.probabilistic:
            return self.predictive(X, horizon).mu
        return np.asarray(self.source.predict(X), dtype=float)

    def log_evidence(self, X, y, horizon=None) -> float:
        """ln p(y | X) of target data under the head priors, summed over horizon groups."""
        if self.priors is None:
            raise ValueError(f"{self.mode} forecaster has no Bayesian head")
        Phi = head_features(self.source, X)
        y = np.asarray(y, dtype=float)
        return float(sum(
            blr.log_evidence_under(self.priors[key], Phi[rows], y[rows])
            for key, rows in self._groups(len(Phi), horizon).items()
        ))


def adapt_direct(source) -> Forecaster:
    """Use the source as is; a BELM keeps its Bayesian head."""
    if isinstance(source, Belm):
        return Forecaster("DI", source, {POOLED: source.head}, {POOLED: source.head})
    return Forecaster("DI", source)


def _isotropic_prior(head: blr.GaussianLinear) -> blr.GaussianLinear:
    return blr.GaussianLinear.prior(head.dim, head.alpha, head.beta)


def adapt_direct_linear(source, X_t, y_t, per_horizon: bool = False, horizon=None) -> Forecaster:
    """Freeze the extractor and fit fresh BLR head(s) on target data by empirical Bayes."""
    Phi = head_features(source, X_t)
    y = np.asarray(y_t, dtype=float)
    pooled = blr.empirical_bayes(Phi, y).model
    heads = {POOLED: pooled}
    fallback = []
    if per_horizon:
        if horizon is None:
            raise ValueError("per_horizon needs horizon indices")
        horizon = np.asarray(horizon)
        need = Phi.shape[1] + 1
        for h in np.unique(horizon):
            rows = np.flatnonzero(horizon == h)
            if len(rows) < need:
                fallback.append(int(h))
                continue
            heads[int(h)] = blr.empirical_bayes(Phi[rows], y[rows]).model
        if fallback:
            warnings.warn(
                f"{len(fallback)} horizons have fewer than {need} samples; using the pooled head there",
                RuntimeWarning, stacklevel=2,
            )
    priors = {k: _isotropic_prior(v) for k, v in heads.items()}
    return Forecaster("DILI", source, heads, priors, per_horizon, len(y),
                      {"pooled_fallback_horizons": fallback})


def adapt_belm_online(belm: Belm, X_t, y_t) -> Forecaster:
    """Source posterior as the prior; (alpha, beta) stay at their source values."""
    Phi = belm.transform(X_t)
    head = blr.update(belm.head, Phi, y_t)
    return Forecaster("ONLINE", belm, {POOLED: head}, {POOLED: belm.head}, False, len(Phi))


@dataclass(frozen=True, eq=False)
class BtContext:
    """Evidence-ranked sources with their target-fitted head means ``theta[m]`` of shape (K, H_m)."""

    sources: tuple
    thetas: tuple

    def __post_init__(self):
        if not self.sources:
            raise ValueError("BT context needs at least one source")
        if len(self.sources) != len(self.thetas):
            raise ValueError("one theta per source required")
        thetas = tuple(np.atleast_2d(np.asarray(t, dtype=float)) for t in self.thetas)
        object.__setattr__(self, "thetas", thetas)

    def features(self, X) -> list[np.ndarray]:
        return [head_features(s, X) for s in self.sources]

    def reference(self, X) -> np.ndarray:
        """Source-average prediction per row and horizon, shape (N, K)."""
        return np.mean([Phi @ t.T for Phi, t in zip(self.features(X), self.thetas)], axis=0)


@dataclass(frozen=True, eq=False)
class PenaltySpec:
    kind: str
    lam: float
    theta0: np.ndarray | None = None
    bt_context: BtContext | None = None

    def __post_init__(self):
        if self.kind not in PENALTY_KINDS:
            raise ValueError(f"unknown penalty kind {self.kind!r}")
        if self.lam < 0:
            raise ValueError("lambda must be nonnegative")
        if self.kind == "WDS" and self.theta0 is None:
            raise ValueError("WDS needs theta0")
        if self.kind == "BT" and self.bt_context is None:
            raise ValueError("BT needs a source context")


def penalty_loss(spec: PenaltySpec, theta, batch_features=None) -> float:
    """Unweighted penalty value (multiply by ``spec.lam`` for the loss term).

    For BT, ``theta`` is the target head of shape (K, H_t) and
    ``batch_features`` a dict with ``"sources"`` (list of N x H_m) and
    ``"target"`` (N x H_t).
    """
    theta = np.asarray(theta, dtype=float)
    if spec.kind == "WD":
        return 0.5 * float(theta.ravel() @ theta.ravel())
    if spec.kind == "WDS":
        theta0 = np.asarray(spec.theta0, dtype=float)
        if theta0.shape != theta.shape:
            raise ValueError("theta and theta0 shapes differ")
        d = (theta - theta0).ravel()
        return 0.5 * float(d @ d)
    ctx = spec.bt_context
    src = batch_features["sources"]
    tgt = np.asarray(batch_features["target"], dtype=float)
    theta = np.atleast_2d(theta)
    if len(src) != len(ctx.thetas):
        raise ValueError("one feature block per context source required")
    if tgt.shape[1] != theta.shape[1] or any(t.shape[0] != theta.shape[0] for t in ctx.thetas):
        raise ValueError("shape mismatch between features and head parameters")
    ens = np.mean([np.asarray(F, dtype=float) @ t.T for F, t in zip(src, ctx.thetas)], axis=0)
    d = ens - tgt @ theta.T
    return float(np.mean(d * d))


@dataclass(frozen=True)
class Candidate:
    lr: float
    lam: float
    val_nrmse: float
    diverged: bool


def holdout_split(n, groups, seed, fraction=0.3):
    if groups is None:
        groups = np.arange(n)
    groups = np.asarray(groups)
    uniq = np.unique(groups)
    _, held = split_days(len(uniq), fraction, seed)
    val = np.isin(groups, uniq[held])
    return np.flatnonzero(~val), np.flatnonzero(val)


def finetune(source_mlp: Mlp, X_t, y_t, kind: str, seed: int, groups=None, bt_context=None,
             lr_grid=LR_GRID, lam_grid=None, n_epochs: int = 1) -> Forecaster:
    """Grid-search (lr, lambda) for one penalty; pick by validation nRMSE.

    ``groups`` (day numbers) makes the 70/30 split day-level.  Each candidate
    runs ``n_epochs`` of SGD with ten mini-batches per epoch.  If every
    candidate diverges the source is returned unchanged as DI.
    """
    if kind not in PENALTY_KINDS:
        raise ValueError(f"unknown penalty kind {kind!r}")
    X = np.asarray(X_t, dtype=float)
    y = np.asarray(y_t, dtype=float)
    if len(y) < 10:
        raise ValueError("fine-tuning needs at least 10 target samples")
    lam_grid = LAMBDA_GRIDS[kind] if lam_grid is None else tuple(lam_grid)
    tr, va = holdout_split(len(y), groups, seed)
    batch = math.ceil(len(tr) / 10)
    theta0 = source_mlp.params()
    ref = None
    if kind == "BT":
        if bt_context is None:
            raise ValueError("BT needs a source context")
        ref = bt_context.reference(X[tr])[:, 0]

    best, log = None, []
    for lr in sorted(lr_grid):
        for lam in sorted(lam_grid):
            spec = PenaltySpec(kind, lam, theta0 if kind == "WDS" else None, bt_context)
            try:
                net = sgd_train(source_mlp, X[tr], y[tr], lr, n_epochs, batch, seed, spec, ref)
                err = nrmse(y[va], net.predict(X[va]))
                diverged = not math.isfinite(err)
            except FloatingPointError:
                net, err, diverged = None, math.inf, True
            log.append(Candidate(lr, lam, err, diverged))
            if not diverged and (best is None or err < best[0]):
                best = (err, lr, lam, net)
    if best is None:
        warnings.warn(f"all {kind} fine-tuning candidates diverged; falling back to DI",
                      RuntimeWarning, stacklevel=2)
        fc = adapt_direct(source_mlp)
        return Forecaster(fc.mode, fc.source, fc.heads, fc.priors, info={"fallback": True, "log": log})
    err, lr, lam, net = best
    return Forecaster(f"FT-{kind}", net, n_target_used=len(y),
                      info={"lr": lr, "lam": lam, "val_nrmse": err, "log": log, "n_train": len(tr)})
