"""Ranking hub models by how well they suit a target park."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import blr
from .adaptation import holdout_split, head_features
from .evaluation import nrmse
from .models.belm import Belm


@dataclass(frozen=True, eq=False)
class EvidenceScore:
    value: float
    degenerate: bool
    fit: blr.EvidenceFit

    def __float__(self) -> float:
        return self.value


def evidence_details(source, X_t, y_t) -> EvidenceScore:
    Phi = head_features(source, X_t)
    y = np.asarray(y_t, dtype=float)
    if len(y) == 0:
        raise ValueError("target data is empty")
    fit = blr.empirical_bayes(Phi, y)
    if fit.degenerate:
        return EvidenceScore(-math.inf, True, fit)
    return EvidenceScore(blr.log_evidence(fit.alpha, fit.beta, Phi, y), False, fit)


def score_evidence(source, X_t, y_t) -> float:
    """Maximized log evidence of a BLR head on the source's features; -inf when degenerate."""
    return evidence_details(source, X_t, y_t).value


def score_nrmse(source, X_t, y_t, seed: int, groups=None) -> float:
    """Holdout nRMSE on 30% of the target days.

    A BELM first absorbs the other 70% into its head; other sources are scored
    as they are.
    """
    X = np.asarray(X_t, dtype=float)
    y = np.asarray(y_t, dtype=float)
    n_groups = len(np.unique(groups)) if groups is not None else len(y)
    if n_groups < 2:
        raise ValueError("need at least 2 days of target data")
    tr, va = holdout_split(len(y), groups, seed)
    if isinstance(source, Belm):
        head = blr.update(source.head, source.transform(X[tr]), y[tr])
        pred = head_features(source, X[va]) @ head.mean
    else:
        pred = source.predict(X[va])
    return nrmse(y[va], pred)


def select(scores, strategy: str) -> int:
    """argmax for evidence, argmin for nRMSE; ties go to the lowest index."""
    s = np.asarray(scores, dtype=float)
    if s.size == 0:
        raise ValueError("no scores to select from")
    if strategy == "evidence":
        if np.all(s == -np.inf):
            raise ValueError("every evidence score is -inf")
        return int(np.argmax(s))
    if strategy == "nrmse":
        return int(np.argmin(s))
    raise ValueError(f"unknown strategy {strategy!r}")
