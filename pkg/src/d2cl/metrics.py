"""ROC / AUC with Mann-Whitney half-credit ties."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.stats import rankdata

from .graph import DomainError


@dataclass
class RocResult:
    auc: float
    fpr: np.ndarray
    tpr: np.ndarray
    n_pos: int
    n_neg: int


def _check(scores, labels):
    s = np.asarray(scores, dtype=np.float64).ravel()
    y = np.asarray(labels).ravel()
    if s.shape != y.shape:
        raise DomainError("scores and labels differ in length")
    if not np.isin(y, (0, 1)).all():
        raise DomainError("labels must be 0/1")
    y = y.astype(bool)
    n_pos = int(y.sum())
    n_neg = y.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise DomainError("AUC needs both classes")
    if np.isnan(s).any():
        raise DomainError("scores contain NaN")
    return s, y, n_pos, n_neg


def auc_score(scores, labels) -> float:
    """Mann-Whitney ``P(s+ > s-) + 0.5 P(s+ = s-)`` from midranks."""
    s, y, n_pos, n_neg = _check(scores, labels)
    ranks = rankdata(s)  # average ranks give ties half credit
    u = ranks[y].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def roc_curve(scores, labels) -> tuple[np.ndarray, np.ndarray]:
    """ROC points at every distinct threshold, from (0, 0) to (1, 1)."""
    s, y, n_pos, n_neg = _check(scores, labels)
    order = np.argsort(-s, kind="stable")
    s, y = s[order], y[order]
    # last index of each run of equal scores
    ends = np.r_[np.flatnonzero(np.diff(s)), s.size - 1]
    tp = np.cumsum(y)[ends]
    fp = (ends + 1) - tp
    return np.r_[0.0, fp / n_neg], np.r_[0.0, tp / n_pos]


def roc_auc(scores, labels) -> RocResult:
    fpr, tpr = roc_curve(scores, labels)
    y = np.asarray(labels).astype(bool)
    return RocResult(auc_score(scores, labels), fpr, tpr, int(y.sum()), int((~y).sum()))
