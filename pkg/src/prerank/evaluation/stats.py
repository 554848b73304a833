"""Significance testing and AUC."""

from __future__ import annotations

import math
from typing import Sequence

import numpy as np
from scipy.special import betainc
from scipy.stats import rankdata


def paired_test(a: Sequence[float], b: Sequence[float]) -> float:
    """Two-sided paired t-test p-value on ``a - b``.

    Degenerate cases: all differences zero gives 1; identical non-zero
    differences (zero variance) give 0.  Differences whose spread is below
    round-off (``sd <= 1e-12 * |mean|``) count as identical.
    """
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"paired_test: length mismatch {a.shape} vs {b.shape}")
    if a.size < 2:
        raise ValueError("paired_test needs at least two pairs")
    d = a - b
    if np.all(d == 0):
        return 1.0
    sd = d.std(ddof=1)
    if sd <= 1e-12 * abs(d.mean()):
        return 0.0
    n = d.size
    t = d.mean() / (sd / math.sqrt(n))
    df = n - 1
    return float(betainc(df / 2.0, 0.5, df / (df + t * t)))


def auc(scores: Sequence[float], labels: Sequence[int]) -> float:
    """Area under the ROC curve (Mann-Whitney form, ties count one half)."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels).astype(bool)
    n_pos, n_neg = labels.sum(), (~labels).sum()
    if n_pos == 0 or n_neg == 0:
        raise ValueError("auc needs both positive and negative examples")
    ranks = rankdata(scores)
    return float((ranks[labels].sum() - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))
