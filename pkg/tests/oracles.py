"""Independent reference implementations used by the unit and acceptance tests."""

import itertools
import math

from scipy.integrate import quad


def brute_force_metrics(grades, k):
    """Metrics by direct formula evaluation; the ideal DCG is a max over all permutations."""
    n_rel = sum(g > 0 for g in grades)

    def dcg(seq):
        return sum((2 ** g - 1) / math.log2(i + 1) for i, g in enumerate(seq[:k], start=1))

    best = max(dcg(list(p)) for p in itertools.permutations(grades)) if grades else 0.0
    rel_ranks = [i for i, g in enumerate(grades, start=1) if g > 0]
    ap = 0.0
    for r in rel_ranks:
        ap += sum(1 for g in grades[:r] if g > 0) / r
    ap = ap / n_rel if n_rel else 0.0
    mrr = 0.0
    for i in range(1, min(k, len(grades)) + 1):
        if grades[i - 1] > 0:
            mrr = 1.0 / i
            break
    top = sum(1 for g in grades[:k] if g > 0)
    return {
        f"P@{k}": top / k,
        f"NDCG@{k}": dcg(grades) / best if best > 0 else 0.0,
        "MAP": ap,
        f"MRR@{k}": mrr,
        f"Recall@{k}": top / n_rel if n_rel else 0.0,
    }


def t_pdf(x, df):
    c = math.exp(math.lgamma((df + 1) / 2) - math.lgamma(df / 2)) / math.sqrt(df * math.pi)
    return c * (1 + x * x / df) ** (-(df + 1) / 2)


def paired_t_oracle(diffs):
    """Two-sided p-value by numerically integrating the Student t density."""
    n = len(diffs)
    mean = sum(diffs) / n
    var = sum((d - mean) ** 2 for d in diffs) / (n - 1)
    t = abs(mean / math.sqrt(var / n))
    tail, _ = quad(t_pdf, t, math.inf, args=(n - 1,), epsabs=1e-13, epsrel=1e-12)
    return 2 * tail
