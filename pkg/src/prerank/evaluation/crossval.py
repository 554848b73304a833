"""Fold construction, cross-validation and query-length bucket analysis."""

from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass
from typing import Callable, Mapping, Sequence

import numpy as np

from .metrics import MetricReport, aggregate, eval_ranking, rank_order


class LeakageError(ValueError):
    """A query id appears in both a training and an evaluation split."""


@dataclass(frozen=True)
class Fold:
    train: frozenset[str]
    valid: frozenset[str]
    test: frozenset[str]


@dataclass(frozen=True)
class FoldSplit:
    folds: tuple[Fold, ...]

    def validate(self, qids: Sequence[str] | None = None) -> None:
        for i, f in enumerate(self.folds):
            if f.train & f.valid or f.train & f.test or f.valid & f.test:
                raise LeakageError(f"fold {i}: train/valid/test overlap")
            if qids is not None and (f.train | f.valid | f.test) != set(qids):
                raise ValueError(f"fold {i}: splits do not cover the query set")


def make_folds(qids: Sequence[str], n_folds: int = 5, seed: int | None = None) -> FoldSplit:
    """LETOR-style rotation: fold ``i`` tests on part ``i``, validates on part ``i+1``, trains on the rest."""
    order = sorted(set(qids))
    if seed is not None:
        order = [order[i] for i in np.random.default_rng(seed).permutation(len(order))]
    if len(order) < n_folds:
        raise ValueError(f"need at least {n_folds} queries for {n_folds} folds")
    parts = [frozenset(p) for p in np.array_split(np.array(order, dtype=object), n_folds)]
    folds = []
    for i in range(n_folds):
        test, valid = parts[i], parts[(i + 1) % n_folds]
        train = frozenset().union(*(p for j, p in enumerate(parts) if j not in (i, (i + 1) % n_folds)))
        folds.append(Fold(train, valid, test))
    return FoldSplit(tuple(folds))


Scorer = Callable[[object], Sequence[float]]
TrainFn = Callable[[list, list], Scorer]


@dataclass
class CVResult:
    report: MetricReport
    fold_reports: list[MetricReport]


def cross_validate(dataset: Sequence, folds: FoldSplit, train_fn: TrainFn,
                   merge: Sequence | None = None, cutoffs: Sequence[int] = (10,)) -> CVResult:
    """Train per fold, evaluate on its test split, average the per-fold means.

    ``train_fn(train_lists, valid_lists)`` returns a scorer mapping a list to
    per-document scores.  ``merge`` lists are appended to every training split
    (and never to validation or test).
    """
    folds.validate()
    by_qid = {lst.qid: lst for lst in dataset}
    merge = list(merge or [])
    merge_qids = {m.qid for m in merge}
    reports = []
    for i, f in enumerate(folds.folds):
        if merge_qids & (f.test | f.valid):
            raise LeakageError(f"fold {i}: merged training queries overlap the evaluation splits")
        train = [by_qid[q] for q in sorted(f.train) if q in by_qid] + merge
        valid = [by_qid[q] for q in sorted(f.valid) if q in by_qid]
        test = [by_qid[q] for q in sorted(f.test) if q in by_qid]
        if {t.qid for t in train} & f.test:
            raise LeakageError(f"fold {i}: test query in training data")
        scorer = train_fn(train, valid)
        per_query = {}
        for lst in test:
            order = rank_order(scorer(lst), lst.docids)
            per_query[lst.qid] = eval_ranking([lst.labels[j] for j in order], lst.max_grade, cutoffs)
        reports.append(aggregate(per_query))
    names = list(reports[0].means)
    per_query = {q: v for r in reports for q, v in r.per_query.items()}
    skipped = sorted(q for r in reports for q in r.skipped)
    means = {n: float(np.mean([r.means[n] for r in reports])) for n in names}
    return CVResult(MetricReport(per_query, means, len(per_query), len(skipped), skipped), reports)


@dataclass(frozen=True)
class BucketRow:
    length: int
    count: int
    mean_improvement: float


def length_buckets(query_lengths: Mapping[str, int], baseline: Mapping[str, float],
                   treatment: Mapping[str, float]) -> list[BucketRow]:
    """Mean ``treatment - baseline`` per query length; lengths with no queries are omitted."""
    if set(baseline) != set(treatment):
        raise ValueError("baseline and treatment must cover the same queries")
    groups: dict[int, list[float]] = defaultdict(list)
    for q in sorted(baseline):
        groups[int(query_lengths[q])].append(treatment[q] - baseline[q])
    return [BucketRow(n, len(v), float(np.mean(v))) for n, v in sorted(groups.items())]


def buckets_csv(rows: Sequence[BucketRow]) -> str:
    return "length,count,mean_improvement\n" + "".join(
        f"{r.length},{r.count},{r.mean_improvement:.6f}\n" for r in rows)
