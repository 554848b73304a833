"""Per-query ranking metrics and their aggregation."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np


def metric_names(k: int) -> tuple[str, ...]:
    return (f"P@{k}", f"NDCG@{k}", "MAP", f"MRR@{k}", f"Recall@{k}")


# metrics undefined for a query without relevant documents
_NEEDS_RELEVANT = ("NDCG", "MAP", "Recall")


def rank_order(scores: Sequence[float], docids: Sequence[str]) -> list[int]:
    """Indices by descending score, ties broken by ascending docid."""
    return sorted(range(len(docids)), key=lambda i: (-float(scores[i]), docids[i]))


def dcg(grades: Sequence[int], k: int) -> float:
    return sum((2.0 ** g - 1.0) / math.log2(i + 2) for i, g in enumerate(grades[:k]))


@dataclass
class QueryMetrics:
    values: dict[str, float]
    n_relevant: int

    @property
    def has_relevant(self) -> bool:
        return self.n_relevant > 0


def eval_ranking(grades: Sequence[int], max_grade: int | None = None, cutoffs: Sequence[int] = (10,),
                 pool_grades: Sequence[int] | None = None) -> QueryMetrics:
    """Metrics for one ranked list of graded labels.

    ``pool_grades`` is the full judged pool of the query; when omitted the
    ranked list itself is the pool.  Relevance for P, AP, MRR and Recall is
    ``grade > 0``.
    """
    grades = [int(g) for g in grades]
    pool = grades if pool_grades is None else [int(g) for g in pool_grades]
    if max_grade is not None and any(not 0 <= g <= max_grade for g in grades + pool):
        raise ValueError(f"grades outside 0..{max_grade}")
    n_rel = sum(1 for g in pool if g > 0)
    ideal = sorted(pool, reverse=True)
    values: dict[str, float] = {}
    hits, precision_sum = 0, 0.0
    for i, g in enumerate(grades, 1):
        if g > 0:
            hits += 1
            precision_sum += hits / i
    values["MAP"] = precision_sum / n_rel if n_rel else 0.0
    first = next((i for i, g in enumerate(grades, 1) if g > 0), None)
    for k in cutoffs:
        rel_k = sum(1 for g in grades[:k] if g > 0)
        idcg = dcg(ideal, k)
        values[f"P@{k}"] = rel_k / k
        values[f"NDCG@{k}"] = dcg(grades, k) / idcg if idcg > 0 else 0.0
        values[f"MRR@{k}"] = 1.0 / first if first is not None and first <= k else 0.0
        values[f"Recall@{k}"] = rel_k / n_rel if n_rel else 0.0
    return QueryMetrics(values, n_rel)


@dataclass
class MetricReport:
    per_query: dict[str, dict[str, float]]
    means: dict[str, float]
    n_queries: int
    n_skipped: int
    # qids without relevant documents, excluded from NDCG/MAP/Recall means
    skipped: list[str] = field(default_factory=list)

    def __getitem__(self, name: str) -> float:
        return self.means[name]

    def values(self, name: str) -> dict[str, float]:
        """Per-query values of one metric, only for queries included in its mean."""
        needs = name.startswith(_NEEDS_RELEVANT)
        return {q: v[name] for q, v in self.per_query.items() if not (needs and q in self.skipped)}

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        names = list(self.means)
        w.writerow(["qid", *names])
        for q in sorted(self.per_query):
            w.writerow([q, *(f"{self.per_query[q][n]:.6f}" for n in names)])
        w.writerow(["mean", *(f"{self.means[n]:.6f}" for n in names)])
        return buf.getvalue()

    def table(self) -> str:
        lines = [f"queries: {self.n_queries} (skipped for NDCG/MAP/Recall: {self.n_skipped})"]
        lines += [f"  {n:<10} {v:.4f}" for n, v in self.means.items()]
        return "\n".join(lines)


def aggregate(per_query: Mapping[str, QueryMetrics]) -> MetricReport:
    """Arithmetic means in qid order; relevance-free queries only count toward P@k and MRR@k."""
    if not per_query:
        raise ValueError("aggregate needs at least one query")
    qids = sorted(per_query)
    skipped = [q for q in qids if not per_query[q].has_relevant]
    names = list(per_query[qids[0]].values)
    means = {}
    for n in names:
        if n.startswith(_NEEDS_RELEVANT):
            vals = [per_query[q].values[n] for q in qids if per_query[q].has_relevant]
            if not vals:
                raise ValueError(f"{n} undefined: all {len(skipped)} queries lack relevant documents")
        else:
            vals = [per_query[q].values[n] for q in qids]
        means[n] = float(np.mean(vals))
    return MetricReport({q: dict(per_query[q].values) for q in qids}, means, len(qids), len(skipped), skipped)


def evaluate_scored_lists(lists, scores: Sequence[Sequence[float]], cutoffs: Sequence[int] = (10,)) -> MetricReport:
    """Rank each labeled list by its scores (docid tie-break) and aggregate the metrics."""
    per_query = {}
    for lst, s in zip(lists, scores):
        order = rank_order(s, lst.docids)
        per_query[lst.qid] = eval_ranking([lst.labels[i] for i in order], lst.max_grade, cutoffs)
    return aggregate(per_query)


def evaluate_run(run: Mapping[str, Sequence], qrels: Mapping[str, Mapping[str, int]],
                 cutoffs: Sequence[int] = (10,)) -> MetricReport:
    """Evaluate a run (qid -> entries sorted by rank) against graded judgments.

    Unjudged retrieved documents count as grade 0; ideal rankings and recall
    denominators come from the full judged pool of each query.
    """
    per_query = {}
    for qid, entries in run.items():
        judged = qrels.get(qid, {})
        ranked = sorted(entries, key=lambda e: (e.rank, e.docid))
        grades = [judged.get(e.docid, 0) for e in ranked]
        per_query[qid] = eval_ranking(grades, None, cutoffs, pool_grades=list(judged.values()) or grades)
    return aggregate(per_query)
