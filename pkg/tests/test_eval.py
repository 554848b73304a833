import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from oracles import brute_force_metrics, paired_t_oracle

from prerank.corpus import LabeledList, RunEntry, TokenSequence
from prerank.evaluation import (
    FoldSplit,
    LeakageError,
    aggregate,
    auc,
    buckets_csv,
    cross_validate,
    eval_ranking,
    evaluate_run,
    evaluate_scored_lists,
    length_buckets,
    make_folds,
    paired_test,
)
from prerank.evaluation.crossval import Fold
from prerank.evaluation.metrics import QueryMetrics


def test_ndcg_worked_example():
    v = eval_ranking([2, 0, 1], cutoffs=(3,)).values
    idcg = 3 + 1 / math.log2(3)
    assert v["NDCG@3"] == pytest.approx(3.5 / idcg, abs=1e-12)
    assert v["NDCG@3"] == pytest.approx(0.963940, abs=1e-6)
    assert eval_ranking([2, 2, 1, 0], cutoffs=(3,)).values["NDCG@3"] == 1.0


def test_binary_worked_example():
    v = eval_ranking([1, 0, 1], cutoffs=(3,)).values
    assert v["MAP"] == pytest.approx((1 + 2 / 3) / 2)
    assert v["MRR@3"] == 1.0
    assert v["P@3"] == pytest.approx(2 / 3)
    assert v["Recall@3"] == 1.0


def test_grade_range_checked():
    with pytest.raises(ValueError):
        eval_ranking([0, 3], max_grade=2)


@settings(max_examples=1000)
@given(st.lists(st.integers(0, 2), min_size=0, max_size=6), st.integers(1, 8))
def test_metrics_match_brute_force(grades, k):
    got = eval_ranking(grades, 2, cutoffs=(k,)).values
    ref = brute_force_metrics(grades, k)
    for name, v in ref.items():
        assert abs(got[name] - v) <= 1e-9, name


@settings(max_examples=200)
@given(st.lists(st.integers(0, 3), min_size=1, max_size=7), st.integers(1, 7), st.integers(0, 2**32 - 1))
def test_ndcg_one_iff_sorted_in_top_k(grades, k, seed):
    rng = np.random.default_rng(seed)
    perm = [grades[i] for i in rng.permutation(len(grades))]
    ndcg = eval_ranking(perm, cutoffs=(k,)).values[f"NDCG@{k}"]
    if max(grades) == 0:
        assert ndcg == 0.0
        return
    ideal = sorted(grades, reverse=True)[:k]
    assert (abs(ndcg - 1.0) < 1e-12) == (perm[:k] == ideal)


@settings(max_examples=100)
@given(st.lists(st.integers(0, 2), min_size=1, max_size=8), st.integers(0, 2**32 - 1))
def test_metrics_invariant_under_docid_relabeling(grades, seed):
    rng = np.random.default_rng(seed)
    names_a = [f"d{i}" for i in range(len(grades))]
    names_b = [f"x{j}" for j in rng.permutation(100)[:len(grades)]]
    reports = []
    for names in (names_a, names_b):
        run = {"q": [RunEntry("q", d, r, float(-r), "t") for r, d in enumerate(names, 1)]}
        qrels = {"q": dict(zip(names, grades))}
        if max(grades) == 0:
            with pytest.raises(ValueError):
                evaluate_run(run, qrels)
            return
        reports.append(evaluate_run(run, qrels).means)
    assert reports[0] == reports[1]


def test_aggregate_rules():
    one = QueryMetrics({"NDCG@10": 0.4, "P@10": 0.2}, 1)
    assert aggregate({"a": one}).means == {"NDCG@10": 0.4, "P@10": 0.2}
    two = aggregate({"a": QueryMetrics({"NDCG@10": 1.0}, 1), "b": QueryMetrics({"NDCG@10": 0.5}, 2)})
    assert two["NDCG@10"] == 0.75
    mixed = aggregate({"a": QueryMetrics({"NDCG@10": 1.0, "P@10": 0.5, "MRR@10": 1.0}, 1),
                       "b": QueryMetrics({"NDCG@10": 0.0, "P@10": 0.0, "MRR@10": 0.0}, 0)})
    assert mixed["NDCG@10"] == 1.0
    assert mixed["P@10"] == 0.25 and mixed["MRR@10"] == 0.5
    assert mixed.n_skipped == 1 and mixed.skipped == ["b"]
    assert mixed.values("NDCG@10") == {"a": 1.0}
    assert mixed.values("P@10") == {"a": 0.5, "b": 0.0}
    with pytest.raises(ValueError):
        aggregate({})
    with pytest.raises(ValueError, match="2 queries"):
        aggregate({"a": QueryMetrics({"NDCG@10": 0.0}, 0), "b": QueryMetrics({"NDCG@10": 0.0}, 0)})


def test_report_values_in_unit_interval_and_csv():
    rng = np.random.default_rng(0)
    per = {f"q{i}": eval_ranking(list(rng.integers(0, 3, 8)) + [1], cutoffs=(5, 10)) for i in range(20)}
    rep = aggregate(per)
    assert all(0.0 <= v <= 1.0 for q in rep.per_query.values() for v in q.values())
    for n, m in rep.means.items():
        assert m == pytest.approx(np.mean(list(rep.values(n).values())))
    csv = rep.to_csv().splitlines()
    assert csv[0].startswith("qid,") and csv[-1].startswith("mean,") and len(csv) == 22
    assert "NDCG@10" in rep.table()


def test_scored_lists_break_ties_by_docid():
    seq = TokenSequence((5,))
    lst = LabeledList("q", seq, [("b", seq), ("a", seq), ("c", seq)], (0, 1, 2), 2)
    rep = evaluate_scored_lists([lst], [[0.0, 0.0, 0.0]], cutoffs=(1,))
    assert rep["P@1"] == 1.0 and rep["MRR@1"] == 1.0  # "a" (grade 1) first
    assert rep["NDCG@1"] == pytest.approx(1 / 3)


def test_evaluate_run_uses_judged_pool():
    run = {"q": [RunEntry("q", "d1", 1, 3.0, "t"), RunEntry("q", "dx", 2, 2.0, "t")]}
    qrels = {"q": {"d1": 1, "d2": 2}}
    rep = evaluate_run(run, qrels, cutoffs=(2,))
    assert rep["Recall@2"] == 0.5
    assert rep["NDCG@2"] == pytest.approx(1.0 / (3 + 1 / math.log2(3)))


# --- significance ------------------------------------------------------------------------

def test_paired_test_examples():
    a = [0.3, 0.5, 0.9]
    assert paired_test(a, a) == 1.0
    assert paired_test([0.2, 0.3, 0.4], [0.1, 0.2, 0.3]) == 0.0
    d = [0.1, -0.05, 0.2, 0.0, 0.15]
    p = paired_test(d, [0.0] * 5)
    assert abs(p - paired_t_oracle(d)) <= 1e-6
    with pytest.raises(ValueError):
        paired_test([0.1, 0.2], [0.1])
    with pytest.raises(ValueError):
        paired_test([0.1], [0.2])


@settings(max_examples=100)
@given(st.lists(st.floats(-1, 1), min_size=2, max_size=30), st.integers(0, 2**32 - 1))
def test_paired_test_symmetric_and_matches_oracle(a, seed):
    b = list(np.random.default_rng(seed).uniform(-1, 1, len(a)))
    p = paired_test(a, b)
    assert p == pytest.approx(paired_test(b, a), abs=1e-15)
    d = np.subtract(a, b)
    if np.std(d, ddof=1) > 1e-6:
        assert abs(p - paired_t_oracle(list(d))) <= 1e-6


def test_auc():
    assert auc([0.1, 0.4, 0.35, 0.8], [0, 0, 1, 1]) == 0.75
    assert auc([1, 1, 1, 1], [0, 1, 0, 1]) == 0.5
    with pytest.raises(ValueError):
        auc([0.1, 0.2], [1, 1])


# --- cross-validation -----------------------------------------------------------------------

def _dataset(n=25, seed=0):
    rng = np.random.default_rng(seed)
    seq = TokenSequence((5,))
    return [LabeledList(f"q{i:02d}", seq, [(f"d{j}", seq) for j in range(6)],
                        tuple(int(g) for g in np.maximum(rng.integers(0, 3, 6), [1, 0, 0, 0, 0, 0])), 2)
            for i in range(n)]


def test_make_folds_rotation():
    qids = [f"q{i:02d}" for i in range(23)]
    split = make_folds(qids)
    split.validate(qids)
    tests = [f.test for f in split.folds]
    assert frozenset().union(*tests) == set(qids)
    assert sum(len(t) for t in tests) == 23
    for i, f in enumerate(split.folds):
        assert f.valid == split.folds[(i + 1) % 5].test
    with pytest.raises(ValueError):
        make_folds(qids[:3])


def test_fold_validation_detects_leakage():
    bad = FoldSplit((Fold(frozenset({"a", "b"}), frozenset({"c"}), frozenset({"b"})),))
    with pytest.raises(LeakageError):
        bad.validate()


def test_cross_validate_constant_scorer():
    data = _dataset()
    # perfect oracle scorer: every fold's NDCG is 1
    res = cross_validate(data, make_folds([d.qid for d in data]),
                         lambda tr, va: (lambda lst: np.asarray(lst.labels, float)))
    assert res.report["NDCG@10"] == pytest.approx(1.0)
    assert len(res.fold_reports) == 5


def test_cross_validate_averages_fold_means():
    seq = TokenSequence((5,))
    data = [LabeledList(f"q{i:02d}", seq, [(f"d{j}", seq) for j in range(4)], (1, 0, 0, 0), 2)
            for i in range(25)]
    split = make_folds([d.qid for d in data])
    # fold i ranks the relevant document first for i+1 of its 5 test queries: P@1 = 0.2 .. 1.0
    good = {q for i, f in enumerate(split.folds) for q in sorted(f.test)[:i + 1]}
    seen = []

    def train(tr, va):
        seen.append(({t.qid for t in tr}, {v.qid for v in va}))
        return lambda lst: np.array([1.0, 0, 0, 0]) if lst.qid in good else np.array([0.0, 1, 0, 0])

    res = cross_validate(data, split, train, cutoffs=(1,))
    assert [r["P@1"] for r in res.fold_reports] == pytest.approx([0.2, 0.4, 0.6, 0.8, 1.0])
    assert res.report["P@1"] == pytest.approx(0.6)
    for (tr, va), f in zip(seen, split.folds):
        assert tr == set(f.train) and va == set(f.valid)


def test_cross_validate_merge_only_in_train():
    data = _dataset()
    aux = _dataset(n=4, seed=9)
    aux = [LabeledList("aux" + a.qid, a.query, a.docs, a.labels, 2) for a in aux]
    seen = []

    def train(tr, va):
        seen.append(({t.qid for t in tr}, {v.qid for v in va}))
        return lambda lst: np.zeros(len(lst))

    res = cross_validate(data, make_folds([d.qid for d in data]), train, merge=aux)
    for tr, va in seen:
        assert {a.qid for a in aux} <= tr and not ({a.qid for a in aux} & va)
    for r in res.fold_reports:
        assert not any(q.startswith("aux") for q in r.per_query)
    with pytest.raises(LeakageError):
        cross_validate(data, make_folds([d.qid for d in data]), train, merge=data[:1])


# --- buckets ------------------------------------------------------------------------------

def test_length_buckets_examples():
    lens = {"a": 1, "b": 2, "c": 2}
    rows = length_buckets(lens, {"a": 0.0, "b": 0.0, "c": 0.0}, {"a": 0.1, "b": 0.2, "c": 0.4})
    assert [(r.length, r.count) for r in rows] == [(1, 1), (2, 2)]
    assert rows[0].mean_improvement == pytest.approx(0.1)
    assert rows[1].mean_improvement == pytest.approx(0.3)
    same = length_buckets(lens, {"a": 0.5, "b": 0.2, "c": 0.1}, {"a": 0.5, "b": 0.2, "c": 0.1})
    assert all(r.mean_improvement == 0.0 for r in same)
    assert [r.length for r in length_buckets({"a": 1, "b": 5}, {"a": 0, "b": 0}, {"a": 1, "b": 1})] == [1, 5]
    assert buckets_csv(rows).splitlines()[0] == "length,count,mean_improvement"
    with pytest.raises(ValueError):
        length_buckets(lens, {"a": 0.0}, {"b": 0.0})
