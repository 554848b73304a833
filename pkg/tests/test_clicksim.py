import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.stats import chi2_contingency

from prerank.clicksim import (
    BiasModel,
    SimConfig,
    attractiveness,
    bm25_ranker,
    generate_click_log,
    load_bias,
    save_bias,
    simulate_session,
)
from prerank.corpus import LabeledList, TokenSequence, session_to_json
from prerank.features import CorpusStats, bm25


def test_attractiveness_examples():
    bias = BiasModel.pbm(5, max_grade=2, epsilon=0.1)
    assert attractiveness(0, bias) == pytest.approx(0.1)
    assert attractiveness(2, bias) == pytest.approx(1.0)
    assert attractiveness(1, bias) == pytest.approx(0.4)
    assert attractiveness(0, BiasModel((1.0,), 0.3, 0)) == 0.3
    with pytest.raises(ValueError):
        attractiveness(3, bias)
    with pytest.raises(ValueError):
        attractiveness(-1, bias)


def test_bias_model_validation():
    with pytest.raises(ValueError):
        BiasModel((0.5, 0.9))
    with pytest.raises(ValueError):
        BiasModel((1.2,))
    with pytest.raises(ValueError):
        BiasModel((1.0,), epsilon=1.0)
    assert BiasModel.pbm(3).propensity == (1.0, 0.5, 1 / 3)


def test_bias_json_round_trip(tmp_path):
    bias = BiasModel.pbm(7, max_grade=4, epsilon=0.05, power=1.5)
    save_bias(tmp_path / "b.json", bias)
    assert load_bias(tmp_path / "b.json") == bias


def test_simulate_session_extremes():
    rng = np.random.default_rng(0)
    assert simulate_session([2, 1, 0], BiasModel((0.0, 0.0, 0.0)), rng).tolist() == [0, 0, 0]
    assert simulate_session([2, 2, 2], BiasModel((1.0, 1.0, 1.0), 0.0), rng).tolist() == [1, 1, 1]
    with pytest.raises(ValueError):
        simulate_session([0, 0, 0, 0], BiasModel((1.0, 1.0, 1.0)), rng)


def test_monte_carlo_ctr_grade_zero():
    bias = BiasModel((1.0,), 0.1, 2)
    rng = np.random.default_rng(7)
    clicks = sum(int(simulate_session([0], bias, rng)[0]) for _ in range(100_000))
    assert abs(clicks / 100_000 - 0.1) < 0.01


@settings(max_examples=5)
@given(st.integers(2, 6), st.floats(0.0, 0.5), st.floats(0.3, 2.0), st.integers(0, 2**32 - 1))
def test_per_rank_ctr_within_three_se(depth, eps, power, seed):
    bias = BiasModel.pbm(depth, max_grade=2, epsilon=eps, power=power)
    rng = np.random.default_rng(seed)
    n = 100_000
    grades = rng.integers(0, 3, size=(n, depth))
    probs = np.array(bias.propensity) * (eps + (1 - eps) * (2.0 ** grades - 1) / 3.0)
    clicks = (rng.random((n, depth)) < probs)
    # closed form: propensity(r) * E[attractiveness] with uniform grades
    expected = np.array(bias.propensity) * np.mean([attractiveness(g, bias) for g in range(3)])
    se = np.sqrt(expected * (1 - expected) / n)
    assert np.all(np.abs(clicks.mean(axis=0) - expected) <= 3 * se + 1e-12)


def test_per_rank_ctr_via_simulate_session():
    bias = BiasModel.pbm(4, max_grade=2, epsilon=0.1)
    rng = np.random.default_rng(3)
    n = 100_000
    grades = rng.integers(0, 3, size=(n, 4))
    clicks = np.array([simulate_session(g, bias, rng) for g in grades])
    expected = np.array(bias.propensity) * np.mean([attractiveness(g, bias) for g in range(3)])
    se = np.sqrt(expected * (1 - expected) / n)
    assert np.all(np.abs(clicks.mean(axis=0) - expected) <= 3 * se)


def test_clicks_independent_of_other_ranks():
    bias = BiasModel.pbm(3, max_grade=2, epsilon=0.1)
    rng = np.random.default_rng(11)
    n = 60_000
    grades = rng.integers(0, 3, size=(n, 3))
    clicks = np.array([simulate_session(g, bias, rng) for g in grades])
    for r in range(3):
        for other in range(3):
            if other == r:
                continue
            table = np.zeros((2, 3))
            np.add.at(table, (clicks[:, r], grades[:, other]), 1)
            assert chi2_contingency(table)[1] > 0.01


def _lists(vocab_size=30, n=4, m=6, seed=0):
    rng = np.random.default_rng(seed)
    out = []
    for i in range(n):
        q = tuple(int(t) for t in rng.integers(5, vocab_size, size=2))
        docs = [(f"d{i}_{j}", tuple(int(t) for t in rng.integers(5, vocab_size, size=rng.integers(2, 8))))
                for j in range(m)]
        out.append(LabeledList(f"q{i}", TokenSequence(q), [(d, TokenSequence(s)) for d, s in docs],
                               tuple(int(g) for g in rng.integers(0, 3, size=m)), 2))
    return out


def test_one_query_one_session():
    lists = _lists(n=1)
    log = generate_click_log(lists, None, SimConfig(1, 4, 0), BiasModel.pbm(4))
    assert len(log.sessions) == 1
    assert log.sessions[0].ranks == (1, 2, 3, 4)


def test_generation_deterministic():
    lists = _lists()
    cfg, bias = SimConfig(5, 6, 42), BiasModel.pbm(6)
    a = [session_to_json(s) for s in generate_click_log(lists, None, cfg, bias).sessions]
    b = [session_to_json(s) for s in generate_click_log(list(reversed(lists)), None, cfg, bias).sessions]
    assert a == b
    c = [session_to_json(s) for s in generate_click_log(lists, None, SimConfig(5, 6, 43), bias).sessions]
    assert a != c


def test_impression_order_is_bm25_sort():
    lists = _lists(n=3, m=8, seed=5)
    stats = CorpusStats.build(seq for lst in lists for _, seq in lst.docs)
    log = generate_click_log(lists, bm25_ranker(lists), SimConfig(1, 5, 0), BiasModel.pbm(5))
    for lst, s in zip(lists, log.sessions):
        scores = [bm25(lst.query, seq, stats) for _, seq in lst.docs]
        # independent sort: score descending, docid ascending
        expected = sorted(range(len(lst)), key=lambda i: (-scores[i], lst.docs[i][0]))[:5]
        assert [d for d, _ in s.docs] == [lst.docs[i][0] for i in expected]


def test_empty_query_skipped():
    lists = _lists(n=2)
    empty = LabeledList("q_empty", lists[0].query, [], (), 2)
    log = generate_click_log(lists + [empty], None, SimConfig(2, 6, 0), BiasModel.pbm(6))
    assert log.skipped_queries == 1
    assert len(log.sessions) == 4
