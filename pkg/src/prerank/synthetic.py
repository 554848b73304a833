"""Synthetic corpora for desk-scale experiments.

* :func:`markov_sentences` draws text from a sparse first-order Markov chain,
  so masked tokens are predictable from their neighbours.
* :func:`topic_corpus` builds graded query lists where relevance means
  sharing the query's topic.  Exact query-term overlap is only weakly tied to
  relevance: some irrelevant documents stuff the query terms, so lexical
  rankers are imperfect and click data carries extra signal.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .corpus import LabeledList, Vocab, build_vocab, tokenize


def markov_sentences(n: int, vocab_size: int = 200, length: int = 16, branching: int = 3,
                     seed: int = 0) -> list[str]:
    """``n`` sentences over words ``w0..w{vocab_size-1}``; each word has ``branching`` likely successors."""
    rng = np.random.default_rng(seed)
    succ = np.stack([rng.choice(vocab_size, size=branching, replace=False) for _ in range(vocab_size)])
    probs = rng.dirichlet(np.ones(branching) * 2.0, size=vocab_size)
    out = []
    for _ in range(n):
        w = int(rng.integers(vocab_size))
        words = [w]
        for _ in range(length - 1):
            w = int(succ[w, rng.choice(branching, p=probs[w])])
            words.append(w)
        out.append(" ".join(f"w{i}" for i in words))
    return out


@dataclass(frozen=True)
class TopicSpec:
    n_queries: int = 500
    docs_per_query: int = 20
    n_topics: int = 20
    words_per_topic: int = 8
    n_filler: int = 40
    doc_len: tuple[int, int] = (10, 16)
    query_len: tuple[int, int] = (1, 4)
    spam_rate: float = 0.4
    # chance that a relevant (grade 2 / grade 1) document repeats each query term
    overlap_rate: tuple[float, float] = (0.5, 0.3)
    seed: int = 0


@dataclass(frozen=True)
class RawList:
    qid: str
    query: str
    docs: tuple[tuple[str, str], ...]
    labels: tuple[int, ...]


@dataclass
class TopicCorpus:
    spec: TopicSpec
    lists: list[RawList]

    def texts(self):
        for r in self.lists:
            yield r.query
            for _, t in r.docs:
                yield t

    def vocab(self) -> Vocab:
        return build_vocab(self.texts())

    def labeled(self, vocab: Vocab) -> list[LabeledList]:
        return [LabeledList(r.qid, tokenize(r.query, vocab), [(d, tokenize(t, vocab)) for d, t in r.docs],
                            r.labels, 2) for r in self.lists]


def _topic_word(t: int, i: int) -> str:
    return f"t{t}w{i}"


def topic_corpus(spec: TopicSpec = TopicSpec()) -> TopicCorpus:
    rng = np.random.default_rng(spec.seed)
    T, W = spec.n_topics, spec.words_per_topic
    filler = [f"f{i}" for i in range(spec.n_filler)]

    def words(topic: int, k: int) -> list[str]:
        return [_topic_word(topic, int(i)) for i in rng.integers(W, size=k)]

    def other_topic(topic: int) -> int:
        return int((topic + rng.integers(1, T)) % T)

    lists = []
    for q in range(spec.n_queries):
        topic = int(rng.integers(T))
        qlen = int(rng.integers(spec.query_len[0], spec.query_len[1] + 1))
        qwords = [_topic_word(topic, int(i)) for i in rng.choice(W, size=min(qlen, W), replace=False)]
        m = spec.docs_per_query
        n2 = int(rng.integers(1, 4))
        n1 = int(rng.integers(2, 6))
        labels = [2] * n2 + [1] * n1 + [0] * (m - n2 - n1)
        docs = []
        for j, g in enumerate(labels):
            n = int(rng.integers(spec.doc_len[0], spec.doc_len[1] + 1))
            if g == 2:
                k = int(round(0.6 * n))
                body = words(topic, k) + list(rng.choice(filler, size=n - k))
                body += [w for w in qwords if rng.random() < spec.overlap_rate[0]]
            elif g == 1:
                k = int(round(0.3 * n))
                body = words(topic, k) + words(other_topic(topic), 2) + list(rng.choice(filler, size=n - k - 2))
                body += [w for w in qwords if rng.random() < spec.overlap_rate[1]]
            else:
                k = int(round(0.5 * n))
                body = words(other_topic(topic), k) + list(rng.choice(filler, size=n - k))
                if rng.random() < spec.spam_rate:
                    body += qwords * 2
            body = [body[i] for i in rng.permutation(len(body))]
            docs.append((f"q{q}d{j}", " ".join(body)))
        order = rng.permutation(m)
        lists.append(RawList(f"q{q}", " ".join(qwords), tuple(docs[i] for i in order),
                             tuple(labels[i] for i in order)))
    return TopicCorpus(spec, lists)


def with_label_feature(lists: list[LabeledList], noise: float, seed: int = 0) -> list[LabeledList]:
    """Append a column ``label + N(0, noise^2)`` to each list's feature matrix."""
    rng = np.random.default_rng(seed)
    out = []
    for lst in lists:
        col = np.asarray(lst.labels, dtype=np.float64) + rng.normal(0.0, noise, size=len(lst))
        base = lst.features if lst.features is not None else np.zeros((len(lst), 0))
        out.append(LabeledList(lst.qid, lst.query, lst.docs, lst.labels, lst.max_grade,
                               np.hstack([base, col[:, None]])))
    return out
