"""Handcrafted query-document features (the wide input) and query-level normalisation.

The native schema has 21 columns; see :data:`NATIVE_SCHEMA` for the order.
The first twenty are lexical statistics, the last is an embedding cosine
that by default uses the encoder's token-embedding table.
"""

from __future__ import annotations

import json
import math
from collections import Counter
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .corpus import TokenSequence

SCHEMA_ID = "prerank.native21"
SCHEMA_VERSION = 1

BM25_K1 = 1.2
BM25_B = 0.75
DIRICHLET_MU = 2000.0
JM_LAMBDA = 0.1
LM_EPS = 1e-10

# (name, formula id) in column order
NATIVE_SCHEMA: tuple[tuple[str, str], ...] = (
    ("query_length", "len(q)"),
    ("doc_length", "len(d)"),
    ("covered_query_term_ratio", "|{t in q : tf(t,d) > 0}| / |set(q)|"),
    ("tf_sum", "sum_t tf(t,d)"),
    ("tf_min", "min_t tf(t,d)"),
    ("tf_max", "max_t tf(t,d)"),
    ("tf_mean", "mean_t tf(t,d)"),
    ("tf_sum_over_doclen", "sum_t tf(t,d) / len(d)"),
    ("idf_sum", "sum_t ln(N / (1 + df))"),
    ("idf_min", "min_t ln(N / (1 + df))"),
    ("idf_max", "max_t ln(N / (1 + df))"),
    ("idf_mean", "mean_t ln(N / (1 + df))"),
    ("tfidf_sum", "sum_t tf(t,d) * idf(t)"),
    ("tfidf_cosine", "cos(tf*idf(q), tf*idf(d))"),
    ("bm25", "bm25(k1=1.2, b=0.75), idf floored at 0"),
    ("lm_dirichlet", "sum ln((tf + mu p(t|C)) / (len(d) + mu)), mu=2000"),
    ("lm_jelinek_mercer", "sum ln((1-l) tf/len(d) + l p(t|C)), l=0.1"),
    ("bigram_overlap", "ngram_overlap(n=2)"),
    ("trigram_overlap", "ngram_overlap(n=3)"),
    ("unigram_jaccard", "|set(q) & set(d)| / |set(q) | set(d)|"),
    ("embedding_cosine", "max(0, cos(mean E[q], mean E[d]))"),
)
N_NATIVE = len(NATIVE_SCHEMA)
LETOR_WIDTH = 46


def schema_descriptor() -> str:
    """Versioned JSON descriptor of the native schema (1-based indices, as in LETOR files)."""
    feats = [{"index": i, "name": n, "formula": f} for i, (n, f) in enumerate(NATIVE_SCHEMA, 1)]
    return json.dumps({"schema_id": SCHEMA_ID, "version": SCHEMA_VERSION, "features": feats}, indent=2)


@dataclass(frozen=True)
class CorpusStats:
    N: int
    df: dict[int, int]
    avgdl: float
    cf: dict[int, int]
    total_terms: int

    @classmethod
    def build(cls, docs: Iterable[TokenSequence | Sequence[int]]) -> "CorpusStats":
        df: Counter = Counter()
        cf: Counter = Counter()
        n, total = 0, 0
        for d in docs:
            ids = d.ids if isinstance(d, TokenSequence) else tuple(d)
            n += 1
            total += len(ids)
            cf.update(ids)
            df.update(set(ids))
        return cls(N=n, df=dict(df), avgdl=total / n if n else 0.0, cf=dict(cf), total_terms=total)

    def idf(self, term: int) -> float:
        """tf-idf weight ``ln(N / (1 + df))``; 0 for an empty collection."""
        if self.N == 0:
            return 0.0
        return math.log(self.N / (1 + self.df.get(term, 0)))

    def p_collection(self, term: int) -> float:
        return self.cf.get(term, 0) / self.total_terms if self.total_terms else 0.0


@dataclass(frozen=True)
class FeatureVector:
    values: np.ndarray
    schema_id: str = SCHEMA_ID

    def __len__(self) -> int:
        return len(self.values)


def _ids(x: TokenSequence | Sequence[int]) -> tuple[int, ...]:
    return x.ids if isinstance(x, TokenSequence) else tuple(x)


def bm25(q, d, stats: CorpusStats, k1: float = BM25_K1, b: float = BM25_B) -> float:
    """Okapi BM25 summed over query tokens, idf floored at zero."""
    if stats.N < 1:
        raise ValueError("bm25 needs a non-empty collection")
    qi, di = _ids(q), _ids(d)
    tf = Counter(di)
    norm = k1 * (1.0 - b + b * len(di) / stats.avgdl) if stats.avgdl > 0 else k1
    score = 0.0
    for t in qi:
        f = tf.get(t, 0)
        if f == 0:
            continue
        df = stats.df.get(t, 0)
        idf = max(0.0, math.log((stats.N - df + 0.5) / (df + 0.5)))
        score += idf * f * (k1 + 1.0) / (f + norm)
    return score


def tfidf_cosine(q, d, stats: CorpusStats) -> float:
    tq, td = Counter(_ids(q)), Counter(_ids(d))
    wq = {t: c * stats.idf(t) for t, c in tq.items()}
    wd = {t: c * stats.idf(t) for t, c in td.items()}
    nq = math.sqrt(sum(v * v for v in wq.values()))
    nd = math.sqrt(sum(v * v for v in wd.values()))
    if nq == 0.0 or nd == 0.0:
        return 0.0
    dot = sum(v * wd[t] for t, v in wq.items() if t in wd)
    return min(1.0, max(0.0, dot / (nq * nd)))


def _ngrams(ids: tuple[int, ...], n: int) -> set[tuple[int, ...]]:
    return {ids[i:i + n] for i in range(len(ids) - n + 1)}


def ngram_overlap(q, d, n: int) -> float:
    """Fraction of the query's distinct n-grams that occur in the document."""
    if n < 1:
        raise ValueError("n must be >= 1")
    qg = _ngrams(_ids(q), n)
    if not qg:
        return 0.0
    return len(qg & _ngrams(_ids(d), n)) / len(qg)


def embedding_cosine(q, d, table: np.ndarray) -> float:
    """Cosine of mean-pooled token embeddings, clipped to [0, 1] like the other similarity features."""
    qi, di = _ids(q), _ids(d)
    if not qi or not di:
        return 0.0
    if table.ndim != 2 or table.shape[1] < 1:
        raise ValueError("embedding table must be 2-D with dimension >= 1")
    u, v = table[list(qi)].mean(axis=0), table[list(di)].mean(axis=0)
    nu, nv = np.linalg.norm(u), np.linalg.norm(v)
    if nu == 0.0 or nv == 0.0:
        return 0.0
    return float(np.clip(u @ v / (nu * nv), 0.0, 1.0))


def lm_dirichlet(q, d, stats: CorpusStats, mu: float = DIRICHLET_MU) -> float:
    di = _ids(d)
    tf = Counter(di)
    total = 0.0
    for t in _ids(q):
        p = (tf.get(t, 0) + mu * stats.p_collection(t)) / (len(di) + mu)
        total += math.log(p) if p > 0 else math.log(LM_EPS)
    return total


def lm_jelinek_mercer(q, d, stats: CorpusStats, lam: float = JM_LAMBDA) -> float:
    di = _ids(d)
    tf = Counter(di)
    total = 0.0
    for t in _ids(q):
        p_doc = tf.get(t, 0) / len(di) if di else 0.0
        p = (1.0 - lam) * p_doc + lam * stats.p_collection(t)
        total += math.log(p) if p > 0 else math.log(LM_EPS)
    return total


def extract_features(q, d, stats: CorpusStats, table: np.ndarray) -> FeatureVector:
    qi, di = _ids(q), _ids(d)
    tf = Counter(di)
    terms = sorted(set(qi))
    tfs = [tf.get(t, 0) for t in terms]
    idfs = [stats.idf(t) for t in terms]
    qset, dset = set(qi), set(di)
    union = qset | dset

    def agg(xs):
        return (sum(xs), min(xs), max(xs), sum(xs) / len(xs)) if xs else (0.0, 0.0, 0.0, 0.0)

    values = [
        len(qi),
        len(di),
        sum(1 for f in tfs if f > 0) / len(terms) if terms else 0.0,
        *agg(tfs),
        sum(tfs) / len(di) if di else 0.0,
        *agg(idfs),
        sum(f * w for f, w in zip(tfs, idfs)),
        tfidf_cosine(qi, di, stats),
        bm25(qi, di, stats) if stats.N else 0.0,
        lm_dirichlet(qi, di, stats),
        lm_jelinek_mercer(qi, di, stats),
        ngram_overlap(qi, di, 2),
        ngram_overlap(qi, di, 3),
        len(qset & dset) / len(union) if union else 0.0,
        embedding_cosine(qi, di, table),
    ]
    return FeatureVector(np.asarray(values, dtype=np.float64))


def feature_matrix(q, docs: Sequence, stats: CorpusStats, table: np.ndarray) -> np.ndarray:
    """Stack native feature vectors for one query's documents (``m x 21``)."""
    rows = [extract_features(q, d, stats, table).values for d in docs]
    return np.vstack(rows) if rows else np.zeros((0, N_NATIVE))


def normalize_per_query(m: np.ndarray) -> np.ndarray:
    """Min-max scale each column to [0, 1] within the query; constant columns become 0."""
    m = np.asarray(m, dtype=np.float64)
    if m.ndim != 2 or m.shape[0] < 1:
        raise ValueError("normalize_per_query needs a matrix with at least one row")
    lo, hi = m.min(axis=0), m.max(axis=0)
    span = hi - lo
    out = np.zeros_like(m)
    ok = span > 0
    out[:, ok] = (m[:, ok] - lo[ok]) / span[ok]
    return out
