"""Position-based click simulation from graded relevance labels.

A document at rank ``r`` with grade ``g`` is clicked with probability
``propensity(r) * attractiveness(g)``, independently across positions.
"""

from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .corpus import ClickSession, LabeledList
from .evaluation.metrics import rank_order
from .features import CorpusStats, bm25

log = logging.getLogger(__name__)

Ranker = Callable[[LabeledList], np.ndarray]


@dataclass(frozen=True)
class BiasModel:
    propensity: tuple[float, ...]
    epsilon: float = 0.1
    max_grade: int = 2

    def __post_init__(self):
        object.__setattr__(self, "propensity", tuple(float(p) for p in self.propensity))
        p = np.asarray(self.propensity)
        if p.size == 0 or np.any(p < 0) or np.any(p > 1):
            raise ValueError("propensities must be non-empty and lie in [0, 1]")
        if np.any(np.diff(p) > 0):
            raise ValueError("propensity must be non-increasing in rank")
        if not 0.0 <= self.epsilon < 1.0:
            raise ValueError("epsilon must be in [0, 1)")
        if self.max_grade < 0:
            raise ValueError("max_grade must be >= 0")

    @classmethod
    def pbm(cls, depth: int, max_grade: int = 2, epsilon: float = 0.1, power: float = 1.0) -> "BiasModel":
        """Examination probability ``1 / r**power`` for ranks ``1..depth``."""
        return cls(tuple(1.0 / r ** power for r in range(1, depth + 1)), epsilon, max_grade)

    @property
    def depth(self) -> int:
        return len(self.propensity)

    def to_json(self) -> str:
        return json.dumps({"propensity": list(self.propensity), "epsilon": self.epsilon,
                           "max_grade": self.max_grade}, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "BiasModel":
        obj = json.loads(text)
        return cls(tuple(obj["propensity"]), float(obj["epsilon"]), int(obj["max_grade"]))


@dataclass(frozen=True)
class SimConfig:
    sessions_per_query: int = 10
    depth: int = 20
    seed: int = 0

    def __post_init__(self):
        if self.sessions_per_query < 1 or self.depth < 1:
            raise ValueError("sessions_per_query and depth must be >= 1")


def attractiveness(grade: int, bias: BiasModel) -> float:
    if not 0 <= grade <= bias.max_grade:
        raise ValueError(f"grade {grade} outside 0..{bias.max_grade}")
    if bias.max_grade == 0:
        return bias.epsilon
    return bias.epsilon + (1.0 - bias.epsilon) * (2.0 ** grade - 1.0) / (2.0 ** bias.max_grade - 1.0)


def click_probabilities(grades: Sequence[int], bias: BiasModel) -> np.ndarray:
    if len(grades) > bias.depth:
        raise ValueError(f"{len(grades)} impressions exceed bias model depth {bias.depth}")
    return np.array([bias.propensity[i] * attractiveness(int(g), bias) for i, g in enumerate(grades)])


def simulate_session(grades: Sequence[int], bias: BiasModel, rng: np.random.Generator) -> np.ndarray:
    """Binary clicks for grades listed in impression order (rank 1 first)."""
    probs = click_probabilities(grades, bias)
    return (rng.random(len(probs)) < probs).astype(np.int64)


def query_rng(seed: int, qid: str) -> np.random.Generator:
    """Independent stream per query, so output does not depend on processing order."""
    h = int.from_bytes(hashlib.sha256(qid.encode("utf-8")).digest()[:8], "little")
    return np.random.default_rng([seed & 0xFFFFFFFFFFFFFFFF, h])


def bm25_ranker(dataset: Sequence[LabeledList]) -> Ranker:
    stats = CorpusStats.build(seq for lst in dataset for _, seq in lst.docs)

    def score(lst: LabeledList) -> np.ndarray:
        return np.array([bm25(lst.query, seq, stats) for _, seq in lst.docs])

    return score


def feature_ranker(column: int) -> Ranker:
    """Rank by one (1-based) column of each list's feature matrix."""
    def score(lst: LabeledList) -> np.ndarray:
        if lst.features is None:
            raise ValueError(f"list {lst.qid} has no features to rank by")
        return lst.features[:, column - 1]

    return score


@dataclass
class ClickLog:
    sessions: list[ClickSession] = field(default_factory=list)
    skipped_queries: int = 0


def generate_click_log(dataset: Sequence[LabeledList], ranker: Ranker | None,
                       cfg: SimConfig, bias: BiasModel) -> ClickLog:
    """Simulate ``cfg.sessions_per_query`` sessions per query over the ranker's top ``cfg.depth``."""
    if ranker is None:
        ranker = bm25_ranker(dataset)
    out = ClickLog()
    for lst in sorted(dataset, key=lambda x: x.qid):
        if len(lst) == 0:
            out.skipped_queries += 1
            continue
        order = rank_order(ranker(lst), lst.docids)[:cfg.depth]
        grades = [lst.labels[i] for i in order]
        docs = [lst.docs[i] for i in order]
        ranks = tuple(range(1, len(order) + 1))
        rng = query_rng(cfg.seed, lst.qid)
        for _ in range(cfg.sessions_per_query):
            clicks = simulate_session(grades, bias, rng)
            out.sessions.append(ClickSession(lst.qid, lst.query, list(docs), tuple(clicks), ranks))
    if out.skipped_queries:
        log.warning("skipped %d queries without documents", out.skipped_queries)
    return out


def save_bias(path: str | Path, bias: BiasModel) -> None:
    Path(path).write_text(bias.to_json() + "\n", encoding="utf-8")


def load_bias(path: str | Path) -> BiasModel:
    return BiasModel.from_json(Path(path).read_text(encoding="utf-8"))
