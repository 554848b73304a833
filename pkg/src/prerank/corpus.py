"""Vocabulary, tokenization, pair encoding and the on-disk formats.

Formats handled here:

* LETOR lines: ``<label> qid:<qid> <i>:<v> ... #docid = <docid>``
* click log TSV: ``qid<TAB>query<TAB>docid[<TAB>url]``
* TREC run lines: ``qid Q0 docid rank score tag``
* native session JSONL: ``{"qid", "query", "docs": [{"docid", "text", "rank", "clicked"}]}``
* native labeled JSONL: ``{"qid", "query", "max_grade", "docs": [{"docid", "text", "label"}]}``
"""

from __future__ import annotations

import json
import math
import re
import unicodedata
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, NamedTuple, Sequence

import numpy as np

PAD, UNK, CLS, SEP, MASK = 0, 1, 2, 3, 4
SPECIAL_TOKENS = ("[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]")
N_SPECIAL = len(SPECIAL_TOKENS)


class ParseError(ValueError):
    """A malformed record; ``offset`` is the byte offset of the offending field."""

    def __init__(self, message: str, offset: int = 0):
        super().__init__(f"{message} (at byte {offset})")
        self.reason = message
        self.offset = offset


# --- vocabulary and tokens --------------------------------------------------------

@dataclass(frozen=True)
class Vocab:
    tokens: tuple[str, ...]
    index: dict[str, int] = field(default=None, compare=False, repr=False)

    def __post_init__(self):
        if tuple(self.tokens[:N_SPECIAL]) != SPECIAL_TOKENS:
            raise ValueError("vocab must start with the special tokens in fixed order")
        object.__setattr__(self, "index", {t: i for i, t in enumerate(self.tokens)})
        if len(self.index) != len(self.tokens):
            raise ValueError("vocab tokens must be unique")

    @property
    def size(self) -> int:
        return len(self.tokens)

    def __len__(self) -> int:
        return len(self.tokens)

    def id(self, token: str) -> int:
        return self.index.get(token, UNK)

    def token(self, i: int) -> str:
        return self.tokens[i]

    def to_json(self) -> str:
        return json.dumps({"tokens": list(self.tokens[N_SPECIAL:])}, ensure_ascii=False)

    @classmethod
    def from_json(cls, text: str) -> "Vocab":
        return cls(SPECIAL_TOKENS + tuple(json.loads(text)["tokens"]))

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.to_json() + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "Vocab":
        return cls.from_json(Path(path).read_text(encoding="utf-8"))


def _is_punct(ch: str) -> bool:
    return unicodedata.category(ch).startswith("P")


def split_tokens(text: str) -> list[str]:
    """Lowercase, split on whitespace, strip edge punctuation, drop empties."""
    out = []
    for raw in text.lower().split():
        lo, hi = 0, len(raw)
        while lo < hi and _is_punct(raw[lo]):
            lo += 1
        while hi > lo and _is_punct(raw[hi - 1]):
            hi -= 1
        if lo < hi:
            out.append(raw[lo:hi])
    return out


def build_vocab(texts: Iterable[str], min_freq: int = 1, max_size: int | None = None) -> Vocab:
    """Frequency-ranked vocabulary; ties broken lexicographically.

    ``max_size`` bounds the total size including the five special tokens.
    """
    if min_freq < 1:
        raise ValueError("min_freq must be >= 1")
    counts = Counter()
    for text in texts:
        counts.update(split_tokens(text))
    ranked = sorted((t for t, c in counts.items() if c >= min_freq), key=lambda t: (-counts[t], t))
    if max_size is not None:
        ranked = ranked[:max(0, max_size - N_SPECIAL)]
    return Vocab(SPECIAL_TOKENS + tuple(ranked))


@dataclass(frozen=True)
class TokenSequence:
    ids: tuple[int, ...]
    source_text: str = ""

    def __len__(self) -> int:
        return len(self.ids)


def tokenize(text: str, vocab: Vocab) -> TokenSequence:
    return TokenSequence(tuple(vocab.id(t) for t in split_tokens(text)), text)


def detokenize(seq: TokenSequence | Sequence[int], vocab: Vocab) -> list[str]:
    ids = seq.ids if isinstance(seq, TokenSequence) else seq
    return [vocab.token(i) for i in ids]


@dataclass(frozen=True)
class PairInput:
    ids: tuple[int, ...]
    segment_ids: tuple[int, ...]
    attention_len: int

    def __len__(self) -> int:
        return len(self.ids)


def encode_pair(q: TokenSequence, d: TokenSequence, max_len: int) -> PairInput:
    """Lay out ``[CLS] q [SEP] d [SEP]``, trimming the document tail first."""
    if max_len < 5:
        raise ValueError("max_len must be >= 5")
    budget = max_len - 3
    qi, di = list(q.ids), list(d.ids)
    if len(qi) + len(di) > budget:
        di = di[:max(0, budget - len(qi))]
        qi = qi[:budget]
    ids = [CLS, *qi, SEP, *di, SEP]
    segs = [0] * (len(qi) + 2) + [1] * (len(di) + 1)
    return PairInput(tuple(ids), tuple(segs), len(ids))


# --- in-memory datasets -------------------------------------------------------------

@dataclass
class ClickSession:
    qid: str
    query: TokenSequence
    docs: list[tuple[str, TokenSequence]]
    clicks: tuple[int, ...]
    ranks: tuple[int, ...]

    def __post_init__(self):
        self.clicks = tuple(int(c) for c in self.clicks)
        self.ranks = tuple(int(r) for r in self.ranks)
        m = len(self.docs)
        if len(self.clicks) != m or len(self.ranks) != m:
            raise ValueError(f"session {self.qid}: docs/clicks/ranks lengths differ")
        if any(c not in (0, 1) for c in self.clicks):
            raise ValueError(f"session {self.qid}: clicks must be binary")

    def __len__(self) -> int:
        return len(self.docs)


@dataclass
class LabeledList:
    qid: str
    query: TokenSequence
    docs: list[tuple[str, TokenSequence]]
    labels: tuple[int, ...]
    max_grade: int
    features: np.ndarray | None = None

    def __post_init__(self):
        self.labels = tuple(int(x) for x in self.labels)
        if len(self.labels) != len(self.docs):
            raise ValueError(f"list {self.qid}: {len(self.docs)} docs but {len(self.labels)} labels")
        if any(not 0 <= x <= self.max_grade for x in self.labels):
            raise ValueError(f"list {self.qid}: labels outside 0..{self.max_grade}")
        if self.features is not None:
            self.features = np.asarray(self.features, dtype=np.float64)
            if self.features.ndim != 2 or self.features.shape[0] != len(self.docs):
                raise ValueError(f"list {self.qid}: feature matrix shape {self.features.shape} "
                                 f"does not match {len(self.docs)} docs")

    def __len__(self) -> int:
        return len(self.docs)

    @property
    def docids(self) -> list[str]:
        return [d for d, _ in self.docs]


# --- LETOR ---------------------------------------------------------------------------

_DOCID = re.compile(r"\bdocid\s*=\s*(\S+)")


class LetorRecord(NamedTuple):
    label: int
    qid: str
    features: dict[int, float]
    docid: str | None = None


def _byte_offset(line: str, pos: int) -> int:
    return len(line[:pos].encode("utf-8"))


def _fields(body: str) -> Iterator[tuple[int, str]]:
    pos = 0
    for tok in body.split():
        pos = body.index(tok, pos)
        yield pos, tok
        pos += len(tok)


def parse_labeled_line(line: str) -> LetorRecord:
    line = line.rstrip("\r\n")
    if not line.strip():
        raise ParseError("empty line", 0)
    body, hash_, comment = line.partition("#")
    fields = list(_fields(body))
    if not fields:
        raise ParseError("missing label", 0)
    pos, tok = fields[0]
    if tok.startswith("qid:"):
        raise ParseError("missing label", _byte_offset(line, pos))
    try:
        label = int(tok)
    except ValueError:
        raise ParseError(f"bad label {tok!r}", _byte_offset(line, pos)) from None
    if len(fields) < 2 or not fields[1][1].startswith("qid:") or len(fields[1][1]) == 4:
        at = fields[1][0] if len(fields) > 1 else len(body)
        raise ParseError("missing qid", _byte_offset(line, at))
    qid = fields[1][1][4:]
    feats: dict[int, float] = {}
    for pos, tok in fields[2:]:
        key, colon, val = tok.partition(":")
        try:
            if not colon:
                raise ValueError
            idx, value = int(key), float(val)
        except ValueError:
            raise ParseError(f"bad feature {tok!r}", _byte_offset(line, pos)) from None
        if idx < 1:
            raise ParseError(f"feature index must be >= 1, got {idx}", _byte_offset(line, pos))
        if idx in feats:
            raise ParseError(f"duplicate feature index {idx}", _byte_offset(line, pos))
        feats[idx] = value
    docid = None
    if hash_:
        m = _DOCID.search(comment)
        if m:
            docid = m.group(1)
    return LetorRecord(label, qid, feats, docid)


def serialize_labeled_line(rec: LetorRecord) -> str:
    parts = [str(int(rec.label)), f"qid:{rec.qid}"]
    parts += [f"{i}:{float(v)!r}" for i, v in sorted(rec.features.items())]
    line = " ".join(parts)
    if rec.docid is not None:
        line += f" #docid = {rec.docid}"
    return line


def read_letor(path: str | Path) -> list[LetorRecord]:
    out = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                out.append(parse_labeled_line(line))
            except ParseError as e:
                raise ParseError(f"{path}:{lineno}: {e.reason}", e.offset) from None
    return out


def write_letor(path: str | Path, records: Iterable[LetorRecord]) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for r in records:
            fh.write(serialize_labeled_line(r) + "\n")


def letor_feature_matrix(records: Sequence[LetorRecord], width: int | None = None) -> np.ndarray:
    """Dense ``m x width`` matrix from sparse 1-based feature maps (missing -> 0)."""
    if width is None:
        width = max((max(r.features, default=0) for r in records), default=0)
    mat = np.zeros((len(records), width))
    for row, r in enumerate(records):
        for i, v in r.features.items():
            if i > width:
                raise ValueError(f"feature index {i} exceeds width {width}")
            mat[row, i - 1] = v
    return mat


# --- click TSV and run files -----------------------------------------------------------

class ClickRecord(NamedTuple):
    qid: str
    query: str
    docid: str


def parse_click_tsv(line: str) -> ClickRecord:
    cols = line.rstrip("\r\n").split("\t")
    if len(cols) < 3:
        raise ParseError(f"expected >= 3 tab-separated columns, got {len(cols)}",
                         _byte_offset(line, len(line.rstrip("\r\n"))))
    return ClickRecord(cols[0], cols[1], cols[2])


def serialize_click_tsv(rec: ClickRecord, url: str | None = None) -> str:
    cols = [rec.qid, rec.query, rec.docid] + ([url] if url is not None else [])
    if any("\t" in c or "\n" in c for c in cols):
        raise ValueError("click TSV fields may not contain tabs or newlines")
    return "\t".join(cols)


class RunEntry(NamedTuple):
    qid: str
    docid: str
    rank: int
    score: float
    tag: str = "prerank"


def parse_run_line(line: str) -> RunEntry:
    text = line.rstrip("\r\n")
    fields = list(_fields(text))
    if len(fields) != 6:
        raise ParseError(f"expected 6 fields, got {len(fields)}", _byte_offset(text, len(text)))
    (_, qid), _, (_, docid), (rpos, rank_s), (spos, score_s), (_, tag) = fields
    try:
        rank = int(rank_s)
    except ValueError:
        raise ParseError(f"non-numeric rank {rank_s!r}", _byte_offset(text, rpos)) from None
    if rank < 1:
        raise ParseError("rank must be ≥1", _byte_offset(text, rpos))
    try:
        score = float(score_s)
    except ValueError:
        raise ParseError(f"non-numeric score {score_s!r}", _byte_offset(text, spos)) from None
    if not math.isfinite(score):
        raise ParseError(f"non-finite score {score_s!r}", _byte_offset(text, spos))
    return RunEntry(qid, docid, rank, score, tag)


def serialize_run_line(e: RunEntry) -> str:
    return f"{e.qid} Q0 {e.docid} {int(e.rank)} {float(e.score)!r} {e.tag}"


def read_run(path: str | Path) -> dict[str, list[RunEntry]]:
    """Run file grouped by qid, each group sorted by rank."""
    groups: dict[str, list[RunEntry]] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                e = parse_run_line(line)
            except ParseError as err:
                raise ParseError(f"{path}:{lineno}: {err.reason}", err.offset) from None
            groups.setdefault(e.qid, []).append(e)
    for entries in groups.values():
        entries.sort(key=lambda e: e.rank)
    return groups


def write_run(path: str | Path, entries: Iterable[RunEntry]) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for e in entries:
            fh.write(serialize_run_line(e) + "\n")


def read_click_tsv(path: str | Path) -> list[ClickRecord]:
    out = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                out.append(parse_click_tsv(line))
            except ParseError as err:
                raise ParseError(f"{path}:{lineno}: {err.reason}", err.offset) from None
    return out


def read_text_table(path: str | Path) -> dict[str, str]:
    """``id<TAB>text`` sidecar mapping query or document ids to raw text."""
    table = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            key, tab, text = line.rstrip("\r\n").partition("\t")
            if not tab:
                raise ParseError(f"{path}:{lineno}: expected id<TAB>text", len(line.encode()))
            table[key] = text
    return table


# --- native JSONL formats ------------------------------------------------------------

def _read_jsonl(path: str | Path) -> Iterator[tuple[int, dict]]:
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if line.strip():
                try:
                    yield lineno, json.loads(line)
                except json.JSONDecodeError as e:
                    raise ParseError(f"{path}:{lineno}: invalid JSON: {e.msg}", e.pos) from None


def session_texts(path: str | Path) -> Iterator[str]:
    for _, obj in _read_jsonl(path):
        yield obj["query"]
        for d in obj["docs"]:
            yield d.get("text", "")


def read_sessions(path: str | Path, vocab: Vocab, texts: dict[str, str] | None = None) -> list[ClickSession]:
    out = []
    for lineno, obj in _read_jsonl(path):
        try:
            docs = obj["docs"]
            out.append(ClickSession(
                qid=str(obj["qid"]),
                query=tokenize(obj["query"], vocab),
                docs=[(str(d["docid"]), tokenize(d.get("text", (texts or {}).get(str(d["docid"]), "")), vocab))
                      for d in docs],
                clicks=tuple(int(bool(d["clicked"])) for d in docs),
                ranks=tuple(int(d["rank"]) for d in docs),
            ))
        except (KeyError, TypeError, ValueError) as e:
            raise ParseError(f"{path}:{lineno}: bad session record: {e}", 0) from None
    return out


def session_to_json(s: ClickSession) -> str:
    obj = {"qid": s.qid, "query": s.query.source_text,
           "docs": [{"docid": docid, "text": seq.source_text, "rank": r, "clicked": bool(c)}
                    for (docid, seq), r, c in zip(s.docs, s.ranks, s.clicks)]}
    return json.dumps(obj, ensure_ascii=False, sort_keys=True)


def write_sessions(path: str | Path, sessions: Iterable[ClickSession]) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for s in sessions:
            fh.write(session_to_json(s) + "\n")


def labeled_texts(path: str | Path) -> Iterator[str]:
    for _, obj in _read_jsonl(path):
        yield obj["query"]
        for d in obj["docs"]:
            yield d.get("text", "")


def read_labeled(path: str | Path, vocab: Vocab) -> list[LabeledList]:
    out = []
    for lineno, obj in _read_jsonl(path):
        try:
            docs = obj["docs"]
            labels = [int(d["label"]) for d in docs]
            out.append(LabeledList(
                qid=str(obj["qid"]),
                query=tokenize(obj["query"], vocab),
                docs=[(str(d["docid"]), tokenize(d.get("text", ""), vocab)) for d in docs],
                labels=tuple(labels),
                max_grade=int(obj.get("max_grade", max(labels, default=0))),
            ))
        except (KeyError, TypeError, ValueError) as e:
            raise ParseError(f"{path}:{lineno}: bad labeled record: {e}", 0) from None
    return out


def labeled_to_json(lst: LabeledList) -> str:
    obj = {"qid": lst.qid, "query": lst.query.source_text, "max_grade": lst.max_grade,
           "docs": [{"docid": docid, "text": seq.source_text, "label": lab}
                    for (docid, seq), lab in zip(lst.docs, lst.labels)]}
    return json.dumps(obj, ensure_ascii=False, sort_keys=True)


def write_labeled(path: str | Path, lists: Iterable[LabeledList]) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for lst in lists:
            fh.write(labeled_to_json(lst) + "\n")


def attach_letor_features(lists: Sequence[LabeledList], records: Sequence[LetorRecord],
                          width: int | None = None) -> list[LabeledList]:
    """Join LETOR feature rows onto labeled lists by (qid, docid)."""
    if width is None:
        width = max((max(r.features, default=0) for r in records), default=0)
    by_key = {(r.qid, r.docid): r for r in records}
    out = []
    for lst in lists:
        rows = []
        for docid in lst.docids:
            rec = by_key.get((lst.qid, docid))
            if rec is None:
                raise KeyError(f"no feature row for qid={lst.qid} docid={docid}")
            rows.append(rec)
        out.append(LabeledList(lst.qid, lst.query, lst.docs, lst.labels, lst.max_grade,
                               letor_feature_matrix(rows, width)))
    return out


def labeled_from_letor(records: Sequence[LetorRecord], vocab: Vocab,
                       texts: dict[str, str] | None = None,
                       max_grade: int | None = None) -> list[LabeledList]:
    """Group LETOR records by qid (first-appearance order) into labeled lists.

    Text comes from the optional sidecar table; documents without a docid get
    positional ids ``<qid>-<n>``.
    """
    texts = texts or {}
    width = max((max(r.features, default=0) for r in records), default=0)
    groups: dict[str, list[LetorRecord]] = {}
    for r in records:
        groups.setdefault(r.qid, []).append(r)
    if max_grade is None:
        max_grade = max((r.label for r in records), default=0)
    out = []
    for qid, recs in groups.items():
        docids = [r.docid if r.docid is not None else f"{qid}-{i}" for i, r in enumerate(recs)]
        out.append(LabeledList(
            qid=qid,
            query=tokenize(texts.get(qid, ""), vocab),
            docs=[(d, tokenize(texts.get(d, ""), vocab)) for d in docids],
            labels=tuple(r.label for r in recs),
            max_grade=max_grade,
            features=letor_feature_matrix(recs, width) if width else None,
        ))
    return out
