"""Two-phase training: pre-training (masked-token stage, then click stage) and
fine-tuning on graded labels, plus the three training regimes and checkpoints.

All randomness of a step comes from a generator derived from
``(seed, stage, step)``, and the query order of every epoch from
``(seed, stage, epoch)``.  A checkpoint therefore only needs parameters,
optimizer moments and step counters to resume bit-for-bit.
"""

from __future__ import annotations

import csv
import dataclasses
import hashlib
import io
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import AdamState, Tensor
from .corpus import (
    ClickRecord,
    ClickSession,
    LabeledList,
    PairInput,
    RunEntry,
    TokenSequence,
    Vocab,
    encode_pair,
    tokenize,
)
from .encoder import (
    FULL_PROFILE,
    TOY_PROFILE,
    EncoderConfig,
    EncoderModel,
    PointwiseHead,
    cls_vectors,
    mlm_loss,
    mlm_mask,
)
from .evaluation.crossval import LeakageError
from .evaluation.metrics import MetricReport, evaluate_scored_lists
from .features import normalize_per_query
from .listrank import DEFAULT_MAX_LIST, SetRankHead, listwise_ce_batch, listwise_label_targets, score_sets

log = logging.getLogger(__name__)

SCHEMA_VERSION = 1
STAGES = ("mlm", "click", "fine")
_STAGE_ID = {"mlm": 1, "click": 2, "fine": 3}
HEADS = ("pointwise", "setrank")
PROFILES = {"toy": TOY_PROFILE, "full": FULL_PROFILE}
EVAL_CHUNK = 256


class ConfigError(ValueError):
    """Invalid or incompatible training configuration."""


class DataError(ValueError):
    """Training data does not satisfy a stage's preconditions."""


# --- configuration -----------------------------------------------------------------------

@dataclass
class TrainConfig:
    """Training schedule and knobs.

    ``batch`` counts queries per step.  Listwise stages score one list of up
    to ``list_size`` documents per query; pointwise and masked-token stages
    consume ``batch * list_size`` pairs per step.  ``encoder`` overrides
    individual dimensions of the profile; ``stage_lr`` overrides ``lr`` for
    individual stages.
    """

    profile: str = "toy"
    stage_steps: dict[str, int] = field(default_factory=lambda: {"mlm": 0, "click": 200, "fine": 200})
    batch: int = 4
    list_size: int = 20
    lr: float = 1e-3
    seed: int = 0
    head: str = "pointwise"
    fusion: bool = True
    neg_ratio: int = 1
    eval_every: int = 50
    encoder: dict = field(default_factory=dict)
    mask_rate: float = 0.15
    stage_lr: dict[str, float] = field(default_factory=dict)

    def __post_init__(self):
        steps = {s: 0 for s in STAGES}
        for k, v in dict(self.stage_steps).items():
            if k not in steps:
                raise ConfigError(f"unknown stage {k!r} in stage_steps (expected {', '.join(STAGES)})")
            steps[k] = int(v)
        self.stage_steps = steps
        if any(v < 0 for v in steps.values()):
            raise ConfigError("stage steps must be >= 0")
        if self.profile not in PROFILES:
            raise ConfigError(f"unknown profile {self.profile!r} (expected one of {sorted(PROFILES)})")
        if self.head not in HEADS:
            raise ConfigError(f"unknown head {self.head!r} (expected one of {HEADS})")
        if self.batch < 1 or self.list_size < 1:
            raise ConfigError("batch and list_size must be >= 1")
        if self.neg_ratio < 0:
            raise ConfigError("neg_ratio must be >= 0")
        if self.eval_every < 0:
            raise ConfigError("eval_every must be >= 0")
        if not self.lr > 0 or not all(float(v) > 0 for v in self.stage_lr.values()):
            raise ConfigError("learning rates must be positive")
        if set(self.stage_lr) - set(STAGES):
            raise ConfigError(f"unknown stage(s) in stage_lr: {sorted(set(self.stage_lr) - set(STAGES))}")
        if not 0.0 < self.mask_rate < 1.0:
            raise ConfigError("mask_rate must be in (0, 1)")
        unknown = set(self.encoder) - set(TOY_PROFILE)
        if unknown:
            raise ConfigError(f"unknown encoder override(s): {sorted(unknown)}")

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, obj: dict) -> "TrainConfig":
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(obj) - names
        if unknown:
            raise ConfigError(f"unknown config key(s): {sorted(unknown)}")
        try:
            return cls(**obj)
        except TypeError as e:
            raise ConfigError(str(e)) from None

    @classmethod
    def load(cls, path: str | Path) -> "TrainConfig":
        try:
            obj = json.loads(Path(path).read_text(encoding="utf-8"))
        except json.JSONDecodeError as e:
            raise ConfigError(f"{path}: invalid JSON: {e.msg}") from None
        if not isinstance(obj, dict):
            raise ConfigError(f"{path}: config must be a JSON object")
        return cls.from_dict(obj)

    def lr_for(self, stage: str) -> float:
        return float(self.stage_lr.get(stage, self.lr))

    def replace(self, **changes) -> "TrainConfig":
        return dataclasses.replace(self, **changes)

    def encoder_config(self, vocab_size: int) -> EncoderConfig:
        if self.profile == "full":
            raise ConfigError("the full profile documents full-scale dimensions and is not trainable here; "
                              "use profile 'toy' (optionally with encoder overrides)")
        dims = {**PROFILES[self.profile], **self.encoder}
        try:
            return EncoderConfig(vocab_size=vocab_size, **dims)
        except (TypeError, ValueError) as e:
            raise ConfigError(f"encoder: {e}") from None


def config_diff(a: TrainConfig, b: TrainConfig) -> set[str]:
    da, db = a.to_dict(), b.to_dict()
    return {k for k in da if da[k] != db[k]}


def config_hash(cfg: TrainConfig, enc: EncoderConfig) -> str:
    """Digest of everything that shapes a run except schedule lengths and eval cadence.

    Stage lengths are excluded so a finished run can be resumed with a longer schedule.
    """
    d = cfg.to_dict()
    d.pop("stage_steps")
    d.pop("eval_every")
    blob = json.dumps({"train": d, "encoder": enc.to_dict()}, sort_keys=True)
    return hashlib.sha256(blob.encode()).hexdigest()


# --- deterministic sampling ------------------------------------------------------------------

def step_rng(seed: int, stage: str, step: int) -> np.random.Generator:
    return np.random.default_rng([seed, _STAGE_ID[stage], step])


class EpochSampler:
    """Walks ``n`` items in a fresh seeded permutation per epoch, ``k`` items per step."""

    def __init__(self, n: int, seed: int, stage: str):
        if n < 1:
            raise DataError(f"{stage} stage has no training items")
        self.n, self.seed, self.stage = n, seed, stage
        self._orders: dict[int, np.ndarray] = {}

    def _order(self, epoch: int) -> np.ndarray:
        if epoch not in self._orders:
            rng = np.random.default_rng([self.seed, _STAGE_ID[self.stage], 0xE90C, epoch])
            self._orders = {epoch: rng.permutation(self.n)}
        return self._orders[epoch]

    def indices(self, step: int, k: int) -> list[int]:
        out = []
        for pos in range(step * k, (step + 1) * k):
            epoch, off = divmod(pos, self.n)
            out.append(int(self._order(epoch)[off]))
        return out


def sample_docs(m: int, k: int, rng: np.random.Generator) -> np.ndarray:
    """``min(m, k)`` distinct document indices in random order."""
    return rng.permutation(m)[:k]


# --- negative sampling ----------------------------------------------------------------------

@dataclass(frozen=True)
class Instance:
    qid: str
    query: TokenSequence
    docid: str
    doc: TokenSequence
    label: int


@dataclass
class SampledPairs:
    instances: list[Instance]
    positives: int = 0
    negatives: int = 0
    starved: int = 0  # sessions with clicks but no unclicked candidate


def sample_negatives(sessions: Sequence[ClickSession], ratio: int, rng: np.random.Generator) -> SampledPairs:
    """One positive per click plus ``ratio`` unclicked documents drawn uniformly from the same session.

    Negatives for one click are distinct when the pool allows it.  Sessions
    whose documents were all clicked keep their positives and are counted as
    starved.
    """
    if ratio < 0:
        raise ValueError("ratio must be >= 0")
    out = SampledPairs([])
    for s in sessions:
        pool = [i for i, c in enumerate(s.clicks) if c == 0]
        clicked = [i for i, c in enumerate(s.clicks) if c == 1]
        if clicked and not pool and ratio > 0:
            out.starved += 1
        for i in clicked:
            out.instances.append(Instance(s.qid, s.query, s.docs[i][0], s.docs[i][1], 1))
            out.positives += 1
            if not pool or ratio == 0:
                continue
            picks = rng.choice(len(pool), size=ratio, replace=ratio > len(pool))
            for j in np.atleast_1d(picks):
                d = s.docs[pool[int(j)]]
                out.instances.append(Instance(s.qid, s.query, d[0], d[1], 0))
                out.negatives += 1
    if out.starved:
        log.warning("%d sessions had no unclicked candidates; negatives skipped", out.starved)
    return out


def sessions_from_run(clicks: Sequence[ClickRecord], run: dict[str, list[RunEntry]],
                      doc_texts: dict[str, str], vocab: Vocab, depth: int = 100) -> list[ClickSession]:
    """One aggregated session per clicked query: the run's top ``depth`` documents,
    marked clicked when they appear in the click TSV.  Clicked documents missing
    from the run are appended after the run documents."""
    by_qid: dict[str, list[ClickRecord]] = {}
    for c in clicks:
        by_qid.setdefault(c.qid, []).append(c)
    out = []
    for qid in sorted(by_qid):
        recs = by_qid[qid]
        clicked = {c.docid for c in recs}
        docids = [e.docid for e in sorted(run.get(qid, []), key=lambda e: e.rank)[:depth]]
        docids += sorted(clicked - set(docids))
        docs = [(d, tokenize(doc_texts.get(d, ""), vocab)) for d in docids]
        out.append(ClickSession(qid, tokenize(recs[0].query, vocab), docs,
                                tuple(int(d in clicked) for d in docids), tuple(range(1, len(docids) + 1))))
    return out


# --- heads -------------------------------------------------------------------------------------

Head = PointwiseHead | SetRankHead


def build_head(spec: dict, seed: int = 0) -> Head:
    kind = spec["kind"]
    if kind == "pointwise":
        return PointwiseHead(spec["input_dim"], spec["feature_dim"], spec["hidden"], seed=seed)
    if kind == "setrank":
        return SetRankHead(spec["input_dim"], spec["feature_dim"], spec["blocks"], spec["heads"],
                           spec["ffn"], spec["dropout"], spec["max_list"], seed=seed)
    raise ConfigError(f"unknown head kind {kind!r}")


def new_head(cfg: TrainConfig, enc: EncoderConfig, feature_dim: int, stage: str) -> Head:
    seed = int(np.random.default_rng([cfg.seed, _STAGE_ID[stage], 0x4EAD]).integers(2 ** 31))
    if cfg.head == "pointwise":
        return PointwiseHead(enc.hidden, feature_dim, seed=seed)
    return SetRankHead(enc.hidden, feature_dim, dropout=enc.dropout,
                       max_list=max(DEFAULT_MAX_LIST, cfg.list_size), seed=seed)


# --- checkpoints --------------------------------------------------------------------------------

@dataclass
class Checkpoint:
    stage: str
    step: int  # steps completed in ``stage``
    global_step: int
    config: TrainConfig
    encoder_config: EncoderConfig
    encoder_state: dict[str, np.ndarray]
    head_spec: dict | None
    head_state: dict[str, np.ndarray] | None
    optimizer: AdamState
    vocab: Vocab

    def __post_init__(self):
        if self.stage not in STAGES:
            raise ValueError(f"stage tag must be one of {STAGES}, got {self.stage!r}")

    @property
    def phase(self) -> str:
        return "fine" if self.stage == "fine" else "pre"

    @property
    def config_hash(self) -> str:
        return config_hash(self.config, self.encoder_config)

    @property
    def rng_state(self) -> dict:
        return {"seed": self.config.seed, "stage": self.stage, "next_step": self.step}

    def encoder(self) -> EncoderModel:
        m = EncoderModel(self.encoder_config)
        m.load_state_dict(self.encoder_state)
        return m

    def head(self) -> Head | None:
        if self.head_spec is None:
            return None
        h = build_head(self.head_spec)
        h.load_state_dict(self.head_state)
        return h

    def encoder_digest(self) -> str:
        return self.encoder().digest()

    def head_digest(self) -> str | None:
        h = self.head()
        return None if h is None else h.digest()

    def manifest(self) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "stage": self.stage,
            "phase": self.phase,
            "step": self.step,
            "global_step": self.global_step,
            "config": self.config.to_dict(),
            "config_hash": self.config_hash,
            "encoder": self.encoder_config.to_dict(),
            "head": self.head_spec,
            "optimizer": self.optimizer.hyperparameters(),
            "rng": self.rng_state,
        }

    def save(self, directory: str | Path) -> Path:
        d = Path(directory)
        d.mkdir(parents=True, exist_ok=True)
        tensors = {f"encoder/{k}": v for k, v in self.encoder_state.items()}
        if self.head_state is not None:
            kind = self.head_spec["kind"]
            tensors.update({f"head/{kind}/{k}": v for k, v in self.head_state.items()})
        tensors.update({f"optim/m/{k}": v for k, v in self.optimizer.m.items()})
        tensors.update({f"optim/v/{k}": v for k, v in self.optimizer.v.items()})
        ad.save_tensors(d / "tensors.bin", tensors)
        self.vocab.save(d / "vocab.json")
        (d / "manifest.json").write_text(json.dumps(self.manifest(), indent=2, sort_keys=True) + "\n",
                                         encoding="utf-8")
        return d

    @classmethod
    def load(cls, directory: str | Path) -> "Checkpoint":
        d = Path(directory)
        man = json.loads((d / "manifest.json").read_text(encoding="utf-8"))
        if man.get("schema_version") != SCHEMA_VERSION:
            raise ConfigError(f"{d}: checkpoint schema version {man.get('schema_version')} "
                              f"!= supported {SCHEMA_VERSION}")
        tensors = ad.load_tensors(d / "tensors.bin")

        def section(prefix: str) -> dict[str, np.ndarray]:
            return {k[len(prefix):]: v for k, v in tensors.items() if k.startswith(prefix)}

        head_spec = man["head"]
        opt = man["optimizer"]
        ckpt = cls(
            stage=man["stage"], step=man["step"], global_step=man["global_step"],
            config=TrainConfig.from_dict(man["config"]),
            encoder_config=EncoderConfig.from_dict(man["encoder"]),
            encoder_state=section("encoder/"),
            head_spec=head_spec,
            head_state=section(f"head/{head_spec['kind']}/") if head_spec else None,
            optimizer=AdamState(lr=opt["lr"], beta1=opt["beta1"], beta2=opt["beta2"], eps=opt["eps"],
                                t=opt["t"], m=section("optim/m/"), v=section("optim/v/")),
            vocab=Vocab.load(d / "vocab.json"),
        )
        if ckpt.config_hash != man["config_hash"]:
            raise ConfigError(f"{d}: manifest config hash does not match its config")
        return ckpt


# --- traces and curves ------------------------------------------------------------------------------

@dataclass(frozen=True)
class TraceRow:
    step: int
    stage: str
    name: str
    value: float


def trace_csv(rows: Sequence[TraceRow]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["step", "stage", "name", "value"])
    for r in rows:
        w.writerow([r.step, r.stage, r.name, repr(float(r.value))])
    return buf.getvalue()


@dataclass(frozen=True)
class CurvePoint:
    step: int
    stage: str
    report: MetricReport


@dataclass
class Curve:
    points: list[CurvePoint] = field(default_factory=list)
    trace: list[TraceRow] = field(default_factory=list)

    @property
    def final(self) -> MetricReport:
        return self.points[-1].report

    def series(self, metric: str) -> list[float]:
        return [p.report.means[metric] for p in self.points]

    def to_csv(self) -> str:
        return trace_csv([TraceRow(p.step, p.stage, n, v) for p in self.points for n, v in p.report.means.items()])


# --- trainer ----------------------------------------------------------------------------------------

class Trainer:
    """Owns the encoder, the current head, the optimizer and the step counters."""

    def __init__(self, cfg: TrainConfig, vocab: Vocab, encoder_config: EncoderConfig | None = None):
        self.cfg = cfg
        self.vocab = vocab
        self.enc_cfg = encoder_config or cfg.encoder_config(vocab.size)
        self.model = EncoderModel(self.enc_cfg, seed=cfg.seed)
        self.head: Head | None = None
        self.stage: str | None = None
        self.step = 0
        self.global_step = 0
        self.opt = AdamState(lr=cfg.lr)
        self.trace: list[TraceRow] = []

    # state ----------------------------------------------------------------------------------
    def params(self) -> dict[str, Tensor]:
        out = {f"encoder/{k}": p for k, p in self.model.params.items()}
        if self.head is not None:
            out.update({f"head/{k}": p for k, p in self.head.params.items()})
        return out

    def begin_stage(self, stage: str, feature_dim: int = 0) -> None:
        """Enter ``stage`` with a fresh optimizer; click and fine stages get a freshly initialised head."""
        self.stage = stage
        self.step = 0
        self.opt = AdamState(lr=self.cfg.lr_for(stage))
        if stage != "mlm":
            self.head = new_head(self.cfg, self.enc_cfg, feature_dim, stage)

    def checkpoint(self) -> Checkpoint:
        if self.stage is None:
            raise ValueError("no stage has been started")
        return Checkpoint(
            stage=self.stage, step=self.step, global_step=self.global_step, config=self.cfg,
            encoder_config=self.enc_cfg, encoder_state=self.model.state_dict(),
            head_spec=self.head.spec() if self.head is not None else None,
            head_state=self.head.state_dict() if self.head is not None else None,
            optimizer=AdamState(self.opt.lr, self.opt.beta1, self.opt.beta2, self.opt.eps, self.opt.t,
                                {k: v.copy() for k, v in self.opt.m.items()},
                                {k: v.copy() for k, v in self.opt.v.items()}),
            vocab=self.vocab,
        )

    @classmethod
    def resume(cls, ckpt: Checkpoint, cfg: TrainConfig) -> "Trainer":
        if config_hash(cfg, ckpt.encoder_config) != ckpt.config_hash:
            raise ConfigError("config hash mismatch: the checkpoint was produced under a different config")
        t = cls(cfg, ckpt.vocab, ckpt.encoder_config)
        t.model.load_state_dict(ckpt.encoder_state)
        t.head = ckpt.head()
        t.stage, t.step, t.global_step = ckpt.stage, ckpt.step, ckpt.global_step
        o = ckpt.optimizer
        t.opt = AdamState(o.lr, o.beta1, o.beta2, o.eps, o.t,
                          {k: v.copy() for k, v in o.m.items()}, {k: v.copy() for k, v in o.v.items()})
        return t

    def load_encoder(self, ckpt: Checkpoint) -> None:
        if ckpt.encoder_config != self.enc_cfg:
            raise ConfigError(f"init checkpoint encoder {ckpt.encoder_config} does not match {self.enc_cfg}")
        self.model.load_state_dict(ckpt.encoder_state)

    # stepping --------------------------------------------------------------------------------
    def update(self, loss: Tensor) -> float:
        self.model.zero_grad()
        if self.head is not None:
            self.head.zero_grad()
        value = float(loss.data)
        if not math.isfinite(value):
            raise FloatingPointError(f"non-finite loss {value} at {self.stage} step {self.step}")
        loss.backward()
        ad.adam_step(self.params(), self.opt)
        self.trace.append(TraceRow(self.global_step, self.stage, "loss", value))
        self.step += 1
        self.global_step += 1
        return value

    def pair(self, q: TokenSequence, d: TokenSequence) -> PairInput:
        return encode_pair(q, d, self.enc_cfg.max_len)

    # scoring ---------------------------------------------------------------------------------------
    def score_list(self, lst: LabeledList, features: np.ndarray | None = None) -> np.ndarray:
        pairs = [self.pair(lst.query, d) for _, d in lst.docs]
        with ad.no_grad():
            if isinstance(self.head, PointwiseHead):
                out = []
                for i in range(0, len(pairs), EVAL_CHUNK):
                    h = cls_vectors(self.model, pairs[i:i + EVAL_CHUNK])
                    f = None if features is None else features[i:i + EVAL_CHUNK]
                    out.append(self.head.logits(h, f).data)
                return np.concatenate(out) if out else np.zeros(0)
            if isinstance(self.head, SetRankHead):
                H = cls_vectors(self.model, pairs)
                psi = None if features is None else features[None]
                return score_sets(H.reshape(1, *H.shape), psi, [len(pairs)], self.head).data[0].copy()
        raise ValueError("no scoring head: run a click or fine stage first")

    def evaluate(self, lists: Sequence[LabeledList], cutoffs: Sequence[int] = (10,)) -> MetricReport:
        feats = fused_features(lists, self.head.feature_dim) if self.head is not None and self.head.feature_dim else None
        scores = [self.score_list(lst, None if feats is None else feats[i]) for i, lst in enumerate(lists)]
        return evaluate_scored_lists(lists, scores, cutoffs)


def fused_features(lists: Sequence[LabeledList], width: int | None = None) -> list[np.ndarray]:
    """Per-query min-max normalised features; every list must carry ``width`` columns."""
    out = []
    for lst in lists:
        if lst.features is None:
            raise DataError(f"fusion is on but list {lst.qid} carries no features")
        if width is not None and lst.features.shape[1] != width:
            raise DataError(f"list {lst.qid} has {lst.features.shape[1]} feature columns, expected {width}")
        width = lst.features.shape[1]
        out.append(normalize_per_query(lst.features) if len(lst) else lst.features)
    return out


# --- stages ------------------------------------------------------------------------------------------

Callback = Callable[[Trainer], None]


def _run_mlm(t: Trainer, sessions: Sequence[ClickSession], lists: Sequence[LabeledList], n_steps: int,
             on_step: Callback | None = None) -> None:
    seen, pairs = set(), []
    for src in (*sessions, *lists):
        for docid, d in src.docs:
            if (src.qid, docid) not in seen:
                seen.add((src.qid, docid))
                pairs.append(t.pair(src.query, d))
    sampler = EpochSampler(len(pairs), t.cfg.seed, "mlm")
    per_step = t.cfg.batch * t.cfg.list_size
    while t.step < n_steps:
        rng = step_rng(t.cfg.seed, "mlm", t.step)
        batch = [mlm_mask(pairs[i], t.cfg.mask_rate, rng, t.enc_cfg.vocab_size)
                 for i in sampler.indices(t.step, per_step)]
        t.update(mlm_loss(t.model, batch, train=True, rng=rng))
        if on_step:
            on_step(t)


def _run_click(t: Trainer, sessions: Sequence[ClickSession], n_steps: int, on_step: Callback | None = None) -> int:
    """Click stage; returns the number of sessions skipped (starved or click-free)."""
    cfg = t.cfg
    if cfg.head == "pointwise":
        sampled = sample_negatives(sessions, cfg.neg_ratio, np.random.default_rng([cfg.seed, 0x5A4D]))
        inst = sampled.instances
        if n_steps and not inst:
            raise DataError("click stage: the log contains no clicks")
        sampler = EpochSampler(len(inst), cfg.seed, "click") if inst else None
        per_step = cfg.batch * cfg.list_size
        while t.step < n_steps:
            rng = step_rng(cfg.seed, "click", t.step)
            chosen = [inst[i] for i in sampler.indices(t.step, per_step)]
            h = cls_vectors(t.model, [t.pair(x.query, x.doc) for x in chosen], train=True, rng=rng)
            logits = t.head.logits(h)
            t.update(ad.bce_with_logits(logits, np.array([x.label for x in chosen], dtype=np.float64)))
            if on_step:
                on_step(t)
        return sampled.starved
    usable = [s for s in sessions if any(s.clicks) and len(s) > 0]
    skipped = len(sessions) - len(usable)
    if skipped:
        log.info("click stage: %d click-free sessions skipped", skipped)
    if n_steps and not usable:
        raise DataError("click stage: no session has a click")
    sampler = EpochSampler(len(usable), cfg.seed, "click") if usable else None
    while t.step < n_steps:
        rng = step_rng(cfg.seed, "click", t.step)
        groups = []
        for i in sampler.indices(t.step, cfg.batch):
            s = usable[i]
            idx = sample_docs(len(s), cfg.list_size, rng)
            groups.append(([t.pair(s.query, s.docs[j][1]) for j in idx], [s.clicks[j] for j in idx], None))
        _listwise_update(t, groups, rng)
        if on_step:
            on_step(t)
    return skipped


def _listwise_update(t: Trainer, groups, rng: np.random.Generator) -> None:
    lengths = [len(g[0]) for g in groups]
    M = max(lengths)
    flat = [p for g in groups for p in g[0]]
    h = cls_vectors(t.model, flat, train=True, rng=rng)
    # lay flat [N, d] rows into a padded [B, M, d] grid; padding reads an appended zero row
    src = np.full(len(groups) * M, len(flat), dtype=np.int64)
    src[[b * M + j for b, n in enumerate(lengths) for j in range(n)]] = np.arange(len(flat))
    d = h.shape[1]
    H = ad.concat([h, Tensor(np.zeros((1, d)))], axis=0)[src].reshape(len(groups), M, d)
    psi = None
    if t.head.feature_dim:
        psi = np.zeros((len(groups), M, t.head.feature_dim))
        for b, g in enumerate(groups):
            psi[b, :lengths[b]] = g[2]
    scores = score_sets(H, psi, lengths, t.head, train=True, rng=rng)
    loss, skipped = listwise_ce_batch(scores, [g[1] for g in groups], lengths)
    if loss is None:
        # every list in the batch is target-free; the step still counts so schedules stay aligned
        t.trace.append(TraceRow(t.global_step, t.stage, "skipped_lists", float(skipped)))
        t.step += 1
        t.global_step += 1
        return
    t.update(loss)


def _run_fine(t: Trainer, lists: Sequence[LabeledList], n_steps: int, on_step: Callback | None = None) -> None:
    cfg = t.cfg
    feats = fused_features(lists, t.head.feature_dim) if t.head.feature_dim else None
    if n_steps and not lists:
        raise DataError("fine-tuning needs at least one labeled list")
    usable = [i for i, lst in enumerate(lists) if len(lst)]
    sampler = EpochSampler(len(usable), cfg.seed, "fine") if usable else None
    pairs = [[t.pair(lst.query, d) for _, d in lst.docs] for lst in lists]
    while t.step < n_steps:
        rng = step_rng(cfg.seed, "fine", t.step)
        groups = []
        for k in sampler.indices(t.step, cfg.batch):
            i = usable[k]
            idx = sample_docs(len(lists[i]), cfg.list_size, rng)
            groups.append(([pairs[i][j] for j in idx], [lists[i].labels[j] for j in idx],
                           None if feats is None else feats[i][idx]))
        if cfg.head == "pointwise":
            flat = [p for g in groups for p in g[0]]
            y = np.array([1.0 if lab >= 1 else 0.0 for g in groups for lab in g[1]])
            f = np.vstack([g[2] for g in groups]) if feats is not None else None
            h = cls_vectors(t.model, flat, train=True, rng=rng)
            t.update(ad.bce_with_logits(t.head.logits(h, f), y))
        else:
            groups = [(p, listwise_label_targets(lab), f) for p, lab, f in groups]
            _listwise_update(t, groups, rng)
        if on_step:
            on_step(t)


def _feature_width(lists: Sequence[LabeledList], cfg: TrainConfig) -> int:
    if not cfg.fusion:
        return 0
    widths = {None if lst.features is None else lst.features.shape[1] for lst in lists}
    if None in widths:
        missing = next(lst.qid for lst in lists if lst.features is None)
        raise DataError(f"fusion is on but list {missing} carries no features")
    if len(widths) != 1:
        raise DataError(f"inconsistent feature widths across lists: {sorted(widths)}")
    return widths.pop()


# --- public entry points ------------------------------------------------------------------------------

def pretrain(sessions: Sequence[ClickSession], cfg: TrainConfig, vocab: Vocab,
             resume: Checkpoint | None = None, mlm_lists: Sequence[LabeledList] = (),
             on_step: Callback | None = None) -> tuple[Checkpoint, list[TraceRow]]:
    """Masked-token stage for ``stage_steps['mlm']`` steps, then the click stage.

    The checkpoint is tagged with the last stage that ran (``mlm`` when the
    click stage has zero steps).  ``mlm_lists`` adds extra pair texts to the
    masked-token stage.
    """
    t = _pretrain_trainer(cfg, vocab, resume)
    _pretrain_loop(t, sessions, mlm_lists, on_step)
    return t.checkpoint(), t.trace


def _pretrain_trainer(cfg: TrainConfig, vocab: Vocab, resume: Checkpoint | None) -> Trainer:
    if resume is None:
        return Trainer(cfg, vocab)
    if resume.stage == "fine":
        raise ConfigError("cannot resume pre-training from a fine-tuned checkpoint")
    return Trainer.resume(resume, cfg)


def _pretrain_loop(t: Trainer, sessions, mlm_lists, on_step: Callback | None = None,
                   on_click_step: Callback | None = None) -> None:
    steps = t.cfg.stage_steps
    if t.stage is None:
        t.begin_stage("mlm")
    if t.stage == "mlm":
        if steps["mlm"]:
            _run_mlm(t, sessions, mlm_lists, steps["mlm"], on_step)
        if steps["click"] == 0:
            return
        t.begin_stage("click")
        if on_click_step:
            on_click_step(t)
    _run_click(t, sessions, steps["click"], _chain(on_step, on_click_step))


def _chain(*callbacks: Callback | None) -> Callback | None:
    cbs = [c for c in callbacks if c is not None]
    if not cbs:
        return None

    def run(t: Trainer) -> None:
        for c in cbs:
            c(t)

    return run


def finetune(lists: Sequence[LabeledList], init: Checkpoint | None, cfg: TrainConfig, vocab: Vocab | None = None,
             resume: Checkpoint | None = None, on_step: Callback | None = None) -> tuple[Checkpoint, list[TraceRow]]:
    """Fine-tune on labeled lists.

    The encoder starts from ``init`` (or fresh when ``init`` is None) and the
    head is always rebuilt; with fusion on every list must carry features of
    one width.  ``resume`` continues an interrupted fine-tuning run instead.
    """
    t = _fine_trainer(lists, init, cfg, vocab, resume)
    _run_fine(t, lists, cfg.stage_steps["fine"], on_step)
    return t.checkpoint(), t.trace


def _fine_trainer(lists, init, cfg, vocab, resume) -> Trainer:
    width = _feature_width(lists, cfg)
    if resume is not None:
        if resume.stage != "fine":
            raise ConfigError(f"resume expects a fine-stage checkpoint, got {resume.stage!r}")
        return Trainer.resume(resume, cfg)
    if init is not None:
        vocab = vocab or init.vocab
        if vocab.tokens != init.vocab.tokens:
            raise ConfigError("vocabulary differs from the init checkpoint's vocabulary")
    if vocab is None:
        raise ConfigError("finetune needs a vocabulary when no init checkpoint is given")
    t = Trainer(cfg, vocab, init.encoder_config if init is not None else None)
    if init is not None:
        t.load_encoder(init)
        t.global_step = init.global_step
    t.begin_stage("fine", width)
    return t


REGIMES = ("click_only", "label_only", "click_then_label")


def regime(train_lists: Sequence[LabeledList], sessions: Sequence[ClickSession], eval_lists: Sequence[LabeledList],
           cfg: TrainConfig, which: str, vocab: Vocab, cutoffs: Sequence[int] = (10,)) -> Curve:
    """Run one training regime, evaluating on ``eval_lists`` every ``eval_every`` steps.

    Evaluation happens at the start of each scored stage, every
    ``eval_every`` steps within it, and at its end.  The masked-token stage
    (if scheduled) is not scored because no ranking head exists yet.
    """
    if which not in REGIMES:
        raise ConfigError(f"unknown regime {which!r} (expected one of {REGIMES})")
    eval_q = {lst.qid for lst in eval_lists}
    used = set()
    if which != "label_only":
        used |= {s.qid for s in sessions}
    if which != "click_only":
        used |= {lst.qid for lst in train_lists}
    overlap = eval_q & used
    if overlap:
        raise LeakageError(f"evaluation queries overlap training data: {sorted(overlap)[:5]}")
    if not eval_lists:
        raise DataError("regime needs held-out evaluation lists")
    curve = Curve()

    def record(t: Trainer) -> None:
        if t.step == 0 or (cfg.eval_every and t.step % cfg.eval_every == 0):
            curve.points.append(CurvePoint(t.global_step, t.stage, t.evaluate(eval_lists, cutoffs)))

    def close(t: Trainer) -> None:
        if not curve.points or curve.points[-1].step != t.global_step or curve.points[-1].stage != t.stage:
            curve.points.append(CurvePoint(t.global_step, t.stage, t.evaluate(eval_lists, cutoffs)))

    if which == "label_only":
        t = _fine_trainer(train_lists, None, cfg, vocab, None)
    else:
        t = Trainer(cfg, vocab)
        if cfg.stage_steps["click"] == 0:
            raise ConfigError(f"regime {which} needs click steps > 0")
        _pretrain_loop(t, sessions, (), on_click_step=record)
        close(t)
        if which == "click_then_label":
            init = t.checkpoint()
            trace = t.trace
            t = _fine_trainer(train_lists, init, cfg, vocab, None)
            t.trace = trace
    if which != "click_only":
        record(t)
        _run_fine(t, train_lists, cfg.stage_steps["fine"], record)
        close(t)
    curve.trace = t.trace
    return curve


# --- ablation ---------------------------------------------------------------------------------------

PRETRAIN_ARMS = ("w/MLM", "w/Click", "w/MLM+Click")


@dataclass(frozen=True)
class AblationRow:
    pretrain: str
    fusion: bool
    config: TrainConfig
    report: MetricReport


@dataclass
class AblationTable:
    rows: list[AblationRow]

    def row(self, pretrain: str, fusion: bool) -> AblationRow:
        return next(r for r in self.rows if r.pretrain == pretrain and r.fusion == fusion)

    def to_csv(self) -> str:
        names = list(self.rows[0].report.means)
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["pretrain", "ltr_features", *names])
        for r in self.rows:
            w.writerow([r.pretrain, "w/" if r.fusion else "w/o", *(f"{r.report.means[n]:.6f}" for n in names)])
        return buf.getvalue()

    def table(self, metric: str = "NDCG@10") -> str:
        lines = [f"{'pre-training':<14}{'w/ LtrFtr':>12}{'w/o LtrFtr':>12}   ({metric})"]
        for arm in PRETRAIN_ARMS:
            on, off = self.row(arm, True).report.means[metric], self.row(arm, False).report.means[metric]
            lines.append(f"{arm:<14}{on:>12.4f}{off:>12.4f}")
        return "\n".join(lines)


def arm_config(base: TrainConfig, pretrain_arm: str, fusion: bool) -> TrainConfig:
    s = dict(base.stage_steps)
    if pretrain_arm == "w/MLM":
        s["click"] = 0
    elif pretrain_arm == "w/Click":
        s["mlm"] = 0
    elif pretrain_arm != "w/MLM+Click":
        raise ConfigError(f"unknown pre-training arm {pretrain_arm!r}")
    return base.replace(stage_steps=s, fusion=fusion)


def ablation_suite(train_lists: Sequence[LabeledList], eval_lists: Sequence[LabeledList],
                   sessions: Sequence[ClickSession], base: TrainConfig, vocab: Vocab,
                   cutoffs: Sequence[int] = (10,)) -> AblationTable:
    """{w/, w/o features} x {w/MLM, w/Click, w/MLM+Click}, all on one eval split and seed.

    Both fusion arms of a pre-training variant fine-tune from the same checkpoint.
    """
    if base.stage_steps["mlm"] == 0 or base.stage_steps["click"] == 0:
        raise ConfigError("ablation needs both mlm and click steps > 0 in the base config")
    _feature_width(list(train_lists) + list(eval_lists), base.replace(fusion=True))
    rows = []
    for arm in PRETRAIN_ARMS:
        init = None
        for fusion in (True, False):
            cfg = arm_config(base, arm, fusion)
            diff = config_diff(base, cfg)
            if not diff <= {"stage_steps", "fusion"}:
                raise AssertionError(f"arm {arm} changes unintended knobs: {sorted(diff)}")
            if init is None:
                init, _ = pretrain(sessions, cfg.replace(fusion=base.fusion), vocab)
            t = _fine_trainer(train_lists, init, cfg, vocab, None)
            _run_fine(t, train_lists, cfg.stage_steps["fine"])
            rows.append(AblationRow(arm, fusion, cfg, t.evaluate(eval_lists, cutoffs)))
    return AblationTable(rows)
