"""``prerank`` command-line entry point.

Every command writes its artifacts plus a run manifest (input digests, the
resolved config, seed, tool version, outputs, wall-clock).  Errors are
reported as one JSON line on stderr.
"""

from __future__ import annotations

import os

# BLAS reads these at import time, so they must be set before numpy loads.
_THREADS = os.environ.get("PRERANK_THREADS")
if _THREADS:
    for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        os.environ.setdefault(_var, _THREADS)

import argparse  # noqa: E402
import hashlib  # noqa: E402
import json  # noqa: E402
import logging  # noqa: E402
import sys  # noqa: E402
import tempfile  # noqa: E402
import time  # noqa: E402
from dataclasses import asdict, dataclass, field  # noqa: E402
from pathlib import Path  # noqa: E402

import numpy as np  # noqa: E402

from . import __version__  # noqa: E402
from . import clicksim, corpus, features, pipeline, synthetic  # noqa: E402
from .corpus import ParseError, Vocab  # noqa: E402
from .evaluation import (  # noqa: E402
    LeakageError,
    buckets_csv,
    evaluate_run,
    length_buckets,
    paired_test,
)

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_CONFIG = 0, 2, 3, 4

EPILOG = """exit codes:
  0  success
  2  usage error (unknown command or flag, bad flag value)
  3  data error (missing or unreadable input file, malformed record, leakage between splits)
  4  config error (invalid config, schema-version or config-hash mismatch)

environment:
  PRERANK_THREADS  upper bound on BLAS threads used by numpy"""


class UsageError(Exception):
    pass


class JsonArgumentParser(argparse.ArgumentParser):
    """Reports usage errors as a single JSON line instead of argparse's text."""

    def error(self, message):
        _emit_error("usage", message, EXIT_USAGE)
        sys.exit(EXIT_USAGE)


def _emit_error(kind: str, message: str, code: int) -> None:
    sys.stderr.write(json.dumps({"error": kind, "message": message, "exit_code": code}) + "\n")


# --- manifests ---------------------------------------------------------------------------------

def file_digest(path: str | Path) -> str:
    h = hashlib.sha256()
    p = Path(path)
    files = sorted(f for f in p.rglob("*") if f.is_file()) if p.is_dir() else [p]
    for f in files:
        if p.is_dir():
            h.update(str(f.relative_to(p)).encode())
        h.update(f.read_bytes())
    return h.hexdigest()


def atomic_write(path: str | Path, data: str | bytes) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    raw = data.encode("utf-8") if isinstance(data, str) else data
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(raw)
        os.replace(tmp, path)
    except BaseException:
        Path(tmp).unlink(missing_ok=True)
        raise


@dataclass
class RunManifest:
    command: str
    config: dict
    inputs: dict[str, str]
    seed: int | None
    version: str = __version__
    outputs: list[str] = field(default_factory=list)
    wall_clock_seconds: float = 0.0

    def write(self, path: str | Path) -> None:
        atomic_write(path, json.dumps(asdict(self), indent=2, sort_keys=True) + "\n")


class Run:
    """Collects inputs and outputs of one command invocation."""

    def __init__(self, command: str, args: argparse.Namespace):
        self.command = command
        self.args = args
        self.start = time.monotonic()
        self.inputs: dict[str, str] = {}
        self.outputs: list[str] = []
        self.config: dict = {}

    def input(self, path: str | None) -> str | None:
        if path is None:
            return None
        p = Path(path)
        if not p.exists():
            raise FileNotFoundError(f"input not found: {path}")
        self.inputs[str(path)] = file_digest(p)
        return path

    def output(self, path: str | Path) -> Path:
        self.outputs.append(str(path))
        return Path(path)

    def finish(self, manifest_path: str | Path) -> None:
        RunManifest(self.command, self.config, self.inputs, getattr(self.args, "seed", None),
                    outputs=self.outputs, wall_clock_seconds=round(time.monotonic() - self.start, 3)
                    ).write(manifest_path)


def _file_manifest(out: str | Path) -> Path:
    return Path(f"{out}.manifest.json")


def _dir_manifest(out: str | Path) -> Path:
    return Path(out) / "run_manifest.json"


# --- loading helpers -----------------------------------------------------------------------------

def _load_config(run: Run, args) -> pipeline.TrainConfig:
    cfg = pipeline.TrainConfig.load(run.input(args.config)) if args.config else pipeline.TrainConfig()
    if args.seed is not None:
        cfg = cfg.replace(seed=args.seed)
    run.config = cfg.to_dict()
    return cfg


def _load_vocab(run: Run, path: str | None) -> Vocab:
    if path is None:
        raise UsageError("--vocab is required")
    try:
        return Vocab.load(run.input(path))
    except (json.JSONDecodeError, KeyError, TypeError) as e:
        raise ParseError(f"{path}: not a vocabulary file ({e})") from None


def _is_jsonl(path: str) -> bool:
    return str(path).endswith((".jsonl", ".json"))


def _texts(run: Run, paths) -> dict[str, str]:
    table: dict[str, str] = {}
    for p in paths or []:
        table.update(corpus.read_text_table(run.input(p)))
    return table


def _load_labeled(run: Run, path: str, vocab: Vocab, texts: dict[str, str],
                  feature_path: str | None = None) -> list[corpus.LabeledList]:
    """Labeled lists from native JSONL or from a LETOR file (with an optional text sidecar)."""
    run.input(path)
    if _is_jsonl(path):
        lists = corpus.read_labeled(path, vocab)
    else:
        lists = corpus.labeled_from_letor(corpus.read_letor(path), vocab, texts)
    if feature_path:
        lists = corpus.attach_letor_features(lists, corpus.read_letor(run.input(feature_path)))
    return lists


def _load_sessions(run: Run, args, vocab: Vocab) -> list[corpus.ClickSession]:
    texts = _texts(run, args.texts)
    if args.sessions:
        return corpus.read_sessions(run.input(args.sessions), vocab, texts)
    if args.clicks and args.run:
        clicks = corpus.read_click_tsv(run.input(args.clicks))
        runs = corpus.read_run(run.input(args.run))
        return pipeline.sessions_from_run(clicks, runs, texts, vocab, depth=args.depth)
    raise UsageError("click data needed: --sessions FILE, or --clicks TSV with --run FILE")


def _load_qrels(run: Run, path: str) -> dict[str, dict[str, int]]:
    """Graded judgments from labeled JSONL, a LETOR file or a TREC qrels file (``qid iter docid grade``)."""
    run.input(path)
    qrels: dict[str, dict[str, int]] = {}
    with open(path, encoding="utf-8") as fh:
        lines = [ln for ln in fh if ln.strip()]
    if _is_jsonl(path):
        for lineno, ln in enumerate(lines, 1):
            try:
                rec = json.loads(ln)
                qrels.setdefault(str(rec["qid"]), {}).update(
                    {str(d["docid"]): int(d["label"]) for d in rec["docs"]})
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as e:
                raise ParseError(f"{path}:{lineno}: not a labeled list ({e})") from None
        return qrels
    if lines and "qid:" in lines[0]:
        for rec in (corpus.parse_labeled_line(ln) for ln in lines):
            if rec.docid is None:
                raise ParseError(f"{path}: LETOR judgments need '#docid = ...' comments")
            qrels.setdefault(rec.qid, {})[rec.docid] = int(rec.label)
        return qrels
    for lineno, ln in enumerate(lines, 1):
        parts = ln.split()
        if len(parts) != 4:
            raise ParseError(f"{path}:{lineno}: expected 'qid iter docid grade'")
        try:
            qrels.setdefault(parts[0], {})[parts[2]] = int(parts[3])
        except ValueError:
            raise ParseError(f"{path}:{lineno}: non-integer grade {parts[3]!r}") from None
    return qrels


def _write_trace(run: Run, out: Path, rows) -> None:
    atomic_write(run.output(out / "trace.csv"), pipeline.trace_csv(rows))


# --- commands ------------------------------------------------------------------------------------

def cmd_build_vocab(args) -> None:
    run = Run("build-vocab", args)
    texts = []
    for p in args.sessions or []:
        texts.extend(corpus.session_texts(run.input(p)))
    for p in args.labels or []:
        texts.extend(corpus.labeled_texts(run.input(p)))
    texts.extend(_texts(run, args.texts).values())
    if not texts:
        raise UsageError("no text sources given (--sessions, --labels or --texts)")
    vocab = corpus.build_vocab(texts, args.min_freq, args.max_size)
    run.config = {"min_freq": args.min_freq, "max_size": args.max_size}
    atomic_write(run.output(args.out), vocab.to_json() + "\n")
    run.finish(_file_manifest(args.out))
    print(f"vocabulary: {vocab.size} tokens -> {args.out}")


def cmd_extract_features(args) -> None:
    run = Run("extract-features", args)
    vocab = _load_vocab(run, args.vocab)
    lists = _load_labeled(run, args.labels, vocab, _texts(run, args.texts))
    if args.checkpoint:
        run.input(args.checkpoint)
        table = pipeline.Checkpoint.load(args.checkpoint).encoder().token_embeddings
    else:
        seed = 0 if args.seed is None else args.seed
        table = np.random.default_rng(seed).normal(0.0, 0.02, size=(vocab.size, args.embedding_dim))
    stats = features.CorpusStats.build(seq for lst in lists for _, seq in lst.docs)
    lines = []
    for lst in lists:
        mat = features.feature_matrix(lst.query, [d for _, d in lst.docs], stats, table)
        for (docid, _), label, row in zip(lst.docs, lst.labels, mat):
            rec = corpus.LetorRecord(label, lst.qid, {i + 1: float(v) for i, v in enumerate(row)}, docid)
            lines.append(corpus.serialize_labeled_line(rec))
    run.config = {"schema_id": features.SCHEMA_ID, "schema_version": features.SCHEMA_VERSION,
                  "embedding": "checkpoint" if args.checkpoint else f"random(dim={args.embedding_dim})"}
    atomic_write(run.output(args.out), "".join(ln + "\n" for ln in lines))
    atomic_write(run.output(f"{args.out}.schema.json"), features.schema_descriptor() + "\n")
    run.finish(_file_manifest(args.out))
    print(f"{len(lines)} feature rows ({features.N_NATIVE} columns) -> {args.out}")


def cmd_simulate(args) -> None:
    run = Run("simulate", args)
    texts = _texts(run, args.texts)
    if args.vocab:
        vocab = _load_vocab(run, args.vocab)
    elif _is_jsonl(args.labels):
        vocab = corpus.build_vocab(corpus.labeled_texts(run.input(args.labels)))
    else:
        vocab = corpus.build_vocab(texts.values())
    lists = _load_labeled(run, args.labels, vocab, texts)
    max_grade = args.max_grade if args.max_grade is not None else max((lst.max_grade for lst in lists), default=0)
    lists = [corpus.LabeledList(lst.qid, lst.query, lst.docs, lst.labels, max_grade, lst.features) for lst in lists]
    ranker_name = args.ranker
    if ranker_name == "auto":
        has_text = any(len(seq) for lst in lists for _, seq in lst.docs)
        ranker_name = "bm25" if has_text else "feature"
    ranker = clicksim.bm25_ranker(lists) if ranker_name == "bm25" else clicksim.feature_ranker(args.rank_feature)
    seed = 0 if args.seed is None else args.seed
    bias = clicksim.BiasModel.pbm(args.depth, max_grade, args.epsilon, args.propensity_power)
    cfg = clicksim.SimConfig(args.sessions, args.depth, seed)
    log_ = clicksim.generate_click_log(lists, ranker, cfg, bias)
    run.config = {"sim": asdict(cfg), "bias": json.loads(bias.to_json()), "ranker": ranker_name,
                  "rank_feature": args.rank_feature if ranker_name == "feature" else None,
                  "skipped_queries": log_.skipped_queries}
    buf = "".join(corpus.session_to_json(s) + "\n" for s in log_.sessions)
    atomic_write(run.output(args.out), buf)
    run.finish(_file_manifest(args.out))
    print(f"{len(log_.sessions)} sessions over {len(lists) - log_.skipped_queries} queries -> {args.out}")


def cmd_pretrain(args) -> None:
    run = Run("pretrain", args)
    cfg = _load_config(run, args)
    vocab = _load_vocab(run, args.vocab)
    sessions = _load_sessions(run, args, vocab)
    resume = pipeline.Checkpoint.load(run.input(args.resume)) if args.resume else None
    ckpt, trace = pipeline.pretrain(sessions, cfg, vocab, resume=resume)
    out = Path(args.out)
    ckpt.save(out / "checkpoint")
    run.output(out / "checkpoint")
    _write_trace(run, out, trace)
    run.finish(_dir_manifest(out))
    print(f"pre-training finished at stage {ckpt.stage} (step {ckpt.global_step}) -> {out}")


def cmd_finetune(args) -> None:
    run = Run("finetune", args)
    cfg = _load_config(run, args)
    init = pipeline.Checkpoint.load(run.input(args.init)) if args.init else None
    resume = pipeline.Checkpoint.load(run.input(args.resume)) if args.resume else None
    if args.vocab:
        vocab = _load_vocab(run, args.vocab)
    elif init is not None or resume is not None:
        vocab = (init or resume).vocab
    else:
        raise UsageError("--vocab is required without --init or --resume")
    lists = _load_labeled(run, args.labels, vocab, _texts(run, args.texts), args.features)
    ckpt, trace = pipeline.finetune(lists, init, cfg, vocab, resume=resume)
    out = Path(args.out)
    ckpt.save(out / "checkpoint")
    run.output(out / "checkpoint")
    _write_trace(run, out, trace)
    run.finish(_dir_manifest(out))
    print(f"fine-tuning finished (step {ckpt.global_step}) -> {out}")


def _report_outputs(run: Run, out: Path, report) -> None:
    atomic_write(run.output(out / "report.csv"), report.to_csv())
    atomic_write(run.output(out / "report.txt"), report.table() + "\n")


def cmd_evaluate(args) -> None:
    run = Run("evaluate", args)
    cutoffs = (args.k,)
    out = Path(args.out) if args.out else None
    if args.run:
        if not args.qrels:
            raise UsageError("--run needs --qrels")
        qrels = _load_qrels(run, args.qrels)
        report = evaluate_run(corpus.read_run(run.input(args.run)), qrels, cutoffs)
    elif args.checkpoint:
        if not args.labels:
            raise UsageError("--checkpoint needs --labels")
        ckpt = pipeline.Checkpoint.load(run.input(args.checkpoint))
        lists = _load_labeled(run, args.labels, ckpt.vocab, _texts(run, args.texts), args.features)
        trainer = pipeline.Trainer(ckpt.config, ckpt.vocab, ckpt.encoder_config)
        trainer.model.load_state_dict(ckpt.encoder_state)
        trainer.head = ckpt.head()
        feats = (pipeline.fused_features(lists, trainer.head.feature_dim)
                 if trainer.head is not None and trainer.head.feature_dim else None)
        entries, scores = [], []
        for i, lst in enumerate(lists):
            s = trainer.score_list(lst, None if feats is None else feats[i])
            scores.append(s)
            order = clicksim.rank_order(s, lst.docids)
            entries += [corpus.RunEntry(lst.qid, lst.docids[j], r, float(s[j]), "prerank")
                        for r, j in enumerate(order, 1)]
        from .evaluation import evaluate_scored_lists
        report = evaluate_scored_lists(lists, scores, cutoffs)
        if out is not None:
            out.mkdir(parents=True, exist_ok=True)
            atomic_write(run.output(out / "run.trec"),
                         "".join(corpus.serialize_run_line(e) + "\n" for e in entries))
    else:
        raise UsageError("evaluate needs --run with --qrels, or --checkpoint with --labels")
    run.config = {"k": args.k}
    print(report.table())
    if args.compare:
        if not args.run:
            raise UsageError("--compare applies to --run evaluation")
        base = evaluate_run(corpus.read_run(run.input(args.compare)), _load_qrels(run, args.qrels), cutoffs)
        for name in report.means:
            a, b = report.values(name), base.values(name)
            common = sorted(set(a) & set(b))
            if len(common) >= 2:
                p = paired_test([a[q] for q in common], [b[q] for q in common])
                print(f"  {name:<10} delta {report.means[name] - base.means[name]:+.4f}  p={p:.4g}")
        if args.queries and out is not None:
            qtext = _texts(run, [args.queries])
            metric = f"NDCG@{args.k}"
            a, b = report.values(metric), base.values(metric)
            common = sorted(set(a) & set(b) & set(qtext))
            rows = length_buckets({q: len(corpus.split_tokens(qtext[q])) for q in common},
                                  {q: b[q] for q in common}, {q: a[q] for q in common})
            out.mkdir(parents=True, exist_ok=True)
            atomic_write(run.output(out / "buckets.csv"), buckets_csv(rows))
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        _report_outputs(run, out, report)
        run.finish(_dir_manifest(out))


def cmd_regime(args) -> None:
    run = Run("regime", args)
    cfg = _load_config(run, args)
    vocab = _load_vocab(run, args.vocab)
    texts = _texts(run, args.texts)
    train = _load_labeled(run, args.labels, vocab, texts, args.features) if args.labels else []
    evals = _load_labeled(run, args.eval_labels, vocab, texts, args.eval_features)
    sessions = _load_sessions(run, args, vocab) if args.which != "label_only" else []
    curve = pipeline.regime(train, sessions, evals, cfg, args.which, vocab, (args.k,))
    run.config["which"] = args.which
    out = Path(args.out)
    atomic_write(run.output(out / "curve.csv"), curve.to_csv())
    _write_trace(run, out, curve.trace)
    run.finish(_dir_manifest(out))
    for p in curve.points:
        print(f"step {p.step:>6} {p.stage:<6} NDCG@{args.k} {p.report.means[f'NDCG@{args.k}']:.4f}")


def cmd_ablate(args) -> None:
    run = Run("ablate", args)
    cfg = _load_config(run, args)
    vocab = _load_vocab(run, args.vocab)
    texts = _texts(run, args.texts)
    train = _load_labeled(run, args.labels, vocab, texts, args.features)
    evals = _load_labeled(run, args.eval_labels, vocab, texts, args.eval_features)
    sessions = _load_sessions(run, args, vocab)
    table = pipeline.ablation_suite(train, evals, sessions, cfg, vocab, (args.k,))
    out = Path(args.out)
    atomic_write(run.output(out / "ablation.csv"), table.to_csv())
    atomic_write(run.output(out / "ablation.txt"), table.table(f"NDCG@{args.k}") + "\n")
    run.finish(_dir_manifest(out))
    print(table.table(f"NDCG@{args.k}"))


def cmd_make_synthetic(args) -> None:
    run = Run("make-synthetic", args)
    seed = 0 if args.seed is None else args.seed
    spec = synthetic.TopicSpec(n_queries=args.queries, docs_per_query=args.docs, seed=seed)
    corp = synthetic.topic_corpus(spec)
    vocab = corp.vocab()
    lists = corp.labeled(vocab)
    order = np.random.default_rng(seed).permutation(len(lists))
    n_eval, n_train = args.eval_queries, args.train_queries
    if n_eval + n_train > len(lists):
        raise UsageError("--eval-queries plus --train-queries exceeds --queries")
    parts = {"eval": order[:n_eval], "train": order[n_eval:n_eval + n_train], "click": order[n_eval + n_train:]}
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for name, idx in parts.items():
        atomic_write(run.output(out / f"{name}.jsonl"),
                     "".join(corpus.labeled_to_json(lists[i]) + "\n" for i in sorted(idx)))
    atomic_write(run.output(out / "vocab.json"), vocab.to_json() + "\n")
    run.config = asdict(spec) | {"eval_queries": n_eval, "train_queries": n_train}
    run.finish(_dir_manifest(out))
    print(f"{len(lists)} synthetic queries (eval {n_eval}, train {n_train}) -> {out}")


# --- parser ---------------------------------------------------------------------------------------------

def _common(p: argparse.ArgumentParser, config: bool = False) -> None:
    if config:
        p.add_argument("--config", metavar="PATH", help="training config JSON (defaults apply when omitted)")
    p.add_argument("--seed", type=int, help="seed for all randomness of this command (overrides the config seed)")


def _click_inputs(p: argparse.ArgumentParser) -> None:
    p.add_argument("--sessions", metavar="FILE", help="click sessions JSONL")
    p.add_argument("--clicks", metavar="TSV", help="click log TSV (qid, query, docid[, url]); needs --run")
    p.add_argument("--run", metavar="FILE", help="TREC run supplying the candidate pool for --clicks")
    p.add_argument("--depth", type=int, default=100, help="run documents per query used as the pool (default 100)")


def _text_inputs(p: argparse.ArgumentParser) -> None:
    p.add_argument("--texts", metavar="FILE", action="append",
                   help="id<TAB>text table for query/document text; repeatable")


def build_parser() -> argparse.ArgumentParser:
    parser = JsonArgumentParser(prog="prerank", description="Click-log pre-training and feature-fused "
                                "fine-tuning for relevance ranking.", epilog=EPILOG,
                                formatter_class=argparse.RawDescriptionHelpFormatter)
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}",
                        help="print the tool version and exit")
    parser.add_argument("--log-level", default="WARNING", choices=["DEBUG", "INFO", "WARNING", "ERROR"],
                        help="logging verbosity on stderr (default WARNING)")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND", parser_class=JsonArgumentParser)
    sub.required = True

    def add(name: str, func, help_: str) -> argparse.ArgumentParser:
        p = sub.add_parser(name, help=help_, description=help_, epilog=EPILOG,
                           formatter_class=argparse.RawDescriptionHelpFormatter)
        p.set_defaults(func=func)
        return p

    p = add("build-vocab", cmd_build_vocab, "build a vocabulary from session, labeled and text files")
    p.add_argument("--sessions", metavar="FILE", action="append", help="click sessions JSONL; repeatable")
    p.add_argument("--labels", metavar="FILE", action="append", help="labeled lists JSONL; repeatable")
    _text_inputs(p)
    p.add_argument("--min-freq", type=int, default=1, help="drop tokens seen fewer times (default 1)")
    p.add_argument("--max-size", type=int, help="cap on vocabulary size including special tokens")
    p.add_argument("--seed", type=int, help="accepted for uniformity; vocabulary building is deterministic")
    p.add_argument("--out", required=True, metavar="FILE", help="output vocabulary JSON")

    p = add("extract-features", cmd_extract_features, "compute the 21 native features as a LETOR file")
    p.add_argument("--labels", required=True, metavar="FILE", help="labeled lists (JSONL, or LETOR with --texts)")
    _text_inputs(p)
    p.add_argument("--vocab", required=True, metavar="FILE", help="vocabulary JSON")
    p.add_argument("--checkpoint", metavar="DIR", help="take the embedding table from this checkpoint's encoder")
    p.add_argument("--embedding-dim", type=int, default=64,
                   help="width of the seeded random embedding table used without --checkpoint (default 64)")
    _common(p)
    p.add_argument("--out", required=True, metavar="FILE", help="output LETOR file (schema written to FILE.schema.json)")

    p = add("simulate", cmd_simulate, "simulate position-biased click sessions from graded labels")
    p.add_argument("--labels", required=True, metavar="FILE", help="labeled lists (JSONL, or LETOR)")
    _text_inputs(p)
    p.add_argument("--vocab", metavar="FILE", help="vocabulary JSON (built from the input text when omitted)")
    p.add_argument("--sessions", type=int, default=10, help="sessions per query (default 10)")
    p.add_argument("--depth", type=int, default=20, help="impressions per session (default 20)")
    p.add_argument("--epsilon", type=float, default=0.1, help="click noise for irrelevant documents (default 0.1)")
    p.add_argument("--propensity-power", type=float, default=1.0,
                   help="examination probability is 1/rank**power (default 1)")
    p.add_argument("--max-grade", type=int, help="top relevance grade (default: the largest grade in the input)")
    p.add_argument("--ranker", choices=["auto", "bm25", "feature"], default="auto",
                   help="production ranker ordering the impressions; auto = bm25 when documents have text")
    p.add_argument("--rank-feature", type=int, default=1, help="1-based feature column for --ranker feature")
    _common(p)
    p.add_argument("--out", required=True, metavar="FILE", help="output sessions JSONL")

    p = add("pretrain", cmd_pretrain, "masked-token stage then click stage")
    _common(p, config=True)
    p.add_argument("--vocab", required=True, metavar="FILE", help="vocabulary JSON")
    _click_inputs(p)
    _text_inputs(p)
    p.add_argument("--resume", metavar="DIR", help="continue from this pre-training checkpoint")
    p.add_argument("--out", required=True, metavar="DIR", help="output directory (checkpoint/, trace.csv)")

    p = add("finetune", cmd_finetune, "fine-tune on graded labels, optionally from a pre-trained checkpoint")
    _common(p, config=True)
    p.add_argument("--labels", required=True, metavar="FILE", help="labeled lists (JSONL, or LETOR with --texts)")
    _text_inputs(p)
    p.add_argument("--features", metavar="FILE", help="LETOR file whose feature rows are joined by (qid, docid)")
    p.add_argument("--vocab", metavar="FILE", help="vocabulary JSON (defaults to the checkpoint's)")
    p.add_argument("--init", metavar="DIR", help="pre-trained checkpoint providing the encoder")
    p.add_argument("--resume", metavar="DIR", help="continue from this fine-tuning checkpoint")
    p.add_argument("--out", required=True, metavar="DIR", help="output directory (checkpoint/, trace.csv)")

    p = add("evaluate", cmd_evaluate, "evaluate a run file or a checkpoint against graded labels")
    p.add_argument("--run", metavar="FILE", help="TREC run to evaluate")
    p.add_argument("--qrels", metavar="FILE", help="judgments: labeled JSONL, LETOR file with docids, or TREC qrels")
    p.add_argument("--compare", metavar="FILE", help="baseline run for paired t-tests per metric")
    p.add_argument("--queries", metavar="FILE", help="qid<TAB>query text; with --compare, writes buckets.csv")
    p.add_argument("--checkpoint", metavar="DIR", help="score --labels with this checkpoint instead of --run")
    p.add_argument("--labels", metavar="FILE", help="labeled lists scored with --checkpoint")
    _text_inputs(p)
    p.add_argument("--features", metavar="FILE", help="LETOR feature rows for a fused checkpoint")
    p.add_argument("--k", type=int, default=10, help="metric cutoff (default 10)")
    p.add_argument("--seed", type=int, help="accepted for uniformity; evaluation is deterministic")
    p.add_argument("--out", metavar="DIR", help="write report.csv, report.txt (and run.trec, buckets.csv)")

    p = add("regime", cmd_regime, "run a training regime and record its evaluation curve")
    _common(p, config=True)
    p.add_argument("--which", required=True, choices=list(pipeline.REGIMES), help="training regime")
    p.add_argument("--vocab", required=True, metavar="FILE", help="vocabulary JSON")
    p.add_argument("--labels", metavar="FILE", help="labeled training lists")
    p.add_argument("--features", metavar="FILE", help="LETOR feature rows for the training lists")
    p.add_argument("--eval-labels", required=True, metavar="FILE", help="held-out labeled lists")
    p.add_argument("--eval-features", metavar="FILE", help="LETOR feature rows for the held-out lists")
    _click_inputs(p)
    _text_inputs(p)
    p.add_argument("--k", type=int, default=10, help="metric cutoff (default 10)")
    p.add_argument("--out", required=True, metavar="DIR", help="output directory (curve.csv, trace.csv)")

    p = add("ablate", cmd_ablate, "feature-fusion x pre-training-objective ablation table")
    _common(p, config=True)
    p.add_argument("--vocab", required=True, metavar="FILE", help="vocabulary JSON")
    p.add_argument("--labels", required=True, metavar="FILE", help="labeled training lists")
    p.add_argument("--features", metavar="FILE", help="LETOR feature rows for the training lists")
    p.add_argument("--eval-labels", required=True, metavar="FILE", help="held-out labeled lists")
    p.add_argument("--eval-features", metavar="FILE", help="LETOR feature rows for the held-out lists")
    _click_inputs(p)
    _text_inputs(p)
    p.add_argument("--k", type=int, default=10, help="metric cutoff (default 10)")
    p.add_argument("--out", required=True, metavar="DIR", help="output directory (ablation.csv, ablation.txt)")

    p = add("make-synthetic", cmd_make_synthetic, "write a synthetic topic corpus split into eval/train/click parts")
    p.add_argument("--queries", type=int, default=500, help="number of queries (default 500)")
    p.add_argument("--docs", type=int, default=20, help="documents per query (default 20)")
    p.add_argument("--eval-queries", type=int, default=100, help="queries in eval.jsonl (default 100)")
    p.add_argument("--train-queries", type=int, default=50, help="queries in train.jsonl (default 50)")
    p.add_argument("--seed", type=int, help="corpus seed (default 0)")
    p.add_argument("--out", required=True, metavar="DIR", help="output directory")
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=args.log_level, format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except UsageError as e:
        _emit_error("usage", str(e), EXIT_USAGE)
        return EXIT_USAGE
    except pipeline.ConfigError as e:
        _emit_error("config", str(e), EXIT_CONFIG)
        return EXIT_CONFIG
    except (FileNotFoundError, IsADirectoryError) as e:
        _emit_error("data", str(e), EXIT_DATA)
        return EXIT_DATA
    except (ParseError, pipeline.DataError, LeakageError, KeyError) as e:
        _emit_error("data", str(e.args[0] if e.args else e), EXIT_DATA)
        return EXIT_DATA
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
