"""Transformer pair encoder, masked-token objective and the pointwise head."""

from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Sequence

import numpy as np

from . import autodiff as ad
from . import nn
from .autodiff import Tensor
from .corpus import MASK, N_SPECIAL, PAD, PairInput


@dataclass(frozen=True)
class EncoderConfig:
    vocab_size: int
    layers: int = 2
    hidden: int = 64
    heads: int = 4
    ffn: int = 128
    max_len: int = 128
    dropout: float = 0.1

    def __post_init__(self):
        if self.hidden % self.heads:
            raise ValueError(f"hidden {self.hidden} not divisible by heads {self.heads}")
        if self.max_len < 5:
            raise ValueError("max_len must be >= 5")
        if self.vocab_size < N_SPECIAL:
            raise ValueError("vocab_size must cover the special tokens")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must be in [0, 1)")

    @property
    def head_dim(self) -> int:
        return self.hidden // self.heads

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "EncoderConfig":
        return cls(**d)


# BERT-base dimensions; documented for reference, far beyond what this numpy stack can train.
FULL_PROFILE = dict(layers=12, hidden=768, heads=12, ffn=3072, max_len=256, dropout=0.1)
TOY_PROFILE = dict(layers=2, hidden=64, heads=4, ffn=128, max_len=128, dropout=0.1)


class EncoderModel(nn.Module):
    def __init__(self, config: EncoderConfig, seed: int = 0):
        super().__init__()
        self.config = config
        rng = np.random.default_rng(seed)
        c = config
        self.add("emb.tok", nn.normal(rng, (c.vocab_size, c.hidden)))
        self.add("emb.pos", nn.normal(rng, (c.max_len, c.hidden)))
        self.add("emb.seg", nn.normal(rng, (2, c.hidden)))
        nn.add_layer_norm(self, "emb.ln", c.hidden)
        for i in range(c.layers):
            nn.add_transformer_block(self, f"layer{i}", c.hidden, c.heads, c.head_dim, c.ffn, rng)
        self.add("mlm.w", nn.normal(rng, (c.hidden, c.hidden)))
        self.add("mlm.b", np.zeros(c.hidden))
        nn.add_layer_norm(self, "mlm.ln", c.hidden)
        self.add("mlm.out_w", nn.normal(rng, (c.hidden, c.vocab_size)))
        self.add("mlm.out_b", np.zeros(c.vocab_size))

    @property
    def token_embeddings(self) -> np.ndarray:
        return self.params["emb.tok"].data


def pad_batch(pairs: Sequence[PairInput], max_len: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    lengths = np.array([len(p) for p in pairs], dtype=np.int64)
    if lengths.size and lengths.max() > max_len:
        raise ValueError(f"pair length {lengths.max()} exceeds max_len {max_len}; truncate with encode_pair")
    T = int(lengths.max()) if lengths.size else 0
    ids = np.full((len(pairs), T), PAD, dtype=np.int64)
    segs = np.zeros((len(pairs), T), dtype=np.int64)
    for i, p in enumerate(pairs):
        ids[i, :len(p)] = p.ids
        segs[i, :len(p)] = p.segment_ids
    return ids, segs, lengths


def encode_batch(model: EncoderModel, pairs: Sequence[PairInput], train: bool = False,
                 rng: np.random.Generator | None = None) -> Tensor:
    """Final-layer states ``[B, T, hidden]`` for a padded batch of pairs."""
    c = model.config
    ids, segs, lengths = pad_batch(pairs, c.max_len)
    drop_rng = rng if train else None
    T = ids.shape[1]
    x = (ad.embedding_lookup(model["emb.tok"], ids)
         + ad.embedding_lookup(model["emb.pos"], np.arange(T))
         + ad.embedding_lookup(model["emb.seg"], segs))
    x = ad.dropout_mask(nn.layer_norm(model, "emb.ln", x), c.dropout, drop_rng)
    mask = nn.key_mask(lengths, T)
    for i in range(c.layers):
        x = nn.transformer_block(model, f"layer{i}", x, c.heads, c.head_dim, mask, c.dropout, drop_rng)
    return x


def encode(pair: PairInput, model: EncoderModel, train: bool = False,
           rng: np.random.Generator | None = None) -> tuple[Tensor, Tensor]:
    """States ``[T, hidden]`` and the [CLS] vector for a single pair."""
    states = encode_batch(model, [pair], train, rng)
    return states[0], states[0, 0]


def cls_vectors(model: EncoderModel, pairs: Sequence[PairInput], train: bool = False,
                rng: np.random.Generator | None = None) -> Tensor:
    return encode_batch(model, pairs, train, rng)[:, 0]


# --- masked language modelling ---------------------------------------------------------

@dataclass(frozen=True)
class MaskedBatch:
    ids: tuple[int, ...]
    segment_ids: tuple[int, ...]
    positions: tuple[int, ...]
    targets: tuple[int, ...]

    @property
    def pair(self) -> PairInput:
        return PairInput(self.ids, self.segment_ids, len(self.ids))


def mlm_mask(pair: PairInput, rate: float, rng: np.random.Generator, vocab_size: int) -> MaskedBatch:
    """Select ``round(rate * maskable)`` non-special positions; corrupt 80/10/10."""
    if not 0.0 < rate < 1.0:
        raise ValueError("mask rate must be in (0, 1)")
    ids = list(pair.ids)
    maskable = [i for i, t in enumerate(ids) if t >= N_SPECIAL]
    n = int(np.floor(rate * len(maskable) + 0.5))
    if n == 0:
        return MaskedBatch(tuple(ids), pair.segment_ids, (), ())
    chosen = np.sort(rng.choice(np.array(maskable), size=n, replace=False))
    targets = tuple(ids[i] for i in chosen)
    for i in chosen:
        u = rng.random()
        if u < 0.8:
            ids[i] = MASK
        elif u < 0.9 and vocab_size > N_SPECIAL:
            ids[i] = int(rng.integers(N_SPECIAL, vocab_size))
    return MaskedBatch(tuple(ids), pair.segment_ids, tuple(int(i) for i in chosen), targets)


def _as_batches(batch) -> list[MaskedBatch]:
    return [batch] if isinstance(batch, MaskedBatch) else list(batch)


def mlm_logits(model: EncoderModel, batch, train: bool = False,
               rng: np.random.Generator | None = None) -> Tensor:
    """Vocabulary logits ``[n_masked, V]`` at the masked positions, row-major over the batch."""
    batches = _as_batches(batch)
    states = encode_batch(model, [b.pair for b in batches], train, rng)
    rows = np.array([r for r, b in enumerate(batches) for _ in b.positions], dtype=np.int64)
    cols = np.array([p for b in batches for p in b.positions], dtype=np.int64)
    h = states[rows, cols]
    h = nn.layer_norm(model, "mlm.ln", ad.gelu(ad.linear(h, model["mlm.w"], model["mlm.b"])))
    return ad.linear(h, model["mlm.out_w"], model["mlm.out_b"])


def mlm_loss(model: EncoderModel, batch, train: bool = False,
             rng: np.random.Generator | None = None) -> Tensor:
    """Mean negative log-likelihood of the original tokens at masked positions."""
    batches = _as_batches(batch)
    targets = np.array([t for b in batches for t in b.targets], dtype=np.int64)
    if targets.size == 0:
        return Tensor(0.0)
    logits = mlm_logits(model, batches, train, rng)
    onehot = np.zeros(logits.shape)
    onehot[np.arange(targets.size), targets] = 1.0
    return ad.softmax_cross_entropy(logits, onehot)


# --- pointwise head ----------------------------------------------------------------------

class PointwiseHead(nn.Module):
    """MLP over ``[h ; features]`` plus a linear wide term on the features.

    Feature-facing weights start at zero, so a freshly built fused head scores
    exactly like its deep-only counterpart with the same deep weights.
    """

    kind = "pointwise"

    def __init__(self, input_dim: int, feature_dim: int = 0, hidden: int | None = None, seed: int = 0):
        super().__init__()
        rng = np.random.default_rng(seed)
        self.input_dim = input_dim
        self.feature_dim = feature_dim
        self.hidden = hidden or input_dim
        w1 = np.vstack([nn.normal(rng, (input_dim, self.hidden)), np.zeros((feature_dim, self.hidden))])
        self.add("w1", w1)
        self.add("b1", np.zeros(self.hidden))
        self.add("w2", nn.normal(rng, (self.hidden, 1)))
        self.add("b2", np.zeros(1))
        if feature_dim:
            self.add("wide", np.zeros((feature_dim, 1)))

    @property
    def fused(self) -> bool:
        return self.feature_dim > 0

    def spec(self) -> dict:
        return {"kind": self.kind, "input_dim": self.input_dim, "feature_dim": self.feature_dim,
                "hidden": self.hidden}

    def logits(self, h: Tensor, features: np.ndarray | None = None) -> Tensor:
        """One logit per row of ``h`` (``[B, input_dim]``)."""
        if h.ndim != 2 or h.shape[1] != self.input_dim:
            raise ad.ShapeError(f"pointwise head: expected [B, {self.input_dim}] input, got {h.shape}")
        x = h
        if self.fused:
            if features is None:
                raise ValueError("fused pointwise head requires features")
            f = np.asarray(features, dtype=np.float64)
            if f.ndim != 2 or f.shape != (h.shape[0], self.feature_dim):
                raise ad.ShapeError(f"pointwise head: expected features [{h.shape[0]}, {self.feature_dim}], "
                                    f"got {f.shape}")
            x = ad.concat([h, Tensor(f)], axis=1)
        elif features is not None and np.asarray(features).size:
            raise ValueError("unfused pointwise head does not accept features")
        z = ad.gelu(ad.linear(x, self["w1"], self["b1"]))
        out = ad.linear(z, self["w2"], self["b2"])
        if self.fused:
            out = out + ad.matmul(Tensor(f), self["wide"])
        return out.reshape(h.shape[0])


def pointwise_click_loss(model: EncoderModel, head: PointwiseHead, pairs, clicks,
                         features: np.ndarray | None = None, train: bool = False,
                         rng: np.random.Generator | None = None, reduction: str = "mean") -> Tensor:
    """Binary cross-entropy between ``sigmoid(head(h))`` and the click (or binarised label)."""
    if isinstance(pairs, PairInput):
        pairs, clicks = [pairs], [clicks]
        if features is not None:
            features = np.asarray(features, dtype=np.float64).reshape(1, -1)
    h = cls_vectors(model, pairs, train, rng)
    return ad.bce_with_logits(head.logits(h, features), np.asarray(clicks, dtype=np.float64), reduction)


def pointwise_scores(model: EncoderModel, head: PointwiseHead, pairs: Sequence[PairInput],
                     features: np.ndarray | None = None) -> np.ndarray:
    with ad.no_grad():
        return head.logits(cls_vectors(model, pairs), features).data.copy()


def pointwise_score_fused(model: EncoderModel, head: PointwiseHead, pair: PairInput,
                          features) -> float:
    """Logit of ``head([h ; features])`` for one pair; deep part first, wide part second."""
    values = getattr(features, "values", features)
    f = np.asarray(values, dtype=np.float64).reshape(1, -1)
    if not head.fused or f.shape[1] != head.feature_dim:
        raise ad.ShapeError(f"feature width {f.shape[1]} does not match head feature width {head.feature_dim}")
    return float(pointwise_scores(model, head, [pair], f)[0])
