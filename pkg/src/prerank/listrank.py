"""Permutation-equivariant set scoring (multi-head self-attention blocks over the
documents of one query) and the listwise cross-entropy loss."""

from __future__ import annotations

import math
from typing import Sequence

import numpy as np

from . import autodiff as ad
from . import nn
from .autodiff import Tensor

DEFAULT_MAX_LIST = 50


class SetRankHead(nn.Module):
    """``blocks`` attention blocks over document rows followed by a row-wise linear scorer.

    There is no position or ordinal signal anywhere, so permuting the input
    rows permutes the output scores identically.
    """

    kind = "setrank"

    def __init__(self, input_dim: int, feature_dim: int = 0, blocks: int = 2, heads: int = 4,
                 ffn: int | None = None, dropout: float = 0.1, max_list: int = DEFAULT_MAX_LIST,
                 seed: int = 0):
        super().__init__()
        rng = np.random.default_rng(seed)
        self.input_dim = input_dim
        self.feature_dim = feature_dim
        self.blocks = blocks
        self.heads = heads
        self.width = input_dim + feature_dim
        self.head_dim = math.ceil(self.width / heads)
        self.ffn_dim = ffn or 2 * self.width
        self.dropout = dropout
        self.max_list = max_list
        for b in range(blocks):
            nn.add_transformer_block(self, f"msab{b}", self.width, heads, self.head_dim, self.ffn_dim, rng)
        self.add("rff.w", nn.normal(rng, (self.width, 1)))
        self.add("rff.b", np.zeros(1))

    @property
    def fused(self) -> bool:
        return self.feature_dim > 0

    def spec(self) -> dict:
        return {"kind": self.kind, "input_dim": self.input_dim, "feature_dim": self.feature_dim,
                "blocks": self.blocks, "heads": self.heads, "ffn": self.ffn_dim,
                "dropout": self.dropout, "max_list": self.max_list}


def _fuse(H: Tensor, psi: np.ndarray | None, head: SetRankHead) -> Tensor:
    if H.shape[-1] != head.input_dim:
        raise ad.ShapeError(f"score_set: representation width {H.shape[-1]} != head input {head.input_dim}")
    if not head.fused:
        if psi is not None and np.asarray(psi).size:
            raise ValueError("score_set: unfused head does not accept features")
        return H
    if psi is None:
        raise ValueError("score_set: fused head requires a feature matrix")
    psi = np.asarray(psi, dtype=np.float64)
    if psi.shape != H.shape[:-1] + (head.feature_dim,):
        raise ad.ShapeError(f"score_set: features {psi.shape} do not match representations {H.shape} "
                            f"with feature width {head.feature_dim}")
    return ad.concat([H, Tensor(psi)], axis=-1)


def score_sets(H: Tensor, psi: np.ndarray | None, lengths: Sequence[int], head: SetRankHead,
               train: bool = False, rng: np.random.Generator | None = None) -> Tensor:
    """Scores ``[B, M]`` for a padded batch of sets ``H`` (``[B, M, d]``); padded rows are ignored."""
    lengths = np.asarray(lengths, dtype=np.int64)
    B, M = H.shape[0], H.shape[1]
    if lengths.shape != (B,) or lengths.min(initial=1) < 1 or lengths.max(initial=0) > M:
        raise ValueError(f"score_sets: bad set lengths {lengths.tolist()} for padded size {M}")
    if M > head.max_list:
        raise ValueError(f"score_sets: list size {M} exceeds configured maximum {head.max_list}")
    x = _fuse(H, psi, head)
    mask = nn.key_mask(lengths, M)
    drop_rng = rng if train else None
    for b in range(head.blocks):
        x = nn.transformer_block(head, f"msab{b}", x, head.heads, head.head_dim, mask, head.dropout, drop_rng)
    return ad.linear(x, head["rff.w"], head["rff.b"]).reshape(B, M)


def score_set(H, psi: np.ndarray | None, head: SetRankHead, train: bool = False,
              rng: np.random.Generator | None = None) -> Tensor:
    """One score per row of ``H`` (``[m, d]``), fused with ``psi`` (``[m, F]``) when given."""
    H = ad.as_tensor(H)
    if H.ndim != 2:
        raise ad.ShapeError(f"score_set: expected [m, d] representations, got {H.shape}")
    if psi is not None:
        psi = np.asarray(psi, dtype=np.float64)[None]
    return score_sets(H.reshape(1, *H.shape), psi, [H.shape[0]], head, train, rng)[0]


def listwise_label_targets(labels: Sequence[int]) -> np.ndarray:
    """Gain-shaped targets ``2**label - 1``; binary labels map to themselves."""
    return np.exp2(np.asarray(labels, dtype=np.float64)) - 1.0


def target_distribution(targets) -> np.ndarray | None:
    t = np.asarray(targets, dtype=np.float64)
    if np.any(t < 0):
        raise ValueError("listwise targets must be non-negative")
    total = t.sum()
    return None if total <= 0 else t / total


def listwise_ce(scores: Tensor, targets) -> Tensor | None:
    """``-sum_i p_i log softmax(scores)_i`` with ``p = targets / sum(targets)``.

    Returns ``None`` when every target is zero; callers count such lists as skipped.
    """
    p = target_distribution(targets)
    if p is None:
        return None
    scores = ad.as_tensor(scores)
    if scores.shape != p.shape:
        raise ad.ShapeError(f"listwise_ce: scores {scores.shape} vs targets {p.shape}")
    return ad.softmax_cross_entropy(scores.reshape(1, -1), p[None], reduction="sum")


def listwise_ce_batch(scores: Tensor, targets: Sequence, lengths: Sequence[int]) -> tuple[Tensor | None, int]:
    """Mean listwise loss over a padded ``[B, M]`` score batch; returns (loss, skipped lists)."""
    B, M = scores.shape
    keep, dist = [], []
    for i, (t, n) in enumerate(zip(targets, lengths)):
        p = target_distribution(t)
        if p is None:
            continue
        row = np.zeros(M)
        row[:n] = p
        keep.append(i)
        dist.append(row)
    skipped = B - len(keep)
    if not keep:
        return None, skipped
    mask = nn.key_mask(np.asarray(lengths)[keep], M)[:, 0, 0, :]
    logits = scores[np.asarray(keep)] + mask
    return ad.softmax_cross_entropy(logits, np.vstack(dist)), skipped
