"""Parameter containers and the attention / feed-forward blocks shared by the
encoder and the set-ranking head."""

from __future__ import annotations

import hashlib
from typing import Mapping

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor

INIT_STD = 0.02
MASK_VALUE = -1e9


class Module:
    """A flat, ordered name -> parameter mapping."""

    def __init__(self):
        self.params: dict[str, Tensor] = {}

    def add(self, name: str, array: np.ndarray) -> Tensor:
        t = ad.parameter(array)
        self.params[name] = t
        return t

    def __getitem__(self, name: str) -> Tensor:
        return self.params[name]

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None

    def state_dict(self) -> dict[str, np.ndarray]:
        return {k: p.data.copy() for k, p in self.params.items()}

    def load_state_dict(self, state: Mapping[str, np.ndarray]) -> None:
        missing = set(self.params) - set(state)
        extra = set(state) - set(self.params)
        if missing or extra:
            raise KeyError(f"state mismatch: missing={sorted(missing)} unexpected={sorted(extra)}")
        for k, p in self.params.items():
            if state[k].shape != p.shape:
                raise ValueError(f"shape mismatch for {k}: {state[k].shape} vs {p.shape}")
            p.data = np.array(state[k], dtype=np.float64, copy=True)

    def digest(self) -> str:
        """Content hash over parameter names, shapes and values."""
        h = hashlib.sha256()
        for k in sorted(self.params):
            a = np.ascontiguousarray(self.params[k].data, dtype="<f8")
            h.update(k.encode())
            h.update(str(a.shape).encode())
            h.update(a.tobytes())
        return h.hexdigest()

    def n_parameters(self) -> int:
        return sum(p.size for p in self.params.values())


def normal(rng: np.random.Generator, shape, std: float = INIT_STD) -> np.ndarray:
    return rng.normal(0.0, std, size=shape)


def add_attention(m: Module, prefix: str, width: int, heads: int, head_dim: int,
                  rng: np.random.Generator) -> None:
    inner = heads * head_dim
    for name in ("q", "k", "v"):
        m.add(f"{prefix}.w{name}", normal(rng, (width, inner)))
        m.add(f"{prefix}.b{name}", np.zeros(inner))
    m.add(f"{prefix}.wo", normal(rng, (inner, width)))
    m.add(f"{prefix}.bo", np.zeros(width))


def add_layer_norm(m: Module, prefix: str, width: int) -> None:
    m.add(f"{prefix}.g", np.ones(width))
    m.add(f"{prefix}.b", np.zeros(width))


def add_ffn(m: Module, prefix: str, width: int, hidden: int, rng: np.random.Generator) -> None:
    m.add(f"{prefix}.w1", normal(rng, (width, hidden)))
    m.add(f"{prefix}.b1", np.zeros(hidden))
    m.add(f"{prefix}.w2", normal(rng, (hidden, width)))
    m.add(f"{prefix}.b2", np.zeros(width))


def key_mask(lengths: np.ndarray, size: int) -> np.ndarray:
    """Additive mask ``[B, 1, 1, size]``: 0 for real keys, a large negative for padding."""
    valid = np.arange(size)[None, :] < np.asarray(lengths)[:, None]
    return np.where(valid, 0.0, MASK_VALUE)[:, None, None, :]


def attention(m: Module, prefix: str, x: Tensor, heads: int, head_dim: int,
              mask: np.ndarray | None, dropout: float, rng: np.random.Generator | None) -> Tensor:
    """Multi-head self-attention over axis 1 of ``x`` (``[B, T, width]``)."""
    B, T, _ = x.shape

    def split(t: Tensor) -> Tensor:
        return t.reshape(B, T, heads, head_dim).transpose(0, 2, 1, 3)

    q = split(ad.linear(x, m[f"{prefix}.wq"], m[f"{prefix}.bq"]))
    k = split(ad.linear(x, m[f"{prefix}.wk"], m[f"{prefix}.bk"]))
    v = split(ad.linear(x, m[f"{prefix}.wv"], m[f"{prefix}.bv"]))
    scores = (q @ k.transpose(0, 1, 3, 2)) * (1.0 / np.sqrt(head_dim))
    if mask is not None:
        scores = scores + mask
    probs = ad.dropout_mask(ad.softmax(scores, axis=-1), dropout, rng)
    ctx = (probs @ v).transpose(0, 2, 1, 3).reshape(B, T, heads * head_dim)
    return ad.linear(ctx, m[f"{prefix}.wo"], m[f"{prefix}.bo"])


def layer_norm(m: Module, prefix: str, x: Tensor) -> Tensor:
    return ad.layer_norm(x, m[f"{prefix}.g"], m[f"{prefix}.b"])


def ffn(m: Module, prefix: str, x: Tensor) -> Tensor:
    h = ad.gelu(ad.linear(x, m[f"{prefix}.w1"], m[f"{prefix}.b1"]))
    return ad.linear(h, m[f"{prefix}.w2"], m[f"{prefix}.b2"])


def transformer_block(m: Module, prefix: str, x: Tensor, heads: int, head_dim: int,
                      mask: np.ndarray | None, dropout: float,
                      rng: np.random.Generator | None) -> Tensor:
    """Post-norm block: ``LN(x + Attn(x))`` then ``LN(. + FFN(.))``."""
    a = attention(m, f"{prefix}.attn", x, heads, head_dim, mask, dropout, rng)
    x = layer_norm(m, f"{prefix}.ln1", x + ad.dropout_mask(a, dropout, rng))
    f = ffn(m, f"{prefix}.ffn", x)
    return layer_norm(m, f"{prefix}.ln2", x + ad.dropout_mask(f, dropout, rng))


def add_transformer_block(m: Module, prefix: str, width: int, heads: int, head_dim: int,
                          hidden: int, rng: np.random.Generator) -> None:
    add_attention(m, f"{prefix}.attn", width, heads, head_dim, rng)
    add_layer_norm(m, f"{prefix}.ln1", width)
    add_ffn(m, f"{prefix}.ffn", width, hidden, rng)
    add_layer_norm(m, f"{prefix}.ln2", width)
