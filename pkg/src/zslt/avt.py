"""Attribute->visual decoder and its semantic mapping.

Attribute vectors query the encoded regions. The attended features go
through an FFN, and each attribute's feature is then scored against its
own word vector: psi_a = v_a^T W_3 F_a.

Parameter keys: wq (d_w, d), wk, wv, wo (d, d), w1 (d, d_ff), b1,
w2 (d_ff, d), b2, w3 (d_w, d).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import numerics as nx
from .attention import multihead_attention, xavier
from .errors import DimensionError, ParameterError
from .numerics import Tensor


@dataclass
class AttributeVocabulary:
    vectors: Tensor          # (A, d_w)
    names: list[str] = field(default_factory=list)

    def __post_init__(self):
        if not isinstance(self.vectors, Tensor):
            self.vectors = Tensor(self.vectors)
        if self.vectors.ndim != 2 or self.vectors.shape[0] < 1:
            raise DimensionError(f"attribute vectors must be (A, d_w) with A >= 1, got {self.vectors.shape}")
        if not self.names:
            self.names = [f"attr{i}" for i in range(self.vectors.shape[0])]
        if len(self.names) != self.vectors.shape[0]:
            raise DimensionError(f"{len(self.names)} attribute names for {self.vectors.shape[0]} vectors")

    @property
    def a(self) -> int:
        return self.vectors.shape[0]

    @property
    def d_w(self) -> int:
        return self.vectors.shape[1]


@dataclass
class AvtOutputs:
    F: Tensor       # (..., A, d)
    attn: Tensor    # (..., A, K)
    psi: Tensor     # (..., A)


def cross_attend_a2v(vocab: Tensor, u_aug: Tensor, params, heads: int = 1) -> tuple[Tensor, Tensor]:
    """Returns (F_hat (..., A, d), attention (..., A, K))."""
    if vocab.shape[-1] != params["wq"].shape[0]:
        raise DimensionError(f"vocab width {vocab.shape[-1]} does not match query weights {params['wq'].shape}")
    if u_aug.shape[-1] != params["wk"].shape[0]:
        raise DimensionError(f"region width {u_aug.shape[-1]} does not match key weights {params['wk'].shape}")
    q = nx.matmul(vocab, params["wq"])
    k = nx.matmul(u_aug, params["wk"])
    v = nx.matmul(u_aug, params["wv"])
    heads_out, attn = multihead_attention(q, k, v, heads)
    return nx.matmul(heads_out, params["wo"]), attn


def ffn(x: Tensor, params) -> Tensor:
    if x.shape[-1] != params["w1"].shape[0]:
        raise DimensionError(f"FFN input width {x.shape[-1]} does not match w1 {params['w1'].shape}")
    return nx.linear(nx.relu(nx.linear(x, params["w1"], params["b1"])), params["w2"], params["b2"])


ffn_avt = ffn


def map_m1(f: Tensor, vocab: Tensor, params) -> Tensor:
    """psi_a = v_a^T W_3 F_a for every attribute; shape (..., A)."""
    w3 = params["w3"]
    if f.shape[-2:] != (vocab.shape[0], w3.shape[1]) or vocab.shape[1] != w3.shape[0]:
        raise DimensionError(f"M1 shapes inconsistent: F {f.shape}, V_A {vocab.shape}, W_3 {w3.shape}")
    projected = nx.matmul(f, nx.transpose(w3))   # (..., A, d_w)
    return nx.sum(nx.mul(projected, vocab), axis=-1)


def forward_avt(vocab: Tensor, u_aug: Tensor, params, heads: int = 1) -> AvtOutputs:
    f_hat, attn = cross_attend_a2v(vocab, u_aug, params, heads)
    f = ffn(f_hat, params)
    return AvtOutputs(F=f, attn=attn, psi=map_m1(f, vocab, params))


def init_decoder_params(rng: np.random.Generator, d_w: int, d: int, d_ff: int | None = None,
                        dtype=np.float64, queries_from_vocab: bool = True) -> dict[str, Tensor]:
    """Weights for either decoder. Queries read from the vocab (AVT) or from regions (VAT)."""
    if d < 1 or d_w < 1:
        raise ParameterError("decoder widths must be positive")
    d_ff = d_ff or d
    q_in, kv_in = (d_w, d) if queries_from_vocab else (d, d_w)
    return {
        "wq": xavier(rng, q_in, d, dtype),
        "wk": xavier(rng, kv_in, d, dtype),
        "wv": xavier(rng, kv_in, d, dtype),
        "wo": xavier(rng, d, d, dtype),
        "w1": xavier(rng, d, d_ff, dtype),
        "b1": nx.zeros((d_ff,), dtype),
        "w2": xavier(rng, d_ff, d, dtype),
        "b2": nx.zeros((d,), dtype),
    }


def init_avt_params(rng, d_w, d, d_ff=None, dtype=np.float64) -> dict[str, Tensor]:
    params = init_decoder_params(rng, d_w, d, d_ff, dtype, queries_from_vocab=True)
    params["w3"] = xavier(rng, d_w, d, dtype)
    return params
