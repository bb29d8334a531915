"""Visual->attribute decoder and its semantic mapping.

Each region queries the attribute vectors. After the FFN, every region is
scored against its own augmented feature (S_bar_k = u_aug_k^T W_3 S_k).
The K region scores are then lifted to attribute space through a
bilinear attention between attribute vectors and the *pre-encoder*
embedded regions U: Att = V_A W_att U^T, Psi = Att @ S_bar.

Parameter keys: wq (d, d), wk, wv (d_w, d), wo, w1, b1, w2, b2 as in the
AVT decoder, w3 (d, d), w_att (d_w, d).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import numerics as nx
from .attention import multihead_attention, xavier
from .avt import ffn, init_decoder_params
from .errors import DimensionError
from .numerics import Tensor


@dataclass
class VatOutputs:
    S: Tensor              # (..., K, d)
    region_scores: Tensor  # (..., K)
    att: Tensor            # (..., A, K)
    Psi: Tensor            # (..., A)
    attn: Tensor           # (..., K, A) cross-attention weights


def cross_attend_v2a(u_aug: Tensor, vocab: Tensor, params, heads: int = 1, return_attention: bool = False):
    if u_aug.shape[-1] != params["wq"].shape[0]:
        raise DimensionError(f"region width {u_aug.shape[-1]} does not match query weights {params['wq'].shape}")
    if vocab.shape[-1] != params["wk"].shape[0]:
        raise DimensionError(f"vocab width {vocab.shape[-1]} does not match key weights {params['wk'].shape}")
    q = nx.matmul(u_aug, params["wq"])
    k = nx.matmul(vocab, params["wk"])
    v = nx.matmul(vocab, params["wv"])
    heads_out, attn = multihead_attention(q, k, v, heads)
    s_hat = nx.matmul(heads_out, params["wo"])
    return (s_hat, attn) if return_attention else s_hat


ffn_vat = ffn


def map_m2(s: Tensor, u_aug: Tensor, u: Tensor, vocab: Tensor, params,
           att_softmax: bool = False) -> tuple[Tensor, Tensor, Tensor]:
    """Returns (region scores (..., K), Att (..., A, K), Psi (..., A))."""
    w3, w_att = params["w3"], params["w_att"]
    if s.shape != u_aug.shape or s.shape != u.shape:
        raise DimensionError(f"M2 needs matching region features, got {s.shape}, {u_aug.shape}, {u.shape}")
    if vocab.shape[1] != w_att.shape[0] or w_att.shape[1] != u.shape[-1]:
        raise DimensionError(f"attention-score weights {w_att.shape} inconsistent with V_A {vocab.shape}, U {u.shape}")
    region_scores = nx.sum(nx.mul(nx.matmul(s, nx.transpose(w3)), u_aug), axis=-1)
    att = nx.matmul(nx.matmul(vocab, w_att), nx.transpose(u))
    if att_softmax:
        att = nx.softmax_rows(att)
    column = nx.reshape(region_scores, region_scores.shape + (1,))
    psi = nx.reshape(nx.matmul(att, column), att.shape[:-1])
    return region_scores, att, psi


def forward_vat(vocab: Tensor, u_aug: Tensor, u: Tensor, params, heads: int = 1,
                att_softmax: bool = False) -> VatOutputs:
    s_hat, attn = cross_attend_v2a(u_aug, vocab, params, heads, return_attention=True)
    s = ffn(s_hat, params)
    scores, att, psi = map_m2(s, u_aug, u, vocab, params, att_softmax)
    return VatOutputs(S=s, region_scores=scores, att=att, Psi=psi, attn=attn)


def init_vat_params(rng, d_w, d, d_ff=None, dtype=np.float64) -> dict[str, Tensor]:
    params = init_decoder_params(rng, d_w, d, d_ff, dtype, queries_from_vocab=False)
    params["w3"] = xavier(rng, d, d, dtype)
    params["w_att"] = xavier(rng, d_w, d, dtype)
    return params
