"""Scaled dot-product attention shared by the encoder and both decoders."""

from __future__ import annotations

import math

import numpy as np

from . import numerics as nx
from .errors import DimensionError, ParameterError
from .numerics import Tensor


def xavier(rng: np.random.Generator, fan_in: int, fan_out: int, dtype) -> Tensor:
    bound = math.sqrt(6.0 / (fan_in + fan_out))
    return Tensor(rng.uniform(-bound, bound, size=(fan_in, fan_out)).astype(dtype))


def multihead_attention(q: Tensor, k: Tensor, v: Tensor, heads: int = 1,
                        bias: Tensor | None = None) -> tuple[Tensor, Tensor]:
    """Attend ``q`` (..., n, d) over keys ``k`` and values ``v`` (..., m, d).

    Each head uses a contiguous d/heads slice of the projected features and
    is scaled by sqrt(d/heads). ``bias`` (n, m) is subtracted from the
    logits before the softmax. Returns the concatenated head outputs and the
    head-averaged attention weights.
    """
    d = q.shape[-1]
    if k.shape[-1] != d or v.shape[-1] != d:
        raise DimensionError(f"query/key/value widths differ: {q.shape}, {k.shape}, {v.shape}")
    if k.shape[-2] != v.shape[-2]:
        raise DimensionError(f"key and value counts differ: {k.shape} vs {v.shape}")
    if heads < 1 or d % heads:
        raise ParameterError(f"width {d} is not divisible into {heads} heads")
    tau = d // heads
    outs, weights = [], []
    for t in range(heads):
        lo, hi = t * tau, (t + 1) * tau
        qt = q if heads == 1 else nx.take(q, lo, hi)
        kt = k if heads == 1 else nx.take(k, lo, hi)
        vt = v if heads == 1 else nx.take(v, lo, hi)
        logits = nx.scale(nx.matmul(qt, nx.transpose(kt)), 1.0 / math.sqrt(tau))
        if bias is not None:
            logits = nx.sub(logits, bias)
        attn = nx.softmax_rows(logits)
        outs.append(nx.matmul(attn, vt))
        weights.append(attn)
    attn = weights[0]
    for w in weights[1:]:
        attn = nx.add(attn, w)
    if heads > 1:
        attn = nx.scale(attn, 1.0 / heads)
    return nx.concat(outs), attn
