"""Feature augmentation encoder.

Grid features are embedded (FC + ReLU + dropout) and refined by one or
more self-attention layers whose logits have a learned, non-negative
region-geometry bias subtracted. The residual output is ``U_aug``.

Parameters are plain dicts of tensors, keyed as produced by
:func:`init_encoder_params`::

    embed_w (C0, d), embed_b (d,)
    l{i}.wq, l{i}.wk, l{i}.wv (d, d)
    l{i}.geo_w (2, d_g), l{i}.geo_b (d_g,), l{i}.geo_wg (d_g,)

Each layer owns its geometry FC.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import numerics as nx
from .attention import multihead_attention, xavier
from .errors import DimensionError, ParameterError
from .numerics import Tensor

GEOMETRY_EPS = 1e-3


@dataclass(frozen=True)
class GridGeometry:
    h: int
    w: int
    centers: np.ndarray   # (K, 2) columns (v_cen, t_cen)
    widths: np.ndarray    # (K,)
    heights: np.ndarray   # (K,)

    @property
    def k(self) -> int:
        return self.h * self.w

    def translated(self, dv: float, dt: float) -> "GridGeometry":
        return GridGeometry(self.h, self.w, self.centers + np.array([dv, dt]), self.widths, self.heights)


def grid_geometry(h: int, w: int) -> GridGeometry:
    """Unit-cell geometry of an h x w grid, cells in row-major order.

    Cell (row r, col c) spans v in [c, c] and t in [r, r], so its center is
    (c, r) and its width and height are both 1.
    """
    if h < 1 or w < 1:
        raise ParameterError(f"grid dimensions must be >= 1, got {h}x{w}")
    rows, cols = np.divmod(np.arange(h * w), w)
    v_min = v_max = cols.astype(np.float64)
    t_min = t_max = rows.astype(np.float64)
    centers = np.stack([(v_min + v_max) / 2.0, (t_min + t_max) / 2.0], axis=1)
    widths = (v_max - v_min) + 1.0
    heights = (t_max - t_min) + 1.0
    return GridGeometry(h, w, centers, widths, heights)


def relative_geometry(geo: GridGeometry, eps: float = GEOMETRY_EPS) -> np.ndarray:
    """Pairwise log-ratio offsets r_ij, shape (K, K, 2). |offset| is clamped below by eps."""
    dv = np.abs(geo.centers[:, None, 0] - geo.centers[None, :, 0])
    dt = np.abs(geo.centers[:, None, 1] - geo.centers[None, :, 1])
    rv = np.log(np.maximum(dv, eps) / geo.widths[:, None])
    rt = np.log(np.maximum(dt, eps) / geo.heights[:, None])
    return np.stack([rv, rt], axis=-1)


def geometry_bias(geo: GridGeometry, params) -> Tensor:
    """G_ij = ReLU(w_g . ReLU(FC(r_ij))), shape (K, K)."""
    w, b, wg = params["geo_w"], params["geo_b"], params["geo_wg"]
    k = geo.k
    r = Tensor(relative_geometry(geo).reshape(k * k, 2), dtype=w.dtype)
    g = nx.relu(nx.linear(r, w, b))
    scores = nx.matmul(g, nx.reshape(wg, (wg.shape[0], 1)))
    return nx.relu(nx.reshape(scores, (k, k)))


def embed_grid(raw: Tensor, params, mode: str = "eval", rng=None, p: float = 0.0) -> Tensor:
    w = params["embed_w"]
    if raw.shape[-1] != w.shape[0]:
        raise DimensionError(f"grid features have {raw.shape[-1]} channels, encoder expects {w.shape[0]}")
    return nx.dropout(nx.relu(nx.linear(raw, w, params["embed_b"])), p, mode, rng)


def encode(u: Tensor, g: Tensor, params, heads: int = 1, return_attention: bool = False):
    """One feature-augmented attention layer with residual: u + softmax(QK^T/sqrt(d) - G) V."""
    k = u.shape[-2]
    if g.shape != (k, k):
        raise DimensionError(f"geometry bias {g.shape} does not match {k} regions")
    q = nx.matmul(u, params["wq"])
    kk = nx.matmul(u, params["wk"])
    v = nx.matmul(u, params["wv"])
    z, attn = multihead_attention(q, kk, v, heads, bias=g)
    out = nx.add(u, z)
    return (out, attn) if return_attention else out


def layer_params(params, i: int) -> dict:
    prefix = f"l{i}."
    return {key[len(prefix):]: t for key, t in params.items() if key.startswith(prefix)}


def run_encoder(raw: Tensor, geo: GridGeometry, params, layers: int = 1, heads: int = 1,
                mode: str = "eval", rng=None, p: float = 0.0) -> tuple[Tensor, Tensor]:
    """Embed then refine. Returns (U, U_aug)."""
    u = embed_grid(raw, params, mode, rng, p)
    u_aug = u
    for i in range(layers):
        lp = layer_params(params, i)
        u_aug = encode(u_aug, geometry_bias(geo, lp), lp, heads)
    return u, u_aug


def init_encoder_params(rng: np.random.Generator, c0: int, d: int, d_g: int = 64, layers: int = 1,
                        dtype=np.float64) -> dict[str, Tensor]:
    params = {"embed_w": xavier(rng, c0, d, dtype), "embed_b": nx.zeros((d,), dtype)}
    for i in range(layers):
        params[f"l{i}.wq"] = xavier(rng, d, d, dtype)
        params[f"l{i}.wk"] = xavier(rng, d, d, dtype)
        params[f"l{i}.wv"] = xavier(rng, d, d, dtype)
        params[f"l{i}.geo_w"] = xavier(rng, 2, d_g, dtype)
        params[f"l{i}.geo_b"] = Tensor(rng.uniform(0.0, 0.1, size=d_g).astype(dtype))
        params[f"l{i}.geo_wg"] = Tensor(rng.uniform(-1.0, 1.0, size=d_g).astype(dtype) / np.sqrt(d_g))
    return params
