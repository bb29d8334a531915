"""The paired AVT/VAT network and its parameter state.

Both sub-nets have their own encoder, decoder and (when trainable) their
own copy of the attribute vectors. All parameters live in one flat dict
with dotted names (``avt.enc.l0.wq``, ``vat.dec.w_att``, ...), which is
what the optimizer, the gradient checker and checkpoints operate on.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from . import fae
from .avt import AttributeVocabulary, AvtOutputs, forward_avt, init_avt_params
from .errors import ConfigError, DimensionError
from .numerics import AdamState, Tensor
from .vat import VatOutputs, forward_vat, init_vat_params


@dataclass(frozen=True)
class ModelConfig:
    d: int = 128
    d_g: int = 64
    d_ff: int = 0          # 0 means d
    layers: int = 1
    heads: int = 1
    dropout: float = 0.3
    vocab_trainable: bool = True
    att_softmax: bool = False

    def __post_init__(self):
        if self.d < 1 or self.d_g < 1 or self.d_ff < 0:
            raise ConfigError("model widths must be positive")
        if self.layers < 1 or self.heads < 1:
            raise ConfigError("layers and heads must be >= 1")
        if self.d % self.heads:
            raise ConfigError(f"d={self.d} is not divisible by heads={self.heads}")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError(f"dropout must be in [0, 1), got {self.dropout}")


@dataclass(frozen=True)
class ModelDims:
    c0: int
    a: int
    d_w: int
    grid_h: int
    grid_w: int

    @property
    def k(self) -> int:
        return self.grid_h * self.grid_w


@dataclass
class ForwardOutputs:
    avt: AvtOutputs
    vat: VatOutputs
    u_avt: Tensor
    u_aug_avt: Tensor
    u_vat: Tensor
    u_aug_vat: Tensor

    @property
    def psi(self) -> Tensor:
        return self.avt.psi

    @property
    def Psi(self) -> Tensor:
        return self.vat.Psi


def subtree(params, prefix: str) -> dict:
    return {k[len(prefix):]: v for k, v in params.items() if k.startswith(prefix)}


@dataclass
class ModelState:
    config: ModelConfig
    dims: ModelDims
    params: dict[str, Tensor]
    vocab: AttributeVocabulary
    adam: AdamState = field(default_factory=AdamState)
    epoch: int = 0
    rng_state: dict = field(default_factory=dict)

    def __post_init__(self):
        self.geometry = fae.grid_geometry(self.dims.grid_h, self.dims.grid_w)

    @property
    def dtype(self):
        return next(iter(self.params.values())).dtype

    def vocab_tensor(self, params, subnet: str) -> Tensor:
        key = f"{subnet}.vocab"
        if key in params:
            return params[key]
        v = self.vocab.vectors
        return v if v.dtype == self.dtype else Tensor(v.data, dtype=self.dtype)

    def forward(self, raw, mode: str = "eval", rng=None, params=None) -> ForwardOutputs:
        """Run both sub-nets on grid features of shape (K, C0) or (B, K, C0)."""
        params = self.params if params is None else params
        if not isinstance(raw, Tensor) or raw.dtype != self.dtype:
            raw = Tensor(np.asarray(raw.data if isinstance(raw, Tensor) else raw), dtype=self.dtype)
        if raw.shape[-2:] != (self.dims.k, self.dims.c0):
            raise DimensionError(f"expected grid features (..., {self.dims.k}, {self.dims.c0}), got {raw.shape}")
        cfg = self.config
        outs = {}
        for subnet in ("avt", "vat"):
            u, u_aug = fae.run_encoder(raw, self.geometry, subtree(params, f"{subnet}.enc."),
                                       cfg.layers, cfg.heads, mode, rng, cfg.dropout)
            outs[subnet] = (u, u_aug, self.vocab_tensor(params, subnet))
        u, u_aug, vocab = outs["avt"]
        avt = forward_avt(vocab, u_aug, subtree(params, "avt.dec."), cfg.heads)
        u2, u_aug2, vocab2 = outs["vat"]
        vat = forward_vat(vocab2, u_aug2, u2, subtree(params, "vat.dec."), cfg.heads, cfg.att_softmax)
        return ForwardOutputs(avt, vat, u, u_aug, u2, u_aug2)

    def embed(self, features, batch_size: int = 256) -> tuple[np.ndarray, np.ndarray]:
        """Eval-mode psi and Psi for a stack of images."""
        psi, Psi = [], []
        for lo in range(0, len(features), batch_size):
            out = self.forward(Tensor(np.asarray(features[lo:lo + batch_size]), dtype=self.dtype))
            psi.append(out.psi.numpy())
            Psi.append(out.Psi.numpy())
        return np.concatenate(psi).astype(np.float64), np.concatenate(Psi).astype(np.float64)

    def snapshot(self) -> dict:
        return {"config": asdict(self.config), "dims": asdict(self.dims)}


def init_model(config: ModelConfig, dims: ModelDims, vocab: AttributeVocabulary, rng: np.random.Generator,
               dtype=np.float64) -> ModelState:
    if vocab.a != dims.a or vocab.d_w != dims.d_w:
        raise ConfigError(f"vocabulary {vocab.vectors.shape} does not match dims A={dims.a}, d_w={dims.d_w}")
    dtype = np.dtype(dtype)
    d_ff = config.d_ff or config.d
    params: dict[str, Tensor] = {}
    for subnet in ("avt", "vat"):
        enc = fae.init_encoder_params(rng, dims.c0, config.d, config.d_g, config.layers, dtype)
        params.update({f"{subnet}.enc.{k}": v for k, v in enc.items()})
        init_dec = init_avt_params if subnet == "avt" else init_vat_params
        dec = init_dec(rng, dims.d_w, config.d, d_ff, dtype)
        params.update({f"{subnet}.dec.{k}": v for k, v in dec.items()})
        if config.vocab_trainable:
            params[f"{subnet}.vocab"] = Tensor(vocab.vectors.data, dtype=dtype)
    return ModelState(config, dims, params, vocab)
