"""Training losses and their weighted composition.

Each sub-net is trained with attribute regression, attribute-based
cross-entropy over *all* classes, and self-calibration. The two sub-nets
are tied together by a feature-level and a prediction-level
collaborative loss.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from . import numerics as nx
from .errors import ContractError, DimensionError, ParameterError
from .numerics import Tensor

DISTANCES = ("l2", "kl", "skl", "jsd")


@dataclass
class ClassSemanticBank:
    Z: Tensor                        # (|C|, A)
    seen_mask: np.ndarray            # (|C|,) bool
    names: list[str] = field(default_factory=list)

    def __post_init__(self):
        if not isinstance(self.Z, Tensor):
            self.Z = Tensor(self.Z)
        self.seen_mask = np.asarray(self.seen_mask, dtype=bool)
        if self.Z.ndim != 2:
            raise DimensionError(f"class semantics must be (|C|, A), got {self.Z.shape}")
        if self.seen_mask.shape != (self.Z.shape[0],):
            raise DimensionError(f"seen mask has shape {self.seen_mask.shape} for {self.Z.shape[0]} classes")
        if not self.names:
            self.names = [f"class{i}" for i in range(self.Z.shape[0])]
        if len(self.names) != self.Z.shape[0]:
            raise DimensionError(f"{len(self.names)} class names for {self.Z.shape[0]} classes")

    @property
    def n_classes(self) -> int:
        return self.Z.shape[0]

    @property
    def a(self) -> int:
        return self.Z.shape[1]

    @property
    def seen(self) -> np.ndarray:
        return np.flatnonzero(self.seen_mask)

    @property
    def unseen(self) -> np.ndarray:
        return np.flatnonzero(~self.seen_mask)

    @property
    def indicator(self) -> np.ndarray:
        """+1 for unseen classes, -1 for seen ones."""
        return np.where(self.seen_mask, -1.0, 1.0)

    def astype(self, dtype) -> "ClassSemanticBank":
        return ClassSemanticBank(Tensor(self.Z.data, dtype=dtype), self.seen_mask, list(self.names))


@dataclass(frozen=True)
class LossWeights:
    lambda_ar: float = 0.0001
    lambda_sc: float = 0.1
    lambda_vat: float = 0.1
    lambda_f_scl: float = 0.001
    lambda_p_scl: float = 0.01

    def __post_init__(self):
        for name, value in asdict(self).items():
            if value < 0:
                raise ParameterError(f"{name} must be >= 0, got {value}")

    @classmethod
    def cub(cls) -> "LossWeights":
        return cls(0.0001, 0.1, 0.1, 0.001, 0.01)

    @classmethod
    def sun(cls) -> "LossWeights":
        return cls(0.01, 0.1, 1.0, 0.001, 0.001)


def _batch(f: Tensor, what: str) -> int:
    if f.ndim != 2:
        raise DimensionError(f"{what} expects (n_b, ·) inputs, got {f.shape}")
    return f.shape[0]


def l_ar(f: Tensor, z_true: Tensor) -> Tensor:
    if f.shape != z_true.shape:
        raise DimensionError(f"embeddings {f.shape} and targets {z_true.shape} differ")
    n = _batch(f, "l_ar")
    return nx.scale(nx.sum(nx.square(nx.sub(f, z_true))), 1.0 / n)


def class_logits(f: Tensor, bank: ClassSemanticBank) -> Tensor:
    if f.shape[-1] != bank.a:
        raise DimensionError(f"embedding width {f.shape[-1]} does not match {bank.a} attributes")
    z = bank.Z if bank.Z.dtype == f.dtype else Tensor(bank.Z.data, dtype=f.dtype)
    return nx.matmul(f, nx.transpose(z))


def calibrated_logits(f: Tensor, bank: ClassSemanticBank) -> Tensor:
    return nx.add(class_logits(f, bank), Tensor(bank.indicator, dtype=f.dtype))


def l_ace(f: Tensor, labels, bank: ClassSemanticBank) -> Tensor:
    n = _batch(f, "l_ace")
    labels = np.asarray(labels)
    if labels.shape != (n,):
        raise DimensionError(f"{labels.shape} labels for a batch of {n}")
    if np.any(labels < 0) or np.any(labels >= bank.n_classes) or not np.all(bank.seen_mask[labels]):
        raise ContractError("training labels must all be seen classes")
    onehot = np.zeros((n, bank.n_classes), dtype=f.dtype)
    onehot[np.arange(n), labels] = 1.0
    logp = nx.log_softmax_rows(class_logits(f, bank))
    return nx.scale(nx.sum(nx.mul(logp, Tensor(onehot))), -1.0 / n)


def l_sc(f: Tensor, bank: ClassSemanticBank) -> Tensor:
    n = _batch(f, "l_sc")
    if not np.any(~bank.seen_mask):
        raise ContractError("self-calibration needs at least one unseen class")
    mask = np.broadcast_to((~bank.seen_mask).astype(f.dtype), (n, bank.n_classes))
    logp = nx.log_softmax_rows(calibrated_logits(f, bank))
    return nx.scale(nx.sum(nx.mul(logp, Tensor(mask))), -1.0 / n)


def _kl(p: Tensor, q: Tensor) -> Tensor:
    return nx.sum(nx.mul(p, nx.sub(nx.log(p), nx.log(q))))


def collaborative_distance(p: Tensor, q: Tensor, kind: str = "l2") -> Tensor:
    """Batch-mean distance between two sets of rows.

    ``l2`` is the squared euclidean distance. The divergences (``kl``,
    symmetric ``skl``, ``jsd``) require probability rows.
    """
    if p.shape != q.shape:
        raise DimensionError(f"shapes {p.shape} and {q.shape} differ")
    n = _batch(p, "collaborative_distance")
    if kind == "l2":
        total = nx.sum(nx.square(nx.sub(p, q)))
    elif kind == "kl":
        total = _kl(p, q)
    elif kind == "skl":
        total = nx.add(_kl(p, q), _kl(q, p))
    elif kind == "jsd":
        m = nx.scale(nx.add(p, q), 0.5)
        total = nx.scale(nx.add(_kl(p, m), _kl(q, m)), 0.5)
    else:
        raise ParameterError(f"unknown distance {kind!r}; choose from {DISTANCES}")
    return nx.scale(total, 1.0 / n)


def l_f_scl(psi: Tensor, Psi: Tensor, distance: str = "l2") -> Tensor:
    if distance == "l2":
        return collaborative_distance(psi, Psi, "l2")
    # divergences compare the embeddings as distributions over attributes
    return collaborative_distance(nx.softmax_rows(psi), nx.softmax_rows(Psi), distance)


def _check_probabilities(p: Tensor, what: str) -> None:
    sums = p.data.sum(axis=-1)
    if np.any(p.data < 0) or np.any(np.abs(sums - 1.0) > 1e-5):
        raise ContractError(f"{what} rows must be probability vectors")


def l_p_scl(p1: Tensor, p2: Tensor, distance: str = "l2") -> Tensor:
    _check_probabilities(p1, "p1")
    _check_probabilities(p2, "p2")
    return collaborative_distance(p1, p2, distance)


def _check_weights(*ws):
    for w in ws:
        if w < 0:
            raise ParameterError(f"loss weights must be >= 0, got {w}")


def l_subnet(ace, ar, sc, weights: LossWeights):
    _check_weights(weights.lambda_ar, weights.lambda_sc)
    return ace + ar * weights.lambda_ar + sc * weights.lambda_sc


def l_total(l_avt, l_vat, l_f, l_p, weights: LossWeights):
    return l_avt + l_vat * weights.lambda_vat + l_f * weights.lambda_f_scl + l_p * weights.lambda_p_scl


def objective(psi: Tensor, Psi: Tensor, labels, bank: ClassSemanticBank, weights: LossWeights,
              distance: str = "l2", calibrated_predictions: bool = False) -> tuple[Tensor, dict[str, float]]:
    """Full training objective on one batch. Returns (total, component values)."""
    labels = np.asarray(labels)
    z_true = Tensor(bank.Z.data[labels], dtype=psi.dtype)
    parts = {}
    subnets = []
    for tag, f in (("avt", psi), ("vat", Psi)):
        ace, ar, sc = l_ace(f, labels, bank), l_ar(f, z_true), l_sc(f, bank)
        sub = l_subnet(ace, ar, sc, weights)
        parts.update({f"{tag}_ace": ace.item(), f"{tag}_ar": ar.item(), f"{tag}_sc": sc.item(), f"l_{tag}": sub.item()})
        subnets.append(sub)
    logits = calibrated_logits if calibrated_predictions else class_logits
    p1 = nx.softmax_rows(logits(psi, bank))
    p2 = nx.softmax_rows(logits(Psi, bank))
    lf = l_f_scl(psi, Psi, distance)
    lp = l_p_scl(p1, p2, distance)
    total = l_total(subnets[0], subnets[1], lf, lp, weights)
    parts.update({"l_f_scl": lf.item(), "l_p_scl": lp.item(), "total": total.item()})
    return total, parts
