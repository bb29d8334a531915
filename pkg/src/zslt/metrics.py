"""Fused calibrated prediction, CZSL/GZSL accuracy, and exports.

Accuracies are reported as percentages. Ties at the argmax go to the
lowest class index.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .errors import ContractError, DataError, ParameterError
from .objectives import ClassSemanticBank

SETTINGS = ("czsl", "gzsl")


@dataclass
class Prediction:
    embedding: np.ndarray
    scores: np.ndarray
    index: int
    setting: str


def _check_alpha(alpha: float) -> None:
    if not 0.0 <= alpha <= 1.0:
        raise ParameterError(f"alpha must lie in [0, 1], got {alpha}")


def fused_embedding(psi, Psi, alpha: float) -> np.ndarray:
    _check_alpha(alpha)
    psi, Psi = np.asarray(psi, dtype=np.float64), np.asarray(Psi, dtype=np.float64)
    if psi.shape != Psi.shape:
        raise ContractError(f"embedding shapes differ: {psi.shape} vs {Psi.shape}")
    return alpha * psi + (1.0 - alpha) * Psi


def class_scores(embedding, bank: ClassSemanticBank, calibrate: bool = True) -> np.ndarray:
    scores = np.asarray(embedding, dtype=np.float64) @ bank.Z.data.astype(np.float64).T
    if calibrate:
        scores = scores + bank.indicator
    return scores


def _argmax_in(raw: np.ndarray, setting: str, bank: ClassSemanticBank, calibrate: bool) -> np.ndarray:
    if setting == "gzsl":
        return np.argmax(raw + bank.indicator if calibrate else raw, axis=-1)
    if setting == "czsl":
        # the offset is constant over C^u; skipping it keeps rounding from creating ties
        allowed = bank.unseen
        return allowed[np.argmax(raw[..., allowed], axis=-1)]
    raise ParameterError(f"setting must be one of {SETTINGS}, got {setting!r}")


def fuse_predict(psi, Psi, alpha: float, bank: ClassSemanticBank, setting: str = "gzsl",
                 calibrate: bool = True) -> Prediction:
    emb = fused_embedding(psi, Psi, alpha)
    raw = class_scores(emb, bank, calibrate=False)
    scores = raw + bank.indicator if calibrate else raw
    return Prediction(emb, scores, int(_argmax_in(raw, setting, bank, calibrate)), setting)


def predict_batch(psi, Psi, alpha: float, bank: ClassSemanticBank, setting: str = "gzsl",
                  calibrate: bool = True) -> np.ndarray:
    raw = class_scores(fused_embedding(psi, Psi, alpha), bank, calibrate=False)
    return _argmax_in(raw, setting, bank, calibrate)


def per_class_accuracy(predictions, labels, class_subset=None) -> dict[int, float]:
    predictions, labels = np.asarray(predictions), np.asarray(labels)
    classes = np.unique(labels) if class_subset is None else np.asarray(class_subset)
    out = {}
    for c in classes:
        mask = labels == c
        if not mask.any():
            raise ContractError(f"class {int(c)} has no test samples")
        out[int(c)] = 100.0 * float(np.mean(predictions[mask] == c))
    return out


def per_class_top1(predictions, labels, class_subset=None, sample_averaged: bool = False) -> float:
    """Mean over classes of per-class top-1 accuracy, in percent."""
    if sample_averaged:
        predictions, labels = np.asarray(predictions), np.asarray(labels)
        if class_subset is not None:
            keep = np.isin(labels, class_subset)
            predictions, labels = predictions[keep], labels[keep]
        if labels.size == 0:
            raise ContractError("no samples to score")
        return 100.0 * float(np.mean(predictions == labels))
    acc = per_class_accuracy(predictions, labels, class_subset)
    return float(np.mean(list(acc.values())))


def harmonic_mean(u: float, s: float) -> float:
    if u < 0 or s < 0:
        raise ParameterError(f"accuracies must be non-negative, got U={u}, S={s}")
    if u + s == 0:
        return 0.0
    return 2.0 * s * u / (s + u)


@dataclass
class GzslReport:
    U: float
    S: float
    H: float
    per_class: dict[int, float] = field(default_factory=dict)


@dataclass
class EvalReport:
    czsl_acc: float
    gzsl: GzslReport
    czsl_per_class: dict[int, float] = field(default_factory=dict)

    def as_dict(self, class_names: Sequence[str] | None = None, include_per_class: bool = False) -> dict:
        out = {"czsl_acc": self.czsl_acc, "gzsl_u": self.gzsl.U, "gzsl_s": self.gzsl.S, "gzsl_h": self.gzsl.H}
        if include_per_class:
            name = (lambda c: class_names[c]) if class_names else str
            out["per_class"] = {
                "czsl": {name(c): v for c, v in self.czsl_per_class.items()},
                "gzsl": {name(c): v for c, v in self.gzsl.per_class.items()},
            }
        return out


def evaluate(psi, Psi, labels, bank: ClassSemanticBank, alpha: float,
             sample_averaged: bool = False) -> EvalReport:
    """CZSL accuracy on unseen test samples and GZSL U/S/H on all test samples."""
    labels = np.asarray(labels)
    unseen_test = ~bank.seen_mask[labels]
    seen_test = ~unseen_test
    if not unseen_test.any() or not seen_test.any():
        raise ContractError("evaluation needs test samples from both seen and unseen classes")
    gzsl = predict_batch(psi, Psi, alpha, bank, "gzsl")
    czsl = predict_batch(np.asarray(psi)[unseen_test], np.asarray(Psi)[unseen_test], alpha, bank, "czsl")
    u_classes = np.unique(labels[unseen_test])
    s_classes = np.unique(labels[seen_test])
    czsl_pc = per_class_accuracy(czsl, labels[unseen_test], u_classes)
    u = per_class_top1(gzsl[unseen_test], labels[unseen_test], u_classes, sample_averaged)
    s = per_class_top1(gzsl[seen_test], labels[seen_test], s_classes, sample_averaged)
    acc = per_class_top1(czsl, labels[unseen_test], u_classes, sample_averaged)
    per_class = per_class_accuracy(gzsl, labels)
    return EvalReport(acc, GzslReport(u, s, harmonic_mean(u, s), per_class), czsl_pc)


def write_metrics(path, report: EvalReport, class_names=None, include_per_class: bool = False) -> None:
    Path(path).write_text(json.dumps(report.as_dict(class_names, include_per_class), indent=2, sort_keys=True) + "\n")


def read_metrics(path) -> dict:
    return json.loads(Path(path).read_text())


def attention_records(image_id: str, attn, psi, attribute_names: Sequence[str], grid_shape: tuple[int, int],
                      top_k: int = 10, Psi=None) -> list[dict]:
    """Top-k attributes of one image by AVT score, with their attention maps."""
    attn, psi = np.asarray(attn, dtype=np.float64), np.asarray(psi, dtype=np.float64)
    a = psi.shape[0]
    h, w = grid_shape
    if attn.shape != (a, h * w):
        raise ContractError(f"attention shape {attn.shape} does not match {a} attributes on a {h}x{w} grid")
    if not 1 <= top_k <= a:
        raise ParameterError(f"top_k must be in [1, {a}], got {top_k}")
    order = np.argsort(-psi, kind="stable")[:top_k]
    records = []
    for i in order:
        rec = {
            "image_id": image_id,
            "attribute_name": attribute_names[i],
            "psi_score": float(psi[i]),
            "grid_h": h,
            "grid_w": w,
            "attention": attn[i].reshape(h, w).tolist(),
        }
        if Psi is not None:
            rec["Psi_score"] = float(np.asarray(Psi)[i])
        records.append(rec)
    return records


def _record_line(rec: dict) -> str:
    parts = [f'"image_id": {json.dumps(rec["image_id"])}',
             f'"attribute_name": {json.dumps(rec["attribute_name"])}',
             f'"psi_score": {rec["psi_score"]:.6f}']
    if "Psi_score" in rec:
        parts.append(f'"Psi_score": {rec["Psi_score"]:.6f}')
    parts += [f'"grid_h": {rec["grid_h"]}', f'"grid_w": {rec["grid_w"]}',
              f'"attention": {json.dumps(np.asarray(rec["attention"]).ravel().tolist())}']
    return "{" + ", ".join(parts) + "}"


def export_attention(path, per_image: Mapping[str, Mapping], image_ids: Sequence[str],
                     attribute_names: Sequence[str], grid_shape: tuple[int, int], top_k: int = 10) -> int:
    """Write JSON-lines attention records for ``image_ids``.

    ``per_image`` maps an image id to a dict with ``attn`` (A, K), ``psi``
    (A,) and optionally ``Psi`` (A,). Returns the number of lines written.
    """
    lines = []
    for image_id in image_ids:
        if image_id not in per_image:
            raise DataError(f"unknown image id {image_id!r}")
        out = per_image[image_id]
        for rec in attention_records(image_id, out["attn"], out["psi"], attribute_names, grid_shape,
                                     top_k, out.get("Psi")):
            lines.append(_record_line(rec))
    Path(path).write_text("".join(line + "\n" for line in lines))
    return len(lines)


def read_attention(path) -> list[dict]:
    return [json.loads(line) for line in Path(path).read_text().splitlines() if line.strip()]
