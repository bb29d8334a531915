"""Training loop, evaluation and the gradient-check harness."""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import numerics as nx
from .config import RunConfig
from .data_io import DatasetBundle, SyntheticSpec, checkpoint_load, checkpoint_save, generate_synthetic, \
    load_bundle_dir, assemble_dataset
from .errors import ConfigError, NumericalError
from .metrics import EvalReport, evaluate
from .model import ModelConfig, ModelDims, ModelState, init_model
from .numerics import AdamState, GradTape, Tensor
from .objectives import LossWeights, objective
from .streams import stream

log = logging.getLogger(__name__)


def load_data(cfg: RunConfig) -> DatasetBundle:
    dtype = nx.resolve_dtype(cfg.train.precision)
    if cfg.data.source == "synthetic":
        bundle = generate_synthetic(cfg.synth)
        bundle.features = bundle.features.astype(dtype)
        return bundle
    if cfg.data.root:
        return load_bundle_dir(cfg.data.root, dtype=dtype, normalize_vocab=cfg.data.normalize_vocab)
    d = cfg.data
    return assemble_dataset(d.feature_dir, d.semantics_file, d.vocab_file, d.split_file, dtype=dtype,
                            normalize_vocab=d.normalize_vocab)


def build_model(cfg: RunConfig, bundle: DatasetBundle) -> ModelState:
    dtype = nx.resolve_dtype(cfg.train.precision)
    state = init_model(cfg.model, bundle.dims(), bundle.vocab, stream(cfg.train.seed, "init"), dtype)
    o = cfg.optim
    state.adam = AdamState(lr=o.lr, beta1=o.beta1, beta2=o.beta2, eps=o.eps)
    return state


def batch_loss(state: ModelState, params, features, labels, bank, cfg: RunConfig, mode="train", rng=None):
    out = state.forward(features, mode, rng, params)
    return objective(out.psi, out.Psi, labels, bank, cfg.loss.weights(), cfg.loss.distance,
                     cfg.loss.calibrated_predictions)


def evaluate_state(state: ModelState, bundle: DatasetBundle, alpha: float, sample_averaged: bool = False) -> EvalReport:
    idx = bundle.test_idx
    psi, Psi = state.embed(bundle.features[idx])
    return evaluate(psi, Psi, bundle.labels[idx], bundle.bank, alpha, sample_averaged)


@dataclass
class TrainResult:
    state: ModelState
    log: list[dict] = field(default_factory=list)
    evals: list[dict] = field(default_factory=list)
    final: EvalReport | None = None
    best: EvalReport | None = None
    best_epoch: int = 0


def run_train(cfg: RunConfig, bundle: DatasetBundle | None = None, out_dir=None) -> TrainResult:
    """Seeded mini-batch Adam on the full objective.

    When ``out_dir`` (or ``train.out_dir``) is set, writes ``train_log.jsonl``,
    ``final.ckpt`` and ``best.ckpt`` (best GZSL H over the periodic evaluations).
    """
    bundle = bundle if bundle is not None else load_data(cfg)
    out_dir = out_dir or cfg.train.out_dir or None
    if out_dir:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
    state = build_model(cfg, bundle)
    dtype = state.dtype
    bank = bundle.bank.astype(dtype)
    features = bundle.features.astype(dtype, copy=False)
    labels = bundle.labels
    train_idx = bundle.train_idx
    rng_drop = stream(cfg.train.seed, "dropout")
    rng_shuffle = stream(cfg.train.seed, "shuffle")
    snapshot = cfg.as_pairs()
    bs = cfg.train.batch_size
    result = TrainResult(state)
    stale = 0
    logf = open(out_dir / "train_log.jsonl", "w") if out_dir else None
    try:
        for epoch in range(1, cfg.train.epochs + 1):
            order = rng_shuffle.permutation(train_idx)
            sums: dict[str, float] = {}
            for b, lo in enumerate(range(0, order.size, bs)):
                idx = order[lo:lo + bs]
                try:
                    # overflow surfaces as NumericalError from the finite checks
                    with np.errstate(over="ignore", invalid="ignore"), GradTape() as tape:
                        tape.watch_all(state.params)
                        total, parts = batch_loss(state, state.params, Tensor(features[idx]), labels[idx],
                                                  bank, cfg, "train", rng_drop)
                    with np.errstate(over="ignore", invalid="ignore"):
                        grads = nx.backward_grads(total, tape, state.params)
                        state.params, _ = nx.adam_step(state.params, grads, state.adam)
                except NumericalError as exc:
                    raise NumericalError(f"epoch {epoch}, batch {b}: {exc}") from None
                for k, v in parts.items():
                    sums[k] = sums.get(k, 0.0) + v * idx.size
            entry = {"epoch": epoch, **{k: v / order.size for k, v in sums.items()}}
            result.log.append(entry)
            if logf:
                logf.write(json.dumps(entry) + "\n")
            state.epoch = epoch
            every = cfg.train.eval_every
            if (every and epoch % every == 0) or epoch == cfg.train.epochs:
                report = evaluate_state(state, bundle, cfg.predict.alpha, cfg.predict.sample_averaged)
                result.evals.append({"epoch": epoch, **report.as_dict()})
                log.info("epoch %d loss %.4f acc %.1f U %.1f S %.1f H %.1f", epoch, entry.get("total", 0.0),
                         report.czsl_acc, report.gzsl.U, report.gzsl.S, report.gzsl.H)
                if result.best is None or report.gzsl.H > result.best.gzsl.H:
                    result.best, result.best_epoch, stale = report, epoch, 0
                    if out_dir:
                        _save(out_dir / "best.ckpt", state, rng_drop, rng_shuffle, snapshot)
                else:
                    stale += 1
                result.final = report
                if cfg.train.patience and stale >= cfg.train.patience:
                    log.info("early stop at epoch %d", epoch)
                    break
    finally:
        if logf:
            logf.close()
    if result.final is None:
        result.final = evaluate_state(state, bundle, cfg.predict.alpha, cfg.predict.sample_averaged)
    _capture_rng(state, rng_drop, rng_shuffle)
    if out_dir:
        _save(out_dir / "final.ckpt", state, rng_drop, rng_shuffle, snapshot)
    return result


def _capture_rng(state, rng_drop, rng_shuffle):
    state.rng_state = {"dropout": rng_drop.bit_generator.state, "shuffle": rng_shuffle.bit_generator.state}


def _save(path, state, rng_drop, rng_shuffle, snapshot):
    _capture_rng(state, rng_drop, rng_shuffle)
    checkpoint_save(path, state, snapshot)


def run_eval(cfg: RunConfig, checkpoint, bundle: DatasetBundle | None = None) -> EvalReport:
    bundle = bundle if bundle is not None else load_data(cfg)
    state, _ = checkpoint_load(checkpoint, expect_dims=bundle.dims())
    return evaluate_state(state, bundle, cfg.predict.alpha, cfg.predict.sample_averaged)


# -- gradient check -------------------------------------------------------

TINY_MODEL = ModelConfig(d=8, d_g=4, d_ff=8, layers=1, heads=1, dropout=0.3)
TINY_SYNTH = SyntheticSpec(a=4, grid_h=2, grid_w=2, c0=6, d_w=5, n_seen=3, n_unseen=2, images_per_class=2,
                           density=0.6, noise=0.5, train_fraction=0.5)


def gradcheck_model(model_cfg: ModelConfig = TINY_MODEL, synth: SyntheticSpec = TINY_SYNTH,
                    weights: LossWeights | None = None, distance: str = "l2", seed: int = 0,
                    n_images: int = 2, step: float = 1e-5) -> dict[str, float]:
    """Max relative error per parameter of the full objective, in float64.

    The loss uses train-mode dropout with the mask stream re-seeded on every
    evaluation so finite differences see the same mask. Default weights are
    all ones so every term contributes visibly.
    """
    weights = weights or LossWeights(1.0, 1.0, 1.0, 1.0, 1.0)
    bundle = generate_synthetic(synth)
    state = init_model(model_cfg, bundle.dims(), bundle.vocab, stream(seed, "init"), np.float64)
    idx = bundle.train_idx[:n_images]
    if idx.size < n_images:
        raise ConfigError(f"synthetic spec yields only {idx.size} training images")
    features = Tensor(bundle.features[idx], dtype=np.float64)
    labels = bundle.labels[idx]
    bank = bundle.bank.astype(np.float64)

    def loss(params):
        out = state.forward(features, "train", stream(seed, "gradcheck"), params)
        total, _ = objective(out.psi, out.Psi, labels, bank, weights, distance)
        return total

    with nx.use_precision("float64"):
        return nx.gradcheck(loss, state.params, step)


def group_errors(errors: dict[str, float]) -> dict[str, float]:
    """Collapse per-parameter errors to sub-net/module groups (avt.enc, vat.dec, ...)."""
    groups: dict[str, float] = {}
    for name, err in errors.items():
        key = ".".join(name.split(".")[:2])
        groups[key] = max(groups.get(key, 0.0), err)
    return groups
