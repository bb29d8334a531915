"""Run configuration: dotted ``section.key = value`` pairs.

Config files hold one pair per line; ``#`` starts a comment. Unknown keys
are rejected. ``ZSLT_SEED`` in the environment overrides ``train.seed``.
"""

from __future__ import annotations

import os
import typing
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

from .data_io import SyntheticSpec
from .errors import ConfigError, ZsltError
from .model import ModelConfig
from .numerics import resolve_dtype
from .objectives import DISTANCES, LossWeights

LOSS_PRESETS = {"cub": LossWeights.cub(), "sun": LossWeights.sun()}
ALPHA_PRESETS = {"cub": 0.9, "sun": 0.6}


@dataclass
class LossConfig:
    preset: str = "cub"
    lambda_ar: float = 0.0001
    lambda_sc: float = 0.1
    lambda_vat: float = 0.1
    lambda_f_scl: float = 0.001
    lambda_p_scl: float = 0.01
    distance: str = "l2"
    calibrated_predictions: bool = False

    def weights(self) -> LossWeights:
        return LossWeights(self.lambda_ar, self.lambda_sc, self.lambda_vat, self.lambda_f_scl, self.lambda_p_scl)


@dataclass
class OptimConfig:
    lr: float = 0.001
    beta1: float = 0.5
    beta2: float = 0.999
    eps: float = 1e-8


@dataclass
class TrainConfig:
    batch_size: int = 50
    epochs: int = 200
    seed: int = 0
    precision: str = "float32"
    eval_every: int = 5
    patience: int = 0          # evaluations without H improvement before stopping; 0 disables
    out_dir: str = ""


@dataclass
class PredictConfig:
    alpha: float = 0.9
    sample_averaged: bool = False


@dataclass
class DataConfig:
    source: str = "synthetic"  # synthetic | files
    root: str = ""             # directory in the write_bundle layout
    feature_dir: str = ""
    semantics_file: str = ""
    vocab_file: str = ""
    split_file: str = ""
    normalize_vocab: bool = False


SECTIONS = {
    "model": ModelConfig,
    "loss": LossConfig,
    "optim": OptimConfig,
    "train": TrainConfig,
    "predict": PredictConfig,
    "data": DataConfig,
    "synth": SyntheticSpec,
}


@dataclass
class RunConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    loss: LossConfig = field(default_factory=LossConfig)
    optim: OptimConfig = field(default_factory=OptimConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    predict: PredictConfig = field(default_factory=PredictConfig)
    data: DataConfig = field(default_factory=DataConfig)
    synth: SyntheticSpec = field(default_factory=SyntheticSpec)

    def as_pairs(self) -> dict[str, object]:
        return {f"{sec}.{k}": v for sec in SECTIONS for k, v in asdict(getattr(self, sec)).items()}

    def dump(self) -> str:
        return "".join(f"{k} = {_render(v)}\n" for k, v in self.as_pairs().items())


def _render(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    return str(v)


def _coerce(key: str, raw, typ):
    if not isinstance(raw, str):
        return raw
    text = raw.strip()
    try:
        if typ is bool:
            low = text.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(text)
        if typ is int:
            return int(text)
        if typ is float:
            return float(text)
    except ValueError:
        raise ConfigError(f"{key}: cannot parse {raw!r} as {typ.__name__}") from None
    return text


def parse_pairs(text: str, source: str = "<config>") -> dict[str, str]:
    pairs = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        pairs[key] = value
    return pairs


def parse_set_args(items) -> dict[str, str]:
    pairs = {}
    for item in items or ():
        if "=" not in item:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        key, value = item.split("=", 1)
        pairs[key.strip()] = value.strip()
    return pairs


def build_config(pairs: dict | None = None, env: dict | None = None) -> RunConfig:
    pairs = dict(pairs or {})
    env = os.environ if env is None else env
    values: dict[str, dict] = {sec: {} for sec in SECTIONS}
    for key, raw in pairs.items():
        sec, _, name = key.partition(".")
        if sec not in SECTIONS:
            raise ConfigError(f"unknown config key {key!r}")
        hints = typing.get_type_hints(SECTIONS[sec])
        if name not in {f.name for f in fields(SECTIONS[sec])}:
            raise ConfigError(f"unknown config key {key!r}")
        values[sec][name] = _coerce(key, raw, hints[name])
    if "ZSLT_SEED" in env:
        values["train"]["seed"] = _coerce("ZSLT_SEED", env["ZSLT_SEED"], int)

    preset = values["loss"].get("preset", "cub")
    if preset not in LOSS_PRESETS:
        raise ConfigError(f"loss.preset must be one of {sorted(LOSS_PRESETS)}, got {preset!r}")
    for k, v in asdict(LOSS_PRESETS[preset]).items():
        values["loss"].setdefault(k, v)
    values["predict"].setdefault("alpha", ALPHA_PRESETS[preset])

    try:
        cfg = RunConfig(**{sec: SECTIONS[sec](**values[sec]) for sec in SECTIONS})
        cfg.loss.weights()
        resolve_dtype(cfg.train.precision)
    except ZsltError as exc:
        raise ConfigError(str(exc)) from None
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from None
    _check(cfg)
    return cfg


def _check(cfg: RunConfig) -> None:
    if cfg.loss.distance not in DISTANCES:
        raise ConfigError(f"loss.distance must be one of {DISTANCES}, got {cfg.loss.distance!r}")
    if not 0.0 <= cfg.predict.alpha <= 1.0:
        raise ConfigError(f"predict.alpha must be in [0, 1], got {cfg.predict.alpha}")
    if cfg.train.batch_size < 1 or cfg.train.epochs < 0 or cfg.train.eval_every < 0 or cfg.train.patience < 0:
        raise ConfigError("train.batch_size must be >= 1 and epochs/eval_every/patience >= 0")
    if cfg.optim.lr <= 0 or not 0 <= cfg.optim.beta1 < 1 or not 0 <= cfg.optim.beta2 < 1 or cfg.optim.eps <= 0:
        raise ConfigError("optimizer settings out of range")
    if cfg.data.source not in ("synthetic", "files"):
        raise ConfigError(f"data.source must be synthetic or files, got {cfg.data.source!r}")
    if cfg.data.source == "files" and not cfg.data.root and not all(
            (cfg.data.feature_dir, cfg.data.semantics_file, cfg.data.vocab_file, cfg.data.split_file)):
        raise ConfigError("data.source=files needs data.root or all four data paths")


def load_config(path=None, overrides=None, env=None) -> RunConfig:
    pairs = {}
    if path:
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
        pairs.update(parse_pairs(text, str(path)))
    pairs.update(overrides or {})
    return build_config(pairs, env)
