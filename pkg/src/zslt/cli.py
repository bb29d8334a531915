"""Command-line driver: ``zslt {train,eval,gensynth,gradcheck,export-attn}``.

Every subcommand takes ``--config FILE`` and repeated ``--set key=value``.
Subcommands that read a checkpoint start from the configuration stored in
it, so ``eval`` and ``export-attn`` need no flags to rebuild synthetic data.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 numerical
failure (NaN during training or a failed gradient check).
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import data_io
from .config import RunConfig, load_config, parse_pairs, parse_set_args
from .errors import ConfigError, NumericalError, ZsltError
from .metrics import export_attention, write_metrics
from .objectives import DISTANCES, LossWeights
from .training import evaluate_state, gradcheck_model, group_errors, load_data, run_train

log = logging.getLogger("zslt")


def _config(args, base: dict | None = None) -> RunConfig:
    pairs = dict(base or {})
    if args.config:
        try:
            text = Path(args.config).read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config {args.config}: {exc}") from None
        pairs.update(parse_pairs(text, args.config))
    pairs.update(parse_set_args(args.set))
    return load_config(None, pairs)


def _checkpoint_config(args):
    state, stored = data_io.checkpoint_load(args.checkpoint)
    cfg = _config(args, stored)
    return state, cfg


def cmd_train(args) -> int:
    cfg = _config(args)
    out = Path(args.out or cfg.train.out_dir or "run")
    result = run_train(cfg, out_dir=out)
    (out / "config.txt").write_text(cfg.dump())
    write_metrics(out / "final_metrics.json", result.final)
    if result.best is not None:
        write_metrics(out / "best_metrics.json", result.best)
    f = result.final
    print(f"final: czsl_acc {f.czsl_acc:.2f}  U {f.gzsl.U:.2f}  S {f.gzsl.S:.2f}  H {f.gzsl.H:.2f}")
    if result.best is not None:
        b = result.best
        print(f"best (epoch {result.best_epoch}): czsl_acc {b.czsl_acc:.2f}  U {b.gzsl.U:.2f}  "
              f"S {b.gzsl.S:.2f}  H {b.gzsl.H:.2f}")
    print(f"wrote {out}")
    return 0


def cmd_eval(args) -> int:
    state, cfg = _checkpoint_config(args)
    bundle = load_data(cfg)
    if bundle.dims() != state.dims:
        raise ConfigError(f"checkpoint dims {state.dims} do not match the dataset {bundle.dims()}")
    report = evaluate_state(state, bundle, cfg.predict.alpha, cfg.predict.sample_averaged)
    payload = report.as_dict(bundle.bank.names, args.per_class)
    text = json.dumps(payload, indent=2, sort_keys=True)
    if args.out:
        write_metrics(args.out, report, bundle.bank.names, args.per_class)
    print(text)
    return 0


def cmd_gensynth(args) -> int:
    cfg = _config(args)
    bundle = data_io.generate_synthetic(cfg.synth)
    root = data_io.write_bundle(bundle, args.out)
    print(json.dumps(bundle.summary(), sort_keys=True))
    print(f"wrote {root}")
    return 0


def cmd_gradcheck(args) -> int:
    weights = LossWeights(*([1.0] * 5)) if args.weights == "ones" else LossWeights.cub()
    errors = gradcheck_model(weights=weights, distance=args.distance, seed=args.seed, step=args.step)
    groups = group_errors(errors)
    width = max(len(k) for k in groups)
    for key in sorted(groups):
        print(f"{key:<{width}}  {groups[key]:.3e}")
    worst = max(errors.values())
    print(f"max relative error {worst:.3e} over {len(errors)} parameters (tolerance {args.tol:g})")
    if not worst < args.tol:
        raise NumericalError(f"gradient check failed: {worst:.3e} >= {args.tol:g}")
    return 0


def cmd_export_attn(args) -> int:
    state, cfg = _checkpoint_config(args)
    bundle = load_data(cfg)
    ids = list(args.ids or [])
    if args.ids_file:
        ids += [s.strip() for s in Path(args.ids_file).read_text().splitlines() if s.strip()]
    if not ids:
        raise ConfigError("export-attn needs --ids or --ids-file")
    index = {image_id: i for i, image_id in enumerate(bundle.image_ids)}
    known = [i for i in ids if i in index]
    per_image = {}
    if known:
        rows = np.array([index[i] for i in known])
        out = state.forward(bundle.features[rows])
        attn, psi, Psi = out.avt.attn.numpy(), out.psi.numpy(), out.Psi.numpy()
        per_image = {i: {"attn": attn[j], "psi": psi[j], "Psi": Psi[j]} for j, i in enumerate(known)}
    n = export_attention(args.out, per_image, ids, bundle.vocab.names, bundle.grid_shape, args.top_k)
    print(f"wrote {n} records for {len(ids)} images to {args.out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="zslt", description="Attribute-transformer zero-shot learning.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="key = value config file")
        p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override one config key")
        return p

    p = common(sub.add_parser("train", help="train on the configured dataset"))
    p.add_argument("--out", help="output directory (default: train.out_dir or ./run)")
    p.set_defaults(func=cmd_train)

    p = common(sub.add_parser("eval", help="evaluate a checkpoint"))
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out", help="write the metrics JSON here")
    p.add_argument("--per-class", action="store_true", help="include per-class accuracies")
    p.set_defaults(func=cmd_eval)

    p = common(sub.add_parser("gensynth", help="write a synthetic dataset directory"))
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gensynth)

    p = sub.add_parser("gradcheck", help="finite-difference check of the full objective (float64)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--step", type=float, default=1e-5)
    p.add_argument("--tol", type=float, default=1e-4)
    p.add_argument("--distance", choices=DISTANCES, default="l2")
    p.add_argument("--weights", choices=("ones", "cub"), default="ones",
                   help="loss weights; 'ones' makes every term visible")
    p.set_defaults(func=cmd_gradcheck)

    p = common(sub.add_parser("export-attn", help="export attribute attention maps as JSON lines"))
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--ids", nargs="+", help="image ids")
    p.add_argument("--ids-file", help="file with one image id per line")
    p.add_argument("--top-k", type=int, default=10)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_export_attn)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ZsltError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except FloatingPointError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
