"""Command-line entry point: ``smmnet {synth,train,evaluate,smooth-search,predict,report}``.

A JSON config file (``--config``) may hold ``synthetic``, ``model``, ``train``
and ``smoothing`` sections whose keys mirror the corresponding dataclasses;
command-line flags override file values.
"""
from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from pathlib import Path

import torch

from .data import SyntheticConfig, load_manifest, make_synthetic_dataset, save_dataset
from .model import ModelConfig, load_checkpoint
from .reports import (
    fold_table, metrics_table, plot_mu_search, plot_training, read_predictions, read_train_log,
    write_json, write_predictions,
)
from .temporal import DEFAULT_GRID, SmoothingConfig, apply_smoothed_heads, grid_search_mu
from .trainer import TrainConfig, evaluate, evaluate_predictions, single_thread, train

log = logging.getLogger("smmnet")


def parse_grid(text: str) -> tuple[float, ...]:
    """``"0..10"`` (inclusive integer range) or a comma list such as ``"0,2.5,5"``."""
    try:
        if ".." in text:
            lo, hi = text.split("..")
            return tuple(float(m) for m in range(int(lo), int(hi) + 1))
        return tuple(float(m) for m in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"invalid grid {text!r}") from None


def _load_config(path: str | None) -> dict:
    if not path:
        return {}
    return json.loads(Path(path).read_text(encoding="utf-8"))


def _dc(cls, section: dict, **overrides):
    fields = {f.name for f in dataclasses.fields(cls)}
    unknown = set(section) - fields
    if unknown:
        raise ValueError(f"unknown {cls.__name__} keys: {sorted(unknown)}")
    kw = {k: tuple(v) if isinstance(v, list) else v for k, v in section.items()}
    kw.update({k: v for k, v in overrides.items() if v is not None})
    return cls(**kw)


def _model_config(cfg: dict, profile: str | None) -> ModelConfig:
    base = ModelConfig.for_profile(profile or "toy").to_dict()
    m = cfg.get("model", {})
    for key in ("backbone", "sign"):
        base[key].update(m.get(key, {}))
    if "num_expr" in m:
        base["num_expr"] = m["num_expr"]
    return ModelConfig.from_dict(base)


def _smoothing(cfg: dict, args) -> SmoothingConfig:
    section = dict(cfg.get("smoothing", {}))
    # static evaluation unless factors are given
    section.setdefault("mu_au", 0.0)
    section.setdefault("mu_msg", 0.0)
    return _dc(SmoothingConfig, section, mu_au=args.mu_au, mu_msg=args.mu_msg,
               grid=getattr(args, "grid", None))


def _emit(obj: dict, out: str | None) -> None:
    if out:
        write_json(obj, out)
    else:
        print(json.dumps(obj, indent=2, sort_keys=True))


def cmd_synth(args, cfg) -> None:
    if not args.out:
        raise ValueError("synth needs --out DIR")
    seed = args.seed if args.seed is not None else 0
    index = make_synthetic_dataset(_dc(SyntheticConfig, cfg.get("synthetic", {})), seed=seed)
    path = save_dataset(index, args.out)
    print(path)


def cmd_train(args, cfg) -> None:
    if not (args.data and args.out):
        raise ValueError("train needs --data MANIFEST and --out DIR")
    tc = _dc(TrainConfig, cfg.get("train", {}), seed=args.seed, total_iters=args.iters, lr0=args.lr)
    index = load_manifest(args.data)
    result = train(tc, index, _model_config(cfg, args.profile), out_dir=args.out)
    last = result.log[-1]
    print(f"trained {tc.total_iters} iterations; final loss {last['loss']:.4f}; "
          f"checkpoint {result.checkpoints[-1]}")


def cmd_evaluate(args, cfg) -> None:
    if not args.data:
        raise ValueError("evaluate needs --data MANIFEST")
    index = load_manifest(args.data)
    if args.from_predictions:
        report = evaluate_predictions(read_predictions(args.from_predictions), index)
        report["num_frames"] = len(index)
    else:
        if not args.checkpoint:
            raise ValueError("evaluate needs --checkpoint or --from-predictions")
        report = evaluate(args.checkpoint, index, _smoothing(cfg, args))
    _emit(report, args.out)


def cmd_smooth_search(args, cfg) -> None:
    if not (args.data and args.checkpoint):
        raise ValueError("smooth-search needs --data and --checkpoint")
    model, _ = load_checkpoint(args.checkpoint)
    grid = args.grid or tuple(cfg.get("smoothing", {}).get("grid", DEFAULT_GRID))
    with single_thread():
        result = grid_search_mu(model, load_manifest(args.data), grid, args.folds,
                                seed=args.seed if args.seed is not None else 0)
    _emit(result.to_dict(), args.out)


def cmd_predict(args, cfg) -> None:
    if not (args.data and args.checkpoint and args.out):
        raise ValueError("predict needs --data, --checkpoint and --out")
    model, _ = load_checkpoint(args.checkpoint)
    with single_thread():
        preds = apply_smoothed_heads(model, load_manifest(args.data), _smoothing(cfg, args))
    write_predictions(preds, args.out)


def cmd_report(args, cfg) -> None:
    if not args.out:
        raise ValueError("report needs --out DIR")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    sections = []
    if args.train_log:
        plot_training(read_train_log(args.train_log), out / "training_curves.png")
        sections.append("Training curves: training_curves.png")
    if args.eval_report:
        rep = json.loads(Path(args.eval_report).read_text(encoding="utf-8"))
        sections.append("## Evaluation\n\n" + metrics_table(rep))
    if args.fold_report:
        fr = json.loads(Path(args.fold_report).read_text(encoding="utf-8"))
        plot_mu_search(fr, out / "mu_search.png")
        sections.append(f"## Smoothing search (mu_au={fr['mu_au']:g}, mu_msg={fr['mu_msg']:g})\n\n"
                        + fold_table(fr) + "\n\nPer-mu curves: mu_search.png")
    if not sections:
        raise ValueError("report needs at least one of --train-log, --eval-report, --fold-report")
    (out / "report.md").write_text("\n\n".join(sections) + "\n", encoding="utf-8")
    print(out / "report.md")


COMMANDS = {
    "synth": cmd_synth,
    "train": cmd_train,
    "evaluate": cmd_evaluate,
    "smooth-search": cmd_smooth_search,
    "predict": cmd_predict,
    "report": cmd_report,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON config file")
    common.add_argument("--data", help="manifest path")
    common.add_argument("--out", help="output file or directory")
    common.add_argument("--seed", type=int)
    common.add_argument("--profile", choices=["paper", "toy"])
    common.add_argument("--checkpoint", help="checkpoint archive (.npz)")
    common.add_argument("--mu-au", type=float)
    common.add_argument("--mu-msg", type=float)
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="smmnet", description="Train, evaluate, smooth and export the multi-task affect model.")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("synth", parents=[common], help="write a synthetic dataset")
    p = sub.add_parser("train", parents=[common], help="train a model")
    p.add_argument("--iters", type=int, help="override train.total_iters")
    p.add_argument("--lr", type=float, help="override train.lr0")
    p = sub.add_parser("evaluate", parents=[common], help="static or smoothed evaluation")
    p.add_argument("--from-predictions", help="score an exported prediction CSV instead")
    p = sub.add_parser("smooth-search", parents=[common], help="cross-validated mu grid search")
    p.add_argument("--grid", type=parse_grid, help='e.g. "0..10" or "0,1,5"')
    p.add_argument("--folds", type=int, default=3)
    sub.add_parser("predict", parents=[common], help="export per-frame predictions (CSV)")
    p = sub.add_parser("report", parents=[common], help="metric tables and plots")
    p.add_argument("--train-log")
    p.add_argument("--eval-report")
    p.add_argument("--fold-report")
    return parser


def run(argv: list[str] | None = None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as exc:  # usage errors exit 2, --help exits 0
        return int(exc.code or 0)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING)
    if args.seed is not None:
        torch.manual_seed(args.seed)
    try:
        COMMANDS[args.command](args, _load_config(args.config))
    except Exception as exc:  # noqa: BLE001 - one-line diagnostic, nonzero exit
        if args.verbose:
            log.exception("command failed")
        print(f"smmnet {args.command}: error: {exc}", file=sys.stderr)
        return 1
    return 0


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
