"""Command-line entry point.

Exit codes: 0 success, 2 config error, 3 data error, 4 numerical failure.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import gradcheck
from .data import DataError, SyntheticSpec, generate_synthetic, load_dataset
from .features import SelectionError
from .fusion import SingularityError
from .heatmap import export_heatmap
from .model import ConfigError, RunConfig
from .survival import SurvivalDataError
from .tensor import ParameterError
from .training import NumericalError, load_checkpoint, run_cv, save_checkpoint, score, train

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_NUMERIC = 4

log = logging.getLogger("moadnet")


def load_config(path) -> RunConfig:
    try:
        raw = json.loads(Path(path).read_text())
    except FileNotFoundError:
        raise ConfigError(f"config file {path} not found") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: expected a JSON object")
    try:
        return RunConfig.from_dict(raw)
    except TypeError as exc:
        raise ConfigError(f"{path}: {exc}") from None


def _cmd_gen_data(args) -> int:
    spec = SyntheticSpec(n_classes=args.classes, n_slides=args.slides, seed=args.seed, task=args.task)
    try:
        out = generate_synthetic(args.out, spec)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    print(f"wrote {spec.n_slides} slides to {out}")
    return EXIT_OK


def _cmd_train(args) -> int:
    cfg = load_config(args.config)
    data = load_dataset(args.data)
    metrics = None
    if not args.no_cv:
        cv = run_cv(cfg, data)
        metrics = cv.report.to_dict()
        print(f"{cfg.folds}-fold CV: {cv.report.summary()}")
    trained = train(cfg, data)
    out = save_checkpoint(trained, args.out, data.root, metrics)
    print(f"final loss {trained.loss_history[-1]:.6f}; checkpoint in {out}")
    return EXIT_OK


def _cmd_eval(args) -> int:
    trained, _ = load_checkpoint(args.run)
    data = load_dataset(args.data)
    print(json.dumps(score(trained, data, workers=args.workers), indent=2, sort_keys=True))
    return EXIT_OK


def ablation_grid():
    """(fusion, aggregator) pairs: early-only has no aggregator, the rest span all three."""
    yield "early_only", "moab"
    for stage in ("late_only", "dual"):
        for agg in ("moab", "cat", "kp"):
            yield stage, agg


def _cmd_ablate(args) -> int:
    cfg = load_config(args.config)
    data = load_dataset(args.data)
    key = "f1_macro" if data.task == "subtype" else "c_index"
    rows = []
    for stage, agg in ablation_grid():
        report = run_cv(cfg.replace(fusion=stage, aggregator=agg), data).report
        label = "-" if stage == "early_only" else agg
        rows.append((stage, label, report.mean(key), report.std(key)))
        print(f"  done {stage}/{label}", file=sys.stderr)
    print(f"{'fusion':12s} {'aggregator':10s} {key:>18s}")
    for stage, agg, m, s in rows:
        print(f"{stage:12s} {agg:10s} {m:10.3f} ± {s:.3f}")
    return EXIT_OK


def _cmd_heatmap(args) -> int:
    try:
        att = export_heatmap(args.run, args.slide, args.out, pgm=args.pgm, data_dir=args.data)
    except ValueError as exc:
        if isinstance(exc, (DataError, ConfigError)):
            raise
        raise ConfigError(str(exc)) from None
    print(f"wrote {len(att)} patch weights to {args.out}")
    return EXIT_OK


def _cmd_gradcheck(args) -> int:
    results = gradcheck.run_suite(instances=args.instances, seed=args.seed)
    return EXIT_OK if all(r.passed for r in results) else EXIT_NUMERIC


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="moadnet", description="Dual-fusion multimodal MIL toolkit")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-data", help="write a planted-signal synthetic dataset")
    g.add_argument("--out", required=True)
    g.add_argument("--classes", type=int, default=4)
    g.add_argument("--slides", type=int, default=200)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--task", choices=("subtype", "survival"), default="subtype")
    g.set_defaults(fn=_cmd_gen_data)

    t = sub.add_parser("train", help="cross-validate, then fit on all slides and save a checkpoint")
    t.add_argument("--config", required=True)
    t.add_argument("--data", required=True)
    t.add_argument("--out", required=True)
    t.add_argument("--no-cv", action="store_true", help="skip cross-validation")
    t.set_defaults(fn=_cmd_train)

    e = sub.add_parser("eval", help="score a checkpoint on a dataset")
    e.add_argument("--run", required=True)
    e.add_argument("--data", required=True)
    e.add_argument("--workers", type=int, default=1)
    e.set_defaults(fn=_cmd_eval)

    a = sub.add_parser("ablate", help="cross-validate every fusion/aggregator combination")
    a.add_argument("--config", required=True)
    a.add_argument("--data", required=True)
    a.set_defaults(fn=_cmd_ablate)

    h = sub.add_parser("heatmap", help="export per-patch attention for one slide")
    h.add_argument("--run", required=True)
    h.add_argument("--slide", required=True)
    h.add_argument("--out", required=True)
    h.add_argument("--pgm", action="store_true")
    h.add_argument("--data", default=None, help="dataset directory (default: the one used for training)")
    h.set_defaults(fn=_cmd_heatmap)

    c = sub.add_parser("gradcheck", help="run the finite-difference gradient suite")
    c.add_argument("--instances", type=int, default=10)
    c.add_argument("--seed", type=int, default=0)
    c.set_defaults(fn=_cmd_gradcheck)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.fn(args)
    except (NumericalError, SingularityError, FloatingPointError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ConfigError, ParameterError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, SurvivalDataError, SelectionError, FileNotFoundError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
