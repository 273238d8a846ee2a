"""Command-line entry point: synth, train, eval, predict, heatmap.

Exit codes: 0 success, 1 missing input, 2 config error, 3 numeric failure,
4 checkpoint/data incompatibility.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import ingest
from .backbone import PatchMlpBackbone
from .calibrate import Calibrator
from .config import RunConfig, load_config
from .errors import (
    ConfigError,
    DanglingRef,
    IncompatibleCheckpoint,
    NonFiniteGradient,
    SSSError,
)
from .pipeline import (
    TrainingDiverged,
    evaluate,
    heatmap,
    predict_all,
    predict_series,
    train,
    write_heatmap_csv,
    write_history,
    write_pgm,
)

log = logging.getLogger("sss")

EXIT_OK, EXIT_MISSING, EXIT_CONFIG, EXIT_NUMERIC, EXIT_COMPAT = 0, 1, 2, 3, 4
CHECKPOINT_NAME = "model.bin"


class MissingInput(SSSError):
    pass


def prepare_records(cfg: RunConfig, dataset=None) -> list:
    """Load, preprocess and split a dataset exactly as training saw it."""
    root = dataset or cfg.dataset
    if root is None:
        raise ConfigError("no dataset given (set 'dataset' in the config or pass --dataset)")
    manifest = ingest.DatasetManifest.read(root)
    records = ingest.preprocess(ingest.load_dataset(manifest), cfg.preprocess)
    if all(r.split for r in records):
        return records
    if cfg.preprocess.balance_classes:
        records = ingest.balance_classes(records, cfg.seeds.data)
    return ingest.split_dataset(records, cfg.preprocess.split_fractions, cfg.seeds.data)


def _config(args) -> RunConfig:
    overrides = list(args.set or [])
    for name in ("data", "init", "sampler"):
        value = getattr(args, f"seed_{name}", None)
        if value is not None:
            overrides.append(f"seeds.{name}={value}")
    if getattr(args, "epochs", None) is not None:
        overrides.append(f"train.epochs={args.epochs}")
    if getattr(args, "dataset", None) is not None:
        overrides.append(f"dataset={json.dumps(str(args.dataset))}")
    return load_config(args.config, overrides)


def _load_checkpoint(path):
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"checkpoint not found: {path}")
    model, meta = PatchMlpBackbone.load(path)
    cfg = RunConfig.from_dict(meta.get("config", {}))
    calibrator = Calibrator.from_dict(meta.get("calibrator", {"kind": "none"}))
    return model, calibrator, cfg


def _check_compat(model, cfg: RunConfig, records):
    spec = cfg.train_config().infer_spec
    if spec.window_len != model.window_len:
        raise IncompatibleCheckpoint("L", model.window_len, spec.window_len)
    for r in records:
        if r.channels != model.channels:
            raise IncompatibleCheckpoint("M", model.channels, r.channels)
    n_classes = max(r.label for r in records) + 1
    if n_classes > model.n_classes:
        raise IncompatibleCheckpoint("K", model.n_classes, n_classes)


def _split(records, name):
    chosen = [r for r in records if r.split == name]
    if not chosen:
        raise MissingInput(f"split {name!r} is empty")
    return chosen


def cmd_synth(args) -> int:
    cfg = _config(args)
    records, bursts = ingest.synthesize(cfg.synth_config())
    out = Path(args.out)
    ingest.write_dataset(out, records, bursts)
    log.info("wrote %d series to %s", len(records), out)
    return EXIT_OK


def _save(result, cfg: RunConfig, out_dir: Path, n_classes: int):
    out_dir.mkdir(parents=True, exist_ok=True)
    meta = {"config": cfg.to_dict(), "calibrator": result.calibrator.to_dict(),
            "best_epoch": result.best_epoch, "n_classes": n_classes}
    result.model.save(out_dir / CHECKPOINT_NAME, meta)
    write_history(out_dir / "history.csv", result.history)


def cmd_train(args) -> int:
    cfg = _config(args)
    records = prepare_records(cfg)
    n_classes = max(r.label for r in records) + 1
    runs = max(1, args.runs)
    reports = []
    for k in range(runs):
        run_cfg = cfg
        out_dir = Path(cfg.out_dir)
        if runs > 1:
            run_cfg = RunConfig.from_dict({**cfg.to_dict(), "seeds": {
                "data": cfg.seeds.data, "init": cfg.seeds.init + k, "sampler": cfg.seeds.sampler + k}})
            out_dir = out_dir / f"run{k}"
        tcfg = run_cfg.train_config()
        try:
            result = train(records, tcfg, n_classes=n_classes)
        except TrainingDiverged as exc:
            _save(exc.result, run_cfg, out_dir, n_classes)
            print(json.dumps({"error": "non-finite", "detail": str(exc),
                              "last_good_epoch": exc.result.best_epoch}), file=sys.stderr)
            return EXIT_NUMERIC
        _save(result, run_cfg, out_dir, n_classes)
        log.info("run %d: best epoch %d of %d", k, result.best_epoch, len(result.history))
        if runs > 1:
            test = _split(records, "test")
            reports.append(evaluate(result.model, result.calibrator, test, tcfg.infer_spec))
    if runs > 1:
        summary = {}
        for key in ("f1", "auc", "accuracy"):
            vals = [r[key] for r in reports if r[key] is not None]
            summary[key] = {"mean": float(np.mean(vals)) if vals else None,
                            "std": float(np.std(vals)) if vals else None}
        summary["runs"] = reports
        (Path(cfg.out_dir) / "summary.json").write_text(json.dumps(summary, indent=2) + "\n")
        print(json.dumps({k: summary[k] for k in ("f1", "auc", "accuracy")}))
    return EXIT_OK


def _checkpoint_records(args):
    model, calibrator, cfg = _load_checkpoint(args.checkpoint)
    records = prepare_records(cfg, args.dataset)
    _check_compat(model, cfg, records)
    return model, calibrator, cfg, records


def cmd_eval(args) -> int:
    model, calibrator, cfg, records = _checkpoint_records(args)
    chosen = _split(records, args.split)
    rep = evaluate(model, calibrator, chosen, cfg.train_config().infer_spec)
    print(json.dumps(rep, indent=2))
    return EXIT_OK


def cmd_predict(args) -> int:
    model, calibrator, cfg, records = _checkpoint_records(args)
    chosen = _split(records, args.split)
    preds = predict_all(model, calibrator, chosen, cfg.train_config().infer_spec)
    out = open(args.out, "w", newline="", encoding="utf-8") if args.out else sys.stdout
    try:
        w = csv.writer(out, lineterminator="\n")
        K = model.n_classes
        w.writerow(["id", "label", "predicted"] + [f"p{k}" for k in range(K)])
        for p in preds:
            predicted = int(p.probs[1] >= 0.5) if K == 2 else int(np.argmax(p.probs))
            w.writerow([p.series_id, p.label, predicted] + [repr(float(v)) for v in p.probs])
    finally:
        if out is not sys.stdout:
            out.close()
    return EXIT_OK


def cmd_heatmap(args) -> int:
    model, calibrator, cfg, records = _checkpoint_records(args)
    by_id = {r.id: r for r in records}
    if args.id not in by_id:
        raise DanglingRef(f"unknown series id {args.id!r}")
    spec = cfg.train_config().infer_spec
    pred = predict_series(model, calibrator, by_id[args.id], spec)
    bin_width = args.bin_width or cfg.heatmap.bin_width or spec.stride
    hm = heatmap(pred, bin_width, raw=args.raw or cfg.heatmap.raw)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_heatmap_csv(out, hm)
    write_pgm(out.with_suffix(".pgm"), [hm])
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="sss", description="Stochastic sparse sampling classifier")
    shared = argparse.ArgumentParser(add_help=False)
    shared.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, config_required=False):
        p.add_argument("--config", required=config_required, help="run config JSON")
        p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a config key")
        p.add_argument("--seed-data", type=int)
        p.add_argument("--seed-init", type=int)
        p.add_argument("--seed-sampler", type=int)

    p = sub.add_parser("synth", help="write a synthetic dataset", parents=[shared])
    common(p)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="train a model and calibrator", parents=[shared])
    common(p)
    p.add_argument("--dataset")
    p.add_argument("--epochs", type=int)
    p.add_argument("--runs", type=int, default=1, help="repeat with shifted init/sampler seeds")
    p.set_defaults(func=cmd_train)

    for name, func, help_ in (("eval", cmd_eval, "metrics JSON for a split"),
                              ("predict", cmd_predict, "per-series predictions CSV")):
        p = sub.add_parser(name, help=help_, parents=[shared])
        p.add_argument("--checkpoint", required=True)
        p.add_argument("--dataset")
        p.add_argument("--split", default="test", choices=("train", "val", "test"))
        if name == "predict":
            p.add_argument("--out")
        p.set_defaults(func=func)

    p = sub.add_parser("heatmap", help="per-bin probability CSV and PGM for one series", parents=[shared])
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--dataset")
    p.add_argument("--id", required=True)
    p.add_argument("--out", required=True, help="CSV path; the PGM is written next to it")
    p.add_argument("--bin-width", type=int)
    p.add_argument("--raw", action="store_true", help="use uncalibrated window probabilities")
    p.set_defaults(func=cmd_heatmap)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except IncompatibleCheckpoint as exc:
        print(f"incompatible: {exc}", file=sys.stderr)
        return EXIT_COMPAT
    except NonFiniteGradient as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (FileNotFoundError, MissingInput, DanglingRef) as exc:
        print(f"missing input: {exc}", file=sys.stderr)
        return EXIT_MISSING
    except (SSSError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_MISSING


if __name__ == "__main__":
    sys.exit(main())
