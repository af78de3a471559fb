"""Command-line front end: ``prue {train,uncertainty,prune,distill,eval,dump-predictions,sweep}``.

Exit codes: 0 success, 2 config or validation error, 3 IO or file-format error,
4 numeric failure.  The default output directory is ``$PRUE_OUTPUT_DIR`` (else
the config's ``output_dir``).
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from fractions import Fraction
from pathlib import Path

import numpy as np

from . import experiment as ex
from .checkpoint import CheckpointError, load_checkpoint
from .data import DataFormatError
from .nn import predict_proba
from .pruning import METHODS
from .tensor import NumericError, ShapeError
from .training import evaluate
from .uncertainty import UncertaintyError, delta_direct, delta_two_pass

EXIT_OK, EXIT_CONFIG, EXIT_IO, EXIT_NUMERIC = 0, 2, 3, 4


class UsageError(ValueError):
    pass


def parse_sparsity(text: str) -> float:
    """``"90%"`` or ``"0.9"``; values outside [0, 1) are rejected."""
    t = text.strip()
    try:
        value = float(Fraction(t[:-1]) / 100) if t.endswith("%") else float(t)
    except ValueError:
        raise UsageError(f"--sparsity: cannot parse {text!r}") from None
    if not 0.0 <= value < 1.0:
        raise UsageError(f"--sparsity must lie in [0, 1), got {text!r}")
    return value


def parse_classes(text: str, num_classes: int) -> list[int]:
    try:
        classes = sorted({int(c) for c in text.split(",") if c.strip()})
    except ValueError:
        raise UsageError(f"--classes: cannot parse {text!r}") from None
    bad = [c for c in classes if not 0 <= c < num_classes]
    if bad:
        raise UsageError(f"--classes: unknown class id(s) {bad}; valid range is 0..{num_classes - 1}")
    return classes


def _emit(obj) -> None:
    print(json.dumps(ex._plain(obj), indent=2, sort_keys=True))


def _load(path, arch=None):
    return load_checkpoint(path, arch)


def _check_input(model, ds) -> None:
    if int(np.prod(model.spec.input_shape)) != int(np.prod(ds.input_shape)):
        raise ShapeError(f"checkpoint expects input {model.spec.input_shape}, dataset has {ds.input_shape}")
    if model.spec.num_classes != ds.num_classes:
        raise ShapeError(f"checkpoint has {model.spec.num_classes} classes, dataset has {ds.num_classes}")


def cmd_train(args) -> int:
    cfg = ex.load_config(args.config)
    out = ex.output_dir(cfg, args.out)
    if args.role == "student-vanilla":
        model, rec = ex.train_vanilla(cfg, args.seed)
    else:
        entry = ex.teacher_entry(cfg, args.teacher)
        if args.smoothing is not None:
            entry["smoothing"] = args.smoothing
        model, rec = ex.train_teacher(cfg, entry["name"], args.seed)
    ex.store(out, model, rec)
    _emit({"run_id": rec.run_id, "config_hash": rec.config_hash, "summary": rec.summary,
           "checkpoint": str(out / "checkpoints" / f"{rec.run_id}.prue"),
           "record": str(out / "records" / f"{rec.run_id}.jsonl")})
    return EXIT_OK


def cmd_uncertainty(args) -> int:
    cfg = ex.load_config(args.config)
    ck = _load(args.checkpoint, args.arch)
    model = ck.model
    train, val = ex.load_task(cfg)
    ds = ex.split_for(cfg, train, val, args.split)
    _check_input(model, ds)
    if args.mode == "two-pass":
        rep = delta_two_pass(model, ds, args.batchsize)
    else:
        rep = delta_direct(model, ds)
    metrics = rep.to_metrics()
    _emit(metrics)
    if args.record:
        ex.append_record_line(args.record, {"type": "uncertainty", "run_id": ck.meta.get("run_id", ""),
                                            "config_hash": ck.meta.get("config_hash", ex.config_hash(cfg)), **metrics})
    return EXIT_OK


def cmd_prune(args) -> int:
    cfg = ex.load_config(args.config)
    sparsity = parse_sparsity(args.sparsity)
    if args.finetune_epochs is not None:
        cfg["finetune"]["epochs"] = args.finetune_epochs
    if args.finetune_lr is not None:
        cfg["finetune"]["lr"] = args.finetune_lr
    ck = _load(args.checkpoint, args.arch)
    train, _ = ex.load_task(cfg)
    _check_input(ck.model, train)
    summary = dict(ck.meta.get("summary", {}))
    summary.setdefault("teacher", "teacher")
    sparse, scores, rec = ex.prune_teacher(cfg, ck.model, summary, args.method, sparsity, args.seed)
    out = ex.output_dir(cfg, args.out)
    ex.store(out, sparse, rec, {args.method: scores})
    _emit({"run_id": rec.run_id, "summary": rec.summary,
           "checkpoint": str(out / "checkpoints" / f"{rec.run_id}.prue"),
           "record": str(out / "records" / f"{rec.run_id}.jsonl")})
    return EXIT_OK


def cmd_distill(args) -> int:
    cfg = ex.load_config(args.config)
    if args.student:
        cfg["student"]["arch"] = args.student
    ck = _load(args.checkpoint, args.arch)
    train, _ = ex.load_task(cfg)
    _check_input(ck.model, train)
    summary = dict(ck.meta.get("summary", {}))
    summary.setdefault("teacher", "teacher")
    student, rec = ex.distill_student(cfg, ck.model, summary, args.seed, args.tau, args.lam)
    out = ex.output_dir(cfg, args.out)
    ex.store(out, student, rec)
    _emit({"run_id": rec.run_id, "summary": rec.summary,
           "checkpoint": str(out / "checkpoints" / f"{rec.run_id}.prue"),
           "record": str(out / "records" / f"{rec.run_id}.jsonl")})
    return EXIT_OK


def cmd_eval(args) -> int:
    cfg = ex.load_config(args.config)
    model = _load(args.checkpoint, args.arch).model
    train, val = ex.load_task(cfg)
    ds = ex.split_for(cfg, train, val, args.split)
    _check_input(model, ds)
    _emit({"split": args.split, **evaluate(model, ds)})
    return EXIT_OK


def cmd_dump_predictions(args) -> int:
    cfg = ex.load_config(args.config)
    model = _load(args.checkpoint, args.arch).model
    train, val = ex.load_task(cfg)
    ds = ex.split_for(cfg, train, val, args.split)
    _check_input(model, ds)
    classes = parse_classes(args.classes, ds.num_classes) if args.classes else list(range(ds.num_classes))
    keep = np.flatnonzero(np.isin(ds.y, classes))
    proba = predict_proba(model, ds.x[keep]).astype(np.float64)
    proba /= proba.sum(axis=1, keepdims=True)
    out = Path(args.output)
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["index", "label"] + [f"p{k}" for k in range(ds.num_classes)])
        for i, row in zip(keep, proba):
            w.writerow([int(i), int(ds.y[i])] + [repr(float(p)) for p in row])
    print(f"wrote {len(keep)} rows to {out}")
    return EXIT_OK


def cmd_sweep(args) -> int:
    cfg = ex.load_config(args.config)
    if args.seeds:
        cfg["seeds"] = [int(s) for s in args.seeds.split(",")]
    out = ex.output_dir(cfg, args.out)
    records = ex.sweep(cfg, out, args.jobs)
    for name in cfg["pruning"]["teachers"] or [t["name"] for t in cfg["teachers"]]:
        print(f"student accuracy, teacher {name}")
        print(ex.format_grid(ex.student_grid(records, name)))
    print(f"{len(records)} run records in {out / 'records'}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="prue", description="Prune teachers for higher prediction uncertainty, then distill.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, checkpoint=True):
        sp.add_argument("--config", required=True, help="experiment config (JSON)")
        sp.add_argument("--out", default=None, help="output directory (default $PRUE_OUTPUT_DIR or config output_dir)")
        sp.add_argument("--seed", type=int, default=0)
        if checkpoint:
            sp.add_argument("checkpoint")
            sp.add_argument("--arch", default=None, help="expected architecture name of the checkpoint")

    sp = sub.add_parser("train", help="train a teacher or a vanilla student")
    common(sp, checkpoint=False)
    sp.add_argument("--role", choices=["teacher", "student-vanilla"], default="teacher")
    sp.add_argument("--teacher", default=None, help="teacher name in the config (default: first)")
    sp.add_argument("--smoothing", type=float, default=None)
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("uncertainty", help="measure prediction uncertainty of a checkpoint")
    common(sp)
    sp.add_argument("--split", choices=["train", "val"], default="train")
    sp.add_argument("--mode", choices=["direct", "two-pass"], default="direct")
    sp.add_argument("--batchsize", type=int, default=256)
    sp.add_argument("--record", default=None, help="RunRecord JSONL to append the report to")
    sp.set_defaults(func=cmd_uncertainty)

    sp = sub.add_parser("prune", help="one-shot prune a dense checkpoint and fine-tune it")
    common(sp)
    sp.add_argument("--method", choices=list(METHODS), default="prue")
    sp.add_argument("--sparsity", required=True, help='fraction ("0.9") or percentage ("90%%")')
    sp.add_argument("--finetune-epochs", type=int, default=None)
    sp.add_argument("--finetune-lr", type=float, default=None)
    sp.set_defaults(func=cmd_prune)

    sp = sub.add_parser("distill", help="distill a student from a teacher checkpoint")
    common(sp)
    sp.add_argument("--student", choices=["mlp-s", "mlp-l", "cnn-s", "cnn-l"], default=None)
    sp.add_argument("--tau", type=float, default=None)
    sp.add_argument("--lambda", dest="lam", type=float, default=None)
    sp.set_defaults(func=cmd_distill)

    sp = sub.add_parser("eval", help="accuracy and loss of a checkpoint")
    common(sp)
    sp.add_argument("--split", choices=["train", "val"], default="val")
    sp.set_defaults(func=cmd_eval)

    sp = sub.add_parser("dump-predictions", help="write per-sample class probabilities as CSV")
    common(sp)
    sp.add_argument("--split", choices=["train", "val"], default="train")
    sp.add_argument("--classes", default=None, help="comma-separated class ids")
    sp.add_argument("-o", "--output", required=True)
    sp.set_defaults(func=cmd_dump_predictions)

    sp = sub.add_parser("sweep", help="run every seed x teacher x method x sparsity combination")
    sp.add_argument("--config", required=True)
    sp.add_argument("--out", default=None)
    sp.add_argument("--jobs", type=int, default=1, help="worker processes (one seed per process)")
    sp.add_argument("--seeds", default=None, help="override the config's seed list, e.g. 0,1,2")
    sp.set_defaults(func=cmd_sweep)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_CONFIG if e.code else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.func(args)
    except ex.ConfigError as e:
        print(f"config error at {e}", file=sys.stderr)
        return EXIT_CONFIG
    except (CheckpointError, DataFormatError, OSError) as e:
        print(f"io error: {e}", file=sys.stderr)
        return EXIT_IO
    except NumericError as e:
        print(f"numeric failure: {e}", file=sys.stderr)
        return EXIT_NUMERIC
    except (UsageError, ShapeError, UncertaintyError, ValueError) as e:
        print(f"invalid input: {e}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
