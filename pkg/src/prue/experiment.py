"""Declarative experiment configs, run records and the train/prune/distill pipelines."""

from __future__ import annotations

import copy
import hashlib
import json
import logging
import os
import time
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path

import jsonschema
import numpy as np

from . import checkpoint as ckpt
from .data import Dataset, load_dataset, standardize, subset
from .distillation import DistillConfig, distill
from .nn import MaskedModel, build_model, family, sparsity_report
from .pruning import METHODS, FinetuneConfig, apply_mask, compute_scores, select_mask
from .training import OptimizerState, evaluate, fit, supervised_loss
from .uncertainty import delta_direct, delta_two_pass

log = logging.getLogger(__name__)

OUTPUT_ENV = "PRUE_OUTPUT_DIR"


class ConfigError(ValueError):
    def __init__(self, path: str, message: str):
        super().__init__(f"{path}: {message}")
        self.path = path


_HYPER = {
    "type": "object",
    "properties": {
        "epochs": {"type": "integer", "minimum": 0},
        "batchsize": {"type": "integer", "minimum": 1},
        "lr": {"type": "number", "exclusiveMinimum": 0},
        "momentum": {"type": "number", "minimum": 0, "maximum": 1},
        "nesterov": {"type": "boolean"},
        "schedule": {
            "type": "array",
            "items": {"type": "array", "prefixItems": [{"type": "integer", "minimum": 0}, {"type": "number", "exclusiveMinimum": 0}], "minItems": 2, "maxItems": 2},
        },
    },
    "additionalProperties": False,
}

CONFIG_SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "title": "PrUE experiment config",
    "type": "object",
    "required": ["task", "teachers", "student", "seeds"],
    "additionalProperties": False,
    "properties": {
        "task": {
            "type": "object",
            "required": ["source"],
            "additionalProperties": False,
            "properties": {
                "source": {"type": "object", "required": ["kind"]},
                "val_source": {"type": ["object", "null"]},
                "subset_per_class": {"type": ["integer", "null"], "minimum": 1},
                "standardize": {"type": "boolean"},
                "dtype": {"enum": ["float32", "float64"]},
            },
        },
        "teachers": {
            "type": "array",
            "minItems": 1,
            "items": {
                "type": "object",
                "required": ["name", "arch"],
                "additionalProperties": False,
                "properties": {
                    "name": {"type": "string"},
                    "arch": {"enum": ["mlp-s", "mlp-l", "cnn-s", "cnn-l"]},
                    "smoothing": {"type": "number", "minimum": 0, "maximum": 1},
                },
            },
        },
        "student": {
            "type": "object",
            "required": ["arch"],
            "additionalProperties": False,
            "properties": {"arch": {"enum": ["mlp-s", "mlp-l", "cnn-s", "cnn-l"]}},
        },
        "train": _HYPER,
        "finetune": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "epochs": {"type": ["integer", "null"], "minimum": 0},
                "lr": {"type": ["number", "null"], "exclusiveMinimum": 0},
            },
        },
        "pruning": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "teachers": {"type": "array", "items": {"type": "string"}},
                "methods": {"type": "array", "items": {"enum": list(METHODS)}},
                "sparsity": {"type": "array", "items": {"type": "number", "minimum": 0, "exclusiveMaximum": 1}},
                "batchsize": {"type": "integer", "minimum": 1},
            },
        },
        "distill": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "tau": {"type": "number", "exclusiveMinimum": 0},
                "lambda": {"type": "number", "minimum": 0, "maximum": 1},
            },
        },
        "uncertainty": {
            "type": "object",
            "additionalProperties": False,
            "properties": {"split": {"enum": ["train", "val"]}, "batchsize": {"type": "integer", "minimum": 1}},
        },
        "batch_mean_loss": {"type": "boolean"},
        "seeds": {"type": "array", "minItems": 1, "items": {"type": "integer"}},
        "output_dir": {"type": "string"},
    },
}

DEFAULTS = {
    "task": {"val_source": None, "subset_per_class": None, "standardize": True, "dtype": "float32"},
    "student": {"arch": "mlp-s"},
    "train": {"epochs": 20, "batchsize": 64, "lr": 0.1, "momentum": 0.9, "nesterov": True, "schedule": [[10, 0.1], [15, 0.1]]},
    "finetune": {"epochs": None, "lr": None},
    "pruning": {"teachers": [], "methods": ["prue"], "sparsity": [0.5], "batchsize": 256},
    "distill": {"tau": 1.0, "lambda": 1.0},
    "uncertainty": {"split": "train", "batchsize": 256},
    "batch_mean_loss": True,
    "output_dir": "runs",
}


def _merge(base: dict, over: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def validate_config(raw: dict) -> dict:
    """Validate against the schema and fill defaults; errors name the offending key path."""
    if not isinstance(raw, dict):
        raise ConfigError("$", "config must be a JSON object")
    validator = jsonschema.Draft202012Validator(CONFIG_SCHEMA)
    errors = sorted(validator.iter_errors(raw), key=lambda e: list(e.absolute_path))
    if errors:
        e = errors[0]
        path = "$" + "".join(f"[{p}]" if isinstance(p, int) else f".{p}" for p in e.absolute_path)
        raise ConfigError(path, e.message)
    cfg = _merge(DEFAULTS, raw)
    for t in cfg["teachers"]:
        t.setdefault("smoothing", 0.0)
    names = [t["name"] for t in cfg["teachers"]]
    if len(set(names)) != len(names):
        raise ConfigError("$.teachers", "teacher names must be unique")
    for i, name in enumerate(cfg["pruning"]["teachers"]):
        if name not in names:
            raise ConfigError(f"$.pruning.teachers[{i}]", f"unknown teacher {name!r}")
    if cfg["batch_mean_loss"] is not True:
        raise ConfigError("$.batch_mean_loss", "only batch-mean losses are implemented")
    return cfg


def load_config(path) -> dict:
    try:
        raw = json.loads(Path(path).read_text())
    except json.JSONDecodeError as e:
        raise ConfigError("$", f"invalid JSON ({e})") from None
    return validate_config(raw)


def config_hash(cfg: dict) -> str:
    """Stable under key order and whitespace; the output directory is not part of the identity."""
    ident = {k: v for k, v in cfg.items() if k != "output_dir"}
    blob = json.dumps(ident, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


def substream(seed: int, name: str) -> int:
    """Independent integer seed for a named randomness consumer of a run."""
    digest = hashlib.sha256(f"{seed}/{name}".encode()).digest()
    return int.from_bytes(digest[:4], "little")


def output_dir(cfg: dict | None = None, override: str | None = None) -> Path:
    if override:
        return Path(override)
    if os.environ.get(OUTPUT_ENV):
        return Path(os.environ[OUTPUT_ENV])
    return Path((cfg or {}).get("output_dir", "runs"))


# -- run records --------------------------------------------------------------------
@dataclass
class RunRecord:
    run_id: str
    config_hash: str
    rows: list[dict] = field(default_factory=list)
    summary: dict = field(default_factory=dict)
    extra: list[dict] = field(default_factory=list)

    def lines(self) -> list[dict]:
        out = [{"type": "epoch", "run_id": self.run_id, "config_hash": self.config_hash, **r} for r in self.rows]
        out += [{"type": r.get("type", "note"), "run_id": self.run_id, "config_hash": self.config_hash, **r} for r in self.extra]
        out.append({"type": "summary", "run_id": self.run_id, "config_hash": self.config_hash, **self.summary})
        return out

    def write(self, path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w") as f:
            for line in self.lines():
                f.write(json.dumps(_plain(line), sort_keys=True) + "\n")
        return path

    @classmethod
    def read(cls, path) -> RunRecord:
        rows, extra, summary = [], [], {}
        run_id = chash = ""
        for line in Path(path).read_text().splitlines():
            if not line.strip():
                continue
            d = json.loads(line)
            run_id, chash = d.pop("run_id"), d.pop("config_hash")
            kind = d.pop("type")
            if kind == "epoch":
                rows.append(d)
            elif kind == "summary":
                summary = d
            else:
                extra.append({"type": kind, **d})
        return cls(run_id, chash, rows, summary, extra)


def append_record_line(path, line: dict) -> None:
    with open(path, "a") as f:
        f.write(json.dumps(_plain(line), sort_keys=True) + "\n")


def _plain(obj):
    if isinstance(obj, dict):
        return {k: _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    return obj


def read_timing(directory) -> dict[str, float]:
    """Latest recorded CPU time per run id (absent for runs never timed)."""
    path = Path(directory) / "timing.jsonl"
    if not path.exists():
        return {}
    return {d["run_id"]: d["cpu_seconds"] for d in map(json.loads, path.read_text().splitlines()) if d}


def read_records(directory) -> list[RunRecord]:
    return [RunRecord.read(p) for p in sorted(Path(directory).glob("**/*.jsonl"))]


# -- data ---------------------------------------------------------------------------
@lru_cache(maxsize=4)
def _load_task_cached(task_json: str) -> tuple[Dataset, Dataset | None]:
    task = json.loads(task_json)
    dtype = np.dtype(task.get("dtype", "float32"))
    train = load_dataset({**task["source"], "split": "train"})
    val = load_dataset({**task["val_source"], "split": "val"}) if task.get("val_source") else None
    if task.get("subset_per_class"):
        train = subset(train, task["subset_per_class"], seed=0)
    if task.get("standardize", True):
        if val is not None:
            train, val = standardize(train, val, per_channel=True)
        else:
            train = standardize(train, per_channel=True)
    train = train.astype(dtype)
    val = val.astype(dtype) if val is not None else None
    return train, val


def load_task(cfg: dict) -> tuple[Dataset, Dataset | None]:
    return _load_task_cached(json.dumps(cfg["task"], sort_keys=True))


def split_for(cfg: dict, train: Dataset, val: Dataset | None, split: str | None = None) -> Dataset:
    split = split or cfg["uncertainty"]["split"]
    if split == "val":
        if val is None:
            raise ConfigError("$.task.val_source", "a validation source is required for split 'val'")
        return val
    return train


# -- pipelines ----------------------------------------------------------------------------
def _optimizer(hyper: dict) -> OptimizerState:
    return OptimizerState(hyper["lr"], hyper["momentum"], hyper["nesterov"], [tuple(s) for s in hyper["schedule"]])


def finetune_config(cfg: dict) -> FinetuneConfig:
    tr, ft = cfg["train"], cfg["finetune"]
    return FinetuneConfig(
        epochs=ft["epochs"] if ft["epochs"] is not None else max(1, tr["epochs"] // 3),
        batchsize=tr["batchsize"],
        lr=ft["lr"] if ft["lr"] is not None else tr["lr"] / 10.0,
        momentum=tr["momentum"],
        nesterov=tr["nesterov"],
    )


def teacher_entry(cfg: dict, name: str | None = None) -> dict:
    if name is None:
        return cfg["teachers"][0]
    for t in cfg["teachers"]:
        if t["name"] == name:
            return t
    raise ConfigError("$.teachers", f"no teacher named {name!r}")


def measure(cfg: dict, model: MaskedModel, train: Dataset, val: Dataset | None, mode: str = "direct", split: str | None = None) -> dict:
    data = split_for(cfg, train, val, split)
    if mode == "two-pass":
        rep = delta_two_pass(model, data, cfg["uncertainty"]["batchsize"])
    else:
        rep = delta_direct(model, data)
    acc = evaluate(model, val if val is not None else train)["accuracy"]
    return {"accuracy": acc, **rep.to_metrics()}


def train_teacher(cfg: dict, name: str | None, seed: int, smoothing: float | None = None) -> tuple[MaskedModel, RunRecord]:
    entry = teacher_entry(cfg, name)
    alpha = entry["smoothing"] if smoothing is None else smoothing
    train, val = load_task(cfg)
    spec = family(entry["arch"], train.input_shape, train.num_classes)
    model = build_model(spec, substream(seed, f"init/{entry['arch']}"), train.x.dtype)
    rows = fit(model, train, cfg["train"]["epochs"], cfg["train"]["batchsize"], _optimizer(cfg["train"]),
               supervised_loss(alpha or None), substream(seed, "shuffle/teacher"), val)
    m = measure(cfg, model, train, val)
    if rows:
        rows[-1]["delta"], rows[-1]["delta_1e2"] = m["delta"], m["delta_1e2"]
    summary = {
        "role": "teacher", "seed": seed, "teacher": entry["name"], "teacher_arch": entry["arch"],
        "smoothing": alpha, "teacher_accuracy": m["accuracy"], "teacher_delta": m["delta"],
        "teacher_delta_1e2": m["delta_1e2"], "delta_split": m["split"], "class_counts": m["class_counts"],
        "sparsity": 0.0, "method": "dense", "num_params": model.num_params,
    }
    run_id = f"teacher.{entry['name']}.a{alpha:g}.seed{seed}"
    return model, RunRecord(run_id, config_hash(cfg), rows, summary)


def train_vanilla(cfg: dict, seed: int) -> tuple[MaskedModel, RunRecord]:
    train, val = load_task(cfg)
    spec = family(cfg["student"]["arch"], train.input_shape, train.num_classes)
    model = build_model(spec, substream(seed, "init/student"), train.x.dtype)
    rows = fit(model, train, cfg["train"]["epochs"], cfg["train"]["batchsize"], _optimizer(cfg["train"]),
               supervised_loss(None), substream(seed, "shuffle/student"), val)
    ev = evaluate(model, val if val is not None else train)
    summary = {"role": "student-vanilla", "seed": seed, "student_arch": spec.name, "student_accuracy": ev["accuracy"]}
    return model, RunRecord(f"student.vanilla.seed{seed}", config_hash(cfg), rows, summary)


def prune_teacher(cfg: dict, teacher: MaskedModel, teacher_summary: dict, method: str, sparsity: float, seed: int):
    """Score, mask and fine-tune a copy of a trained dense teacher."""
    train, val = load_task(cfg)
    score_data = split_for(cfg, train, val)
    scores = compute_scores(method, teacher, score_data, substream(seed, "random-pruning"), cfg["pruning"]["batchsize"])
    sparse = apply_mask(teacher.copy(), select_mask(scores, sparsity))
    before = measure(cfg, sparse, train, val)
    ft = finetune_config(cfg)
    rows = fit(sparse, train, ft.epochs, ft.batchsize, ft.optimizer(), supervised_loss(None),
               substream(seed, "shuffle/finetune"), val)
    after = measure(cfg, sparse, train, val)
    if rows:
        rows[-1]["delta"], rows[-1]["delta_1e2"] = after["delta"], after["delta_1e2"]
    sp = sparsity_report(sparse)
    summary = {
        "role": "pruned-teacher", "seed": seed, "teacher": teacher_summary.get("teacher"),
        "teacher_arch": teacher.spec.name, "method": method, "sparsity": sparsity,
        "sparsity_measured": sp["global"], "zeros": sp["zeros"], "prunable": sp["prunable"],
        "dense_accuracy": teacher_summary.get("teacher_accuracy"), "dense_delta": teacher_summary.get("teacher_delta"),
        "pruned_accuracy": before["accuracy"], "pruned_delta": before["delta"],
        "teacher_accuracy": after["accuracy"], "teacher_delta": after["delta"], "teacher_delta_1e2": after["delta_1e2"],
        "delta_split": after["split"], "finetune_epochs": ft.epochs, "finetune_lr": ft.lr,
    }
    run_id = f"prune.{summary['teacher']}.{method}.s{sparsity:g}.seed{seed}"
    return sparse, scores, RunRecord(run_id, config_hash(cfg), rows, summary)


def distill_student(cfg: dict, teacher: MaskedModel, teacher_summary: dict, seed: int,
                    tau: float | None = None, lam: float | None = None) -> tuple[MaskedModel, RunRecord]:
    train, val = load_task(cfg)
    tau = cfg["distill"]["tau"] if tau is None else tau
    lam = cfg["distill"]["lambda"] if lam is None else lam
    h = cfg["train"]
    dcfg = DistillConfig(tau, lam, h["epochs"], h["batchsize"], h["lr"], h["momentum"], h["nesterov"], [tuple(s) for s in h["schedule"]])
    spec = family(cfg["student"]["arch"], train.input_shape, train.num_classes)
    student = build_model(spec, substream(seed, "init/student"), train.x.dtype)
    info = {k: teacher_summary.get(k) for k in ("teacher", "method", "sparsity", "teacher_delta", "teacher_accuracy")}
    _, rows = distill(teacher, student, train, dcfg, substream(seed, "shuffle/student"), val, info)
    ev = evaluate(student, val if val is not None else train)
    summary = {
        "role": "student", "seed": seed, "student_arch": spec.name, "student_accuracy": ev["accuracy"],
        "tau": tau, "lambda": lam, "teacher": teacher_summary.get("teacher"),
        "teacher_arch": teacher.spec.name, "smoothing": teacher_summary.get("smoothing", 0.0),
        "method": teacher_summary.get("method", "dense"), "sparsity": teacher_summary.get("sparsity", 0.0),
        "teacher_accuracy": teacher_summary.get("teacher_accuracy"), "teacher_delta": teacher_summary.get("teacher_delta"),
        "teacher_delta_1e2": teacher_summary.get("teacher_delta_1e2"),
    }
    run_id = "student.{}.{}.s{:g}.a{:g}.seed{}".format(
        summary["teacher"], summary["method"], summary["sparsity"], summary["smoothing"] or 0.0, seed
    )
    return student, RunRecord(run_id, config_hash(cfg), rows, summary)


# -- sweeps -------------------------------------------------------------------------------
def _cached_run(out: Path, run_id: str, chash: str, with_model: bool):
    rec_path = out / "records" / f"{run_id}.jsonl"
    ck_path = out / "checkpoints" / f"{run_id}.prue"
    if rec_path.exists() and (ck_path.exists() or not with_model):
        rec = RunRecord.read(rec_path)
        if rec.config_hash == chash:
            model = ckpt.load_checkpoint(ck_path).model if with_model else None
            return model, rec
    return None


def checkpoint_meta(rec: RunRecord) -> dict:
    return {"config_hash": rec.config_hash, "run_id": rec.run_id, "summary": _plain(rec.summary)}


def store(out: Path, model: MaskedModel | None, rec: RunRecord, scores=None) -> None:
    if model is not None:
        ckpt.save_checkpoint(out / "checkpoints" / f"{rec.run_id}.prue", model, scores, checkpoint_meta(rec))
    rec.write(out / "records" / f"{rec.run_id}.jsonl")


def _log_time(out: Path, run_id: str, started: float) -> None:
    """Process CPU time goes to a side file so records stay byte-deterministic."""
    append_record_line(out / "timing.jsonl", {"run_id": run_id, "cpu_seconds": round(time.process_time() - started, 3)})


def run_seed(cfg: dict, seed: int, out: Path) -> list[RunRecord]:
    """All runs of one seed: vanilla student, teachers, pruned teachers, distilled students.

    Finished runs with a matching config hash are reused from ``out``.
    """
    chash = config_hash(cfg)
    records = []

    def cached(run_id, with_model):
        return _cached_run(out, run_id, chash, with_model)

    hit = cached(f"student.vanilla.seed{seed}", False)
    if hit is None:
        t0 = time.process_time()
        _, rec = train_vanilla(cfg, seed)
        store(out, None, rec)
        _log_time(out, rec.run_id, t0)
    else:
        rec = hit[1]
    records.append(rec)

    for entry in cfg["teachers"]:
        run_id = f"teacher.{entry['name']}.a{entry['smoothing']:g}.seed{seed}"
        hit = cached(run_id, True)
        if hit is None:
            t0 = time.process_time()
            teacher, trec = train_teacher(cfg, entry["name"], seed)
            store(out, teacher, trec)
            _log_time(out, trec.run_id, t0)
        else:
            teacher, trec = hit
        records.append(trec)
        log.info("%s acc=%.4f delta=%.5f", trec.run_id, trec.summary["teacher_accuracy"], trec.summary["teacher_delta"])
        teachers = [(teacher, trec.summary)]
        if entry["name"] in cfg["pruning"]["teachers"]:
            for method in cfg["pruning"]["methods"]:
                for s in cfg["pruning"]["sparsity"]:
                    prid = f"prune.{entry['name']}.{method}.s{s:g}.seed{seed}"
                    hit = cached(prid, True)
                    if hit is None:
                        t0 = time.process_time()
                        sparse, scores, prec = prune_teacher(cfg, teacher, trec.summary, method, s, seed)
                        store(out, sparse, prec, {method: scores})
                        _log_time(out, prec.run_id, t0)
                    else:
                        sparse, prec = hit
                    records.append(prec)
                    log.info("%s acc=%.4f delta=%.5f", prid, prec.summary["teacher_accuracy"], prec.summary["teacher_delta"])
                    teachers.append((sparse, {**prec.summary, "smoothing": entry["smoothing"]}))
        for model, summary in teachers:
            summary = {**summary, "smoothing": summary.get("smoothing", entry["smoothing"])}
            srid = "student.{}.{}.s{:g}.a{:g}.seed{}".format(
                entry["name"], summary.get("method", "dense"), summary.get("sparsity", 0.0), summary["smoothing"], seed
            )
            hit = cached(srid, False)
            if hit is None:
                t0 = time.process_time()
                _, srec = distill_student(cfg, model, summary, seed)
                store(out, None, srec)
                _log_time(out, srec.run_id, t0)
            else:
                srec = hit[1]
            records.append(srec)
            log.info("%s student acc=%.4f", srid, srec.summary["student_accuracy"])
    return records


def _run_seed_job(args):
    cfg, seed, out = args
    return [r.run_id for r in run_seed(cfg, seed, Path(out))]


def sweep(cfg: dict, out: Path | None = None, jobs: int = 1) -> list[RunRecord]:
    """Expand seeds into independent runs; ``jobs > 1`` runs seeds in separate processes."""
    out = Path(out) if out is not None else output_dir(cfg)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.json").write_text(json.dumps(cfg, indent=2, sort_keys=True))
    if jobs > 1:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(max_workers=jobs) as pool:
            list(pool.map(_run_seed_job, [(cfg, s, str(out)) for s in cfg["seeds"]]))
    else:
        for s in cfg["seeds"]:
            run_seed(cfg, s, out)
    chash = config_hash(cfg)
    return [r for r in read_records(out / "records") if r.config_hash == chash]


# -- aggregation (from run records only) ---------------------------------------------------
def summaries(records: list[RunRecord], role: str | None = None) -> list[dict]:
    return [r.summary for r in records if role is None or r.summary.get("role") == role]


def mean_over_seeds(rows: list[dict], key: str, **match) -> float:
    vals = [r[key] for r in rows if all(r.get(k) == v for k, v in match.items())]
    if not vals:
        raise KeyError(f"no rows match {match}")
    return float(np.mean(vals))


def student_grid(records: list[RunRecord], teacher: str) -> dict:
    """``{method: {sparsity: mean student accuracy}}`` for one teacher, plus the vanilla baseline."""
    rows = summaries(records, "student")
    grid: dict = {}
    for r in rows:
        if r.get("teacher") != teacher:
            continue
        grid.setdefault(r["method"], {}).setdefault(r["sparsity"], []).append(r["student_accuracy"])
    out = {m: {s: float(np.mean(v)) for s, v in sorted(d.items())} for m, d in grid.items()}
    vanilla = [r["student_accuracy"] for r in summaries(records, "student-vanilla")]
    out["vanilla"] = float(np.mean(vanilla)) if vanilla else float("nan")
    return out


def format_grid(grid: dict) -> str:
    sparsities = sorted({s for m, d in grid.items() if isinstance(d, dict) for s in d})
    lines = ["method      " + "".join(f"s={s:<8g}" for s in sparsities)]
    for m, d in grid.items():
        if not isinstance(d, dict):
            continue
        lines.append(f"{m:<12}" + "".join(f"{d[s]:<10.4f}" if s in d else f"{'-':<10}" for s in sparsities))
    lines.append(f"vanilla     {grid.get('vanilla', float('nan')):.4f}")
    return "\n".join(lines)
