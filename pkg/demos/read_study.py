"""
Summarising a finished sweep from its run records
=================================================

Run ``prue sweep --config configs/acceptance.json`` first (or the acceptance
tests, which run the same sweep).  Everything below reads JSONL records only.
"""

import sys
from pathlib import Path

import numpy as np

from prue import experiment as ex

out = Path(sys.argv[1] if len(sys.argv) > 1 else "runs/acceptance")
records = ex.read_records(out / "records")
print(len(records), "records")

# teachers: accuracy and delta averaged over seeds
rows = ex.summaries(records, "teacher") + ex.summaries(records, "pruned-teacher")
cells = {}
for r in rows:
    key = (r["teacher"], r.get("method", "dense"), r.get("sparsity", 0.0))
    cells.setdefault(key, []).append((r["teacher_accuracy"], r["teacher_delta"]))
for (name, method, s), v in sorted(cells.items()):
    acc, delta = np.mean(v, axis=0)
    print(f"{name:<10} {method:<9} s={s:<4g} acc {acc:.4f}  delta {delta:.5f}  (n={len(v)})")

# students of the pruned teacher, method x sparsity
for name in sorted({r["teacher"] for r in ex.summaries(records, "pruned-teacher")}):
    print(f"\nstudent accuracy, teacher {name}")
    print(ex.format_grid(ex.student_grid(records, name)))
