"""
Distilling a student from dense and sparse teachers
===================================================

"""

import numpy as np

from prue.data import noisy_digits, standardize
from prue.distillation import DistillConfig, distill
from prue.nn import build_model, family
from prue.pruning import FinetuneConfig, prune_and_finetune
from prue.training import OptimizerState, evaluate, train

train_ds = noisy_digits(per_class=200, seed=0)
val_ds = noisy_digits(per_class=100, seed=0, split="val")
train_ds, val_ds = standardize(train_ds, val_ds)
train_ds, val_ds = train_ds.astype(np.float32), val_ds.astype(np.float32)
shape = train_ds.input_shape

teacher = build_model(family("mlp-l", shape, 10), 1)
train(teacher, train_ds, 10, 64, OptimizerState(0.05, 0.9, True, [(6, 0.1)]), seed=1)
sparse, _, _ = prune_and_finetune(teacher, "prue", 0.5, train_ds, FinetuneConfig(epochs=3, lr=0.005), 1)

# the same student initialisation and batch order for every run
cfg = DistillConfig(tau=1.0, lam=1.0, epochs=10, batchsize=64, lr=0.05, schedule=[(6, 0.1)])
vanilla = build_model(family("mlp-s", shape, 10), 2)
train(vanilla, train_ds, 10, 64, OptimizerState(0.05, 0.9, True, [(6, 0.1)]), seed=3)
print(f"vanilla student        {evaluate(vanilla, val_ds)['accuracy']:.4f}")
for name, t in (("dense teacher", teacher), ("prue 50% teacher", sparse)):
    student, rows = distill(t, build_model(family("mlp-s", shape, 10), 2), train_ds, cfg, seed=3)
    print(f"student of {name:<12} {evaluate(student, val_ds)['accuracy']:.4f}  final kd loss {rows[-1]['kd_loss']:.4f}")
