"""
Pruning a teacher to raise its prediction uncertainty
=====================================================

A trained teacher tends to be overconfident: the probability it gives each
sample's own class barely varies inside a class.  Scoring weights by how much
their mask moves that variance, and removing the least useful ones, makes the
teacher less certain while keeping most of its accuracy.
"""

import numpy as np

from prue.data import noisy_digits, standardize
from prue.nn import build_model, family
from prue.pruning import FinetuneConfig, prune_and_finetune
from prue.training import OptimizerState, evaluate, train
from prue.uncertainty import delta_direct

# a small noisy-digits task keeps this to well under a minute
train_ds = noisy_digits(per_class=200, seed=0)
val_ds = noisy_digits(per_class=100, seed=0, split="val")
train_ds, val_ds = standardize(train_ds, val_ds)
train_ds, val_ds = train_ds.astype(np.float32), val_ds.astype(np.float32)

teacher = build_model(family("mlp-l", train_ds.input_shape, 10), 0)
train(teacher, train_ds, 10, 64, OptimizerState(0.05, 0.9, True, [(6, 0.1)]), seed=0)
print(f"dense teacher   acc {evaluate(teacher, val_ds)['accuracy']:.4f}  delta {delta_direct(teacher, train_ds).delta:.5f}")

# one-shot pruning with each criterion, then a short fine-tune
ft = FinetuneConfig(epochs=3, batchsize=64, lr=0.005)
for method in ("prue", "magnitude", "snip", "random"):
    for s in (0.5, 0.9):
        sparse, _, _ = prune_and_finetune(teacher, method, s, train_ds, ft, 0)
        acc = evaluate(sparse, val_ds)["accuracy"]
        print(f"{method:<9} s={s:<4g} acc {acc:.4f}  delta {delta_direct(sparse, train_ds).delta:.5f}")
