"""
Checking the autodiff engine against finite differences
=======================================================

"""

import numpy as np

from prue.nn import build_model, family, forward
from prue.tensor import Tensor, backward, finite_difference_gradient
from prue.training import cross_entropy

# a tiny MLP in float64 so central differences are accurate
rng = np.random.default_rng(0)
x = rng.normal(size=(16, 4))
y = rng.integers(0, 3, size=16)
model = build_model(family("mlp-s", (4,), 3), 0, np.float64)

# analytic gradient of the loss w.r.t. the first mask
mask = model.prunable()[0].mask
mask.requires_grad = True
grads = backward(cross_entropy(forward(model, x), y), wrt=[mask])
analytic = grads[mask].data.ravel()


def loss_at(m):
    trial = model.copy()
    trial.prunable()[0].mask.data = m.data.reshape(mask.shape)
    return cross_entropy(forward(trial, x), y)


# central differences on a handful of coordinates
idx = rng.choice(mask.size, 8, replace=False)
numeric = finite_difference_gradient(loss_at, mask.data.ravel(), eps=1e-4, indices=idx).data[idx]
for j, a, n in zip(idx, analytic[idx], numeric):
    print(f"coord {j:4d}  analytic {a: .6e}  numeric {n: .6e}")
print("max abs diff", np.abs(analytic[idx] - numeric).max())
