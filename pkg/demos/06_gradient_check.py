"""
Checking the session loss gradient by finite differences
========================================================
"""

import numpy as np
import torch

from uadce.distill import adaptive_weight, session_loss
from uadce.model import build_model, expand_head

spec = {"kind": "mlp", "input_shape": [3], "hidden": [5], "feature_dim": 4}
reference = build_model(spec, [0, 1], seed=0)
model = expand_head(reference, 1, generator=torch.Generator().manual_seed(0))

rng = np.random.default_rng(0)
x, y, x_old = rng.standard_normal((8, 3)), rng.integers(0, 3, 8), rng.standard_normal((4, 3))
weight = adaptive_weight(1.0, 8, 6, 2, 1)

session_loss(model, reference, x, y, x_old, weight).total.backward()

h = 1e-4
w = model.head.weight
# features silenced by the ReLU have zero gradient; show some that are live
live = [tuple(i) for i in torch.nonzero(w.grad).tolist()][:4]
for idx in live:
    with torch.no_grad():
        w[idx] += h
        up = session_loss(model, reference, x, y, x_old, weight).total.item()
        w[idx] -= 2 * h
        down = session_loss(model, reference, x, y, x_old, weight).total.item()
        w[idx] += h
    print(f"head{idx}: autograd {w.grad[idx].item():+.8f}  central difference {(up - down) / (2 * h):+.8f}")
