"""
Uncertainty-aware distillation
==============================

Exemplars are scored by how much the model's prediction wobbles under input
noise. Only the steadiest three quarters are distilled from, and the
distillation weight grows to make up for the dropped ones and for how many
old classes there are per new class.
"""

import numpy as np

from uadce.distill import adaptive_weight, distillation_loss, exemplar_uncertainties, refine_exemplars
from uadce.memory import Exemplar, ExemplarSet
from uadce.model import build_model, expand_head

spec = {"kind": "mlp", "input_shape": [4], "hidden": [16], "feature_dim": 8}
old_model = build_model(spec, [0, 1, 2], seed=0)

rng = np.random.default_rng(0)
exemplars = ExemplarSet(4, {c: [Exemplar(4 * c + k, rng.standard_normal(4) * 2, c) for k in range(4)]
                            for c in range(3)})

lam = exemplar_uncertainties(old_model, exemplars, pass_count=10, noise_scale=0.3, seed=0)
for sid, value in sorted(lam.items(), key=lambda kv: kv[1])[:4]:
    print(f"exemplar {sid}: lambda {value:.2e}")

refined, _ = refine_exemplars(exemplars, uncertainties=lam, keep_fraction=0.75)
print(f"kept {len(refined)} of {len(exemplars)}")

w = adaptive_weight(1.0, len(exemplars), len(refined), old_classes=3, new_classes=2)
print(f"zeta = 1.0 x {w.exemplar_ratio:.3f} x {w.class_ratio:.3f} = {w.zeta:.4f}")

# a freshly expanded model still matches the old one on old classes, so the
# distillation term starts at the entropy of the softened old outputs
new_model = expand_head(old_model, 2)
_, x, _ = refined.arrays()
print("distillation loss at expansion:", round(distillation_loss(old_model, new_model, x).item(), 4))
