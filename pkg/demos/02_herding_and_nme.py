"""
Herding exemplars and nearest-mean classification
=================================================
"""

import numpy as np

from uadce.memory import herding_select
from uadce.model import PrototypeTable, nme_classify

rng = np.random.default_rng(0)
features = rng.standard_normal((50, 2)) + [3.0, 1.0]

# greedy: each pick keeps the running mean of the picks near the class mean
order = herding_select(features, 5)
print("herding order:", order)
for t in range(1, 6):
    gap = np.linalg.norm(features[order[:t]].mean(0) - features.mean(0))
    print(f"  {t} exemplars, distance to class mean {gap:.4f}")

# a shorter budget is always a prefix of a longer one
print("prefix property:", herding_select(features, 3) == order[:3])

# prototypes are class means of exemplar features; queries go to the closest one
protos = PrototypeTable((0, 1, 2), np.array([[0.0, 0.0], [3.0, 1.0], [0.0, 4.0]]))
queries = np.array([[2.5, 0.5], [0.2, 3.0], [1.5, 0.5]])
print("predictions:", nme_classify(queries, protos).tolist())

# an exact midpoint between two prototypes goes to the smaller class id
print("tie:", nme_classify(np.array([[1.5, 0.5]]), protos).tolist())
