"""
Class-balanced pseudo-label selection
=====================================

Plain confidence ranking lets an easy class crowd out the others. The
balanced policy admits the same number of the most confident items per class.
"""

import numpy as np

from uadce.equilibrium import SelectionPolicy, class_balanced_select, partition_probs, proportional_counts

rng = np.random.default_rng(1)
# 40 pool items over three session classes; class 7 is the "easy" one
logits = rng.standard_normal((40, 3)) + [0.0, 0.0, 2.0]
probs = np.exp(logits) / np.exp(logits).sum(1, keepdims=True)

candidates = partition_probs(probs, session_classes=[5, 6, 7], gamma=0.5)
print("candidates per class:", {c: len(v) for c, v in candidates.items()})

balanced = class_balanced_select(candidates, SelectionPolicy(iteration_budget=9))
plain = class_balanced_select(candidates, SelectionPolicy(iteration_budget=9, mode="threshold"))
print("balanced:", balanced.counts())
print("plain self-training:", plain.counts())

# per-class proportions: a shorter candidate list may not get a smaller share
print("proportional:", proportional_counts({5: 8, 6: 3}, {5: 0.25, 6: 1.0}))
