"""
Building an incremental session stream
======================================

A base session with many labeled classes, then small N-way K-shot sessions,
each with an unlabeled pool drawn from its own classes.
"""

import numpy as np

from uadce.protocol import ProtocolConfig, build_benchmark, synthetic_manifest

# ten Gaussian classes in 16 dimensions, nearest means 4 units apart
manifest = synthetic_manifest(class_count=10, samples_per_class=300, dimension=16, separation=4.0, seed=0)

# 6 base classes, then two 2-way 5-shot sessions with 100 unlabeled items each
stream = build_benchmark(manifest, ProtocolConfig(6, 2, 5, 3, 100, seed=0))

for s in stream:
    pool_classes = np.unique(manifest.labels[s.unlabeled_pool]).tolist()
    print(f"session {s.index}: classes {s.class_ids}, labeled {len(s.labeled)}, "
          f"pool {len(s.unlabeled_pool)} from {pool_classes}, test {len(s.test_set)}")

# the test set only ever grows
print("seen after session 3:", stream.seen_classes(3))

# the same seed rebuilds the same stream
again = build_benchmark(manifest, ProtocolConfig(6, 2, 5, 3, 100, seed=0))
print("reproducible:", again.to_json() == stream.to_json())
