"""Session curriculum for semi-supervised few-shot class-incremental learning.

A labeled pool is split into a large base session followed by disjoint
N-way K-shot sessions. Every incremental session also carries an unlabeled
pool drawn from the leftovers of its own classes.

Samples are referred to by their integer index into the manifest arrays, so
identity checks (labeled vs. unlabeled, duplicates) are plain set operations.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .seeding import derive_rng


class ProtocolError(ValueError):
    """Configuration is inconsistent with the manifest."""


@dataclass(frozen=True)
class DatasetManifest:
    name: str
    inputs: np.ndarray
    labels: np.ndarray
    class_count: int
    # Optional fixed train/test split (True = test item). None -> stratified split.
    test_mask: np.ndarray | None = None

    def __post_init__(self):
        if len(self.inputs) != len(self.labels):
            raise ProtocolError("inputs and labels differ in length")
        labels = np.asarray(self.labels)
        if labels.size and (labels.min() < 0 or labels.max() >= self.class_count):
            raise ProtocolError(f"labels must lie in [0, {self.class_count})")
        counts = np.bincount(labels, minlength=self.class_count)
        empty = np.flatnonzero(counts == 0)
        if empty.size:
            raise ProtocolError(f"class {int(empty[0])} has no samples")

    def __len__(self):
        return len(self.labels)

    def class_indices(self, c: int) -> np.ndarray:
        return np.flatnonzero(self.labels == c)


@dataclass(frozen=True)
class ProtocolConfig:
    base_class_count: int
    n_way: int
    k_shot: int
    session_count: int
    unlabeled_pool_size: int
    seed: int = 0
    test_fraction: float = 1 / 6
    distractors: bool = False

    def __post_init__(self):
        for name in ("base_class_count", "n_way", "k_shot", "session_count"):
            if getattr(self, name) < 1:
                raise ProtocolError(f"{name} must be positive")
        if self.unlabeled_pool_size < 0:
            raise ProtocolError("unlabeled_pool_size must be >= 0")
        if not 0 <= self.test_fraction < 1:
            raise ProtocolError("test_fraction must lie in [0, 1)")

    @property
    def total_classes(self) -> int:
        return self.base_class_count + (self.session_count - 1) * self.n_way


@dataclass(frozen=True)
class SessionSpec:
    index: int
    class_ids: tuple[int, ...]
    labeled: np.ndarray            # sample ids, D_i^l
    unlabeled_pool: np.ndarray     # sample ids, D_i^u (empty for the base session)
    test_set: np.ndarray           # sample ids covering every class seen so far
    manifest: DatasetManifest = field(repr=False)

    @property
    def labeled_inputs(self) -> np.ndarray:
        return self.manifest.inputs[self.labeled]

    @property
    def labeled_labels(self) -> np.ndarray:
        return self.manifest.labels[self.labeled]

    @property
    def pool_inputs(self) -> np.ndarray:
        return self.manifest.inputs[self.unlabeled_pool]

    @property
    def test_inputs(self) -> np.ndarray:
        return self.manifest.inputs[self.test_set]

    @property
    def test_labels(self) -> np.ndarray:
        return self.manifest.labels[self.test_set]


@dataclass(frozen=True)
class SessionStream:
    sessions: tuple[SessionSpec, ...]
    config: ProtocolConfig

    def __len__(self):
        return len(self.sessions)

    def __iter__(self):
        return iter(self.sessions)

    def __getitem__(self, i):
        return self.sessions[i]

    @property
    def base_classes(self) -> tuple[int, ...]:
        return self.sessions[0].class_ids

    def seen_classes(self, index: int) -> tuple[int, ...]:
        """Classes of sessions 1..index (1-based)."""
        out: list[int] = []
        for s in self.sessions[:index]:
            out.extend(s.class_ids)
        return tuple(out)

    def to_json(self) -> dict:
        return {
            "manifest": self.sessions[0].manifest.name if self.sessions else None,
            "config": {k: getattr(self.config, k) for k in self.config.__dataclass_fields__},
            "sessions": [
                {
                    "index": s.index,
                    "class_ids": list(s.class_ids),
                    "labeled": s.labeled.tolist(),
                    "unlabeled_pool": s.unlabeled_pool.tolist(),
                    "test_set": s.test_set.tolist(),
                }
                for s in self.sessions
            ],
        }

    def export_json(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_json(), indent=1))


def _split_train_test(manifest: DatasetManifest, config: ProtocolConfig):
    """Per-class (train ids, test ids), fixed before any session is assembled."""
    rng = derive_rng(config.seed, "split")
    train, test = {}, {}
    for c in range(manifest.class_count):
        idx = manifest.class_indices(c)
        if manifest.test_mask is not None:
            mask = np.asarray(manifest.test_mask)[idx]
            train[c], test[c] = idx[~mask], idx[mask]
            continue
        perm = rng.permutation(idx)
        n_test = int(np.floor(len(idx) * config.test_fraction))
        test[c] = np.sort(perm[:n_test])
        train[c] = np.sort(perm[n_test:])
    return train, test


def build_benchmark(manifest: DatasetManifest, config: ProtocolConfig) -> SessionStream:
    """Assemble the base session and the N-way K-shot incremental sessions.

    Classes are consumed in manifest order: the first ``base_class_count``
    form session 1 (all their training samples labeled), then ``n_way`` per
    incremental session. For an incremental class, ``k_shot`` training samples
    are drawn as labeled data and the rest become unlabeled candidates; the
    session pool keeps at most ``unlabeled_pool_size`` of them.
    """
    if config.total_classes > manifest.class_count:
        raise ProtocolError(
            f"protocol needs {config.total_classes} classes, manifest "
            f"{manifest.name!r} has {manifest.class_count}"
        )
    train, test = _split_train_test(manifest, config)
    rng = derive_rng(config.seed, "sessions")

    base = tuple(range(config.base_class_count))
    for c in base:
        if len(train[c]) == 0:
            raise ProtocolError(f"base class {c} has no training samples")

    groups = [base]
    start = config.base_class_count
    for _ in range(config.session_count - 1):
        groups.append(tuple(range(start, start + config.n_way)))
        start += config.n_way

    # Shots first, for every incremental class, so distractor pools never
    # contain a sample that some session uses as labeled data.
    shots, leftovers = {}, {}
    for cls in groups[1:]:
        for c in cls:
            if len(train[c]) < config.k_shot:
                raise ProtocolError(
                    f"class {c} has {len(train[c])} training samples, "
                    f"{config.k_shot}-shot sampling needs {config.k_shot}"
                )
            chosen = rng.choice(len(train[c]), size=config.k_shot, replace=False)
            keep = np.zeros(len(train[c]), dtype=bool)
            keep[chosen] = True
            shots[c] = train[c][np.sort(chosen)]
            leftovers[c] = train[c][~keep]

    sessions = []
    test_ids = np.empty(0, dtype=np.int64)
    for i, cls in enumerate(groups, start=1):
        test_ids = np.concatenate([test_ids] + [test[c] for c in cls]).astype(np.int64)
        if i == 1:
            labeled = np.concatenate([train[c] for c in cls])
            pool = np.empty(0, dtype=np.int64)
        else:
            labeled = np.concatenate([shots[c] for c in cls])
            candidates = [leftovers[c] for c in cls]
            if config.distractors:
                candidates += [leftovers[c] for g in groups[1:] if g != cls for c in g]
            candidates = np.concatenate(candidates)
            m = min(config.unlabeled_pool_size, len(candidates))
            pool = np.sort(rng.choice(candidates, size=m, replace=False)) if m else candidates[:0]
        sessions.append(
            SessionSpec(
                index=i,
                class_ids=cls,
                labeled=labeled.astype(np.int64),
                unlabeled_pool=pool.astype(np.int64),
                test_set=test_ids.copy(),
                manifest=manifest,
            )
        )
    return SessionStream(tuple(sessions), config)


def synthetic_manifest(class_count, samples_per_class, dimension, separation, seed=0,
                       name="synthetic") -> DatasetManifest:
    """Isotropic unit-variance Gaussian blobs.

    Class means sit on a random simplex-like layout: each mean is drawn on a
    sphere and rescaled so the closest pair of means is ``separation`` apart.
    """
    if min(class_count, samples_per_class, dimension) < 1 or separation <= 0:
        raise ValueError("all arguments must be positive")
    rng = np.random.default_rng(seed)
    if class_count == 1:
        means = np.zeros((1, dimension))
    else:
        means = rng.standard_normal((class_count, dimension))
        diff = means[:, None, :] - means[None, :, :]
        dist = np.sqrt((diff ** 2).sum(-1))
        dist[np.diag_indices(class_count)] = np.inf
        means *= separation / dist.min()
    inputs = means.repeat(samples_per_class, axis=0)
    inputs = inputs + rng.standard_normal(inputs.shape)
    labels = np.arange(class_count).repeat(samples_per_class)
    return DatasetManifest(name, inputs, labels, class_count)


def load_manifest(path, name=None) -> DatasetManifest:
    """Load a manifest from a directory or a single columnar file.

    Directory layout: one ``<class_id>.npy`` per class holding that class's
    samples stacked along axis 0. Columnar file (``.csv`` or ``.npy``): one row
    per sample, the flattened input followed by the integer label.
    """
    path = Path(path)
    name = name or path.stem
    if path.is_dir():
        files = sorted(path.glob("*.npy"), key=lambda p: int(p.stem))
        arrays = [np.load(f) for f in files]
        if [int(f.stem) for f in files] != list(range(len(files))):
            raise ProtocolError(f"{path}: class files must be named 0.npy .. {len(files) - 1}.npy")
        inputs = np.concatenate(arrays).astype(np.float64)
        labels = np.concatenate([np.full(len(a), c) for c, a in enumerate(arrays)])
        return DatasetManifest(name, inputs, labels, len(arrays))
    if path.suffix == ".csv":
        table = np.loadtxt(path, delimiter=",", ndmin=2)
    else:
        table = np.load(path)
    inputs = table[:, :-1].astype(np.float64)
    labels = table[:, -1].astype(np.int64)
    return DatasetManifest(name, inputs, labels, int(labels.max()) + 1)


def save_manifest_columnar(manifest: DatasetManifest, path) -> None:
    flat = manifest.inputs.reshape(len(manifest), -1)
    table = np.column_stack([flat, manifest.labels])
    if os.fspath(path).endswith(".csv"):
        np.savetxt(path, table, delimiter=",", fmt="%.17g")
    else:
        np.save(path, table)
