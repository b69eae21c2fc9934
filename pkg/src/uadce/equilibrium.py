"""Class-balanced self-training on the unlabeled pool of a session."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable, Mapping, Sequence

import numpy as np

from .model import ModelState, predict_proba


class PolicyError(ValueError):
    pass


@dataclass(frozen=True)
class Candidate:
    sample_id: int
    predicted_class: int
    confidence: float


@dataclass
class PseudoLabelBatch:
    items: list[Candidate] = field(default_factory=list)
    session_index: int = 0

    def __len__(self):
        return len(self.items)

    def __iter__(self):
        return iter(self.items)

    @property
    def sample_ids(self) -> np.ndarray:
        return np.array([c.sample_id for c in self.items], dtype=np.int64)

    @property
    def labels(self) -> np.ndarray:
        return np.array([c.predicted_class for c in self.items], dtype=np.int64)

    def counts(self) -> dict[int, int]:
        out: dict[int, int] = {}
        for c in self.items:
            out[c.predicted_class] = out.get(c.predicted_class, 0) + 1
        return out


@dataclass(frozen=True)
class SelectionPolicy:
    """How many confident pool items enter training per unlabeled iteration.

    mode ``balanced``: equal per-class quota (``per_class_quota`` or
    ``iteration_budget // N``), or the first ``proportions[c]`` fraction of each
    class list when proportions are given. Mode ``threshold`` is plain
    self-training: the globally most confident ``iteration_budget`` items.
    """

    gamma: float = 0.0
    iteration_budget: int = 10
    iterations: int = 35
    per_class_quota: int | None = None
    proportions: Mapping[int, float] | None = None
    mode: str = "balanced"

    def __post_init__(self):
        if not 0.0 <= self.gamma <= 1.0:
            raise PolicyError("gamma must lie in [0, 1]")
        if self.iteration_budget < 1 or self.iterations < 0:
            raise PolicyError("iteration_budget must be positive and iterations >= 0")
        if self.per_class_quota is not None and self.per_class_quota < 1:
            raise PolicyError("per_class_quota must be positive")
        if self.mode not in ("balanced", "threshold"):
            raise PolicyError(f"unknown selection mode {self.mode!r}")
        if self.proportions is not None:
            bad = {c: p for c, p in self.proportions.items() if not 0.0 <= p <= 1.0}
            if bad:
                raise PolicyError(f"proportions outside [0, 1]: {bad}")


def pseudo_label(dist, session_classes: Sequence[int]) -> tuple[int, float]:
    """Argmax class over the session's classes and its (renormalized) probability."""
    p = np.asarray(dist, dtype=np.float64)
    if len(p) != len(session_classes):
        raise ValueError("distribution and session_classes differ in length")
    p = p / p.sum()
    k = int(np.argmax(p))
    return int(session_classes[k]), float(p[k])


def restrict_to_session(probs: np.ndarray, model: ModelState, session_classes: Sequence[int]) -> np.ndarray:
    cols = [model.class_index[c] for c in session_classes]
    sub = probs[:, cols]
    return sub / sub.sum(axis=1, keepdims=True)


def partition_probs(probs: np.ndarray, session_classes: Sequence[int], gamma: float,
                    sample_ids: Sequence[int] | None = None) -> dict[int, list[Candidate]]:
    """Split pool items by pseudo class, keeping confidence > gamma, sorted by confidence desc.

    ``probs`` rows are distributions over ``session_classes``.
    """
    probs = np.asarray(probs, dtype=np.float64)
    ids = np.arange(len(probs)) if sample_ids is None else np.asarray(sample_ids)
    out: dict[int, list[Candidate]] = {int(c): [] for c in session_classes}
    if len(probs) == 0:
        return out
    probs = probs / probs.sum(axis=1, keepdims=True)
    arg = probs.argmax(axis=1)
    conf = probs[np.arange(len(probs)), arg]
    for j in np.flatnonzero(conf > gamma):
        c = int(session_classes[arg[j]])
        out[c].append(Candidate(int(ids[j]), c, float(conf[j])))
    for c in out:
        out[c].sort(key=lambda cand: -cand.confidence)  # stable: pool order on ties
    return out


def partition_confident(pool_inputs, model: ModelState, policy: SelectionPolicy,
                        session_classes: Sequence[int], pool_ids=None) -> dict[int, list[Candidate]]:
    if len(pool_inputs) == 0:
        return {int(c): [] for c in session_classes}
    probs = restrict_to_session(predict_proba(model, pool_inputs), model, session_classes)
    return partition_probs(probs, session_classes, policy.gamma, pool_ids)


def check_proportions(sizes: Mapping[int, int], proportions: Mapping[int, float]) -> None:
    """Raise if a smaller candidate list is given a smaller proportion than a larger one."""
    classes = sorted(sizes)
    for a in classes:
        for b in classes:
            if a != b and sizes[a] <= sizes[b] and proportions[a] < proportions[b]:
                raise PolicyError(
                    f"proportions violate monotonicity for classes ({a}, {b}): "
                    f"|D_{a}|={sizes[a]} <= |D_{b}|={sizes[b]} but p_{a}={proportions[a]} < p_{b}={proportions[b]}"
                )


def proportional_counts(sizes: Mapping[int, int], proportions: Mapping[int, float]) -> dict[int, int]:
    """Per-class counts ceil(p * n), repaired so that effective ratios count/n stay monotone.

    Rounding alone can break the ordering (sizes 2 and 3 at p = 0.5 give
    1/2 < 2/3), so lists are visited by increasing size and each size group is
    capped at the smallest effective ratio seen among shorter lists. Equal
    sizes share one count.
    """
    check_proportions(sizes, proportions)
    raw = {c: min(n, math.ceil(proportions[c] * n - 1e-12)) for c, n in sizes.items()}
    counts: dict[int, int] = {}
    ratio_cap: Fraction | None = None
    for n in sorted(set(sizes.values())):
        group = [c for c in sizes if sizes[c] == n]
        if n == 0:
            counts.update({c: 0 for c in group})
            continue
        k = min(raw[c] for c in group)
        if ratio_cap is not None:
            k = min(k, math.floor(ratio_cap * n))
        counts.update({c: k for c in group})
        ratio = Fraction(k, n)
        ratio_cap = ratio if ratio_cap is None else min(ratio_cap, ratio)
    return counts


def class_balanced_select(candidates: Mapping[int, list[Candidate]], policy: SelectionPolicy,
                          session_index: int = 0) -> PseudoLabelBatch:
    classes = sorted(candidates)
    if policy.mode == "threshold":
        pooled = [cand for c in classes for cand in candidates[c]]
        pooled.sort(key=lambda cand: -cand.confidence)
        return PseudoLabelBatch(pooled[: policy.iteration_budget], session_index)

    if policy.proportions is not None:
        sizes = {c: len(candidates[c]) for c in classes}
        missing = [c for c in classes if c not in policy.proportions]
        if missing:
            raise PolicyError(f"no proportion given for classes {missing}")
        counts = proportional_counts(sizes, {c: policy.proportions[c] for c in classes})
    else:
        quota = policy.per_class_quota or max(1, policy.iteration_budget // max(1, len(classes)))
        counts = {c: min(quota, len(candidates[c])) for c in classes}
    items = [cand for c in classes for cand in candidates[c][: counts[c]]]
    return PseudoLabelBatch(items, session_index)


def selection_record(iteration: int, candidates: Mapping[int, list[Candidate]],
                     selected: PseudoLabelBatch, pool_remaining: int, true_labels=None) -> dict:
    conf = [c.confidence for c in selected]
    sel_counts = selected.counts()
    rec = {
        "iteration": iteration,
        "candidates": {str(c): len(v) for c, v in sorted(candidates.items())},
        "selected": {str(c): sel_counts.get(c, 0) for c in sorted(candidates)},
        "min_confidence": min(conf) if conf else None,
        "mean_confidence": float(np.mean(conf)) if conf else None,
        "pool_remaining": pool_remaining,
    }
    if true_labels is not None and len(selected):
        rec["pseudo_label_accuracy"] = float(np.mean(
            [true_labels[c.sample_id] == c.predicted_class for c in selected]))
    return rec


def run_unlabeled_iterations(model: ModelState, session, policy: SelectionPolicy,
                             train_step: Callable[[ModelState, PseudoLabelBatch], ModelState],
                             audit: Callable[[dict], None] | None = None):
    """Repeat predict -> partition -> balanced select -> train ``policy.iterations`` times.

    Selected items leave the pool and keep the pseudo label they had when
    selected. ``train_step(model, accumulated)`` runs the extra epochs and
    returns the (possibly new) model. Returns (accumulated batch, model).
    """
    accumulated = PseudoLabelBatch(session_index=session.index)
    pool_ids = np.asarray(session.unlabeled_pool, dtype=np.int64)
    inputs = session.manifest.inputs
    true_labels = session.manifest.labels
    for t in range(policy.iterations):
        cands = partition_confident(inputs[pool_ids], model, policy, session.class_ids, pool_ids)
        chosen = class_balanced_select(cands, policy, session.index)
        taken = set(chosen.sample_ids.tolist())
        pool_ids = pool_ids[~np.isin(pool_ids, list(taken))] if taken else pool_ids
        accumulated.items.extend(chosen.items)
        if audit is not None:
            audit(selection_record(t, cands, chosen, len(pool_ids), true_labels))
        model = train_step(model, accumulated)
    return accumulated, model
