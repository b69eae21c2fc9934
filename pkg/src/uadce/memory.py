"""Rehearsal memory: herding selection and per-session exemplar updates."""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Iterable, Sequence

import numpy as np
import torch

from .model import ModelState, extract_features

LABELED = "labeled"
PSEUDO = "pseudo"


class SelectionError(ValueError):
    pass


class UpdateError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class Exemplar:
    sample_id: int
    input: np.ndarray
    class_id: int
    provenance: str = LABELED
    uncertainty: float | None = None

    def __post_init__(self):
        if self.provenance not in (LABELED, PSEUDO):
            raise ValueError(f"unknown provenance {self.provenance!r}")
        if self.uncertainty is not None and self.uncertainty < 0:
            raise ValueError("uncertainty must be nonnegative")

    def same_as(self, other: "Exemplar") -> bool:
        return (self.sample_id == other.sample_id and self.class_id == other.class_id
                and self.provenance == other.provenance
                and np.array_equal(self.input, other.input))


@dataclass
class ExemplarSet:
    per_class_budget: int
    classes: dict[int, list[Exemplar]] = field(default_factory=dict)

    def __len__(self):
        return sum(len(v) for v in self.classes.values())

    def __iter__(self):
        for c in sorted(self.classes):
            yield from self.classes[c]

    def __contains__(self, c):
        return c in self.classes

    def __getitem__(self, c) -> list[Exemplar]:
        return self.classes[c]

    @property
    def class_ids(self) -> list[int]:
        return sorted(self.classes)

    def inputs_by_class(self) -> dict[int, np.ndarray]:
        return {c: np.stack([e.input for e in v]) for c, v in self.classes.items() if v}

    def arrays(self):
        """(sample ids, inputs, class ids) over all exemplars, class-major order."""
        items = list(self)
        if not items:
            return np.empty(0, dtype=np.int64), None, np.empty(0, dtype=np.int64)
        return (np.array([e.sample_id for e in items], dtype=np.int64),
                np.stack([e.input for e in items]),
                np.array([e.class_id for e in items], dtype=np.int64))

    def copy(self) -> "ExemplarSet":
        return ExemplarSet(self.per_class_budget, {c: list(v) for c, v in self.classes.items()})

    def to_payload(self) -> dict:
        items = list(self)
        return {
            "per_class_budget": self.per_class_budget,
            "sample_id": torch.tensor([e.sample_id for e in items], dtype=torch.int64),
            "input": torch.as_tensor(np.stack([e.input for e in items])) if items else torch.empty(0),
            "class_id": torch.tensor([e.class_id for e in items], dtype=torch.int64),
            "pseudo": torch.tensor([e.provenance == PSEUDO for e in items], dtype=torch.bool),
            "uncertainty": torch.tensor(
                [np.nan if e.uncertainty is None else e.uncertainty for e in items], dtype=torch.float64),
        }

    @classmethod
    def from_payload(cls, payload: dict) -> "ExemplarSet":
        out = cls(int(payload["per_class_budget"]))
        for k in range(len(payload["sample_id"])):
            lam = float(payload["uncertainty"][k])
            e = Exemplar(
                int(payload["sample_id"][k]),
                payload["input"][k].numpy().copy(),
                int(payload["class_id"][k]),
                PSEUDO if bool(payload["pseudo"][k]) else LABELED,
                None if np.isnan(lam) else lam,
            )
            out.classes.setdefault(e.class_id, []).append(e)
        return out


def herding_select(features, m: int) -> list[int]:
    """Greedy herding order (iCaRL).

    Step t picks the unchosen candidate that brings the running mean of the
    chosen features closest to the mean of all candidates. Ties go to the
    lowest index.
    """
    f = np.asarray(features, dtype=np.float64)
    n = len(f)
    if m > n:
        raise SelectionError(f"cannot select {m} exemplars from {n} candidates")
    if m <= 0:
        return []
    mu = f.mean(axis=0)
    running = np.zeros_like(mu)
    available = np.ones(n, dtype=bool)
    order = []
    for t in range(1, m + 1):
        dist = np.linalg.norm(mu - (running + f) / t, axis=1)
        dist[~available] = np.inf
        # rounding can split exact ties, so treat near-equal distances as tied
        k = int(np.flatnonzero(dist <= dist.min() * (1 + 1e-12) + 1e-15)[0])
        order.append(k)
        available[k] = False
        running = running + f[k]
    return order


def random_select(n: int, m: int, rng: np.random.Generator) -> list[int]:
    """Random-selection baseline for ablations."""
    if m > n:
        raise SelectionError(f"cannot select {m} exemplars from {n} candidates")
    return [int(k) for k in rng.choice(n, size=m, replace=False)]


def select_for_class(model: ModelState, candidates: Sequence[Exemplar], m: int,
                     method: str = "herding", rng=None) -> list[Exemplar]:
    m = min(m, len(candidates))
    if method == "random":
        order = random_select(len(candidates), m, rng or np.random.default_rng(0))
    else:
        feats = extract_features(model, np.stack([e.input for e in candidates]))
        order = herding_select(feats, m)
    return [candidates[k] for k in order]


def update_exemplars(previous: ExemplarSet, session_labeled: Iterable[tuple[int, np.ndarray, int]],
                     session_pseudo: Iterable[tuple[int, np.ndarray, int]], model: ModelState,
                     new_classes: Sequence[int] | None = None, method: str = "herding",
                     rng=None) -> ExemplarSet:
    """Carry old classes over untouched and select exemplars for the new ones.

    ``session_labeled`` / ``session_pseudo`` yield (sample_id, input, class_id);
    pseudo items carry their pseudo label as class_id. Candidates for a class
    are its labeled items followed by its pseudo items, and herding (features
    from ``model``) keeps at most ``per_class_budget`` of them.
    """
    out = previous.copy()
    candidates: dict[int, list[Exemplar]] = {}
    for sid, x, c in session_labeled:
        candidates.setdefault(int(c), []).append(Exemplar(int(sid), np.asarray(x), int(c), LABELED))
    labeled_classes = set(candidates)
    for sid, x, c in session_pseudo:
        candidates.setdefault(int(c), []).append(Exemplar(int(sid), np.asarray(x), int(c), PSEUDO))

    new_classes = sorted(candidates) if new_classes is None else [int(c) for c in new_classes]
    for c in new_classes:
        if c in previous:
            raise UpdateError(f"class {c} already has exemplars")
        if c not in labeled_classes:
            raise UpdateError(f"new class {c} has no labeled samples in this session")
        out.classes[c] = select_for_class(model, candidates[c], previous.per_class_budget, method, rng)
    return out


def with_uncertainty(e: Exemplar, lam: float) -> Exemplar:
    return replace(e, uncertainty=float(lam))
