"""Uncertainty-aware distillation.

Noise-perturbed forward passes give a per-exemplar uncertainty; only the
least uncertain exemplars are distilled from, and the distillation term is
reweighted by how much was dropped and by the old/new class ratio.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import torch
import torch.nn.functional as F

from .memory import ExemplarSet, with_uncertainty
from .model import ModelState, as_tensor, predict_proba

DEFAULT_TEMPERATURE = 2.0


@dataclass(frozen=True)
class UncertaintyEstimate:
    sample_id: int
    lam: float
    pass_count: int
    noise_scale: float


@dataclass(frozen=True)
class AdaptiveWeight:
    zeta_base: float
    exemplar_ratio: float
    class_ratio: float
    zeta: float


@dataclass(frozen=True)
class LossBreakdown:
    ce: torch.Tensor
    dl: torch.Tensor
    zeta: float
    total: torch.Tensor

    def as_floats(self) -> dict:
        return {"ce": float(self.ce), "dl": float(self.dl), "zeta": self.zeta, "total": float(self.total)}


def perturbed_probabilities(model: ModelState, x, pass_count: int, noise_scale, rng: np.random.Generator) -> np.ndarray:
    """(pass_count, classes) matrix of probabilities for one input under Gaussian noise.

    ``noise_scale`` is a scalar or an array broadcastable to the input shape.
    """
    x = np.asarray(x, dtype=np.float64)
    noise = rng.standard_normal((pass_count, *x.shape)) * np.asarray(noise_scale, dtype=np.float64)
    return predict_proba(model, x[None] + noise)


def estimate_uncertainty(model: ModelState, x, pass_count: int = 10, noise_scale=0.1, seed=0,
                         return_passes: bool = False):
    """Mean over classes of the across-pass variance of the predicted probabilities."""
    if pass_count < 2:
        raise ValueError("pass_count must be at least 2")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    passes = perturbed_probabilities(model, x, pass_count, noise_scale, rng)
    # shifting by the first pass leaves the variance unchanged and makes identical passes give exactly 0
    lam = float((passes - passes[0]).var(axis=0).mean())
    return (lam, passes) if return_passes else lam


def exemplar_uncertainties(model: ModelState, exemplars: ExemplarSet, pass_count=10, noise_scale=0.1,
                           seed=0) -> dict[int, float]:
    """lambda per exemplar sample id; each exemplar gets its own seed derived from (seed, id)."""
    return {
        e.sample_id: estimate_uncertainty(
            model, e.input, pass_count, noise_scale, np.random.default_rng([int(seed), e.sample_id]))
        for e in exemplars
    }


def keep_count(total: int, keep_fraction: float) -> int:
    return min(total, math.ceil(keep_fraction * total - 1e-9))


def refine_exemplars(exemplars: ExemplarSet, model: ModelState | None = None, keep_fraction: float = 0.75,
                     pass_count: int = 10, noise_scale=0.1, seed=0, uncertainties=None,
                     keep_most_uncertain: bool = False):
    """Keep the ceil(keep_fraction * |E|) exemplars with the lowest uncertainty.

    Ranking is global over all classes (stable: class-major, herding order).
    ``uncertainties`` (sample id -> lambda) skips estimation. With
    ``keep_most_uncertain`` the most uncertain exemplars are kept instead.
    Returns (refined set, audit records).
    """
    if not 0.0 < keep_fraction <= 1.0:
        raise ValueError("keep_fraction must lie in (0, 1]")
    if uncertainties is None:
        uncertainties = exemplar_uncertainties(model, exemplars, pass_count, noise_scale, seed)
    items = list(exemplars)
    lam = np.array([uncertainties[e.sample_id] for e in items])
    key = -lam if keep_most_uncertain else lam
    order = np.argsort(key, kind="stable")
    kept = set(order[: keep_count(len(items), keep_fraction)].tolist())

    refined = ExemplarSet(exemplars.per_class_budget, {c: [] for c in exemplars.class_ids})
    audit = []
    for k, e in enumerate(items):
        tagged = with_uncertainty(e, lam[k])
        if k in kept:
            refined.classes[e.class_id].append(tagged)
        audit.append({"sample_id": e.sample_id, "class_id": e.class_id, "provenance": e.provenance,
                      "lambda": float(lam[k]), "kept": k in kept})
    return refined, audit


def adaptive_weight(zeta_base: float, e_size: int, e_refined_size: int, old_classes: int,
                    new_classes: int) -> AdaptiveWeight:
    """zeta = zeta_base * |E| / |E_refined| * sqrt(|C_old| / |C_new|)."""
    if e_refined_size <= 0 or new_classes <= 0:
        raise ZeroDivisionError("refined exemplar count and new class count must be positive")
    if e_size <= 0 or old_classes <= 0 or e_refined_size > e_size:
        raise ValueError("need 0 < e_refined_size <= e_size and old_classes > 0")
    exemplar_ratio = e_size / e_refined_size
    class_ratio = math.sqrt(old_classes / new_classes)
    return AdaptiveWeight(zeta_base, exemplar_ratio, class_ratio, zeta_base * exemplar_ratio * class_ratio)


def distillation_loss(reference: ModelState, target: ModelState, inputs,
                      temperature: float = DEFAULT_TEMPERATURE) -> torch.Tensor:
    """Mean cross-entropy between softened reference and target outputs on the old classes.

    Reference outputs are computed without gradient. An empty input set
    yields a zero that still participates in autograd.
    """
    n_old = reference.head.out_features
    if n_old > target.head.out_features:
        raise ValueError("reference head is wider than target head")
    if inputs is None or len(inputs) == 0:
        return sum(p.sum() * 0.0 for p in target.head.parameters())
    x = as_tensor(inputs)
    with torch.no_grad():
        was = reference.training
        reference.eval()
        soft_ref = torch.softmax(reference(x) / temperature, dim=1)
        reference.train(was)
    log_tgt = F.log_softmax(target(x)[:, :n_old] / temperature, dim=1)
    return -(soft_ref * log_tgt).sum(dim=1).mean()


def session_loss(model: ModelState, reference: ModelState | None, inputs, labels, refined_inputs,
                 weight, temperature: float = DEFAULT_TEMPERATURE) -> LossBreakdown:
    """Cross-entropy over all known classes plus zeta times distillation.

    ``labels`` are global class ids; ``weight`` is an AdaptiveWeight or a
    plain number. Without a reference model (base session) the distillation
    term is zero.
    """
    zeta = float(weight.zeta if isinstance(weight, AdaptiveWeight) else weight)
    if not math.isfinite(zeta):
        raise ValueError("distillation weight must be finite")
    index = model.class_index
    y = torch.as_tensor([index[int(c)] for c in np.asarray(labels)], dtype=torch.long)
    ce = F.cross_entropy(model(as_tensor(inputs)), y)
    if reference is None:
        dl = ce.new_zeros(())
    else:
        dl = distillation_loss(reference, model, refined_inputs, temperature)
    return LossBreakdown(ce, dl, zeta, ce + zeta * dl)
