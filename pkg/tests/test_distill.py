import math

import numpy as np
import pytest
import torch
from hypothesis import given, settings, strategies as st

from uadce.distill import (AdaptiveWeight, adaptive_weight, distillation_loss, estimate_uncertainty,
                           exemplar_uncertainties, keep_count, refine_exemplars, session_loss)
from uadce.memory import Exemplar, ExemplarSet
from uadce.model import build_model, expand_head, predict_proba

SPEC = {"kind": "mlp", "input_shape": [3], "hidden": [8], "feature_dim": 4}


@pytest.fixture
def model():
    return build_model(SPEC, [0, 1, 2], seed=0)


def _set(n_per_class, classes=(0, 1), seed=0):
    rng = np.random.default_rng(seed)
    es, sid = ExemplarSet(20), 0
    for c in classes:
        es.classes[c] = []
        for _ in range(n_per_class):
            es.classes[c].append(Exemplar(sid, rng.standard_normal(3), c))
            sid += 1
    return es


def test_zero_noise_gives_zero_uncertainty(model):
    assert estimate_uncertainty(model, np.ones(3), noise_scale=0.0) == 0.0


def test_constant_model_gives_zero_uncertainty():
    m = build_model(SPEC, [0, 1], seed=0)
    with torch.no_grad():
        m.head.weight.zero_()
    assert estimate_uncertainty(m, np.ones(3), noise_scale=5.0) == 0.0


def test_uncertainty_recomputed_from_passes(model):
    lam, passes = estimate_uncertainty(model, np.array([0.3, -1.0, 2.0]), pass_count=10, noise_scale=0.5,
                                       seed=3, return_passes=True)
    # replay the same noise draws one pass at a time
    rng = np.random.default_rng(3)
    noise = rng.standard_normal((10, 3)) * 0.5
    manual = np.stack([predict_proba(model, (np.array([0.3, -1.0, 2.0]) + noise[k])[None])[0] for k in range(10)])
    np.testing.assert_allclose(passes, manual, rtol=0, atol=1e-12)
    mean = manual.sum(0) / 10
    var = ((manual - mean) ** 2).sum(0) / 10
    assert lam == pytest.approx(var.sum() / manual.shape[1], abs=1e-9)


def test_uncertainty_needs_two_passes(model):
    with pytest.raises(ValueError):
        estimate_uncertainty(model, np.ones(3), pass_count=1)


def test_uncertainty_grows_with_noise(model):
    x = np.zeros(3)
    small = estimate_uncertainty(model, x, 50, 0.01, 0)
    large = estimate_uncertainty(model, x, 50, 1.0, 0)
    assert 0 < small < large


def test_exemplar_uncertainties_reproducible(model):
    es = _set(3)
    assert exemplar_uncertainties(model, es, seed=5) == exemplar_uncertainties(model, es, seed=5)


def test_keep_fraction_one_is_identity(model):
    es = _set(4)
    refined, audit = refine_exemplars(es, model, keep_fraction=1.0)
    assert [e.sample_id for e in refined] == [e.sample_id for e in es]
    assert all(r["kept"] for r in audit)


def test_eight_exemplars_keep_six_lowest():
    es = _set(4)
    lam = {sid: float(sid) for sid in range(8)}  # lambda 0..7
    refined, _ = refine_exemplars(es, keep_fraction=0.75, uncertainties=lam)
    assert sorted(e.sample_id for e in refined) == [0, 1, 2, 3, 4, 5]
    assert all(e.uncertainty == lam[e.sample_id] for e in refined)
    literal, _ = refine_exemplars(es, keep_fraction=0.75, uncertainties=lam, keep_most_uncertain=True)
    assert sorted(e.sample_id for e in literal) == [2, 3, 4, 5, 6, 7]


def test_refine_matches_sort_and_slice():
    es = _set(10, classes=(0, 1, 2, 3))
    rng = np.random.default_rng(11)
    lam = {e.sample_id: float(v) for e, v in zip(es, rng.integers(0, 6, 40) / 10)}  # many ties
    refined, _ = refine_exemplars(es, keep_fraction=0.75, uncertainties=lam)
    ranked = sorted(range(40), key=lambda i: (lam[list(es)[i].sample_id], i))
    expected = {list(es)[i].sample_id for i in ranked[:30]}
    assert {e.sample_id for e in refined} == expected
    assert refined.class_ids == es.class_ids


@settings(max_examples=200, deadline=None)
@given(total=st.integers(1, 500), kf=st.floats(0.01, 1.0))
def test_keep_count_is_ceiling(total, kf):
    k = keep_count(total, kf)
    assert 1 <= k <= total
    assert k >= kf * total - 1e-6 and k - 1 < kf * total + 1e-6


def test_adaptive_weight_examples():
    assert adaptive_weight(1.0, 1200, 900, 60, 5).zeta == pytest.approx(4.6188, abs=1e-4)
    assert adaptive_weight(2.0, 2000, 1500, 100, 10).zeta == pytest.approx(8.4327, abs=1e-4)
    w = adaptive_weight(1.0, 10, 10, 4, 4)
    assert w == AdaptiveWeight(1.0, 1.0, 1.0, 1.0)


def test_adaptive_weight_monotone():
    base = adaptive_weight(1.0, 100, 75, 60, 5).zeta
    assert adaptive_weight(1.0, 100, 50, 60, 5).zeta > base
    assert adaptive_weight(1.0, 100, 75, 80, 5).zeta > base
    assert adaptive_weight(1.0, 100, 75, 60, 10).zeta < base


def test_adaptive_weight_degenerate():
    with pytest.raises(ZeroDivisionError):
        adaptive_weight(1.0, 10, 0, 5, 5)
    with pytest.raises(ZeroDivisionError):
        adaptive_weight(1.0, 10, 5, 5, 0)


def _fixed_logit_models(ref_logits, tgt_logits):
    """Two models whose logits on input e_k are the given rows (features are ignored via a zeroed backbone)."""
    n_in = len(ref_logits)

    def make(rows, classes):
        m = build_model({"kind": "mlp", "input_shape": [n_in], "hidden": [n_in], "feature_dim": n_in},
                        list(range(classes)), seed=0)
        with torch.no_grad():
            for layer in m.backbone.modules():
                if isinstance(layer, torch.nn.Linear):
                    layer.weight.copy_(torch.eye(n_in, dtype=layer.weight.dtype))
                    layer.bias.zero_()
            m.head.weight.copy_(torch.as_tensor(np.asarray(rows).T))
            m.head.bias.zero_()
        return m

    return make(ref_logits, len(ref_logits[0])), make(tgt_logits, len(tgt_logits[0]))


def test_distillation_hand_computed():
    ref, tgt = _fixed_logit_models([[2.0, 0.0], [0.0, 4.0]], [[0.0, 2.0, 9.0], [2.0, 2.0, -1.0]])
    x = np.eye(2)
    t = 2.0
    total = 0.0
    for r, g in (([2.0, 0.0], [0.0, 2.0]), ([0.0, 4.0], [2.0, 2.0])):
        p = np.exp(np.array(r) / t) / np.exp(np.array(r) / t).sum()
        q = np.exp(np.array(g) / t) / np.exp(np.array(g) / t).sum()
        total += -(p * np.log(q)).sum()
    assert distillation_loss(ref, tgt, x, t).item() == pytest.approx(total / 2, abs=1e-9)


def test_self_distillation_is_entropy_with_zero_gradient(model):
    x = np.random.default_rng(0).standard_normal((6, 3))
    ref = model.snapshot()
    loss = distillation_loss(ref, model, x, 2.0)
    with torch.no_grad():
        p = torch.softmax(model(torch.as_tensor(x)) / 2.0, dim=1)
        entropy = -(p * p.log()).sum(1).mean()
    assert loss.item() == pytest.approx(entropy.item(), abs=1e-12)
    loss.backward()
    assert model.head.weight.grad.abs().max().item() < 1e-12


def test_distillation_decreases_along_negative_gradient(model):
    x = np.random.default_rng(1).standard_normal((8, 3))
    ref = build_model(SPEC, [0, 1, 2], seed=9)
    target = expand_head(model, 2)
    loss = distillation_loss(ref, target, x)
    loss.backward()
    values = [loss.item()]
    for step in (1e-3, 1e-2):
        moved = target.snapshot()
        with torch.no_grad():
            for p, q in zip(moved.parameters(), target.parameters()):
                p.sub_(step * q.grad)
        values.append(distillation_loss(ref, moved, x).item())
    assert values[0] > values[1] > values[2]


def test_empty_distillation_set_is_zero_but_differentiable(model):
    loss = distillation_loss(model.snapshot(), model, np.empty((0, 3)))
    assert loss.item() == 0.0 and loss.requires_grad


def test_zeta_zero_reduces_to_cross_entropy(model):
    x = np.random.default_rng(2).standard_normal((5, 3))
    y = np.array([0, 1, 2, 0, 1])
    out = session_loss(model, model.snapshot(), x, y, x, 0.0)
    ce = torch.nn.functional.cross_entropy(model(torch.as_tensor(x)), torch.as_tensor(y))
    assert out.total.item() == pytest.approx(ce.item(), abs=1e-12)
    assert session_loss(model, None, x, y, x, 5.0).dl.item() == 0.0


def test_session_loss_finite_difference():
    ref = build_model(SPEC, [0, 1], seed=1)
    model = expand_head(ref, 1, generator=torch.Generator().manual_seed(0))
    with torch.no_grad():
        for p in model.parameters():
            p.add_(0.1 * torch.randn(p.shape, dtype=p.dtype, generator=torch.Generator().manual_seed(3)))
    rng = np.random.default_rng(4)
    x, y, xr = rng.standard_normal((6, 3)), np.array([0, 1, 2, 2, 1, 0]), rng.standard_normal((4, 3))
    w = adaptive_weight(1.0, 8, 6, 2, 1)
    loss = session_loss(model, ref, x, y, xr, w).total
    loss.backward()
    h = 1e-4
    for p in (model.head.weight, model.backbone.groups[0][0].weight):
        for idx in [(0, 0), (1, 2), (2, 1)]:
            with torch.no_grad():
                p[idx] += h
                up = session_loss(model, ref, x, y, xr, w).total.item()
                p[idx] -= 2 * h
                down = session_loss(model, ref, x, y, xr, w).total.item()
                p[idx] += h
            numeric = (up - down) / (2 * h)
            assert p.grad[idx].item() == pytest.approx(numeric, rel=1e-4, abs=1e-8)


def test_session_loss_rejects_nonfinite_weight(model):
    x = np.zeros((1, 3))
    with pytest.raises(ValueError):
        session_loss(model, model.snapshot(), x, [0], x, math.inf)
