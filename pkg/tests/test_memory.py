import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from uadce.memory import (Exemplar, ExemplarSet, SelectionError, UpdateError, herding_select, random_select,
                          update_exemplars)
from uadce.model import build_model

MLP = {"kind": "mlp", "input_shape": [3], "hidden": [8], "feature_dim": 4}


def greedy_oracle(f, m):
    # plain-python restatement: minimise ||mu - mean(chosen + [k])||^2, first index wins ties
    n, d = len(f), len(f[0])
    mu = [sum(f[i][j] for i in range(n)) / n for j in range(d)]
    chosen = []
    for t in range(1, m + 1):
        best, best_d = None, None
        for k in range(n):
            if k in chosen:
                continue
            mean = [(sum(f[i][j] for i in chosen) + f[k][j]) / t for j in range(d)]
            dk = sum((a - b) ** 2 for a, b in zip(mu, mean))
            if best_d is None or dk < best_d - 1e-12:
                best, best_d = k, dk
        chosen.append(best)
    return chosen


def test_herding_matches_oracle():
    f = np.random.default_rng(0).standard_normal((30, 5))
    assert herding_select(f, 12) == greedy_oracle(f.tolist(), 12)


@settings(max_examples=60, deadline=None)
@given(f=arrays(np.int64, st.tuples(st.integers(1, 12), st.integers(1, 3)), elements=st.integers(-5, 5)),
       data=st.data())
def test_herding_oracle_sweep(f, data):
    m = data.draw(st.integers(0, len(f)))
    assert herding_select(f.astype(float), m) == greedy_oracle(f.astype(float).tolist(), m)


def test_herding_single_pick_is_closest_to_mean():
    f = np.array([[0.0], [10.0], [4.0], [6.0]])
    assert herding_select(f, 1) == [2]


def test_herding_identical_features_lowest_index_first():
    assert herding_select(np.ones((6, 3)), 4) == [0, 1, 2, 3]


def test_herding_is_prefix_consistent():
    f = np.random.default_rng(1).standard_normal((25, 4))
    full = herding_select(f, 20)
    for m in range(21):
        assert herding_select(f, m) == full[:m]


def test_herding_all_candidates_is_permutation():
    f = np.random.default_rng(2).standard_normal((7, 2))
    assert sorted(herding_select(f, 7)) == list(range(7))


def test_selection_rejects_too_many():
    with pytest.raises(SelectionError):
        herding_select(np.zeros((3, 2)), 4)
    with pytest.raises(SelectionError):
        random_select(3, 4, np.random.default_rng(0))


def _triples(ids, cls, rng):
    return [(i, rng.standard_normal(3), cls) for i in ids]


def _base_set(model, rng):
    return update_exemplars(ExemplarSet(20), _triples(range(0, 40), 0, rng), [], model)


def test_update_keeps_all_when_below_budget():
    rng = np.random.default_rng(0)
    model = build_model(MLP, [0, 1], 0)
    prev = _base_set(model, rng)
    out = update_exemplars(prev, _triples(range(100, 105), 1, rng), [], model)
    assert len(out[1]) == 5 and {e.sample_id for e in out[1]} == set(range(100, 105))
    assert all(e.provenance == "labeled" for e in out[1])


def test_update_caps_at_budget_with_pseudo():
    rng = np.random.default_rng(1)
    model = build_model(MLP, [0, 1], 0)
    prev = _base_set(model, rng)
    out = update_exemplars(prev, _triples(range(100, 105), 1, rng), _triples(range(200, 230), 1, rng), model)
    assert len(out[1]) == 20
    assert {e.provenance for e in out[1]} <= {"labeled", "pseudo"}
    # old classes untouched, element by element
    assert len(out[0]) == len(prev[0])
    assert all(a.same_as(b) for a, b in zip(out[0], prev[0]))
    assert len(prev.class_ids) == 1


def test_base_session_budget_is_min_of_budget_and_count():
    rng = np.random.default_rng(2)
    model = build_model(MLP, [0, 1], 0)
    out = update_exemplars(ExemplarSet(20), _triples(range(40), 0, rng) + _triples(range(40, 48), 1, rng), [],
                           model)
    assert len(out[0]) == 20 and len(out[1]) == 8


def test_update_errors():
    rng = np.random.default_rng(3)
    model = build_model(MLP, [0, 1, 2], 0)
    prev = _base_set(model, rng)
    with pytest.raises(UpdateError, match="class 0"):
        update_exemplars(prev, _triples([500], 0, rng), [], model)
    with pytest.raises(UpdateError, match="class 2"):
        update_exemplars(prev, _triples([500], 1, rng), _triples([501], 2, rng), model)


def test_random_selection_method():
    rng = np.random.default_rng(4)
    model = build_model(MLP, [0], 0)
    a = update_exemplars(ExemplarSet(5), _triples(range(30), 0, rng), [], model, method="random",
                         rng=np.random.default_rng(9))
    assert len(a[0]) == 5 and len({e.sample_id for e in a[0]}) == 5


def test_payload_roundtrip():
    es = ExemplarSet(3)
    es.classes[4] = [Exemplar(1, np.array([1.0, 2.0]), 4, "labeled", 0.5)]
    es.classes[2] = [Exemplar(7, np.array([0.0, -1.0]), 2, "pseudo")]
    back = ExemplarSet.from_payload(es.to_payload())
    assert back.per_class_budget == 3
    assert [e.sample_id for e in back] == [e.sample_id for e in es]
    for a, b in zip(back, es):
        assert a.same_as(b) and a.provenance == b.provenance and a.uncertainty == b.uncertainty


def test_exemplar_validation():
    with pytest.raises(ValueError):
        Exemplar(0, np.zeros(2), 0, "guessed")
    with pytest.raises(ValueError):
        Exemplar(0, np.zeros(2), 0, "labeled", -1.0)
