import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dcrec.data import Dataset
from dcrec.evaluation import (
    build_candidates,
    evaluate,
    format_report_kv,
    group_profile,
    label_profile,
    parse_report_kv,
    profile_from_values,
    ranking_metrics,
    relative_improvement,
    softmax_profile,
    split_user_groups,
)
from dcrec.model import init_model

from conftest import random_dataset, small_schema


def brute_force(scores, labels, N):
    """Direct reading of the metric definitions, one rank at a time."""
    ranked = sorted(range(len(scores)), key=lambda i: (-scores[i], i))
    P = sum(labels)
    hits = 0
    ap = 0.0
    dcg = 0.0
    for k, i in enumerate(ranked[:N], start=1):
        if labels[i]:
            hits += 1
            ap += hits / k
            dcg += 1.0 / math.log2(k + 1)
    idcg = 0.0
    for k in range(1, min(P, N) + 1):
        idcg += 1.0 / math.log2(k + 1)
    return hits / P, ap / min(P, N), dcg / idcg


def test_worked_examples():
    assert ranking_metrics([0.9, 0.5, 0.1], [1, 0, 0], 3) == (1.0, 1.0, 1.0)
    r, m, n = ranking_metrics([0.9, 0.5, 0.1], [0, 1, 0], 3)
    assert (r, m) == (1.0, 0.5)
    assert n == pytest.approx(0.630930, abs=1e-6)
    r, m, n = ranking_metrics([0.9, 0.5, 0.1], [1, 0, 1], 3)
    assert r == 1.0
    assert m == pytest.approx(0.833333, abs=1e-6)
    assert n == pytest.approx(0.919721, abs=1e-6)


def test_exhaustive_enumeration():
    mismatches = 0
    checked = 0
    for n in range(1, 7):
        for labels in itertools.product((0, 1), repeat=n):
            if not any(labels):
                continue
            for perm in itertools.permutations(range(n)):
                scores = [float(p) for p in perm]
                for N in range(1, n + 1):
                    checked += 1
                    if ranking_metrics(scores, labels, N) != brute_force(scores, labels, N):
                        mismatches += 1
    assert checked > 0 and mismatches == 0


def test_ties_follow_input_order():
    for n in range(1, 6):
        for labels in itertools.product((0, 1), repeat=n):
            if not any(labels):
                continue
            for scores in itertools.product((0.0, 1.0, 2.0), repeat=n):
                for N in (1, n):
                    assert ranking_metrics(scores, labels, N) == brute_force(scores, labels, N)


def test_metric_errors():
    with pytest.raises(ValueError):
        ranking_metrics([0.1, 0.2], [0, 0], 1)
    with pytest.raises(ValueError):
        ranking_metrics([0.1], [1], 0)


lists = st.integers(1, 12).flatmap(
    lambda n: st.tuples(
        st.lists(st.integers(-5000, 5000).map(lambda k: k / 1000), min_size=n, max_size=n),
        st.lists(st.integers(0, 1), min_size=n, max_size=n).filter(any),
    )
)


@settings(max_examples=150, deadline=None)
@given(lists, st.integers(1, 12))
def test_metric_properties(case, N):
    scores, labels = case
    s = np.array(scores)
    vals = ranking_metrics(s, labels, N)
    assert all(0.0 <= v <= 1.0 + 1e-12 for v in vals)
    # strictly increasing transform keeps the ranking (and its ties)
    assert ranking_metrics(np.exp(s / 2) + 3, labels, N) == vals
    assert ranking_metrics(s, labels, N + 1)[0] >= vals[0]


@settings(max_examples=50, deadline=None)
@given(st.lists(st.integers(0, 1), min_size=1, max_size=10).filter(any), st.integers(1, 10))
def test_positives_on_top_give_full_ndcg(labels, N):
    scores = np.array(labels, dtype=float)
    assert ranking_metrics(scores, labels, N)[2] == pytest.approx(1.0, abs=1e-12)


def _toy_split():
    schema = small_schema(n_users=3, n_items=4, K=2, content=())
    feats = np.array([[0, 0, 0], [0, 1, 1], [0, 2, 0], [1, 3, 1], [1, 0, 0], [2, 1, 1]])
    test = np.array([1, 0, 1, 0, 1, 0])
    return Dataset(schema, feats[:, 0], feats[:, 1], feats, np.zeros(6, int), test)


def test_build_candidates():
    split = _toy_split()
    cands = build_candidates(split)
    assert [u.user_id for u in cands.users] == [0, 1, 2]
    assert len(cands.users[0].index) == 3
    assert [u.user_id for u in cands.evaluable] == [0, 1]
    assert build_candidates(split.subset([])).users == []


def _stub(split):
    return init_model("dcr_moe", split.schema, d=2, h1=2, h2=2)


def test_evaluate_perfect_scorer():
    split = _toy_split()
    # N >= every user's positive count, so recall can reach 1
    rep = evaluate("do", _stub(split), [0.5, 0.5], split, [2, 3], scores=split.test_labels.astype(float))
    for N in (2, 3):
        assert rep.metrics[N] == {"recall": 1.0, "map": 1.0, "ndcg": 1.0}
    assert (rep.n_users, rep.n_evaluable) == (3, 2)


def test_evaluate_antiperfect_scorer():
    split = _toy_split()
    rep = evaluate("do", _stub(split), [0.5, 0.5], split, [1], scores=-split.test_labels.astype(float))
    # user 0 has a negative on top; user 1 likewise
    assert rep.metrics[1]["recall"] == 0.0


def test_evaluate_two_user_average():
    split = _toy_split()
    scores = np.array([0.2, 0.9, 0.5, 0.7, 0.1, 0.3])
    rep = evaluate("do", _stub(split), [0.5, 0.5], split, [2], scores=scores)
    u0 = ranking_metrics(scores[:3], [1, 0, 1], 2)
    u1 = ranking_metrics(scores[3:5], [0, 1], 2)
    expected = [(a + b) / 2 for a, b in zip(u0, u1)]
    got = [rep.metrics[2][k] for k in ("recall", "map", "ndcg")]
    assert got == pytest.approx(expected, abs=1e-15)


def test_profiles():
    assert softmax_profile(np.array([0.0, 0.0, 0.0])) == pytest.approx([1 / 3] * 3)
    assert softmax_profile(np.array([0.0, math.log(2)])) == pytest.approx([1 / 3, 2 / 3], abs=1e-15)
    prof = profile_from_values(np.array([0.2, 0.4]), np.array([0, 0]), 3)
    assert prof[0] == 1.0 and np.isnan(prof[1:]).all()


def test_do_profile_ignores_observed_a():
    schema = small_schema(K=3)
    split = random_dataset(schema, 200, seed=1)
    model = init_model("dcr_moe", schema, d=3, h1=4, h2=3, seed=2)
    prior = [0.2, 0.3, 0.5]
    base = group_profile("do", model, prior, split)
    assert abs(base.sum() - 1.0) <= 1e-12
    scores = evaluate("do", model, prior, split).profile
    assert np.array_equal(scores, base)
    # permute a across records: the per-record scores do not move
    perm = np.random.default_rng(0).permutation(split.a)
    moved = split.with_confounder(perm)
    from dcrec.inference import score_dataset

    assert np.array_equal(score_dataset("do", model, prior, split), score_dataset("do", model, prior, moved))


def test_label_profile_sums_to_one():
    split = random_dataset(small_schema(K=3), 300, seed=4)
    assert abs(label_profile(split).sum() - 1.0) <= 1e-12


def test_user_groups():
    schema = small_schema(n_users=2, n_items=4, K=2, content=())
    tr = Dataset(schema, np.array([0, 0, 0, 1]), np.array([0, 1, 2, 3]),
                 np.array([[0, 0, 0], [0, 1, 1], [0, 2, 0], [1, 3, 1]]), np.zeros(4, int), np.zeros(4, int))
    ev = Dataset(schema, np.array([0, 0, 1]), np.array([0, 1, 2]),
                 np.array([[0, 0, 0], [0, 1, 1], [1, 2, 0]]), np.zeros(3, int), np.array([1, 1, 0]))
    assert split_user_groups(tr, ev, 1.0, 1.0) == ({0, 1}, set())
    assert split_user_groups(tr, ev, 0.5, 0.5) == ({0}, {1})
    with pytest.raises(ValueError):
        split_user_groups(tr, ev, 0.0, 1.0)


def test_report_kv_roundtrip_and_ri():
    split = _toy_split()
    rep = evaluate("do", _stub(split), [0.5, 0.5], split, [1, 3])
    parsed = parse_report_kv(format_report_kv(rep, ["version x"]))
    assert parsed[("ndcg", 3)] == rep.metrics[3]["ndcg"]
    assert relative_improvement(parsed, parsed, 3) == 0.0
    t = {("recall", 10): 0.10, ("map", 10): 0.20, ("ndcg", 10): 0.30}
    b = {("recall", 10): 0.08, ("map", 10): 0.16, ("ndcg", 10): 0.24}
    assert relative_improvement(t, b, 10) == pytest.approx(0.25, abs=1e-12)
