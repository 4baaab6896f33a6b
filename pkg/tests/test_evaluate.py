import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from oracles import naive_metrics, naive_rank

from graphrec_pretrain.data import EvalCandidateSet
from graphrec_pretrain.evaluate import (
    EvaluationError,
    candidate_ranks,
    evaluate,
    map_at_k,
    ndcg_at_k,
    rank_candidates,
    recall_at_k,
)
from graphrec_pretrain.experiments import StabilityReport


def _single_user_set(positive, negatives, seed=0):
    return EvalCandidateSet(seed, np.array([0]), np.array([positive]), np.array([negatives]))


def test_rank_examples():
    assert rank_candidates([0.9, 0.1, 0.2], [4, 1, 2], 4).rank == 1
    assert rank_candidates([0.5, 0.5, 0.5], [1, 7, 3], 1).rank == 1
    assert rank_candidates([0.5, 0.5, 0.5], [1, 7, 3], 7).rank == 3
    with pytest.raises(EvaluationError, match="user 3"):
        rank_candidates([np.nan, 0.1], [0, 1], 0, user=3)


@given(st.lists(st.integers(-3, 3), min_size=2, max_size=12, unique=False), st.data())
def test_rank_matches_sort_oracle(scores, data):
    items = data.draw(st.permutations(list(range(len(scores)))))
    pos = data.draw(st.sampled_from(items))
    rl = rank_candidates(np.array(scores, dtype=float), items, pos)
    assert rl.rank == naive_rank(scores, items, pos)
    assert sorted(rl.items.tolist()) == sorted(items)


def test_metric_examples():
    assert ndcg_at_k(1, 10) == 1.0 and ndcg_at_k(3, 10) == 0.5 and ndcg_at_k(11, 10) == 0.0
    assert recall_at_k(10, 10) == 1.0 and recall_at_k(11, 10) == 0.0
    assert map_at_k(1, 10) == 1.0 and map_at_k(2, 10) == 0.5 and map_at_k(15, 10) == 0.0


@given(st.integers(1, 200), st.integers(1, 60))
def test_metric_ordering(rank, k):
    n, r, m = ndcg_at_k(rank, k), recall_at_k(rank, k), map_at_k(rank, k)
    assert 0 <= m <= r <= 1 and 0 <= n <= r
    assert (r == 0) == (n == 0) == (m == 0)


def test_perfect_oracle_scorer():
    gen = np.random.default_rng(0)
    users = np.arange(5)
    pos = gen.integers(0, 30, 5)
    neg = np.array([[j for j in range(30) if j != p][:10] for p in pos])
    cands = EvalCandidateSet(0, users, pos, neg)
    S = np.zeros((5, 30))
    S[users, pos] = 1.0
    ev = evaluate(S, [cands], (1, 3, 5, 10))
    assert all(v == 1.0 for v in ev.mean.values())


def test_two_set_average():
    S = np.array([[0.9, 0.5, 0.8, 0.3]])
    a = _single_user_set(0, [1, 2, 3])  # positive first
    b = _single_user_set(1, [0, 2, 3])  # positive third
    ev = evaluate(S, [a, b], (10,))
    assert ev.mean["ndcg@10"] == pytest.approx(0.75, abs=1e-15)


def test_recall_counting_oracle():
    gen = np.random.default_rng(1)
    S = gen.normal(size=(40, 60))
    pos = gen.integers(0, 60, 40)
    neg = np.array([gen.choice([j for j in range(60) if j != p], 20, replace=False) for p in pos])
    cands = EvalCandidateSet(0, np.arange(40), pos, neg)
    ranks = [naive_rank(list(S[u, np.r_[pos[u], neg[u]]]), list(np.r_[pos[u], neg[u]]), pos[u]) for u in range(40)]
    hits = sum(r <= 5 for r in ranks)
    assert evaluate(S, [cands], (5,)).mean["recall@5"] == pytest.approx(hits / 40, abs=1e-15)


@given(st.integers(0, 10_000))
def test_monotone_transform_invariance(seed):
    gen = np.random.default_rng(seed)
    S = gen.normal(size=(6, 25)).round(1)
    pos = gen.integers(0, 25, 6)
    neg = np.array([gen.choice([j for j in range(25) if j != p], 8, replace=False) for p in pos])
    cands = EvalCandidateSet(0, np.arange(6), pos, neg)
    a = evaluate(S, [cands], (1, 5, 10)).mean
    b = evaluate(np.exp(3 * S) + 2, [cands], (1, 5, 10)).mean
    assert a == b


@given(st.integers(0, 10_000), st.integers(1, 4))
def test_averaging_linearity(seed, n_sets):
    gen = np.random.default_rng(seed)
    S = gen.normal(size=(5, 30))
    sets = []
    for s in range(n_sets):
        pos = gen.integers(0, 30, 5)
        neg = np.array([gen.choice([j for j in range(30) if j != p], 6, replace=False) for p in pos])
        sets.append(EvalCandidateSet(s, np.arange(5), pos, neg))
    whole = evaluate(S, sets).mean
    singles = [evaluate(S, [c]).mean for c in sets]
    for key in whole:
        assert whole[key] == pytest.approx(np.mean([x[key] for x in singles]), abs=1e-12)
    assert evaluate(S, sets).mean == whole


def test_padded_and_out_of_range_candidates():
    S = np.array([[0.1, 0.9, 0.5]])
    padded = EvalCandidateSet(0, np.array([0]), np.array([2]), np.array([[0, 1, -1, -1]]), flagged_users=[0])
    assert candidate_ranks(S, padded).tolist() == [2]
    with pytest.raises(EvaluationError):
        candidate_ranks(S, _single_user_set(0, [5]))


def test_metric_report_per_user():
    S = np.array([[1.0, 0.0, 0.5], [0.0, 1.0, 0.5]])
    cands = EvalCandidateSet(0, np.array([0, 1]), np.array([2, 2]), np.array([[0, 1], [0, 1]]))
    rep = evaluate(S, [cands], (1, 3)).report("map", 3)
    assert rep.per_user.tolist() == [0.5, 0.5] and rep.mean == 0.5


def test_stability_statistics():
    rep = StabilityReport.from_values({0: 0.4, 1: 0.6})
    assert rep.mean == pytest.approx(0.5, abs=1e-15) and rep.std == pytest.approx(0.1, abs=1e-15)
    assert StabilityReport.from_values({s: 0.37 for s in range(5)}).std == 0.0
    rep = StabilityReport.from_values({0: 0.2, 2: 0.4}, failed={1: "boom"})
    assert rep.seeds == [0, 1, 2] and rep.to_dict()["n_failed"] == 1 and rep.mean == pytest.approx(0.3)


@given(st.lists(st.floats(0, 1), min_size=2, max_size=20))
def test_stability_recomputable(values):
    rep = StabilityReport.from_values(dict(enumerate(values)))
    assert rep.std >= 0
    assert rep.std == pytest.approx(np.std(values), abs=1e-12)
    # the sample std is recoverable from the per-seed values too
    assert np.std(list(rep.per_seed.values()), ddof=1) == pytest.approx(np.std(values, ddof=1), abs=1e-12)
