"""Sampled ranking evaluation: ranks, NDCG/Recall/MAP@k and set averaging."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .data import EvalCandidateSet

METRICS = ("ndcg", "recall", "map")


class EvaluationError(ValueError):
    pass


@dataclass
class RankedList:
    items: np.ndarray
    positive: int
    rank: int


def rank_candidates(scores, items, positive: int, user: int | None = None) -> RankedList:
    """Descending by score, exact ties broken by ascending item index."""
    scores = np.asarray(scores, dtype=np.float64)
    items = np.asarray(items, dtype=np.int64)
    if np.isnan(scores).any():
        raise EvaluationError(f"NaN score for user {user}")
    order = np.lexsort((items, -scores))
    ranked = items[order]
    rank = int(np.flatnonzero(ranked == positive)[0]) + 1
    return RankedList(ranked, positive, rank)


def ndcg_at_k(rank, k: int):
    rank = np.asarray(rank, dtype=np.float64)
    out = np.where(rank <= k, 1.0 / np.log2(rank + 1.0), 0.0)
    return float(out) if out.ndim == 0 else out


def recall_at_k(rank, k: int):
    rank = np.asarray(rank)
    out = np.where(rank <= k, 1.0, 0.0)
    return float(out) if out.ndim == 0 else out


def map_at_k(rank, k: int):
    rank = np.asarray(rank, dtype=np.float64)
    out = np.where(rank <= k, 1.0 / rank, 0.0)
    return float(out) if out.ndim == 0 else out


METRIC_FUNCS = {"ndcg": ndcg_at_k, "recall": recall_at_k, "map": map_at_k}


def candidate_ranks(scores: np.ndarray, cands: EvalCandidateSet) -> np.ndarray:
    """Rank of each user's positive among its candidates, from an n x m score matrix.

    Equivalent to :func:`rank_candidates` per user but vectorized.
    """
    users, pos, neg = cands.users, cands.positives, cands.negatives
    if len(users) == 0:
        return np.zeros(0, dtype=np.int64)
    n_items = scores.shape[1]
    valid = neg >= 0
    if (pos < 0).any() or (pos >= n_items).any() or (neg >= n_items).any():
        raise EvaluationError("candidate item outside the item range")
    s_pos = scores[users, pos]
    s_neg = scores[users[:, None], np.where(valid, neg, 0)]
    if np.isnan(s_pos).any() or np.isnan(s_neg[valid]).any():
        bad = users[np.isnan(s_pos) | (np.isnan(s_neg) & valid).any(axis=1)][0]
        raise EvaluationError(f"NaN score for user {bad}")
    beats = (s_neg > s_pos[:, None]) | ((s_neg == s_pos[:, None]) & (neg < pos[:, None]))
    return 1 + (beats & valid).sum(axis=1)


@dataclass
class MetricReport:
    metric: str
    k: int
    per_user: np.ndarray
    mean: float


@dataclass
class Evaluation:
    """Per-set metric means and their average over sets, keyed ``"ndcg@10"``."""

    cutoffs: list[int]
    per_set: list[dict[str, float]]
    mean: dict[str, float]
    ranks: list[np.ndarray] = field(repr=False, default_factory=list)

    def report(self, metric: str, k: int, set_index: int = 0) -> MetricReport:
        vals = METRIC_FUNCS[metric](self.ranks[set_index], k)
        return MetricReport(metric, k, vals, float(np.mean(vals)) if len(vals) else 0.0)


def _as_matrix(scorer) -> np.ndarray:
    return scorer() if callable(scorer) else np.asarray(scorer, dtype=np.float64)


def evaluate(
    scorer: np.ndarray | Callable[[], np.ndarray],
    eval_sets: Sequence[EvalCandidateSet],
    cutoffs: Sequence[int] = (1, 3, 5, 10),
) -> Evaluation:
    """Mean over users per set, then mean over sets."""
    scores = _as_matrix(scorer)
    cutoffs = sorted(int(k) for k in cutoffs)
    per_set, all_ranks = [], []
    for cands in eval_sets:
        ranks = candidate_ranks(scores, cands)
        all_ranks.append(ranks)
        row = {}
        for k in cutoffs:
            for m in METRICS:
                row[f"{m}@{k}"] = float(np.mean(METRIC_FUNCS[m](ranks, k))) if len(ranks) else 0.0
        per_set.append(row)
    mean = {key: float(np.mean([r[key] for r in per_set])) for key in per_set[0]} if per_set else {}
    return Evaluation(cutoffs, per_set, mean, all_ranks)


def validation_ndcg(scores: np.ndarray, cands: EvalCandidateSet, k: int = 10) -> float:
    ranks = candidate_ranks(scores, cands)
    return float(np.mean(ndcg_at_k(ranks, k))) if len(ranks) else 0.0
