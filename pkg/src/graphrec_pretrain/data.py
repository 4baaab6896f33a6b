"""Interactions, side-information features, splitting and sampling."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterator

import numpy as np

from .numeric import RngStream

TRAIN, VALIDATION, TEST = 0, 1, 2

BINARY, ONEHOT, REAL = "binary", "onehot", "real"


class DataFormatError(ValueError):
    """Malformed input file or out-of-range data."""


@dataclass
class InteractionMatrix:
    """Implicit feedback as parallel (user, item) arrays with optional split tags."""

    n_users: int
    n_items: int
    users: np.ndarray
    items: np.ndarray
    split: np.ndarray | None = None
    eval_excluded: np.ndarray | None = None
    user_ids: list[str] = field(default_factory=list)
    item_ids: list[str] = field(default_factory=list)

    @property
    def values(self) -> np.ndarray:
        return np.ones(len(self.users))

    @property
    def n_interactions(self) -> int:
        return len(self.users)

    @property
    def user_index(self) -> dict[str, int]:
        return {u: i for i, u in enumerate(self.user_ids)}

    @property
    def item_index(self) -> dict[str, int]:
        return {v: i for i, v in enumerate(self.item_ids)}

    def _mask(self, tag: int) -> np.ndarray:
        if self.split is None:
            raise ValueError("interaction matrix has not been split")
        return self.split == tag

    def train_pairs(self) -> tuple[np.ndarray, np.ndarray]:
        m = self._mask(TRAIN)
        return self.users[m], self.items[m]

    def held_out_items(self, tag: int) -> np.ndarray:
        """Per-user validation or test item, -1 for eval-excluded users."""
        out = np.full(self.n_users, -1, dtype=np.int64)
        m = self._mask(tag)
        out[self.users[m]] = self.items[m]
        return out

    def dense(self, tags: tuple[int, ...] | None = None) -> np.ndarray:
        """Boolean n x m matrix of interactions carrying one of ``tags`` (all if None)."""
        mat = np.zeros((self.n_users, self.n_items), dtype=bool)
        if tags is None:
            mat[self.users, self.items] = True
        else:
            keep = np.isin(self.split, tags)
            mat[self.users[keep], self.items[keep]] = True
        return mat


@dataclass
class FeatureMatrix:
    """Dense non-negative entity features with per-column kind and label.

    ``labels[j]`` is ``(source_column_name, category_value)``; it names the
    relation a binary/one-hot column induces in the multi-relational graph.
    """

    values: np.ndarray
    kinds: list[str]
    labels: list[tuple[str, int]]
    missing_rows: int = 0

    @property
    def n_entities(self) -> int:
        return self.values.shape[0]

    @property
    def n_features(self) -> int:
        return self.values.shape[1]

    @classmethod
    def from_array(cls, values: np.ndarray, names: list[str] | None = None) -> "FeatureMatrix":
        values = np.asarray(values, dtype=np.float64)
        k = values.shape[1]
        names = names or [f"f{j}" for j in range(k)]
        kinds = [BINARY if np.isin(values[:, j], (0.0, 1.0)).all() else REAL for j in range(k)]
        return cls(values, kinds, [(names[j], 1) for j in range(k)])

    def categorize(self, column: int, bin_width: float, bin_count: int) -> "FeatureMatrix":
        """Replace a real column by its one-hot bucket columns, in place of the original."""
        onehot = categorize_real_feature(self.values[:, column], bin_width, bin_count)
        name = self.labels[column][0]
        values = np.concatenate([self.values[:, :column], onehot, self.values[:, column + 1 :]], axis=1)
        kinds = self.kinds[:column] + [ONEHOT] * bin_count + self.kinds[column + 1 :]
        labels = self.labels[:column] + [(name, b) for b in range(bin_count)] + self.labels[column + 1 :]
        return FeatureMatrix(values, kinds, labels, self.missing_rows)


@dataclass
class EvalCandidateSet:
    """One positive plus sampled negatives per evaluated user.

    ``negatives`` is padded with -1 for users flagged as having fewer eligible
    negatives than requested.
    """

    seed: int
    users: np.ndarray
    positives: np.ndarray
    negatives: np.ndarray
    flagged_users: list[int] = field(default_factory=list)

    @property
    def n_eval(self) -> int:
        return self.negatives.shape[1]


@dataclass
class TrainBatch:
    """Positives each followed by ``negatives.shape[1]`` sampled negatives."""

    users: np.ndarray
    pos_items: np.ndarray
    neg_items: np.ndarray

    @property
    def n_negatives(self) -> int:
        return self.neg_items.shape[1]

    def triples(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Flattened (users, items, labels), label 1 for positives."""
        k = self.n_negatives
        users = np.repeat(self.users, k + 1)
        items = np.concatenate([self.pos_items[:, None], self.neg_items], axis=1).reshape(-1)
        labels = np.tile(np.r_[1.0, np.zeros(k)], len(self.users))
        return users, items, labels

    def __len__(self) -> int:
        return len(self.users) * (self.n_negatives + 1)


# -------------------------------------------------------------------- loading


def load_interactions(path: str | Path) -> InteractionMatrix:
    """Read ``user<TAB>item[<TAB>rating]`` lines; every observed pair becomes a 1."""
    user_index: dict[str, int] = {}
    item_index: dict[str, int] = {}
    seen: set[tuple[int, int]] = set()
    users, items = [], []
    duplicates = 0
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\n\r")
            if not line.strip() or line.startswith("#"):
                continue
            parts = line.split("\t")
            if len(parts) not in (2, 3) or not parts[0] or not parts[1]:
                raise DataFormatError(f"{path}:{lineno}: expected user<TAB>item[<TAB>rating]")
            if len(parts) == 3:
                try:
                    float(parts[2])
                except ValueError:
                    raise DataFormatError(f"{path}:{lineno}: rating {parts[2]!r} is not a number") from None
            u = user_index.setdefault(parts[0], len(user_index))
            v = item_index.setdefault(parts[1], len(item_index))
            if (u, v) in seen:
                duplicates += 1
                continue
            seen.add((u, v))
            users.append(u)
            items.append(v)
    if duplicates:
        warnings.warn(f"{path}: {duplicates} duplicate interaction(s) ignored", stacklevel=2)
    return InteractionMatrix(
        n_users=len(user_index),
        n_items=len(item_index),
        users=np.asarray(users, dtype=np.int64),
        items=np.asarray(items, dtype=np.int64),
        user_ids=list(user_index),
        item_ids=list(item_index),
    )


def load_features(path: str | Path, index: dict[str, int], n_entities: int) -> FeatureMatrix:
    """Read a ``#k=<count>`` headed sparse feature file into a dense matrix.

    Entities without a line get all-zero rows; ids unknown to ``index`` are
    skipped with a warning.
    """
    k = None
    rows: dict[int, dict[int, float]] = {}
    unknown = 0
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\n\r")
            if k is None:
                if not line.startswith("#k="):
                    raise DataFormatError(f"{path}:{lineno}: missing '#k=<feature-count>' header")
                try:
                    k = int(line[3:].strip())
                except ValueError:
                    raise DataFormatError(f"{path}:{lineno}: bad feature count") from None
                continue
            if not line.strip() or line.startswith("#"):
                continue
            entity, _, rest = line.partition("\t")
            if entity not in index:
                unknown += 1
                continue
            row = rows.setdefault(index[entity], {})
            for tok in rest.split():
                f, sep, v = tok.partition(":")
                try:
                    fi, fv = int(f), float(v)
                except ValueError:
                    raise DataFormatError(f"{path}:{lineno}: bad feature token {tok!r}") from None
                if not sep or not 0 <= fi < k:
                    raise DataFormatError(f"{path}:{lineno}: feature index {f} outside [0, {k})")
                if fv < 0:
                    raise DataFormatError(f"{path}:{lineno}: negative feature value {fv}")
                row[fi] = fv
    if k is None:
        raise DataFormatError(f"{path}: empty file without '#k=' header")
    if unknown:
        warnings.warn(f"{path}: {unknown} entity id(s) not present in interactions", stacklevel=2)
    values = np.zeros((n_entities, k))
    for e, row in rows.items():
        for fi, fv in row.items():
            values[e, fi] = fv
    fm = FeatureMatrix.from_array(values)
    fm.missing_rows = int(n_entities - len(rows))
    return fm


def write_interactions(path: str | Path, R: InteractionMatrix) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for u, v in zip(R.users, R.items):
            fh.write(f"{R.user_ids[u]}\t{R.item_ids[v]}\n")


def write_features(path: str | Path, F: FeatureMatrix, ids: list[str]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"#k={F.n_features}\n")
        for e, raw in enumerate(ids):
            nz = np.flatnonzero(F.values[e])
            if len(nz):
                fh.write(raw + "\t" + " ".join(f"{j}:{F.values[e, j]:.17g}" for j in nz) + "\n")


def write_index_map(path: str | Path, ids: list[str]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for i, raw in enumerate(ids):
            fh.write(f"{raw}\t{i}\n")


# ------------------------------------------------------------ categorization


def categorize_real_feature(values, bin_width: float, bin_count: int) -> np.ndarray:
    """One-hot bucket ``min(floor(v / width), count - 1)`` for every entity."""
    if bin_width <= 0 or bin_count < 1:
        raise ValueError("bin_width must be > 0 and bin_count >= 1")
    values = np.asarray(values, dtype=np.float64)
    if (values < 0).any():
        raise DataFormatError("real feature has negative values")
    buckets = np.minimum(np.floor(values / bin_width).astype(np.int64), bin_count - 1)
    out = np.zeros((len(values), bin_count))
    out[np.arange(len(values)), buckets] = 1.0
    return out


# ------------------------------------------------------------------ splitting


def leave_one_out_split(R: InteractionMatrix, rng: RngStream) -> InteractionMatrix:
    """Tag one random test and one validation entry per user with >= 3 entries."""
    split = np.full(R.n_interactions, TRAIN, dtype=np.int8)
    excluded = np.zeros(R.n_users, dtype=bool)
    order = np.argsort(R.users, kind="stable")
    bounds = np.searchsorted(R.users[order], np.arange(R.n_users + 1))
    for u in range(R.n_users):
        rows = order[bounds[u] : bounds[u + 1]]
        if len(rows) < 3:
            excluded[u] = True
            continue
        test, val = rng.choice(len(rows), size=2, replace=False)
        split[rows[test]] = TEST
        split[rows[val]] = VALIDATION
    return replace(R, split=split, eval_excluded=excluded)


def _eligible_negatives(positives: np.ndarray, n_items: int) -> np.ndarray:
    mask = np.ones(n_items, dtype=bool)
    mask[positives] = False
    return np.flatnonzero(mask)


def build_candidate_set(R: InteractionMatrix, tag: int, n_eval: int, rng: RngStream, seed: int) -> EvalCandidateSet:
    held = R.held_out_items(tag)
    all_pos = R.dense()
    users = np.flatnonzero(~R.eval_excluded & (held >= 0))
    negatives = np.full((len(users), n_eval), -1, dtype=np.int64)
    flagged = []
    for row, u in enumerate(users):
        eligible = _eligible_negatives(np.flatnonzero(all_pos[u]), R.n_items)
        if len(eligible) <= n_eval:
            if len(eligible) < n_eval:
                flagged.append(int(u))
            negatives[row, : len(eligible)] = eligible
        else:
            negatives[row] = rng.choice(eligible, size=n_eval, replace=False)
    if flagged:
        warnings.warn(f"{len(flagged)} user(s) have fewer than {n_eval} eligible negatives", stacklevel=2)
    return EvalCandidateSet(seed, users, held[users], negatives, flagged)


def build_eval_sets(R: InteractionMatrix, n_sets: int = 10, n_eval: int = 100, base_seed: int = 0) -> list[EvalCandidateSet]:
    """Test candidate sets; set ``i`` is drawn with seed ``base_seed + i``."""
    if n_sets < 1:
        raise ValueError("n_sets must be >= 1")
    return [build_candidate_set(R, TEST, n_eval, RngStream(base_seed + i), base_seed + i) for i in range(n_sets)]


def build_validation_set(R: InteractionMatrix, n_eval: int = 100, seed: int = 0) -> EvalCandidateSet:
    return build_candidate_set(R, VALIDATION, n_eval, RngStream(seed).child("validation"), seed)


# ------------------------------------------------------------------- batches


class NegativeSampler:
    """Uniform negatives avoiding each user's train positives."""

    def __init__(self, R: InteractionMatrix):
        self.n_items = R.n_items
        self.train = R.dense((TRAIN,))
        self.n_eligible = self.n_items - self.train.sum(axis=1)

    def sample(self, users: np.ndarray, k: int, rng: RngStream) -> np.ndarray:
        if (self.n_eligible[users] == 0).any():
            bad = int(users[self.n_eligible[users] == 0][0])
            raise DataFormatError(f"user {bad} has interacted with every item; no negatives to sample")
        out = rng.integers(0, self.n_items, size=(len(users), k))
        for _ in range(20):
            bad = self.train[users[:, None], out]
            if not bad.any():
                return out
            rows, cols = np.nonzero(bad)
            out[rows, cols] = rng.integers(0, self.n_items, size=len(rows))
        rows, cols = np.nonzero(self.train[users[:, None], out])
        for r, c in zip(rows, cols):
            out[r, c] = rng.choice(np.flatnonzero(~self.train[users[r]]))
        return out


def iterate_batches(
    R: InteractionMatrix,
    batch_size: int,
    negatives: int,
    rng: RngStream,
    sampler: NegativeSampler | None = None,
) -> Iterator[TrainBatch]:
    """One epoch: every train positive exactly once, shuffled, ``batch_size`` triples per batch."""
    if negatives < 1:
        raise ValueError("negatives per positive must be >= 1")
    sampler = sampler or NegativeSampler(R)
    users, items = R.train_pairs()
    per_batch = max(1, batch_size // (negatives + 1))
    order = rng.permutation(len(users))
    for start in range(0, len(order), per_batch):
        idx = order[start : start + per_batch]
        u = users[idx]
        yield TrainBatch(u, items[idx], sampler.sample(u, negatives, rng))


def sample_train_batch(R: InteractionMatrix, batch_size: int, negatives: int, rng: RngStream) -> TrainBatch:
    """First batch of a freshly shuffled epoch."""
    return next(iterate_batches(R, batch_size, negatives, rng))


# ----------------------------------------------------------------- synthetic


@dataclass
class SyntheticDataset:
    interactions: InteractionMatrix
    user_features: FeatureMatrix
    item_features: FeatureMatrix
    user_clusters: np.ndarray
    item_clusters: np.ndarray


def make_cluster_dataset(
    n_users: int = 200,
    n_items: int = 200,
    n_clusters: int = 10,
    noise_columns: int = 5,
    p_within: float = 0.3,
    p_cross: float = 0.02,
    noise_density: float = 0.2,
    seed: int = 0,
) -> SyntheticDataset:
    """Clustered implicit feedback whose side information reveals the clusters.

    Features are the cluster one-hot plus ``noise_columns`` Bernoulli(noise_density)
    columns. A user interacts with a same-cluster item with probability
    ``p_within`` and with any other item with probability ``p_cross``.
    """
    rng = RngStream(seed).child("synthetic")
    uc = rng.permutation(np.arange(n_users) % n_clusters)
    ic = rng.permutation(np.arange(n_items) % n_clusters)
    prob = np.where(uc[:, None] == ic[None, :], p_within, p_cross)
    hits = rng.random((n_users, n_items)) < prob
    users, items = np.nonzero(hits)

    def features(clusters: np.ndarray) -> FeatureMatrix:
        onehot = np.eye(n_clusters)[clusters]
        noise = (rng.random((len(clusters), noise_columns)) < noise_density).astype(np.float64)
        names = [f"cluster{c}" for c in range(n_clusters)] + [f"noise{j}" for j in range(noise_columns)]
        return FeatureMatrix.from_array(np.concatenate([onehot, noise], axis=1), names)

    R = InteractionMatrix(
        n_users,
        n_items,
        users.astype(np.int64),
        items.astype(np.int64),
        user_ids=[f"u{i}" for i in range(n_users)],
        item_ids=[f"i{j}" for j in range(n_items)],
    )
    return SyntheticDataset(R, features(uc), features(ic), uc, ic)


def ceil_count(ratio: float, k: int) -> int:
    """``ceil(ratio * k)`` robust to float noise such as 0.6 * 5."""
    return int(math.ceil(round(ratio * k, 9)))
