import warnings

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from graphrec_pretrain.data import (
    TEST,
    TRAIN,
    VALIDATION,
    DataFormatError,
    InteractionMatrix,
    NegativeSampler,
    build_eval_sets,
    build_validation_set,
    categorize_real_feature,
    iterate_batches,
    leave_one_out_split,
    load_features,
    load_interactions,
    make_cluster_dataset,
    sample_train_batch,
    write_index_map,
    write_interactions,
)
from graphrec_pretrain.numeric import RngStream


def _matrix(pairs, n, m):
    u, v = np.array(pairs, dtype=np.int64).T
    return InteractionMatrix(n, m, u, v, user_ids=[f"u{i}" for i in range(n)], item_ids=[f"i{j}" for j in range(m)])


@st.composite
def interaction_matrices(draw, max_users=12, max_items=15):
    n = draw(st.integers(1, max_users))
    m = draw(st.integers(2, max_items))
    dense = np.array(draw(st.lists(st.booleans(), min_size=n * m, max_size=n * m))).reshape(n, m)
    dense[np.arange(n), draw(st.lists(st.integers(0, m - 1), min_size=n, max_size=n))] = True
    return _matrix(np.argwhere(dense), n, m)


# ------------------------------------------------------------------- loading


def test_load_three_lines(tmp_path):
    f = tmp_path / "r.tsv"
    f.write_text("a\tx\na\ty\nb\tx\n")
    R = load_interactions(f)
    assert (R.n_users, R.n_items, R.n_interactions) == (2, 2, 3)
    assert R.values.tolist() == [1.0, 1.0, 1.0]
    assert R.user_index == {"a": 0, "b": 1} and R.item_index == {"x": 0, "y": 1}


def test_ratings_binarized_and_comments_skipped(tmp_path):
    f = tmp_path / "r.tsv"
    f.write_text("# header\n" + "".join(f"u{r}\ti{r}\t{r}\n" for r in range(1, 6)))
    R = load_interactions(f)
    assert R.n_interactions == 5 and set(R.values) == {1.0}


def test_load_twice_identical(tmp_path):
    f = tmp_path / "r.tsv"
    f.write_text("a\tx\t4\nb\ty\t2\nb\tx\t5\n")
    A, B = load_interactions(f), load_interactions(f)
    assert np.array_equal(A.users, B.users) and np.array_equal(A.items, B.items)


def test_foursquare_shaped_counts(tmp_path):
    n, m, total = 2060, 2876, 27149
    gen = np.random.default_rng(0)
    # every user and item appears at least once, the rest are distinct random pairs
    pairs = {(u, u % m) for u in range(n)} | {(j % n, j) for j in range(m)}
    while len(pairs) < total:
        pairs.add((int(gen.integers(n)), int(gen.integers(m))))
    R = _matrix(sorted(pairs), n, m)
    path = tmp_path / "fsq.tsv"
    write_interactions(path, R)
    back = load_interactions(path)
    assert (back.n_users, back.n_items, back.n_interactions) == (2060, 2876, 27149)


def test_malformed_line_reports_number(tmp_path):
    f = tmp_path / "r.tsv"
    f.write_text("a\tx\nbroken\n")
    with pytest.raises(DataFormatError, match=":2:"):
        load_interactions(f)
    f.write_text("a\tx\tfive\n")
    with pytest.raises(DataFormatError, match=":1:"):
        load_interactions(f)


def test_duplicate_kept_once_with_warning(tmp_path):
    f = tmp_path / "r.tsv"
    f.write_text("a\tx\na\tx\nb\tx\n")
    with pytest.warns(UserWarning, match="1 duplicate"):
        R = load_interactions(f)
    assert R.n_interactions == 2


def test_features_sparse_to_dense(tmp_path):
    f = tmp_path / "f.txt"
    f.write_text("#k=4\ne0\t0:1 3:1\n")
    F = load_features(f, {"e0": 0, "e1": 1}, 2)
    assert F.values.tolist() == [[1, 0, 0, 1], [0, 0, 0, 0]]
    assert F.missing_rows == 1


def test_features_empty_file(tmp_path):
    f = tmp_path / "f.txt"
    f.write_text("#k=4\n")
    F = load_features(f, {"a": 0, "b": 1, "c": 2}, 3)
    assert F.values.shape == (3, 4) and not F.values.any() and F.missing_rows == 3


def test_movielens_shaped_user_features(tmp_path):
    f = tmp_path / "f.txt"
    lines = ["#k=21"] + [f"u{i}\t{i % 2}:1 {2 + i % 8}:1 {10 + i % 11}:1" for i in range(30)]
    f.write_text("\n".join(lines) + "\n")
    F = load_features(f, {f"u{i}": i for i in range(30)}, 30)
    assert F.n_features == 21


def test_feature_errors(tmp_path):
    f = tmp_path / "f.txt"
    f.write_text("#k=2\na\t2:1\n")
    with pytest.raises(DataFormatError, match="outside"):
        load_features(f, {"a": 0}, 1)
    f.write_text("a\t0:1\n")
    with pytest.raises(DataFormatError, match="#k="):
        load_features(f, {"a": 0}, 1)


def test_index_map_written(tmp_path):
    write_index_map(tmp_path / "m.tsv", ["x", "y"])
    assert (tmp_path / "m.tsv").read_text() == "x\t0\ny\t1\n"


# ------------------------------------------------------------ categorization


def test_categorize_examples():
    out = categorize_real_feature([25.0, 0.0, 95.0], 10, 8)
    assert out[0].tolist() == [0, 0, 1, 0, 0, 0, 0, 0]
    assert out[1].argmax() == 0
    assert out[2].argmax() == 7
    with pytest.raises(DataFormatError):
        categorize_real_feature([-1.0], 10, 8)


@given(st.lists(st.floats(0, 1e3), min_size=1, max_size=30), st.floats(0.1, 50), st.integers(1, 10))
def test_categorize_is_one_hot(values, width, count):
    out = categorize_real_feature(values, width, count)
    assert out.shape == (len(values), count)
    assert (out.sum(axis=1) == 1).all()
    want = np.minimum(np.floor(np.array(values) / width), count - 1)
    assert np.array_equal(out.argmax(axis=1), want)


# ---------------------------------------------------------------- splitting


def test_split_counts():
    R = _matrix([(0, j) for j in range(5)] + [(1, 0), (1, 1)], 2, 5)
    S = leave_one_out_split(R, RngStream(0))
    s0 = S.split[S.users == 0]
    assert sorted(s0.tolist()) == [TRAIN, TRAIN, TRAIN, VALIDATION, TEST]
    assert (S.split[S.users == 1] == TRAIN).all()
    assert S.eval_excluded.tolist() == [False, True]


@given(interaction_matrices(), st.integers(0, 2**31))
def test_split_partition_and_determinism(R, seed):
    A = leave_one_out_split(R, RngStream(seed))
    B = leave_one_out_split(R, RngStream(seed))
    assert np.array_equal(A.split, B.split)
    assert np.isin(A.split, [TRAIN, VALIDATION, TEST]).all()
    counts = np.bincount(R.users, minlength=R.n_users)
    for u in range(R.n_users):
        tags = A.split[A.users == u]
        if counts[u] >= 3:
            assert (tags == TEST).sum() == 1 and (tags == VALIDATION).sum() == 1
        else:
            assert A.eval_excluded[u] and (tags == TRAIN).all()


# ----------------------------------------------------------- candidate sets


def test_forced_negatives():
    m = 103
    pairs = [(0, 0), (0, 1), (0, 2)] + [(1, j) for j in range(5)]
    R = leave_one_out_split(_matrix(pairs, 2, m), RngStream(0))
    with pytest.warns(UserWarning):  # user 1 only has 98 eligible items
        cands = build_eval_sets(R, n_sets=1, n_eval=100)[0]
    row = list(cands.users).index(0)
    assert sorted(cands.negatives[row].tolist()) == list(range(3, 103))
    assert 0 not in cands.flagged_users


def test_ten_sets_distinct_seeds():
    syn = make_cluster_dataset(40, 150, 4, 2, seed=3)
    R = leave_one_out_split(syn.interactions, RngStream(0))
    sets = build_eval_sets(R, n_sets=10, n_eval=100, base_seed=5)
    assert len(sets) == 10 and [s.seed for s in sets] == list(range(5, 15))
    assert not np.array_equal(sets[0].negatives, sets[1].negatives)
    assert all(s.n_eval == 100 for s in sets)


def test_short_catalogue_flags_users():
    R = leave_one_out_split(_matrix([(0, 0), (0, 1), (0, 2)], 1, 6), RngStream(0))
    with pytest.warns(UserWarning):
        c = build_eval_sets(R, n_sets=1, n_eval=5)[0]
    assert c.flagged_users == [0]
    assert sorted(c.negatives[0][c.negatives[0] >= 0].tolist()) == [3, 4, 5]


@given(interaction_matrices(max_items=25), st.integers(0, 1000), st.integers(1, 8))
def test_no_evaluation_leakage(R, seed, n_eval):
    S = leave_one_out_split(R, RngStream(seed))
    dense = S.dense()
    train = S.dense((TRAIN,))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        sets = build_eval_sets(S, 2, n_eval, seed) + [build_validation_set(S, n_eval, seed)]
    for c in sets:
        for u, pos, negs in zip(c.users, c.positives, c.negatives):
            negs = negs[negs >= 0]
            assert not dense[u, negs].any()
            assert len(set(negs.tolist())) == len(negs)
            assert not train[u, pos]
            if u not in c.flagged_users:
                assert len(negs) == n_eval


# ------------------------------------------------------------------ batches


def test_batch_counting():
    syn = make_cluster_dataset(60, 60, 3, 1, p_within=0.5, seed=1)
    R = leave_one_out_split(syn.interactions, RngStream(0))
    batch = sample_train_batch(R, 1000, 4, RngStream(2))
    users, items, labels = batch.triples()
    assert len(batch) == 1000 and len(labels) == 1000 and labels.sum() == 200


def test_forced_single_negative():
    R = leave_one_out_split(_matrix([(0, 0), (0, 1), (0, 2), (0, 3)], 1, 5), RngStream(0))
    R.split[:] = TRAIN
    negs = NegativeSampler(R).sample(np.zeros(50, dtype=np.int64), 4, RngStream(1))
    assert (negs == 4).all()


@given(interaction_matrices(), st.integers(2, 40), st.integers(1, 5), st.integers(0, 100))
def test_epoch_covers_train_once_and_negatives_valid(R, batch_size, k, seed):
    S = leave_one_out_split(R, RngStream(seed))
    train = S.dense((TRAIN,))
    if train.all(axis=1)[np.unique(S.train_pairs()[0])].any():
        return  # a user owning every item has no negatives to draw
    seen = []
    for b in iterate_batches(S, batch_size, k, RngStream(seed)):
        users, items, labels = b.triples()
        assert (train[users, items] == (labels == 1)).all()
        seen += list(zip(b.users.tolist(), b.pos_items.tolist()))
    tu, ti = S.train_pairs()
    assert sorted(seen) == sorted(zip(tu.tolist(), ti.tolist()))


def test_synthetic_generator_shape():
    syn = make_cluster_dataset()
    assert syn.interactions.n_users == 200 and syn.interactions.n_items == 200
    assert syn.user_features.n_features == 15
    assert np.array_equal(syn.user_features.values[:, :10].argmax(1), syn.user_clusters)
    assert np.bincount(syn.user_clusters).tolist() == [20] * 10
