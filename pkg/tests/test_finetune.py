import numpy as np
import pytest
import torch
from hypothesis import given
from hypothesis import strategies as st
from oracles import off_relu_kink, random_instance

from graphrec_pretrain.data import InteractionMatrix, TRAIN, build_eval_sets, build_validation_set
from graphrec_pretrain.finetune import (
    MF,
    NCF,
    LightGCN,
    bipartite_adjacency,
    bpr_loss,
    build_finetuner,
    finetune,
    init_from_pretrained,
    lightgcn_propagate,
)
from graphrec_pretrain.numeric import ConfigurationError, RngStream, finite_difference_check, tensor
from graphrec_pretrain.pretrain import EmbeddingSet, predict_score, to_torch_adjacency
from graphrec_pretrain.training import TrainConfig, TrainingData


def _emb(n, m, d, seed=0):
    gen = np.random.default_rng(seed)
    return EmbeddingSet(gen.normal(size=(n, d)), gen.normal(size=(m, d)), gen.normal(size=n), gen.normal(size=m))


# ------------------------------------------------------------------- BPR


def test_bpr_examples():
    assert bpr_loss(tensor([1.5]), tensor([1.5])).item() == pytest.approx(np.log(2), abs=1e-15)
    assert bpr_loss(tensor([100.0]), tensor([0.0])).item() < 1e-40
    assert bpr_loss(tensor([2.0]), tensor([0.0])).item() == pytest.approx(0.126928, abs=5e-7)
    assert bpr_loss(tensor([2.0]), tensor([0.0])).item() == pytest.approx(np.log1p(np.exp(-2.0)), abs=1e-15)


@given(st.floats(-30, 30), st.floats(-30, 30), st.floats(-100, 100))
def test_bpr_shift_invariant(a, b, c):
    base = bpr_loss(tensor([a]), tensor([b])).item()
    assert bpr_loss(tensor([a + c]), tensor([b + c])).item() == pytest.approx(base, rel=1e-9, abs=1e-12)


# -------------------------------------------------------------- LightGCN


def test_lightgcn_zero_layers():
    E0 = tensor(np.random.default_rng(0).normal(size=(5, 3)))
    assert torch.equal(lightgcn_propagate(E0, tensor(np.zeros((5, 5))), 0), E0)


def test_lightgcn_single_edge_oracle():
    R = InteractionMatrix(1, 1, np.array([0]), np.array([0]), split=np.array([TRAIN], dtype=np.int8))
    A = bipartite_adjacency(R).toarray()
    assert A.tolist() == [[0.0, 1.0], [1.0, 0.0]]
    a, b = 0.3, -0.7
    layers = [[a, b]]
    for _ in range(2):
        prev = layers[-1]
        layers.append([sum(A[i][j] * prev[j] for j in range(2)) for i in range(2)])
    want = [sum(l[i] for l in layers) / 3 for i in range(2)]
    got = lightgcn_propagate(tensor([[a], [b]]), to_torch_adjacency(A), 2).ravel().tolist()
    assert max(abs(x - y) for x, y in zip(got, want)) < 1e-12


def test_lightgcn_empty_graph_convention():
    R = InteractionMatrix(2, 3, np.zeros(0, dtype=np.int64), np.zeros(0, dtype=np.int64), split=np.zeros(0, dtype=np.int8))
    model = LightGCN(R, 4, RngStream(0), layers=3)
    U, V = model.propagate()
    assert torch.allclose(U, model.params["E_u"] / 4, atol=0, rtol=0)
    assert torch.allclose(V, model.params["E_v"] / 4, atol=0, rtol=0)


def test_lightgcn_has_only_entity_tables():
    R, *_ = random_instance(0)
    assert set(LightGCN(R, 3, RngStream(0)).params) == {"E_u", "E_v"}


def test_bipartite_adjacency_symmetric_normalized():
    R, *_ = random_instance(4)
    A = bipartite_adjacency(R).toarray()
    users, items = R.train_pairs()
    deg = np.r_[np.bincount(users, minlength=R.n_users), np.bincount(items, minlength=R.n_items)]
    for u, i in zip(users, items):
        assert A[u, R.n_users + i] == pytest.approx(1 / np.sqrt(deg[u] * deg[R.n_users + i]), abs=1e-15)
    assert np.array_equal(A, A.T) and not np.diag(A).any()


# ------------------------------------------------------------ gradients


@pytest.mark.parametrize("kind", ["mf-bce", "mf-bpr", "ncf", "lightgcn"])
def test_finetuner_gradients(kind):
    R, _, _, d, batch = random_instance(7)
    model = off_relu_kink(build_finetuner(kind, R, d, RngStream(1), reg=0.01, layers=2), 7)
    assert finite_difference_check(lambda: model.loss(batch, None), model.parameters()) < 1e-4


# ------------------------------------------------------- initialization


def test_mf_init_copies_and_zero_biases():
    R, *_ = random_instance(2)
    emb = _emb(R.n_users, R.n_items, 3)
    model = init_from_pretrained(MF(R.n_users, R.n_items, 3, RngStream(0)), emb)
    assert np.array_equal(model.params["U"].detach().numpy(), emb.U)
    assert np.array_equal(model.params["V"].detach().numpy(), emb.V)
    for b in ("user_bias", "item_bias", "global_bias"):
        assert not model.params[b].detach().numpy().any()
    S = model.score_matrix()
    for u in range(R.n_users):
        for i in range(R.n_items):
            assert S[u, i] == pytest.approx(predict_score(emb.U[u], emb.V[i]), abs=1e-13)


def test_ncf_branches_share_embeddings():
    emb = _emb(4, 5, 6)
    model = init_from_pretrained(NCF(4, 5, 6, RngStream(0)), emb)
    p = model.params
    assert np.array_equal(p["U_g"].detach().numpy(), emb.U) and np.array_equal(p["U_m"].detach().numpy(), emb.U)
    assert np.array_equal(p["V_g"].detach().numpy(), emb.V) and np.array_equal(p["V_m"].detach().numpy(), emb.V)
    assert p["h"].shape == (6 + 3,) and p["W1"].shape == (12, 6) and p["W2"].shape == (6, 3)


def test_lightgcn_init_sets_layer_zero():
    R, *_ = random_instance(3)
    emb = _emb(R.n_users, R.n_items, 2)
    model = init_from_pretrained(LightGCN(R, 2, RngStream(0)), emb)
    assert np.array_equal(model.params["E_u"].detach().numpy(), emb.U)


def test_dimension_mismatch_rejected():
    with pytest.raises(ConfigurationError):
        init_from_pretrained(MF(3, 3, 4, RngStream(0)), _emb(3, 3, 5))


def test_random_init_is_seeded():
    R, *_ = random_instance(1)
    a = build_finetuner("ncf", R, 4, RngStream(5))
    b = build_finetuner("ncf", R, 4, RngStream(5))
    c = build_finetuner("ncf", R, 4, RngStream(6))
    assert all(torch.equal(a.params[k], b.params[k]) for k in a.params)
    assert not torch.equal(a.params["U_g"], c.params["U_g"])
    with pytest.raises(ConfigurationError):
        build_finetuner("ngcf", R, 4, RngStream(0))


def test_ncf_score_matrix_matches_pointwise():
    model = NCF(3, 4, 4, RngStream(2))
    S = model.score_matrix(chunk=2)
    for u in range(3):
        for i in range(4):
            s = model.score(torch.tensor([u]), torch.tensor([i])).item()
            assert S[u, i] == pytest.approx(s, abs=1e-14)


# ---------------------------------------------------------- fine-tuning


@pytest.mark.filterwarnings("ignore::UserWarning")
def test_finetune_deterministic_and_report_average():
    R, *_ = random_instance(13, max_n=8, max_m=8)
    data = TrainingData(R, build_validation_set(R, 2, 0))
    sets = build_eval_sets(R, 3, 2, 0)
    cfg = TrainConfig(lr=0.05, batch_size=20, negatives=2, max_epochs=8, patience=3)

    def run():
        model = init_from_pretrained(build_finetuner("mf-bpr", R, 3, RngStream(0)), _emb(R.n_users, R.n_items, 3))
        return finetune(model, data, cfg, RngStream(1), sets, (1, 3), seed=1, config_hash="h")

    (e1, r1, _), (e2, r2, _) = run(), run()
    assert r1.to_dict() == r2.to_dict() and np.array_equal(e1.U, e2.U)
    for key, value in r1.mean.items():
        assert value == pytest.approx(np.mean([s[key] for s in r1.per_set]), abs=1e-12)
    assert len(r1.per_set) == 3 and r1.seed == 1 and r1.config_hash == "h"
