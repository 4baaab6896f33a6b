"""Fine-tuning recommenders initialised from pre-trained embeddings."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import torch

from .data import InteractionMatrix, TrainBatch, EvalCandidateSet
from .evaluate import evaluate
from .numeric import DTYPE, ConfigurationError, RngStream, tensor, xavier_parameter, zeros_parameter
from .pretrain import EmbeddingSet, bce_loss, to_torch_adjacency
from .training import FitResult, Recommender, TrainConfig, TrainingData, fit


def normal_parameter(rng: RngStream, shape, std: float) -> torch.Tensor:
    return tensor(rng.generator.normal(0.0, std, size=tuple(shape)), requires_grad=True)


def bpr_loss(pos_scores: torch.Tensor, neg_scores: torch.Tensor) -> torch.Tensor:
    """Summed ``-log sigmoid(pos - neg)``."""
    return torch.nn.functional.softplus(-(pos_scores - neg_scores)).sum()


def _l2(reg: float, tensors) -> torch.Tensor | float:
    return reg * sum((t**2).sum() for t in tensors) if reg else 0.0


def _batch_index(batch: TrainBatch):
    users = torch.from_numpy(batch.users)
    pos = torch.from_numpy(batch.pos_items)
    neg = torch.from_numpy(batch.neg_items)
    return users, pos, neg


class MF(Recommender):
    """Biased matrix factorisation trained with BCE or BPR."""

    def __init__(self, n_users: int, n_items: int, dim: int, rng: RngStream, loss_kind: str = "bce", reg: float = 0.0, init_std: float = 0.1):
        if loss_kind not in ("bce", "bpr"):
            raise ConfigurationError(f"unknown MF loss {loss_kind!r}")
        self.name = f"mf-{loss_kind}"
        self.loss_kind, self.reg, self.dim = loss_kind, reg, dim
        self.params = {
            "U": normal_parameter(rng.child("U"), (n_users, dim), init_std),
            "V": normal_parameter(rng.child("V"), (n_items, dim), init_std),
            "user_bias": zeros_parameter((n_users,)),
            "item_bias": zeros_parameter((n_items,)),
            "global_bias": zeros_parameter((1,)),
        }

    embedding_tables = (("U", "V"),)

    def score(self, u: torch.Tensor, i: torch.Tensor) -> torch.Tensor:
        p = self.params
        return (p["U"][u] * p["V"][i]).sum(-1) + p["user_bias"][u] + p["item_bias"][i] + p["global_bias"][0]

    def loss(self, batch, rng, training=True):
        p = self.params
        if self.loss_kind == "bce":
            users, items, labels = batch.triples()
            u, i = torch.from_numpy(users), torch.from_numpy(items)
            return bce_loss(self.score(u, i), labels, self.reg, [p["U"][u], p["V"][i]])
        u, pos, neg = _batch_index(batch)
        s_pos = self.score(u, pos)[:, None]
        s_neg = self.score(u[:, None], neg)
        return bpr_loss(s_pos, s_neg) + _l2(self.reg, [p["U"][u], p["V"][pos], p["V"][neg]])

    def score_matrix(self):
        p = self.params
        with torch.no_grad():
            S = p["U"] @ p["V"].T + p["user_bias"][:, None] + p["item_bias"][None, :] + p["global_bias"]
        return S.numpy()

    def embeddings(self) -> EmbeddingSet:
        p = self.params
        return EmbeddingSet(
            p["U"].detach().numpy().copy(),
            p["V"].detach().numpy().copy(),
            p["user_bias"].detach().numpy().copy(),
            p["item_bias"].detach().numpy().copy(),
            model=self.name,
        )


class NCF(Recommender):
    """GMF and MLP branches fused by a final weight vector (BCE loss).

    The MLP tower maps the concatenated ``2d`` input through ``d`` and ``d/2``
    ReLU layers.
    """

    name = "ncf"
    embedding_tables = (("U_g", "V_g"), ("U_m", "V_m"))

    def __init__(self, n_users: int, n_items: int, dim: int, rng: RngStream, reg: float = 0.0, init_std: float = 0.01):
        self.reg, self.dim = reg, dim
        half = max(1, dim // 2)
        self.params = {
            "U_g": normal_parameter(rng.child("U_g"), (n_users, dim), init_std),
            "V_g": normal_parameter(rng.child("V_g"), (n_items, dim), init_std),
            "U_m": normal_parameter(rng.child("U_m"), (n_users, dim), init_std),
            "V_m": normal_parameter(rng.child("V_m"), (n_items, dim), init_std),
            "W1": xavier_parameter(rng.child("W1"), (2 * dim, dim)),
            "b1": zeros_parameter((dim,)),
            "W2": xavier_parameter(rng.child("W2"), (dim, half)),
            "b2": zeros_parameter((half,)),
            "h": xavier_parameter(rng.child("h"), (dim + half,)),
        }

    def _fuse(self, ug, vg, um, vm) -> torch.Tensor:
        p = self.params
        um, vm = torch.broadcast_tensors(um, vm)
        x = torch.cat([um, vm], dim=-1)
        x = torch.relu(x @ p["W1"] + p["b1"])
        x = torch.relu(x @ p["W2"] + p["b2"])
        return torch.cat([ug * vg, x], dim=-1) @ p["h"]

    def score(self, u: torch.Tensor, i: torch.Tensor) -> torch.Tensor:
        p = self.params
        return self._fuse(p["U_g"][u], p["V_g"][i], p["U_m"][u], p["V_m"][i])

    def loss(self, batch, rng, training=True):
        p = self.params
        users, items, labels = batch.triples()
        u, i = torch.from_numpy(users), torch.from_numpy(items)
        reg_terms = [p["U_g"][u], p["V_g"][i], p["U_m"][u], p["V_m"][i]]
        return bce_loss(self.score(u, i), labels, self.reg, reg_terms)

    def score_matrix(self, chunk: int = 256):
        p = self.params
        n, m = p["U_g"].shape[0], p["V_g"].shape[0]
        out = np.empty((n, m))
        items = torch.arange(m)
        with torch.no_grad():
            for start in range(0, n, chunk):
                u = torch.arange(start, min(n, start + chunk))
                out[start : start + len(u)] = self.score(u[:, None], items[None, :]).numpy()
        return out

    def embeddings(self) -> EmbeddingSet:
        p = self.params
        return EmbeddingSet(p["U_g"].detach().numpy().copy(), p["V_g"].detach().numpy().copy(), model=self.name)


def bipartite_adjacency(R: InteractionMatrix) -> sp.csr_matrix:
    """Symmetrically normalised user-item graph from train interactions, no self-loops."""
    users, items = R.train_pairs()
    n, m = R.n_users, R.n_items
    A = sp.coo_matrix(
        (np.ones(2 * len(users)), (np.r_[users, items + n], np.r_[items + n, users])), shape=(n + m, n + m)
    ).tocsr()
    A.data[:] = 1.0
    deg = np.asarray(A.sum(axis=1)).ravel()
    inv = np.where(deg > 0, 1.0 / np.sqrt(np.where(deg > 0, deg, 1.0)), 0.0)
    D = sp.diags(inv)
    return (D @ A @ D).tocsr()


def lightgcn_propagate(E0: torch.Tensor, A: torch.Tensor, layers: int) -> torch.Tensor:
    """Mean of ``E0, A E0, ..., A^L E0``."""
    out, E = E0, E0
    for _ in range(layers):
        E = torch.sparse.mm(A, E) if A.is_sparse else A @ E
        out = out + E
    return out / (layers + 1)


class LightGCN(Recommender):
    name = "lightgcn"
    embedding_tables = (("E_u", "E_v"),)

    def __init__(self, R: InteractionMatrix, dim: int, rng: RngStream, layers: int = 3, reg: float = 0.0, init_std: float = 0.1):
        self.n_users, self.n_items = R.n_users, R.n_items
        self.layers, self.reg, self.dim = layers, reg, dim
        self.A = to_torch_adjacency(bipartite_adjacency(R))
        self.params = {
            "E_u": normal_parameter(rng.child("E_u"), (R.n_users, dim), init_std),
            "E_v": normal_parameter(rng.child("E_v"), (R.n_items, dim), init_std),
        }

    def propagate(self) -> tuple[torch.Tensor, torch.Tensor]:
        E0 = torch.cat([self.params["E_u"], self.params["E_v"]], dim=0)
        E = lightgcn_propagate(E0, self.A, self.layers)
        return E[: self.n_users], E[self.n_users :]

    def loss(self, batch, rng, training=True):
        U, V = self.propagate()
        u, pos, neg = _batch_index(batch)
        s_pos = (U[u] * V[pos]).sum(-1)[:, None]
        s_neg = (U[u][:, None, :] * V[neg]).sum(-1)
        p = self.params
        return bpr_loss(s_pos, s_neg) + _l2(self.reg, [p["E_u"][u], p["E_v"][pos], p["E_v"][neg]])

    def score_matrix(self):
        with torch.no_grad():
            U, V = self.propagate()
            return (U @ V.T).numpy()

    def embeddings(self) -> EmbeddingSet:
        with torch.no_grad():
            U, V = self.propagate()
        return EmbeddingSet(U.numpy().copy(), V.numpy().copy(), model=self.name)


FINETUNERS = ("mf-bce", "mf-bpr", "ncf", "lightgcn")


def build_finetuner(kind: str, R: InteractionMatrix, dim: int, rng: RngStream, reg: float = 0.0, layers: int = 3) -> Recommender:
    """Fresh model with its native random initialisation."""
    if kind in ("mf-bce", "mf-bpr"):
        return MF(R.n_users, R.n_items, dim, rng, loss_kind=kind[3:], reg=reg)
    if kind == "ncf":
        return NCF(R.n_users, R.n_items, dim, rng, reg=reg)
    if kind == "lightgcn":
        return LightGCN(R, dim, rng, layers=layers, reg=reg)
    raise ConfigurationError(f"unknown fine-tuner {kind!r}; choose from {FINETUNERS}")


def init_from_pretrained(model: Recommender, emb: EmbeddingSet) -> Recommender:
    """Copy the pre-trained U, V into every entity table; other parameters stay fresh."""
    for user_table, item_table in model.embedding_tables:
        U, V = model.params[user_table], model.params[item_table]
        if emb.U.shape != tuple(U.shape) or emb.V.shape != tuple(V.shape):
            raise ConfigurationError(
                f"embedding shapes {emb.U.shape}/{emb.V.shape} do not fit {model.name} tables "
                f"{tuple(U.shape)}/{tuple(V.shape)}"
            )
        with torch.no_grad():
            U.copy_(torch.from_numpy(emb.U))
            V.copy_(torch.from_numpy(emb.V))
    return model


@dataclass
class FinetuneReport:
    model: str
    seed: int
    config_hash: str
    best_epoch: int
    best_validation: float
    cutoffs: list[int]
    per_set: list[dict[str, float]]
    mean: dict[str, float]
    curve: list[float] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "model": self.model,
            "seed": self.seed,
            "config_hash": self.config_hash,
            "best_epoch": self.best_epoch,
            "best_validation_ndcg@10": self.best_validation,
            "cutoffs": self.cutoffs,
            "mean": self.mean,
            "per_set": self.per_set,
            "validation_curve": self.curve,
        }


def finetune(
    model: Recommender,
    data: TrainingData,
    cfg: TrainConfig,
    rng: RngStream,
    eval_sets: list[EvalCandidateSet],
    cutoffs=(1, 3, 5, 10),
    seed: int = 0,
    config_hash: str = "",
) -> tuple[EmbeddingSet, FinetuneReport, FitResult]:
    """Train on interactions only, then evaluate the best-validation state on every test set."""
    result = fit(model, data, cfg, rng)
    ev = evaluate(model.score_matrix(), eval_sets, cutoffs)
    emb = model.embeddings()
    emb.seed, emb.config_hash = seed, config_hash
    report = FinetuneReport(
        model.name, seed, config_hash, result.best_epoch, result.best_validation, ev.cutoffs, ev.per_set, ev.mean, result.curve
    )
    return emb, report, result
