"""Graph-neural pre-training encoders (GCN-P, COM-P) and the GMF baseline."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import scipy.sparse as sp
import torch

from .data import TrainBatch
from .graphs import INVERSE, ORIGINAL, SELF_LOOP, MultiRelGraph, SingleRelGraph
from .numeric import (
    DTYPE,
    ConfigurationError,
    RngStream,
    apply_dropout,
    uniform_parameter,
    xavier_parameter,
    zeros_parameter,
)
from .training import FitResult, Recommender, TrainConfig, TrainingData, fit

Activation = Callable[[torch.Tensor], torch.Tensor]

MAX_DEPTH = 3
NODE_INIT_BOUND = 0.01


def identity(x: torch.Tensor) -> torch.Tensor:
    return x


def relu(x: torch.Tensor) -> torch.Tensor:
    return torch.relu(x)


@dataclass
class EmbeddingSet:
    U: np.ndarray
    V: np.ndarray
    user_bias: np.ndarray | None = None
    item_bias: np.ndarray | None = None
    model: str = "unknown"
    seed: int = 0
    config_hash: str = ""
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.U.shape[1] != self.V.shape[1]:
            raise ConfigurationError("user and item embeddings differ in dimension")
        if self.user_bias is None:
            self.user_bias = np.zeros(self.U.shape[0])
        if self.item_bias is None:
            self.item_bias = np.zeros(self.V.shape[0])

    @property
    def dim(self) -> int:
        return self.U.shape[1]


# ------------------------------------------------------------------ operators


def to_torch_adjacency(A: sp.spmatrix) -> torch.Tensor:
    """Dense tensor for dense graphs, sparse COO otherwise."""
    A = sp.csr_matrix(A, dtype=np.float64)
    n, m = A.shape
    if n * m == 0 or A.nnz / (n * m) > 0.05:
        return torch.from_numpy(A.toarray()).to(DTYPE)
    coo = A.tocoo()
    idx = torch.from_numpy(np.vstack([coo.row, coo.col]).astype(np.int64))
    return torch.sparse_coo_tensor(idx, torch.from_numpy(coo.data), (n, m), dtype=DTYPE, check_invariants=False).coalesce()


def _propagate(A: torch.Tensor, H: torch.Tensor) -> torch.Tensor:
    return torch.sparse.mm(A, H) if A.is_sparse else A @ H


def gcn_layer_forward(
    H: torch.Tensor,
    A_hat: torch.Tensor,
    W: torch.Tensor,
    activation: Activation = relu,
    dropout: float = 0.0,
    rng: RngStream | None = None,
    training: bool = False,
) -> torch.Tensor:
    """``f(A_hat @ H @ W)`` with dropout on the pre-activation during training."""
    if H.shape[0] != A_hat.shape[0] or W.shape[0] != H.shape[1]:
        raise ConfigurationError(f"shape mismatch: A {tuple(A_hat.shape)}, H {tuple(H.shape)}, W {tuple(W.shape)}")
    pre = _propagate(A_hat, H @ W)
    return activation(apply_dropout(pre, dropout, rng, training))


def compose(e_s: torch.Tensor, e_r: torch.Tensor) -> torch.Tensor:
    """Subtraction composition of a neighbour and a relation embedding."""
    if e_s.shape[-1] != e_r.shape[-1]:
        raise ConfigurationError(f"dimension mismatch {e_s.shape[-1]} vs {e_r.shape[-1]}")
    return e_s - e_r


def relation_embedding(alpha: torch.Tensor, basis: torch.Tensor) -> torch.Tensor:
    """Linear combination of basis vectors; ``alpha`` is (b,) or (relations, b)."""
    return alpha @ basis


@dataclass
class RelGraphTensors:
    """Extended edges as per-direction aggregation operators.

    For direction d, ``nodes[d]`` (n x n) and ``relations[d]`` (n x |R^|) hold
    ``1 / deg_d(dst)`` at (dst, src) and (dst, rel) respectively, so a layer's
    pre-activation is ``sum_d nodes[d] @ H @ W_d - relations[d] @ Z @ W_d``.
    The raw edge arrays are kept for inspection.
    """

    n_nodes: int
    n_relations: int
    nodes: list[torch.Tensor]
    relations: list[torch.Tensor]
    edges: list[tuple[np.ndarray, np.ndarray, np.ndarray]]

    @classmethod
    def from_graph(cls, g: MultiRelGraph) -> "RelGraphTensors":
        direction = g.ext_direction
        nodes, relations, edges = [], [], []
        for d in (ORIGINAL, INVERSE, SELF_LOOP):
            m = direction == d
            src, dst, rel = g.ext_src[m], g.ext_dst[m], g.ext_rel[m]
            deg = np.bincount(dst, minlength=g.n_nodes).astype(np.float64)
            norm = 1.0 / deg[dst] if len(dst) else np.zeros(0)
            n, r = g.n_nodes, g.n_extended_relations
            nodes.append(to_torch_adjacency(sp.csr_matrix((norm, (dst, src)), shape=(n, n))))
            relations.append(to_torch_adjacency(sp.csr_matrix((norm, (dst, rel)), shape=(n, r))))
            edges.append((src, dst, rel))
        return cls(g.n_nodes, g.n_extended_relations, nodes, relations, edges)


def compgcn_layer_forward(
    H: torch.Tensor,
    Z: torch.Tensor,
    graph: RelGraphTensors,
    W_dir: list[torch.Tensor],
    W_rel: torch.Tensor,
    activation: Activation = relu,
    dropout: float = 0.0,
    rng: RngStream | None = None,
    training: bool = False,
) -> tuple[torch.Tensor, torch.Tensor]:
    """Composition-GCN layer: direction-specific transforms of ``H_src - Z_rel``.

    Node i sums, over its incoming edges of each direction, the transformed
    composed message scaled by 1 / (its in-degree in that direction). The sum
    is evaluated through the linear operators of :class:`RelGraphTensors`.
    """
    if Z.shape[0] != graph.n_relations:
        raise ConfigurationError(f"{graph.n_relations} relations need embeddings, got {Z.shape[0]}")
    if H.shape[0] != graph.n_nodes:
        raise ConfigurationError("node feature rows do not match the graph")
    out = torch.zeros(H.shape[0], W_dir[0].shape[1], dtype=H.dtype)
    for A_nodes, A_rel, W in zip(graph.nodes, graph.relations, W_dir):
        out = out + _propagate(A_nodes, H @ W) - _propagate(A_rel, Z @ W)
    H_next = activation(apply_dropout(out, dropout, rng, training))
    return H_next, Z @ W_rel


def predict_score(U_i, V_j, b_i=0.0, b_j=0.0):
    if isinstance(U_i, torch.Tensor):
        return (U_i * V_j).sum(-1) + b_i + b_j
    return float(np.dot(U_i, V_j) + b_i + b_j)


def bce_loss(scores: torch.Tensor, labels, reg: float = 0.0, params=()) -> torch.Tensor:
    """Summed binary cross-entropy on sigmoid(scores) plus ``reg * sum ||p||^2``.

    Log arguments are clamped at 1e-12.
    """
    labels = torch.as_tensor(labels, dtype=DTYPE)
    floor = float(np.log(1e-12))
    log_p = torch.clamp(-torch.nn.functional.softplus(-scores), min=floor)
    log_q = torch.clamp(-torch.nn.functional.softplus(scores), min=floor)
    loss = -(labels * log_p + (1.0 - labels) * log_q).sum()
    if reg:
        loss = loss + reg * sum((p**2).sum() for p in params)
    return loss


def gmf_forward(U_u: torch.Tensor, V_v: torch.Tensor, w: torch.Tensor, activation: Activation = identity) -> torch.Tensor:
    """``w . f(U_u * V_v)`` along the last axis."""
    return activation(U_u * V_v) @ w


# ---------------------------------------------------------------------- models


class _BiasedDotModel(Recommender):
    """Shared scoring/loss for encoders that output U, V plus entity biases."""

    reg_tables = ("X_u", "X_v")

    def encode(self, rng: RngStream | None, training: bool) -> tuple[torch.Tensor, torch.Tensor]:
        raise NotImplementedError

    def loss(self, batch: TrainBatch, rng, training=True):
        U, V = self.encode(rng, training)
        users, items, labels = batch.triples()
        u, i = torch.from_numpy(users), torch.from_numpy(items)
        scores = predict_score(U[u], V[i], self.params["user_bias"][u], self.params["item_bias"][i])
        tu, tv = self.reg_tables
        return bce_loss(scores, labels, self.reg, [self.params[tu][u], self.params[tv][i]])

    def score_matrix(self) -> np.ndarray:
        with torch.no_grad():
            U, V = self.encode(None, False)
            S = U @ V.T + self.params["user_bias"][:, None] + self.params["item_bias"][None, :]
        return S.numpy()

    def embeddings(self) -> EmbeddingSet:
        with torch.no_grad():
            U, V = self.encode(None, False)
        return EmbeddingSet(
            U.numpy().copy(),
            V.numpy().copy(),
            self.params["user_bias"].detach().numpy().copy(),
            self.params["item_bias"].detach().numpy().copy(),
            model=self.name,
        )


class GcnP(_BiasedDotModel):
    """Stacked GCN layers over the cosine user and item graphs."""

    name = "gcn-p"

    def __init__(
        self,
        user_graph: SingleRelGraph,
        item_graph: SingleRelGraph,
        dim: int,
        layers: int,
        rng: RngStream,
        dropout: float = 0.0,
        reg: float = 0.0,
    ):
        if not 1 <= layers <= MAX_DEPTH:
            raise ConfigurationError(f"layers must be in [1, {MAX_DEPTH}]")
        self.A_u = to_torch_adjacency(user_graph.normalized)
        self.A_v = to_torch_adjacency(item_graph.normalized)
        self.layers, self.dropout, self.reg = layers, dropout, reg
        n, m = user_graph.n_nodes, item_graph.n_nodes
        self.params = {
            "X_u": uniform_parameter(rng.child("X_u"), (n, dim), NODE_INIT_BOUND),
            "X_v": uniform_parameter(rng.child("X_v"), (m, dim), NODE_INIT_BOUND),
            "user_bias": zeros_parameter((n,)),
            "item_bias": zeros_parameter((m,)),
        }
        for side in ("u", "v"):
            for l in range(layers):
                self.params[f"W_{side}{l}"] = xavier_parameter(rng.child(f"W_{side}", l), (dim, dim))

    def _side(self, side: str, A: torch.Tensor, rng, training) -> torch.Tensor:
        H = self.params[f"X_{side}"]
        for l in range(self.layers):
            act = relu if l < self.layers - 1 else identity
            lrng = rng.child(side, l) if rng is not None else None
            H = gcn_layer_forward(H, A, self.params[f"W_{side}{l}"], act, self.dropout, lrng, training)
        return H

    def encode(self, rng, training):
        return self._side("u", self.A_u, rng, training), self._side("v", self.A_v, rng, training)


class ComP(_BiasedDotModel):
    """Composition-GCN layers over the category-typed user and item graphs."""

    name = "com-p"

    def __init__(
        self,
        user_graph: MultiRelGraph,
        item_graph: MultiRelGraph,
        dim: int,
        layers: int,
        rng: RngStream,
        bases: int = 10,
        dropout: float = 0.0,
        reg: float = 0.0,
    ):
        if not 1 <= layers <= MAX_DEPTH:
            raise ConfigurationError(f"layers must be in [1, {MAX_DEPTH}]")
        if bases < 1:
            raise ConfigurationError("bases must be >= 1")
        self.graphs = {"u": RelGraphTensors.from_graph(user_graph), "v": RelGraphTensors.from_graph(item_graph)}
        self.layers, self.dropout, self.reg = layers, dropout, reg
        n, m = user_graph.n_nodes, item_graph.n_nodes
        self.params = {
            "X_u": uniform_parameter(rng.child("X_u"), (n, dim), NODE_INIT_BOUND),
            "X_v": uniform_parameter(rng.child("X_v"), (m, dim), NODE_INIT_BOUND),
            "user_bias": zeros_parameter((n,)),
            "item_bias": zeros_parameter((m,)),
        }
        for side, g in self.graphs.items():
            self.params[f"alpha_{side}"] = xavier_parameter(rng.child("alpha", side), (g.n_relations, bases))
            self.params[f"B_{side}"] = xavier_parameter(rng.child("B", side), (bases, dim))
            for l in range(layers):
                for d in (ORIGINAL, INVERSE, SELF_LOOP):
                    self.params[f"W_{side}{l}_d{d}"] = xavier_parameter(rng.child("W", side, l, d), (dim, dim))
                self.params[f"Wrel_{side}{l}"] = xavier_parameter(rng.child("Wrel", side, l), (dim, dim))

    def _side(self, side: str, rng, training) -> torch.Tensor:
        p = self.params
        H = p[f"X_{side}"]
        Z = relation_embedding(p[f"alpha_{side}"], p[f"B_{side}"])
        for l in range(self.layers):
            act = relu if l < self.layers - 1 else identity
            W_dir = [p[f"W_{side}{l}_d{d}"] for d in (ORIGINAL, INVERSE, SELF_LOOP)]
            lrng = rng.child(side, l) if rng is not None else None
            H, Z = compgcn_layer_forward(H, Z, self.graphs[side], W_dir, p[f"Wrel_{side}{l}"], act, self.dropout, lrng, training)
        return H

    def encode(self, rng, training):
        return self._side("u", rng, training), self._side("v", rng, training)


class Gmf(Recommender):
    """Weighted element-wise product of free user and item embeddings."""

    name = "gmf"

    def __init__(self, n_users: int, n_items: int, dim: int, rng: RngStream, reg: float = 0.0, activation: Activation = identity):
        self.reg, self.activation = reg, activation
        self.params = {
            "U": uniform_parameter(rng.child("U"), (n_users, dim), NODE_INIT_BOUND),
            "V": uniform_parameter(rng.child("V"), (n_items, dim), NODE_INIT_BOUND),
            "w": torch.ones(dim, dtype=DTYPE, requires_grad=True),
        }

    def loss(self, batch, rng, training=True):
        users, items, labels = batch.triples()
        u, i = torch.from_numpy(users), torch.from_numpy(items)
        U, V = self.params["U"][u], self.params["V"][i]
        return bce_loss(gmf_forward(U, V, self.params["w"], self.activation), labels, self.reg, [U, V])

    def score_matrix(self):
        with torch.no_grad():
            U, V, w = self.params["U"], self.params["V"], self.params["w"]
            return gmf_forward(U[:, None, :], V[None, :, :], w, self.activation).numpy()

    def embeddings(self) -> EmbeddingSet:
        return EmbeddingSet(self.params["U"].detach().numpy().copy(), self.params["V"].detach().numpy().copy(), model=self.name)


def pretrain(
    model: GcnP | ComP | Gmf,
    data: TrainingData,
    cfg: TrainConfig,
    rng: RngStream,
    seed: int = 0,
    config_hash: str = "",
) -> tuple[EmbeddingSet, FitResult]:
    """Train ``model`` on the interaction BCE loss; embeddings of the best validation epoch."""
    result = fit(model, data, cfg, rng)
    emb = model.embeddings()
    emb.seed, emb.config_hash = seed, config_hash
    emb.extra = {"best_epoch": result.best_epoch, "best_validation": result.best_validation}
    return emb, result
