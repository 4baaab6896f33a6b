"""Feature graphs: cosine-weighted single-relational and category-typed multi-relational."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from .data import REAL, FeatureMatrix, ceil_count
from .numeric import ConfigurationError, RngStream

ORIGINAL, INVERSE, SELF_LOOP = 0, 1, 2


class GraphDataError(ValueError):
    pass


def cosine_similarity(f_i, f_j) -> float:
    f_i = np.asarray(f_i, dtype=np.float64)
    f_j = np.asarray(f_j, dtype=np.float64)
    if f_i.shape != f_j.shape:
        raise ConfigurationError(f"feature length mismatch {f_i.shape} vs {f_j.shape}")
    ni, nj = np.linalg.norm(f_i), np.linalg.norm(f_j)
    if ni == 0.0 or nj == 0.0:
        return 0.0
    return float(np.dot(f_i, f_j) / (ni * nj))


def cosine_matrix(F: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(F, axis=1)
    safe = np.where(norms > 0, norms, 1.0)
    X = F / safe[:, None]
    S = X @ X.T
    S[norms == 0, :] = 0.0
    S[:, norms == 0] = 0.0
    return np.clip(S, 0.0, 1.0)


def normalize_adjacency(A) -> sp.csr_matrix:
    """``D^-1/2 (A + I) D^-1/2`` with ``D_ii`` the row sums of ``A + I``."""
    A = sp.csr_matrix(A, dtype=np.float64)
    if A.shape[0] != A.shape[1]:
        raise GraphDataError("adjacency must be square")
    if A.nnz and abs(A - A.T).max() > 1e-12:
        raise GraphDataError("adjacency is not symmetric")
    At = A + sp.identity(A.shape[0], format="csr")
    d_inv_sqrt = 1.0 / np.sqrt(np.asarray(At.sum(axis=1)).ravel())
    D = sp.diags(d_inv_sqrt)
    out = (D @ At @ D).tocsr()
    # exact symmetry regardless of summation order
    return ((out + out.T) * 0.5).tocsr()


@dataclass
class SingleRelGraph:
    n_nodes: int
    adjacency: sp.csr_matrix
    normalized: sp.csr_matrix
    threshold: float

    def edges(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Upper-triangle (i, j, weight) triples."""
        coo = sp.triu(self.adjacency, k=1).tocoo()
        return coo.row, coo.col, coo.data


def build_single_rel_graph(F: FeatureMatrix | np.ndarray, threshold: float = 0.0) -> SingleRelGraph:
    values = F.values if isinstance(F, FeatureMatrix) else np.asarray(F, dtype=np.float64)
    S = cosine_matrix(values)
    np.fill_diagonal(S, 0.0)
    S[S <= threshold] = 0.0
    A = sp.csr_matrix(S)
    return SingleRelGraph(values.shape[0], A, normalize_adjacency(A), threshold)


# ------------------------------------------------------------ multi-relational


def inverse_relation(rel: np.ndarray, n_relations: int) -> np.ndarray:
    """r -> r^-1 for originals, r^-1 -> r for inverses, self-loop fixed."""
    rel = np.asarray(rel)
    return np.where(rel < n_relations, rel + n_relations, np.where(rel < 2 * n_relations, rel - n_relations, rel))


def relation_direction(rel, n_relations: int) -> np.ndarray:
    rel = np.asarray(rel)
    return np.where(rel < n_relations, ORIGINAL, np.where(rel < 2 * n_relations, INVERSE, SELF_LOOP))


def extend_edges(src, dst, rel, n_nodes: int, n_relations: int):
    """Add inverse edges and one self-loop per node; idempotent.

    Relation ids: originals ``[0, R)``, inverses ``[R, 2R)``, self-loop ``2R``.
    Returns sorted ``(src, dst, rel)`` arrays without duplicates.
    """
    src, dst, rel = (np.asarray(a, dtype=np.int64) for a in (src, dst, rel))
    nodes = np.arange(n_nodes, dtype=np.int64)
    all_src = np.concatenate([src, dst, nodes])
    all_dst = np.concatenate([dst, src, nodes])
    all_rel = np.concatenate([rel, inverse_relation(rel, n_relations), np.full(n_nodes, 2 * n_relations)])
    triples = np.unique(np.stack([all_src, all_dst, all_rel], axis=1), axis=0)
    return triples[:, 0], triples[:, 1], triples[:, 2]


@dataclass
class MultiRelGraph:
    """Typed edges with message direction ``src -> dst``.

    ``relations[r]`` is the ``(column, value)`` label of original relation r.
    """

    n_nodes: int
    relations: list[tuple[str, int]]
    src: np.ndarray
    dst: np.ndarray
    rel: np.ndarray
    ext_src: np.ndarray
    ext_dst: np.ndarray
    ext_rel: np.ndarray

    @property
    def n_relations(self) -> int:
        return len(self.relations)

    @property
    def n_extended_relations(self) -> int:
        return 2 * len(self.relations) + 1

    @property
    def ext_direction(self) -> np.ndarray:
        return relation_direction(self.ext_rel, self.n_relations)


def build_multi_rel_graph(F: FeatureMatrix, relation_cap: int | None = None, rng: RngStream | None = None) -> MultiRelGraph:
    """One relation per non-zero (column, value); an edge per pair sharing it.

    Each unordered pair ``i < j`` is stored once as ``(i, j, r)``; the inverse
    ``(j, i, r^-1)`` comes from the extension. With ``relation_cap`` each node
    draws at most that many neighbours per relation (union over nodes).
    """
    for j, kind in enumerate(F.kinds):
        if kind == REAL:
            raise ConfigurationError(f"column {j} ({F.labels[j][0]}) is real-valued; categorize it first")
    if relation_cap is not None and rng is None:
        raise ConfigurationError("relation_cap requires an rng")
    relations: list[tuple[str, int]] = []
    src_parts, dst_parts, rel_parts = [], [], []
    for j in range(F.n_features):
        col = F.values[:, j]
        for value in np.unique(col[col != 0]):
            members = np.flatnonzero(col == value)
            r = len(relations)
            name, base = F.labels[j]
            relations.append((name, base if value == 1 else int(value)))
            if len(members) < 2:
                continue
            if relation_cap is None or len(members) - 1 <= relation_cap:
                iu, ju = np.triu_indices(len(members), k=1)
                a, b = members[iu], members[ju]
            else:
                sub = rng.child("cap", j, int(value))
                pairs = set()
                for pos, node in enumerate(members):
                    others = np.delete(members, pos)
                    for other in sub.choice(others, size=relation_cap, replace=False):
                        pairs.add((min(node, other), max(node, other)))
                arr = np.array(sorted(pairs), dtype=np.int64)
                a, b = arr[:, 0], arr[:, 1]
            src_parts.append(a)
            dst_parts.append(b)
            rel_parts.append(np.full(len(a), r, dtype=np.int64))
    empty = np.zeros(0, dtype=np.int64)
    src = np.concatenate(src_parts) if src_parts else empty
    dst = np.concatenate(dst_parts) if dst_parts else empty
    rel = np.concatenate(rel_parts) if rel_parts else empty
    es, ed, er = extend_edges(src, dst, rel, F.n_entities, len(relations))
    return MultiRelGraph(F.n_entities, relations, src, dst, rel, es, ed, er)


# ------------------------------------------------------------ feature dropout


def drop_features(F: FeatureMatrix, ratio: float, rng: RngStream) -> tuple[FeatureMatrix, np.ndarray]:
    """Zero a uniformly chosen ``ceil(ratio * k)`` subset of columns for every entity."""
    if not 0.0 <= ratio < 1.0:
        raise ConfigurationError(f"feature dropout ratio must be in [0, 1), got {ratio}")
    n_drop = ceil_count(ratio, F.n_features)
    if n_drop == 0:
        return F, np.zeros(0, dtype=np.int64)
    cols = np.sort(rng.choice(F.n_features, size=n_drop, replace=False))
    values = F.values.copy()
    values[:, cols] = 0.0
    return FeatureMatrix(values, list(F.kinds), list(F.labels), F.missing_rows), cols


# ---------------------------------------------------------------------- dumps


def write_single_graph(path: str | Path, g: SingleRelGraph) -> None:
    i, j, w = g.edges()
    with open(path, "w", encoding="utf-8") as fh:
        for a, b, c in zip(i, j, w):
            fh.write(f"{a}\t{b}\t{c:.17g}\n")


def write_multi_graph(path: str | Path, g: MultiRelGraph) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for a, b, r in zip(g.src, g.dst, g.rel):
            fh.write(f"{a}\t{b}\t{r}\n")


def write_relation_catalogue(path: str | Path, g: MultiRelGraph) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for r, (column, value) in enumerate(g.relations):
            fh.write(f"{r}\t{column}\t{value}\n")
