"""Pre-train -> fine-tune -> evaluate for one configuration and seed."""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np
import torch

from .config import ExperimentConfig
from .data import (
    EvalCandidateSet,
    FeatureMatrix,
    InteractionMatrix,
    build_eval_sets,
    build_validation_set,
    leave_one_out_split,
    load_features,
    load_interactions,
)
from .finetune import FinetuneReport, build_finetuner, finetune, init_from_pretrained
from .graphs import build_multi_rel_graph, build_single_rel_graph, drop_features
from .numeric import RngStream
from .pretrain import ComP, EmbeddingSet, GcnP, Gmf, pretrain
from .training import FitResult, TrainConfig, TrainingData


class StageError(RuntimeError):
    """A pipeline stage failed; carries the stage name and seed for diagnostics."""

    def __init__(self, stage: str, seed: int, cause: BaseException):
        super().__init__(f"stage {stage!r} failed for seed {seed}: {type(cause).__name__}: {cause}")
        self.stage = stage
        self.seed = seed


@dataclass
class Dataset:
    interactions: InteractionMatrix
    user_features: FeatureMatrix | None
    item_features: FeatureMatrix | None
    validation: EvalCandidateSet
    test_sets: list[EvalCandidateSet]

    def training_data(self) -> TrainingData:
        return TrainingData(self.interactions, self.validation)


def _categorize(F: FeatureMatrix | None, columns: list[tuple[int, float, int]]) -> FeatureMatrix | None:
    if F is None:
        return None
    # right to left so earlier column indices stay valid
    for col, width, count in sorted(columns, reverse=True):
        F = F.categorize(col, width, count)
    return F


def prepare_dataset(
    R: InteractionMatrix,
    user_features: FeatureMatrix | None,
    item_features: FeatureMatrix | None,
    cfg: ExperimentConfig,
) -> Dataset:
    """Split, categorize real feature columns and draw the evaluation candidate sets."""
    R = leave_one_out_split(R, RngStream(cfg.data_seed).child("split"))
    return Dataset(
        R,
        _categorize(user_features, cfg.real_columns("user")),
        _categorize(item_features, cfg.real_columns("item")),
        build_validation_set(R, cfg.n_eval, cfg.data_seed),
        build_eval_sets(R, cfg.n_eval_sets, cfg.n_eval, base_seed=cfg.data_seed),
    )


def load_dataset(cfg: ExperimentConfig) -> Dataset:
    R = load_interactions(cfg.interactions)
    uF = load_features(cfg.user_features, R.user_index, R.n_users) if cfg.user_features else None
    iF = load_features(cfg.item_features, R.item_index, R.n_items) if cfg.item_features else None
    return prepare_dataset(R, uF, iF, cfg)


def train_config(cfg: ExperimentConfig, stage: str) -> TrainConfig:
    lr = cfg.lr if stage == "pretrain" else cfg.ft_lr
    return TrainConfig(lr=lr, batch_size=cfg.batch_size, negatives=cfg.negatives, max_epochs=cfg.max_epochs, patience=cfg.patience)


@dataclass
class PretrainOutcome:
    embeddings: EmbeddingSet
    fit: FitResult
    wall_time: float
    dropped_columns: dict[str, list[int]] = field(default_factory=dict)
    n_relations: dict[str, int] = field(default_factory=dict)
    graphs: dict = field(default_factory=dict, repr=False)

    def stage_info(self) -> dict:
        return {
            "wall_time_s": self.wall_time,
            "model": self.embeddings.model,
            "best_epoch": self.fit.best_epoch,
            "epochs_run": self.fit.epochs_run,
            "best_validation_ndcg@10": self.fit.best_validation,
            "validation_curve": self.fit.curve,
            "dropped_feature_columns": self.dropped_columns,
            "n_relations": self.n_relations,
        }


def run_pretrain(cfg: ExperimentConfig, ds: Dataset, seed: int) -> PretrainOutcome | None:
    if cfg.pretrainer == "none":
        return None
    start = time.perf_counter()
    rng = RngStream(seed).child("pretrain")
    R = ds.interactions
    dropped, n_rel, graphs = {}, {}, {}
    if cfg.pretrainer == "gmf":
        model = Gmf(R.n_users, R.n_items, cfg.dim, rng.child("init"), reg=cfg.reg)
    else:
        feats = {}
        for side, F in (("user", ds.user_features), ("item", ds.item_features)):
            F, cols = drop_features(F, cfg.feature_dropout, rng.child("feature-dropout", side))
            feats[side] = F
            dropped[side] = [int(c) for c in cols]
        if cfg.pretrainer == "gcn-p":
            graphs = {s: build_single_rel_graph(F, cfg.similarity_threshold) for s, F in feats.items()}
            model = GcnP(graphs["user"], graphs["item"], cfg.dim, cfg.layers, rng.child("init"), cfg.dropout, cfg.reg)
        else:
            graphs = {s: build_multi_rel_graph(F, cfg.relation_cap, rng.child("cap", s)) for s, F in feats.items()}
            n_rel = {s: g.n_relations for s, g in graphs.items()}
            model = ComP(
                graphs["user"], graphs["item"], cfg.dim, cfg.layers, rng.child("init"), cfg.bases, cfg.dropout, cfg.reg
            )
    emb, fit_result = pretrain(model, ds.training_data(), train_config(cfg, "pretrain"), rng.child("train"), seed, cfg.hash())
    return PretrainOutcome(emb, fit_result, time.perf_counter() - start, dropped, n_rel, graphs)


@dataclass
class FinetuneOutcome:
    embeddings: EmbeddingSet
    report: FinetuneReport
    fit: FitResult
    wall_time: float

    def stage_info(self) -> dict:
        return {
            "wall_time_s": self.wall_time,
            "model": self.report.model,
            "best_epoch": self.fit.best_epoch,
            "epochs_run": self.fit.epochs_run,
            "best_validation_ndcg@10": self.fit.best_validation,
            "validation_curve": self.fit.curve,
        }


def run_finetune(cfg: ExperimentConfig, ds: Dataset, seed: int, emb: EmbeddingSet | None = None) -> FinetuneOutcome:
    start = time.perf_counter()
    rng = RngStream(seed).child("finetune")
    model = build_finetuner(cfg.finetuner, ds.interactions, cfg.dim, rng.child("init"), reg=cfg.ft_reg, layers=cfg.layers)
    if emb is not None:
        init_from_pretrained(model, emb)
    emb_out, report, fit_result = finetune(
        model, ds.training_data(), train_config(cfg, "finetune"), rng.child("train"), ds.test_sets, cfg.cutoffs, seed, cfg.hash()
    )
    return FinetuneOutcome(emb_out, report, fit_result, time.perf_counter() - start)


@dataclass
class SeedOutcome:
    seed: int
    pretrain: PretrainOutcome | None
    finetune: FinetuneOutcome

    @property
    def metrics(self) -> dict[str, float]:
        return self.finetune.report.mean

    def ndcg10(self) -> float:
        return self.metrics["ndcg@10"]


def run_seed(cfg: ExperimentConfig, ds: Dataset, seed: int, emb: EmbeddingSet | None = None) -> SeedOutcome:
    """Full pipeline for one seed; a given ``emb`` skips pre-training."""
    torch.set_num_threads(1)
    pre = None
    if emb is None:
        try:
            pre = run_pretrain(cfg, ds, seed)
        except Exception as exc:
            raise StageError("pretrain", seed, exc) from exc
        if pre is not None:
            emb = pre.embeddings
    try:
        fin = run_finetune(cfg, ds, seed, emb)
    except Exception as exc:
        raise StageError("finetune", seed, exc) from exc
    return SeedOutcome(seed, pre, fin)


def evaluate_embeddings(emb: EmbeddingSet, ds: Dataset, cutoffs) -> dict:
    """Dot-product scores of stored embeddings on the test sets."""
    from .evaluate import evaluate

    if emb.U.shape[0] != ds.interactions.n_users or emb.V.shape[0] != ds.interactions.n_items:
        raise ValueError("embedding row counts do not match the dataset")
    ev = evaluate(emb.U @ emb.V.T + emb.user_bias[:, None] + emb.item_bias[None, :], ds.test_sets, cutoffs)
    return {"mean": ev.mean, "per_set": ev.per_set}


def mean_metrics(outcomes: list[SeedOutcome]) -> dict[str, float]:
    keys = outcomes[0].metrics.keys()
    return {k: float(np.mean([o.metrics[k] for o in outcomes])) for k in keys}


def desk_config(**overrides) -> ExperimentConfig:
    """Desk-scale settings used for the synthetic benchmark."""
    base = dict(
        dim=32,
        layers=2,
        bases=10,
        lr=0.01,
        reg=1e-4,
        dropout=0.3,
        batch_size=1000,
        negatives=4,
        max_epochs=200,
        patience=20,
        n_eval=100,
        n_eval_sets=10,
        cutoffs=[1, 3, 5, 10],
        seeds=list(range(10)),
    )
    base.update(overrides)
    return ExperimentConfig(**base)


def synthetic_dataset(cfg: ExperimentConfig, **generator_kw) -> Dataset:
    from .data import make_cluster_dataset

    syn = make_cluster_dataset(**generator_kw)
    return prepare_dataset(syn.interactions, syn.user_features, syn.item_features, cfg)
