"""Mini-batch Adam training with validation early stopping, shared by both stages."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import torch

from .data import EvalCandidateSet, InteractionMatrix, NegativeSampler, TrainBatch, iterate_batches
from .evaluate import validation_ndcg
from .numeric import Adam, NumericError, RngStream

log = logging.getLogger(__name__)


class Recommender:
    """Base for every trainable model in the package.

    Subclasses set ``self.params`` (name -> tensor) and implement ``loss`` and
    ``score_matrix``.
    """

    name = "base"
    params: dict[str, torch.Tensor]

    def parameters(self) -> list[torch.Tensor]:
        return list(self.params.values())

    def loss(self, batch: TrainBatch, rng: RngStream | None, training: bool = True) -> torch.Tensor:
        raise NotImplementedError

    def score_matrix(self) -> np.ndarray:
        raise NotImplementedError

    def snapshot(self) -> dict[str, torch.Tensor]:
        return {k: v.detach().clone() for k, v in self.params.items()}

    def restore(self, state: dict[str, torch.Tensor]) -> None:
        with torch.no_grad():
            for k, v in state.items():
                self.params[k].copy_(v)


@dataclass
class TrainConfig:
    lr: float = 1e-3
    batch_size: int = 1000
    negatives: int = 4
    max_epochs: int = 500
    patience: int = 20
    validate_k: int = 10


@dataclass
class TrainingData:
    interactions: InteractionMatrix
    validation: EvalCandidateSet
    sampler: NegativeSampler | None = None

    def __post_init__(self):
        if self.sampler is None:
            self.sampler = NegativeSampler(self.interactions)


@dataclass
class FitResult:
    best_epoch: int
    best_validation: float
    epochs_run: int
    curve: list[float] = field(default_factory=list)
    losses: list[float] = field(default_factory=list)


def fit(
    model: Recommender,
    data: TrainingData,
    cfg: TrainConfig,
    rng: RngStream,
    validate: Callable[[Recommender], float] | None = None,
) -> FitResult:
    """Train until ``max_epochs`` or ``patience`` epochs without a strict validation gain.

    The parameters of the best validation epoch are restored before returning.
    """
    validate = validate or (lambda m: validation_ndcg(m.score_matrix(), data.validation, cfg.validate_k))
    opt = Adam(model.parameters(), lr=cfg.lr)
    best, best_epoch, best_state = -np.inf, 0, model.snapshot()
    curve, losses = [], []
    epoch = 0
    for epoch in range(1, cfg.max_epochs + 1):
        erng = rng.child("epoch", epoch)
        total = 0.0
        for b, batch in enumerate(iterate_batches(data.interactions, cfg.batch_size, cfg.negatives, erng, data.sampler)):
            opt.zero_grad()
            loss = model.loss(batch, erng.child("dropout", b), training=True)
            if not torch.isfinite(loss):
                raise NumericError(f"{model.name}: non-finite loss at epoch {epoch}, batch {b}")
            loss.backward()
            for name, p in model.params.items():
                if p.grad is not None and not torch.isfinite(p.grad).all():
                    raise NumericError(f"{model.name}: non-finite gradient for {name} at epoch {epoch}, batch {b}")
            opt.step()
            total += loss.item()
        losses.append(total)
        score = validate(model)
        curve.append(score)
        if score > best:
            best, best_epoch, best_state = score, epoch, model.snapshot()
        elif epoch - best_epoch >= cfg.patience:
            log.debug("%s: early stop at epoch %d (best %d)", model.name, epoch, best_epoch)
            break
    model.restore(best_state)
    return FitResult(best_epoch, float(best), epoch, curve, losses)
