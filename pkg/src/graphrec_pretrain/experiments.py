"""Multi-seed drivers: stability, feature-dropout ablation and dimension sweep."""

from __future__ import annotations

import logging
import multiprocessing
import traceback
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np

from .config import ExperimentConfig
from .pipeline import Dataset, SeedOutcome, run_seed

log = logging.getLogger(__name__)


@dataclass
class StabilityReport:
    """Population standard deviation of a metric across seeds."""

    seeds: list[int]
    per_seed: dict[int, float]
    mean: float
    std: float
    failed: dict[int, str] = field(default_factory=dict)
    metric: str = "ndcg@10"

    @classmethod
    def from_values(cls, per_seed: dict[int, float], failed: dict[int, str] | None = None, metric: str = "ndcg@10"):
        vals = np.array(list(per_seed.values()), dtype=np.float64)
        mean = float(vals.mean()) if len(vals) else float("nan")
        std = float(vals.std()) if len(vals) else float("nan")
        seeds = sorted(list(per_seed) + list(failed or {}))
        return cls(seeds, dict(per_seed), mean, std, dict(failed or {}), metric)

    def to_dict(self) -> dict:
        return {
            "metric": self.metric,
            "seeds": self.seeds,
            "per_seed": {str(k): v for k, v in self.per_seed.items()},
            "mean": self.mean,
            "std": self.std,
            "n_failed": len(self.failed),
            "failed": {str(k): v for k, v in self.failed.items()},
        }


def _job(args) -> tuple[int, SeedOutcome | None, str | None]:
    cfg, ds, seed, emb = args
    try:
        return seed, run_seed(cfg, ds, seed, emb), None
    except Exception as exc:  # one failing seed must not sink the batch
        log.debug("seed %d:\n%s", seed, traceback.format_exc())
        return seed, None, str(exc)


def run_seeds(cfg: ExperimentConfig, ds: Dataset, seeds: Sequence[int], workers: int = 1, emb=None):
    """``{seed: SeedOutcome}`` and ``{seed: error}``; results independent of ``workers``."""
    jobs = [(cfg, ds, s, emb) for s in seeds]
    if workers <= 1 or len(jobs) <= 1:
        results = [_job(j) for j in jobs]
    else:
        with ProcessPoolExecutor(workers, mp_context=multiprocessing.get_context("spawn")) as pool:
            results = list(pool.map(_job, jobs))
    ok = {s: o for s, o, e in results if e is None}
    failed = {s: e for s, o, e in results if e is not None}
    for s, e in failed.items():
        log.warning("seed %d failed: %s", s, e)
    return ok, failed


def stability_run(
    cfg: ExperimentConfig, ds: Dataset, seeds: Sequence[int], workers: int = 1, metric: str = "ndcg@10"
) -> tuple[StabilityReport, dict[int, SeedOutcome]]:
    if len(seeds) < 2:
        raise ValueError("stability needs at least two seeds")
    ok, failed = run_seeds(cfg, ds, seeds, workers)
    values = {s: o.metrics[metric] for s, o in sorted(ok.items())}
    return StabilityReport.from_values(values, failed, metric), ok


def ablation_sweep(
    cfg: ExperimentConfig,
    ds: Dataset,
    ratios: Sequence[float] | None = None,
    seeds: Sequence[int] | None = None,
    workers: int = 1,
    on_arm: Callable[[float, dict[int, SeedOutcome]], None] | None = None,
) -> dict:
    """Mean NDCG@10 per feature-dropout ratio, features rebuilt into graphs for each arm."""
    if cfg.pretrainer not in ("gcn-p", "com-p"):
        raise ValueError("ablation needs a feature-graph pre-trainer (gcn-p or com-p)")
    ratios = list(cfg.ablation_ratios if ratios is None else ratios)
    seeds = list(cfg.seeds if seeds is None else seeds)
    arms = []
    for ratio in ratios:
        ok, failed = run_seeds(replace(cfg, feature_dropout=ratio), ds, seeds, workers)
        if on_arm:
            on_arm(ratio, ok)
        rep = StabilityReport.from_values({s: o.ndcg10() for s, o in sorted(ok.items())}, failed)
        arms.append({"ratio": ratio, "mean": rep.mean, "std": rep.std, "per_seed": rep.to_dict()["per_seed"], "n_failed": len(failed)})
    return {"pretrainer": cfg.pretrainer, "finetuner": cfg.finetuner, "arms": arms}


def dimension_sweep(cfg: ExperimentConfig, ds: Dataset, dims: Sequence[int], seeds: Sequence[int] | None = None, workers: int = 1) -> list[dict]:
    """NDCG@10 against embedding size for the random-init arm and the configured pre-trainer."""
    seeds = list(cfg.seeds if seeds is None else seeds)
    arms = ["none"] if cfg.pretrainer == "none" else ["none", cfg.pretrainer]
    rows = []
    for arm in arms:
        for d in dims:
            ok, _ = run_seeds(replace(cfg, pretrainer=arm, dim=int(d)), ds, seeds, workers)
            value = float(np.mean([o.ndcg10() for o in ok.values()])) if ok else float("nan")
            rows.append({"arm": f"{cfg.finetuner}+{arm}", "dim": int(d), "ndcg@10": value})
    return rows


def compare_arms(
    cfg: ExperimentConfig,
    ds: Dataset,
    arms: Sequence[tuple[str, str]],
    seeds: Sequence[int],
    feature_dropout: float | None = None,
    cache: dict | None = None,
) -> dict[tuple[str, str], dict[int, float]]:
    """NDCG@10 per ``(pretrainer, finetuner)`` arm and seed.

    Pre-training depends only on the pre-trainer and seed, so one embedding
    set per (pretrainer, seed) is shared by every fine-tuner arm. Pass the
    same ``cache`` dict to later calls (same config) to keep sharing it.
    """
    from .pipeline import run_finetune, run_pretrain

    if feature_dropout is not None:
        cfg = replace(cfg, feature_dropout=feature_dropout)
    cache = {} if cache is None else cache
    out: dict[tuple[str, str], dict[int, float]] = {}
    for pre, fin in arms:
        out[(pre, fin)] = {}
        for seed in seeds:
            if pre != "none" and (pre, seed) not in cache:
                cache[(pre, seed)] = run_pretrain(replace(cfg, pretrainer=pre), ds, seed).embeddings
            emb = cache.get((pre, seed))
            res = run_finetune(replace(cfg, pretrainer=pre, finetuner=fin), ds, seed, emb)
            out[(pre, fin)][seed] = res.report.mean["ndcg@10"]
            log.info("%s+%s seed %d: ndcg@10=%.4f", fin, pre, seed, out[(pre, fin)][seed])
    return out
