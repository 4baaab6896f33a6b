"""Command-line runner.

Exit codes: 0 success, 1 pipeline failure, 2 invalid configuration, 3 I/O.
"""

from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import replace
from pathlib import Path

import torch

from .config import ConfigError, ExperimentConfig, load_config, parse_seeds
from .data import REAL, DataFormatError, write_index_map
from .experiments import StabilityReport, ablation_sweep, dimension_sweep, run_seeds
from .graphs import MultiRelGraph, write_relation_catalogue
from .io import EmbeddingFormatError, emit_report, load_embeddings, save_embeddings
from .pipeline import Dataset, StageError, evaluate_embeddings, load_dataset, run_pretrain

log = logging.getLogger("graphrec_pretrain")

EXIT_OK, EXIT_PIPELINE, EXIT_CONFIG, EXIT_IO = 0, 1, 2, 3


class PipelineFailure(RuntimeError):
    pass


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="graphrec", description="Feature-graph pre-training for recommenders.")
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name: str, help_text: str) -> argparse.ArgumentParser:
        p = sub.add_parser(name, help=help_text)
        p.add_argument("config", help="key = value config file")
        p.add_argument("--out", default="runs/latest", help="output directory")
        p.add_argument("--workers", type=int, help="parallel seed jobs")
        p.add_argument("--seed", type=int, help="run a single seed")
        p.add_argument("-v", "--verbose", action="store_true")
        return p

    add("run", "pre-train, fine-tune and evaluate")
    add("pretrain", "pre-train and persist embeddings")
    add("finetune", "fine-tune from persisted embeddings").add_argument("--embeddings", required=True)
    add("evaluate", "evaluate persisted embeddings by dot product").add_argument("--embeddings", required=True)
    add("stability", "multi-seed stability run").add_argument("--seeds", help="a..b or a,b,c")
    add("ablate", "feature-dropout ablation sweep")
    return parser


def _apply_overrides(cfg: ExperimentConfig, args) -> ExperimentConfig:
    if args.workers is not None:
        cfg = replace(cfg, workers=args.workers)
    if args.seed is not None:
        cfg = replace(cfg, seeds=[args.seed])
    if getattr(args, "seeds", None):
        try:
            cfg = replace(cfg, seeds=parse_seeds(args.seeds))
        except ValueError as exc:
            raise ConfigError("seeds", str(exc)) from None
    return cfg.validate()


def _check_features(cfg: ExperimentConfig, ds: Dataset) -> None:
    if cfg.pretrainer != "com-p":
        return
    for side, F in (("user", ds.user_features), ("item", ds.item_features)):
        real = [j for j, kind in enumerate(F.kinds) if kind == REAL]
        if real:
            raise ConfigError(f"{side}_real_columns", f"columns {real} are real-valued; declare column:bin_width:bin_count")


def _prepare_out(out: Path) -> None:
    out.mkdir(parents=True, exist_ok=True)
    probe = out / ".write-probe"
    probe.write_text("")
    probe.unlink()


def _empty_report(cfg: ExperimentConfig) -> dict:
    return {
        "config": cfg.to_dict(),
        "config_hash": cfg.hash(),
        "stages": {},
        "metrics": {},
        "stability": None,
        "ablation": None,
        "artifacts": {},
    }


def _write_index_maps(ds: Dataset, out: Path, report: dict) -> None:
    R = ds.interactions
    for side, ids in (("user", R.user_ids), ("item", R.item_ids)):
        if ids:
            write_index_map(out / f"{side}_index.tsv", ids)
            report["artifacts"][f"{side}_index"] = f"{side}_index.tsv"


def _write_catalogues(pre, seed: int, out: Path, report: dict) -> None:
    """Relation catalogues of the graphs a multi-relational pre-trainer actually used."""
    for side, g in pre.graphs.items():
        if isinstance(g, MultiRelGraph):
            path = Path("graphs") / f"seed_{seed}" / f"{side}_relations.tsv"
            (out / path).parent.mkdir(parents=True, exist_ok=True)
            write_relation_catalogue(out / path, g)
            report["artifacts"][f"{side}_relations_seed_{seed}"] = str(path)


def _seed_block(cfg, ds, seeds, out, report, emb=None) -> dict:
    """Run seeds, persist embeddings, fill stages/metrics; returns outcomes."""
    ok, failed = run_seeds(cfg, ds, seeds, cfg.workers, emb)
    if not ok:
        raise PipelineFailure("; ".join(failed.values()))
    if len(seeds) == 1 and failed:
        raise PipelineFailure(next(iter(failed.values())))
    for seed, o in sorted(ok.items()):
        stage = {"finetune": o.finetune.stage_info()}
        base = Path("embeddings") / f"seed_{seed}"
        if o.pretrain is not None:
            stage["pretrain"] = o.pretrain.stage_info()
            _write_catalogues(o.pretrain, seed, out, report)
            save_embeddings(o.pretrain.embeddings, out / base / "pretrained")
            report["artifacts"][f"pretrained_seed_{seed}"] = str(base / "pretrained")
        save_embeddings(o.finetune.embeddings, out / base / "finetuned")
        report["artifacts"][f"finetuned_seed_{seed}"] = str(base / "finetuned")
        report["stages"][f"seed_{seed}"] = stage
    per_seed = {str(s): o.metrics for s, o in sorted(ok.items())}
    keys = next(iter(per_seed.values())).keys()
    report["metrics"] = {
        "mean": {k: float(sum(m[k] for m in per_seed.values()) / len(per_seed)) for k in keys},
        "per_seed": per_seed,
        "per_set": {str(s): o.finetune.report.per_set for s, o in sorted(ok.items())},
    }
    if len(seeds) > 1:
        report["stability"] = StabilityReport.from_values({s: o.ndcg10() for s, o in sorted(ok.items())}, failed).to_dict()
    return ok


def _cmd_run(cfg, ds, args, out, report):
    _seed_block(cfg, ds, cfg.seeds, out, report)
    if cfg.sweep_dimensions:
        report["metrics"]["sweep_dimension"] = dimension_sweep(cfg, ds, cfg.sweep_dimensions, workers=cfg.workers)


def _cmd_pretrain(cfg, ds, args, out, report):
    if cfg.pretrainer == "none":
        raise ConfigError("pretrainer", "the pretrain command needs a pre-trainer")
    per_seed = {}
    for seed in cfg.seeds:
        try:
            pre = run_pretrain(cfg, ds, seed)
        except Exception as exc:
            raise PipelineFailure(str(StageError("pretrain", seed, exc))) from exc
        path = Path("embeddings") / f"seed_{seed}" / "pretrained"
        save_embeddings(pre.embeddings, out / path)
        report["artifacts"][f"pretrained_seed_{seed}"] = str(path)
        report["stages"][f"seed_{seed}"] = {"pretrain": pre.stage_info()}
        _write_catalogues(pre, seed, out, report)
        per_seed[str(seed)] = evaluate_embeddings(pre.embeddings, ds, cfg.cutoffs)["mean"]
    keys = next(iter(per_seed.values())).keys()
    report["metrics"] = {
        "mean": {k: float(sum(m[k] for m in per_seed.values()) / len(per_seed)) for k in keys},
        "per_seed": per_seed,
    }


def _cmd_finetune(cfg, ds, args, out, report):
    emb = load_embeddings(args.embeddings)
    _seed_block(cfg, ds, cfg.seeds, out, report, emb=emb)
    report["stages"]["embeddings_source"] = {"model": emb.model, "seed": emb.seed, "dim": emb.dim}


def _cmd_evaluate(cfg, ds, args, out, report):
    emb = load_embeddings(args.embeddings)
    try:
        report["metrics"] = evaluate_embeddings(emb, ds, cfg.cutoffs)
    except ValueError as exc:
        raise PipelineFailure(f"stage 'evaluate' failed: {exc}") from exc
    report["stages"]["evaluate"] = {"model": emb.model, "seed": emb.seed, "dim": emb.dim}


def _cmd_stability(cfg, ds, args, out, report):
    if len(cfg.seeds) < 2:
        raise ConfigError("seeds", "stability needs at least two seeds")
    _seed_block(cfg, ds, cfg.seeds, out, report)


def _cmd_ablate(cfg, ds, args, out, report):
    if cfg.pretrainer not in ("gcn-p", "com-p"):
        raise ConfigError("pretrainer", "ablation needs gcn-p or com-p")

    def on_arm(ratio, outcomes):
        report["stages"][f"ratio_{ratio}"] = {
            "wall_time_s": sum(o.pretrain.wall_time + o.finetune.wall_time for o in outcomes.values()),
            "n_seeds": len(outcomes),
        }

    report["ablation"] = ablation_sweep(cfg, ds, workers=cfg.workers, on_arm=on_arm)
    if not any(arm["per_seed"] for arm in report["ablation"]["arms"]):
        raise PipelineFailure("every ablation run failed")
    report["metrics"] = {
        "mean": {"ndcg@10": report["ablation"]["arms"][0]["mean"]},
        "per_ratio": {str(a["ratio"]): a["mean"] for a in report["ablation"]["arms"]},
    }


COMMANDS = {
    "run": _cmd_run,
    "pretrain": _cmd_pretrain,
    "finetune": _cmd_finetune,
    "evaluate": _cmd_evaluate,
    "stability": _cmd_stability,
    "ablate": _cmd_ablate,
}


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO, format="%(levelname)s %(message)s")
    torch.set_num_threads(1)
    out = Path(args.out)
    try:
        cfg = _apply_overrides(load_config(args.config), args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"io error: {exc}", file=sys.stderr)
        return EXIT_IO
    try:
        _prepare_out(out)
        ds = load_dataset(cfg)
        _check_features(cfg, ds)
        report = _empty_report(cfg)
        _write_index_maps(ds, out, report)
        COMMANDS[args.command](cfg, ds, args, out, report)
        artifacts = emit_report(report, out)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (OSError, DataFormatError, EmbeddingFormatError) as exc:
        print(f"io error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (PipelineFailure, StageError) as exc:
        print(f"pipeline error: {exc}", file=sys.stderr)
        return EXIT_PIPELINE
    except Exception as exc:  # anything else is a pipeline bug, still a total exit-code contract
        log.debug("unexpected failure", exc_info=True)
        print(f"pipeline error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_PIPELINE
    log.info("wrote %s", out / artifacts["report"])
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
