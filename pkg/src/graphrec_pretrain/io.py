"""Embedding files and run-report emission."""

from __future__ import annotations

import csv
import json
from pathlib import Path

import numpy as np

from .pretrain import EmbeddingSet

USER_FILE = "user_embeddings.tsv"
ITEM_FILE = "item_embeddings.tsv"


class EmbeddingFormatError(ValueError):
    pass


def write_embedding_file(path: str | Path, side: str, matrix: np.ndarray, seed: int, model: str) -> None:
    n, d = matrix.shape
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"#pretrained\tside={side}\tn={n}\td={d}\tseed={seed}\tmodel={model}\n")
        for i, row in enumerate(matrix):
            fh.write(str(i) + "\t" + "\t".join(f"{v:.17g}" for v in row) + "\n")


def read_embedding_file(path: str | Path) -> tuple[dict[str, str], np.ndarray]:
    with open(path, encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    if not lines or not lines[0].startswith("#pretrained"):
        raise EmbeddingFormatError(f"{path}:1: missing '#pretrained' header")
    header = {}
    for tok in lines[0].split("\t")[1:]:
        key, sep, value = tok.partition("=")
        if not sep:
            raise EmbeddingFormatError(f"{path}:1: bad header field {tok!r}")
        header[key] = value
    for key in ("side", "n", "d", "seed", "model"):
        if key not in header:
            raise EmbeddingFormatError(f"{path}:1: header lacks {key}")
    if header["side"] not in ("user", "item"):
        raise EmbeddingFormatError(f"{path}:1: side must be user or item")
    try:
        n, d = int(header["n"]), int(header["d"])
    except ValueError:
        raise EmbeddingFormatError(f"{path}:1: n and d must be integers") from None
    rows = [ln for ln in lines[1:] if ln.strip()]
    if len(rows) != n:
        raise EmbeddingFormatError(f"{path}: header declares n={n} but found {len(rows)} rows")
    out = np.empty((n, d))
    seen = np.zeros(n, dtype=bool)
    for lineno, line in enumerate(lines[1:], 2):
        if not line.strip():
            continue
        parts = line.split("\t")
        if len(parts) != d + 1:
            raise EmbeddingFormatError(f"{path}:{lineno}: expected {d} values, found {len(parts) - 1}")
        try:
            idx = int(parts[0])
            out[idx] = [float(v) for v in parts[1:]]
        except (ValueError, IndexError):
            raise EmbeddingFormatError(f"{path}:{lineno}: malformed row") from None
        if idx < 0 or seen[idx]:
            raise EmbeddingFormatError(f"{path}:{lineno}: bad or repeated index {idx}")
        seen[idx] = True
    return header, out


def save_embeddings(emb: EmbeddingSet, directory: str | Path) -> dict[str, Path]:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    paths = {"user": directory / USER_FILE, "item": directory / ITEM_FILE}
    write_embedding_file(paths["user"], "user", emb.U, emb.seed, emb.model)
    write_embedding_file(paths["item"], "item", emb.V, emb.seed, emb.model)
    return paths


def load_embeddings(directory: str | Path) -> EmbeddingSet:
    """Biases are not persisted; the loaded set carries zero biases."""
    directory = Path(directory)
    hu, U = read_embedding_file(directory / USER_FILE)
    hv, V = read_embedding_file(directory / ITEM_FILE)
    if hu["side"] != "user" or hv["side"] != "item":
        raise EmbeddingFormatError(f"{directory}: side tags do not match file names")
    if U.shape[1] != V.shape[1]:
        raise EmbeddingFormatError(f"{directory}: user d={U.shape[1]} but item d={V.shape[1]}")
    return EmbeddingSet(U, V, model=hu["model"], seed=int(hu["seed"]))


# --------------------------------------------------------------------- reports


def _write_csv(path: Path, header: list[str], rows: list[list]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def _fmt(v):
    return f"{v:.17g}" if isinstance(v, float) else v


def emit_report(report: dict, out_dir: str | Path) -> dict[str, str]:
    """Write ``report.json`` plus plot-data CSVs; returns paths relative to ``out_dir``.

    The artifact map is stored in the report before it is written.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    artifacts = dict(report.get("artifacts") or {})

    metrics = report.get("metrics") or {}
    if metrics.get("mean"):
        rows = []
        for key, value in metrics["mean"].items():
            name, k = key.split("@")
            rows.append([int(k), name, _fmt(value)])
        rows.sort(key=lambda r: (r[1], r[0]))
        _write_csv(out / "metrics_by_cutoff.csv", ["k", "metric", "value"], rows)
        artifacts["metrics_by_cutoff"] = "metrics_by_cutoff.csv"

    per_seed = metrics.get("per_seed") or {}
    stability = report.get("stability")
    if per_seed:
        keys = sorted(next(iter(per_seed.values())).keys())
        rows = [[seed] + [_fmt(vals[k]) for k in keys] for seed, vals in per_seed.items()]
        if stability:
            rows.append(["mean"] + [_fmt(float(np.mean([v[k] for v in per_seed.values()]))) for k in keys])
            rows.append(["std"] + [_fmt(float(np.std([v[k] for v in per_seed.values()]))) for k in keys])
        _write_csv(out / "metrics_by_seed.csv", ["seed"] + keys, rows)
        artifacts["metrics_by_seed"] = "metrics_by_seed.csv"

    ablation = report.get("ablation")
    if ablation:
        rows = []
        for arm in ablation["arms"]:
            rows.append([_fmt(arm["ratio"]), _fmt(arm["mean"]), _fmt(arm["std"]), len(arm["per_seed"])])
        _write_csv(out / "ablation.csv", ["ratio", "ndcg@10_mean", "ndcg@10_std", "n_seeds"], rows)
        artifacts["ablation"] = "ablation.csv"

    sweep = metrics.get("sweep_dimension")
    if sweep:
        rows = [[r["arm"], r["dim"], _fmt(r["ndcg@10"])] for r in sweep]
        _write_csv(out / "sweep_dimension.csv", ["arm", "dim", "ndcg@10"], rows)
        artifacts["sweep_dimension"] = "sweep_dimension.csv"

    artifacts["report"] = "report.json"
    report["artifacts"] = dict(sorted(artifacts.items()))
    with open(out / "report.json", "w", encoding="utf-8") as fh:
        json.dump(report, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return report["artifacts"]
