"""Flat ``key = value`` experiment configuration."""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

PRETRAINERS = ("none", "gcn-p", "com-p", "gmf")
FINETUNERS = ("mf-bce", "mf-bpr", "ncf", "lightgcn")

# excluded from the config hash: locations and parallelism, not what is computed
_UNHASHED = ("workers", "interactions", "user_features", "item_features")


class ConfigError(ValueError):
    def __init__(self, key: str, message: str):
        super().__init__(f"{key}: {message}")
        self.key = key


@dataclass
class ExperimentConfig:
    interactions: str = ""
    user_features: str = ""
    item_features: str = ""
    # "column:bin_width:bin_count" entries separated by ";"
    user_real_columns: str = ""
    item_real_columns: str = ""
    pretrainer: str = "none"
    finetuner: str = "mf-bce"
    dim: int = 64
    layers: int = 3
    bases: int = 10
    lr: float = 1e-3
    reg: float = 1e-4
    finetune_lr: float | None = None
    finetune_reg: float | None = None
    dropout: float = 0.3
    batch_size: int = 1000
    negatives: int = 4
    max_epochs: int = 500
    patience: int = 20
    n_eval: int = 100
    n_eval_sets: int = 10
    cutoffs: list[int] = field(default_factory=lambda: [1, 3, 5, 10])
    seeds: list[int] = field(default_factory=lambda: [0])
    data_seed: int = 0
    feature_dropout: float = 0.0
    similarity_threshold: float = 0.0
    relation_cap: int | None = None
    ablation_ratios: list[float] = field(default_factory=lambda: [0.0, 0.2, 0.4, 0.6, 0.8])
    sweep_dimensions: list[int] = field(default_factory=list)
    workers: int = 1

    @property
    def ft_lr(self) -> float:
        return self.lr if self.finetune_lr is None else self.finetune_lr

    @property
    def ft_reg(self) -> float:
        return self.reg if self.finetune_reg is None else self.finetune_reg

    def to_dict(self) -> dict:
        return asdict(self)

    def hash(self) -> str:
        payload = {k: v for k, v in sorted(self.to_dict().items()) if k not in _UNHASHED}
        text = json.dumps(payload, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(text.encode("utf-8")).hexdigest()[:16]

    def real_columns(self, side: str) -> list[tuple[int, float, int]]:
        text = self.user_real_columns if side == "user" else self.item_real_columns
        return _parse_real_columns(f"{side}_real_columns", text)

    def validate(self) -> "ExperimentConfig":
        _check(self.pretrainer in PRETRAINERS, "pretrainer", f"must be one of {PRETRAINERS}")
        _check(self.finetuner in FINETUNERS, "finetuner", f"must be one of {FINETUNERS}")
        _check(self.dim >= 1, "dim", "must be >= 1")
        _check(1 <= self.layers <= 3, "layers", "must be in [1, 3]")
        _check(self.bases >= 1, "bases", "must be >= 1")
        for key in ("lr", "finetune_lr"):
            v = getattr(self, key)
            _check(v is None or 0 < v <= 1, key, "must be in (0, 1]")
        for key in ("reg", "finetune_reg"):
            v = getattr(self, key)
            _check(v is None or v >= 0, key, "must be >= 0")
        _check(0 <= self.dropout < 1, "dropout", "must be in [0, 1)")
        _check(self.batch_size >= 2, "batch_size", "must be >= 2")
        _check(self.negatives >= 1, "negatives", "must be >= 1")
        _check(self.max_epochs >= 0, "max_epochs", "must be >= 0")
        _check(self.patience >= 1, "patience", "must be >= 1")
        _check(self.n_eval >= 1, "n_eval", "must be >= 1")
        _check(self.n_eval_sets >= 1, "n_eval_sets", "must be >= 1")
        _check(len(self.cutoffs) > 0 and all(k >= 1 for k in self.cutoffs), "cutoffs", "need positive cut-offs")
        _check(10 in self.cutoffs, "cutoffs", "must include 10 (validation metric)")
        _check(len(self.seeds) > 0, "seeds", "need at least one seed")
        _check(0 <= self.feature_dropout < 1, "feature_dropout", "must be in [0, 1)")
        _check(all(0 <= r < 1 for r in self.ablation_ratios), "ablation_ratios", "must be in [0, 1)")
        _check(all(d >= 1 for d in self.sweep_dimensions), "sweep_dimensions", "must be >= 1")
        _check(self.similarity_threshold >= 0, "similarity_threshold", "must be >= 0")
        _check(self.relation_cap is None or self.relation_cap >= 1, "relation_cap", "must be >= 1")
        _check(self.workers >= 1, "workers", "must be >= 1")
        _check(bool(self.interactions), "interactions", "path required")
        if self.pretrainer in ("gcn-p", "com-p"):
            _check(bool(self.user_features), "user_features", f"required by {self.pretrainer}")
            _check(bool(self.item_features), "item_features", f"required by {self.pretrainer}")
        self.real_columns("user")
        self.real_columns("item")
        return self


def _check(ok: bool, key: str, message: str) -> None:
    if not ok:
        raise ConfigError(key, message)


def _parse_real_columns(key: str, text: str) -> list[tuple[int, float, int]]:
    out = []
    for part in filter(None, (p.strip() for p in text.split(";"))):
        try:
            col, width, count = part.split(":")
            out.append((int(col), float(width), int(count)))
        except ValueError:
            raise ConfigError(key, f"bad entry {part!r}; expected column:bin_width:bin_count") from None
        _check(out[-1][1] > 0 and out[-1][2] >= 1, key, "bin_width must be > 0 and bin_count >= 1")
    return out


def parse_seeds(text: str) -> list[int]:
    """``"0..9"`` (inclusive range) or ``"1,5,7"``."""
    text = text.strip()
    if ".." in text:
        a, b = text.split("..")
        lo, hi = int(a), int(b)
        if hi < lo:
            raise ValueError(f"empty seed range {text!r}")
        return list(range(lo, hi + 1))
    return [int(s) for s in text.split(",") if s.strip()]


def _convert(key: str, raw: str, annotation: str):
    raw = raw.strip()
    try:
        if annotation == "int":
            return int(raw)
        if annotation == "float":
            return float(raw)
        if annotation in ("float | None", "int | None"):
            if raw.lower() in ("", "none"):
                return None
            return float(raw) if annotation.startswith("float") else int(raw)
        if annotation == "list[int]":
            return parse_seeds(raw) if key == "seeds" else [int(s) for s in raw.split(",") if s.strip()]
        if annotation == "list[float]":
            return [float(s) for s in raw.split(",") if s.strip()]
        return raw
    except ValueError:
        raise ConfigError(key, f"cannot parse {raw!r} as {annotation}") from None


FIELD_TYPES = {f.name: f.type for f in fields(ExperimentConfig)}


def parse_config(text: str, base_dir: str | Path | None = None) -> ExperimentConfig:
    """Parse and validate; relative dataset paths resolve against ``base_dir``."""
    values = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, raw = line.partition("=")
        key = key.strip()
        if not sep:
            raise ConfigError(key or f"line {lineno}", "expected 'key = value'")
        if key not in FIELD_TYPES:
            raise ConfigError(key, "unknown key")
        if key in values:
            raise ConfigError(key, "duplicate key")
        values[key] = _convert(key, raw, FIELD_TYPES[key])
    cfg = ExperimentConfig(**values)
    if base_dir is not None:
        for key in ("interactions", "user_features", "item_features"):
            p = getattr(cfg, key)
            if p and not Path(p).is_absolute():
                setattr(cfg, key, str((Path(base_dir) / p).resolve()))
    return cfg.validate()


def load_config(path: str | Path) -> ExperimentConfig:
    path = Path(path)
    return parse_config(path.read_text(encoding="utf-8"), path.parent)


def dump_config(cfg: ExperimentConfig) -> str:
    lines = []
    for key, value in cfg.to_dict().items():
        if isinstance(value, list):
            value = ",".join(str(v) for v in value)
        lines.append(f"{key} = {'none' if value is None else value}")
    return "\n".join(lines) + "\n"
