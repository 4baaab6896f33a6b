"""Graph-neural pre-training of user and item embeddings for recommenders."""

from .config import ExperimentConfig, load_config, parse_config
from .pipeline import Dataset, load_dataset, prepare_dataset, run_finetune, run_pretrain, run_seed
from .pretrain import ComP, EmbeddingSet, GcnP, Gmf

__all__ = [
    "ComP",
    "Dataset",
    "EmbeddingSet",
    "ExperimentConfig",
    "GcnP",
    "Gmf",
    "load_config",
    "load_dataset",
    "parse_config",
    "prepare_dataset",
    "run_finetune",
    "run_pretrain",
    "run_seed",
]
