"""Write a clustered synthetic dataset in the on-disk formats the CLI reads."""

import argparse
from pathlib import Path

from graphrec_pretrain.data import make_cluster_dataset, write_features, write_interactions


def main() -> None:
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("out", type=Path)
    p.add_argument("--users", type=int, default=200)
    p.add_argument("--items", type=int, default=200)
    p.add_argument("--clusters", type=int, default=10)
    p.add_argument("--noise-columns", type=int, default=5)
    p.add_argument("--p-within", type=float, default=0.3)
    p.add_argument("--p-cross", type=float, default=0.02)
    p.add_argument("--seed", type=int, default=0)
    a = p.parse_args()
    ds = make_cluster_dataset(a.users, a.items, a.clusters, a.noise_columns, a.p_within, a.p_cross, seed=a.seed)
    a.out.mkdir(parents=True, exist_ok=True)
    write_interactions(a.out / "interactions.tsv", ds.interactions)
    write_features(a.out / "user_features.txt", ds.user_features, ds.interactions.user_ids)
    write_features(a.out / "item_features.txt", ds.item_features, ds.interactions.item_ids)
    print(f"{len(ds.interactions.users)} interactions -> {a.out}")


if __name__ == "__main__":
    main()
