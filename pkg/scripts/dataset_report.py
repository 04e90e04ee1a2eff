"""Per-domain claim counts of a dataset file and an optional seeded split.

    python3 scripts/dataset_report.py data.jsonl --split-dir splits --seed 0
"""

from __future__ import annotations

import argparse
from pathlib import Path

from atomchain.dataset import DOMAINS, dataset_statistics, load_dataset, save_dataset, split_dataset


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("dataset")
    ap.add_argument("--split-dir", help="write train/val/test JSONL files here")
    ap.add_argument("--train", type=int, default=350)
    ap.add_argument("--val", type=int, default=50)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    entries = load_dataset(args.dataset)
    stats = dataset_statistics(entries)
    domains = [d for d in DOMAINS if d in stats]
    print("\t" + "\t".join(domains))
    for key, name in (("neg", "Neg."), ("pos", "Pos."), ("sum", "Sum")):
        print(name + "\t" + "\t".join(str(stats[d][key]) for d in domains))

    if args.split_dir:
        out = Path(args.split_dir)
        out.mkdir(parents=True, exist_ok=True)
        parts = split_dataset(entries, args.train, args.val, args.seed)
        for name, part in zip(("train", "val", "test"), parts):
            save_dataset(part, out / f"{name}.jsonl")
            print(f"{name}: {len(part)} entries -> {out / (name + '.jsonl')}")


if __name__ == "__main__":
    main()
