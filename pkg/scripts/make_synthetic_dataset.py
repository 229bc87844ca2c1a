"""Write a seeded paraphrase-world dataset as JSON lines for the CLI.

    python scripts/make_synthetic_dataset.py data/synthetic.jsonl --records 200 --seed 0
"""

from __future__ import annotations

import argparse
from pathlib import Path

from semuq.dataset import write_dataset
from semuq.synthetic import paraphrase_world


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("out", type=Path)
    ap.add_argument("--records", type=int, default=200)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    args.out.parent.mkdir(parents=True, exist_ok=True)
    write_dataset(paraphrase_world(args.records, seed=args.seed).records, args.out)
    print(f"wrote {args.records} records to {args.out}")


if __name__ == "__main__":
    main()
