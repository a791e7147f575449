"""Write the scikit-learn bundled datasets (and a synthetic abalone-like file) as CSVs."""

import argparse
from pathlib import Path

from deepcae.datasets import PUBLIC, export_public, write_abalone_like


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--out", default=str(Path(__file__).resolve().parent.parent / "data"))
    parser.add_argument("--names", nargs="*", default=list(PUBLIC))
    parser.add_argument("--abalone-like", action="store_true", help="also write abalone_like.csv")
    args = parser.parse_args()
    for name, entry in export_public(args.out, args.names).items():
        print(f"{name}: {entry['path']}")
    if args.abalone_like:
        print(f"abalone_like: {write_abalone_like(Path(args.out) / 'abalone_like.csv')}")


if __name__ == "__main__":
    main()
