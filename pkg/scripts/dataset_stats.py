"""Behavior detector counts and per-dialog histogram for a dialog file (or a generated test set)."""

import argparse
import json

from handoff_lab.corpus import read_dialogs
from handoff_lab.simulator import MODIFIED, dataset_stats, generate_dataset


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("files", nargs="*", help="bAbI-format dialog files; none = generate")
    ap.add_argument("--n", type=int, default=1000)
    ap.add_argument("--seed", type=int, default=599)
    args = ap.parse_args()
    if args.files:
        for f in args.files:
            print(f, json.dumps(dataset_stats(read_dialogs(f))))
    else:
        ds = generate_dataset(MODIFIED, 1, 1, args.n, args.seed)
        print("generated test", json.dumps(dataset_stats(ds.test)))


if __name__ == "__main__":
    main()
