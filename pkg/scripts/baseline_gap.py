"""Test accuracy on ORIGINAL-policy dialogs for models trained on MODIFIED vs ORIGINAL corpora."""

import argparse

from handoff_lab import corpus
from handoff_lab.memn2n import Encoder, Hyperparams, MemN2N, evaluate, train
from handoff_lab.simulator import MODIFIED, ORIGINAL, generate_dataset


def fit(policy, args):
    ds = generate_dataset(policy, args.train, args.dev, args.test, args.seed)
    vocab = corpus.build_vocabulary(ds.train, ds.dev, ds.candidates)
    hyper = Hyperparams(max_epochs=args.epochs)
    enc = Encoder(vocab, ds.candidates, hyper.memory_cap)
    tr, dv, te = (enc.encode(corpus.build_all_instances(x, ds.candidates)) for x in (ds.train, ds.dev, ds.test))
    model = MemN2N.from_encoder(hyper, enc)
    res = train(model, tr, dv, seed=args.seed)
    return evaluate(model, te, res.best_params)


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--train", type=int, default=500)
    ap.add_argument("--dev", type=int, default=100)
    ap.add_argument("--test", type=int, default=1000)
    ap.add_argument("--epochs", type=int, default=40)
    ap.add_argument("--seed", type=int, default=599)
    args = ap.parse_args()
    rows = {name: fit(pol, args) for name, pol in (("modified", MODIFIED), ("original", ORIGINAL))}
    for name, ev in rows.items():
        print(f"trained on {name:<9} per-turn {100 * ev['per_turn']:6.2f}  per-dialog {100 * ev['per_dialog']:6.2f}")
    print(f"gap {100 * (rows['original']['per_turn'] - rows['modified']['per_turn']):.2f} points")


if __name__ == "__main__":
    main()
