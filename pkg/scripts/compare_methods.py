"""Train a baseline on MODIFIED-policy dialogs, then deploy every method under both rewards.

Writes one report.json per (mode, reward) and a comparison table to --out.

    python3 scripts/compare_methods.py --out runs/compare --train 500 --test 1000
"""

import argparse
import json
import logging
import time
from pathlib import Path

from handoff_lab import corpus
from handoff_lab.cli import render_table
from handoff_lab.deployment import DeploymentConfig, Mode, run_permutations
from handoff_lab.handoff import RewardSpec
from handoff_lab.memn2n import (Encoder, Hyperparams, MemN2N, evaluate, load_checkpoint,
                                save_checkpoint, train)
from handoff_lab.simulator import MODIFIED, generate_dataset

log = logging.getLogger("compare")


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", default="runs/compare")
    ap.add_argument("--train", type=int, default=500)
    ap.add_argument("--dev", type=int, default=100)
    ap.add_argument("--test", type=int, default=1000)
    ap.add_argument("--epochs", type=int, default=40)
    ap.add_argument("--permutations", type=int, default=5)
    ap.add_argument("--workers", type=int, default=1)
    ap.add_argument("--dev-subsample", type=int, default=300)
    ap.add_argument("--seed", type=int, default=599)
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(message)s")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    ds = generate_dataset(MODIFIED, args.train, args.dev, args.test, args.seed)
    vocab = corpus.build_vocabulary(ds.train, ds.dev, ds.candidates)
    hyper = Hyperparams(max_epochs=args.epochs)
    enc = Encoder(vocab, ds.candidates, hyper.memory_cap)
    tr, dv, te = (enc.encode(corpus.build_all_instances(x, ds.candidates)) for x in (ds.train, ds.dev, ds.test))
    model = MemN2N.from_encoder(hyper, enc)

    ckpt = out / "model.npz"
    if ckpt.exists():
        params, _, _ = load_checkpoint(ckpt)
        log.info("reusing %s", ckpt)
    else:
        t = time.time()
        params = train(model, tr, dv, seed=args.seed).best_params
        save_checkpoint(ckpt, params, hyper, vocab)
        log.info("trained in %.0fs", time.time() - t)
    base = evaluate(model, te, params)
    log.info("baseline per-turn %.2f per-dialog %.2f", 100 * base["per_turn"], 100 * base["per_dialog"])

    reports = []
    for reward in (RewardSpec(1, 2, -4), RewardSpec(1, 3, -3)):
        modes = [Mode.BASELINE, Mode.M_C, Mode.MSTAR_C, Mode.MASTAR_C]
        if reward != RewardSpec(1, 2, -4):
            modes = modes[1:]
        for mode in modes:
            cfg = DeploymentConfig(mode=mode, reward=reward, dev_subsample=args.dev_subsample,
                                   n_permutations=args.permutations)
            t = time.time()
            agg, _ = run_permutations(model, params, te, dv, tr, cfg, workers=args.workers)
            log.info("%s %s done in %.0fs", mode.value, reward.label(), time.time() - t)
            name = f"{mode.name.lower()}_r{reward.label().replace(',', '_')}"
            (out / f"{name}.json").write_text(agg.to_json() + "\n")
            reports.append(agg)

    text, table_csv = render_table(reports)
    (out / "table.csv").write_text(table_csv)
    (out / "baseline.json").write_text(json.dumps({k: 100 * v for k, v in base.items()}, indent=2) + "\n")
    print(text, end="")


if __name__ == "__main__":
    main()
