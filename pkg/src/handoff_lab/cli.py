"""Command-line front end: gen-data, train, deploy, report.

Exit codes: 0 success, 1 usage/config error, 2 data error, 3 training divergence.
"""

from __future__ import annotations

import argparse
import csv
import glob
import io
import json
import logging
import os
import sys
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import corpus
from .config import ConfigError, ExperimentConfig, apply_overrides
from .deployment import HEADLINE, AggregateReport, MetricsReport, run_permutations
from .handoff import ClassifierParams
from .memn2n import (Encoder, MemN2N, TrainingDivergence, evaluate, load_checkpoint,
                     save_checkpoint, train)
from .simulator import POLICIES, GeneratorConfig, dataset_stats, generate_dataset

log = logging.getLogger("handoff_lab")

DATA_ENV = "HANDOFF_LAB_DATA_DIR"
EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_DIVERGED = 0, 1, 2, 3

SPLIT_FILES = {"train": "train.txt", "dev": "dev.txt", "test": "test.txt"}
CANDIDATES_FILE = "candidates.txt"
# official bAbI naming, used when the generated names are absent
OFFICIAL_GLOBS = {"train": "*task5*trn*.txt", "dev": "*task5*dev*.txt",
                  "test": "*task5*tst.txt", "candidates": "*candidates*.txt"}


class DataError(RuntimeError):
    pass


@dataclass
class Corpus:
    train: list
    dev: list
    test: list
    candidates: corpus.CandidateSet

    def vocabulary(self) -> corpus.Vocabulary:
        return corpus.build_vocabulary(self.train, self.dev, self.candidates)


def _find(data_dir: Path, name: str, pattern: str) -> Path:
    p = data_dir / name
    if p.exists():
        return p
    hits = sorted(glob.glob(str(data_dir / pattern)))
    if not hits:
        raise DataError(f"no {name} (or {pattern}) in {data_dir}")
    return Path(hits[0])


def load_corpus_dir(data_dir) -> Corpus:
    data_dir = Path(data_dir)
    if not data_dir.is_dir():
        raise DataError(f"corpus directory not found: {data_dir}")
    try:
        splits = {k: corpus.read_dialogs(_find(data_dir, f, OFFICIAL_GLOBS[k]))
                  for k, f in SPLIT_FILES.items()}
        cands = corpus.load_candidates(
            _find(data_dir, CANDIDATES_FILE, OFFICIAL_GLOBS["candidates"]).read_text(encoding="utf-8"))
    except corpus.CorpusError as exc:
        raise DataError(str(exc)) from None
    return Corpus(splits["train"], splits["dev"], splits["test"], cands)


def resolve_data_dir(cfg: ExperimentConfig, explicit: Optional[str] = None) -> Path:
    if explicit:
        return Path(explicit)
    if cfg.data.data_dir:
        return Path(cfg.data.data_dir)
    if os.environ.get(DATA_ENV):
        return Path(os.environ[DATA_ENV])
    return Path(cfg.run.out_dir) / "data"


def cmd_gen_data(cfg: ExperimentConfig, out: Optional[str] = None) -> Path:
    d = cfg.data
    out_dir = Path(out) if out else resolve_data_dir(cfg)
    out_dir.mkdir(parents=True, exist_ok=True)
    gen = GeneratorConfig(d.p_volunteer, d.p_update, d.max_extra_rejections, d.p_address, d.p_phone)
    ds = generate_dataset(POLICIES[d.policy], d.n_train, d.n_dev, d.n_test, d.seed,
                          d.n_cuisines, d.n_locations, gen)
    for split, name in SPLIT_FILES.items():
        corpus.write_dialogs(out_dir / name, getattr(ds, split))
    (out_dir / CANDIDATES_FILE).write_text(ds.candidates.to_text(), encoding="utf-8")
    (out_dir / "kb.json").write_text(ds.kb.to_json() + "\n", encoding="utf-8")
    stats = {split: dataset_stats(getattr(ds, split)) for split in SPLIT_FILES}
    stats["policy"] = {"train": d.policy, "dev": d.policy, "test": "original"}
    (out_dir / "stats.json").write_text(json.dumps(stats, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return out_dir


@dataclass
class Workbench:
    """Everything the model needs, rebuilt deterministically from a corpus."""

    corpus: Corpus
    encoder: Encoder
    model: MemN2N
    train: object
    dev: object
    test: object


def build_workbench(cfg: ExperimentConfig, data_dir: Path) -> Workbench:
    c = load_corpus_dir(data_dir)
    enc = Encoder(c.vocabulary(), c.candidates, cfg.model.memory_cap)
    try:
        encode = lambda dialogs: enc.encode(corpus.build_all_instances(dialogs, c.candidates))
        tr, dv, te = encode(c.train), encode(c.dev), encode(c.test)
    except corpus.CorpusError as exc:
        raise DataError(str(exc)) from None
    return Workbench(c, enc, MemN2N.from_encoder(cfg.model, enc), tr, dv, te)


def cmd_train(cfg: ExperimentConfig, data_dir: Optional[str] = None) -> dict:
    out = Path(cfg.run.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    wb = build_workbench(cfg, resolve_data_dir(cfg, data_dir))
    result = train(wb.model, wb.train, wb.dev, seed=cfg.run.train_seed)
    test = evaluate(wb.model, wb.test, result.best_params)
    train_acc = evaluate(wb.model, wb.train, result.best_params)
    save_checkpoint(out / "model.npz", result.best_params, cfg.model, wb.encoder.vocab,
                    best_epoch=result.best_epoch)
    with open(out / "training_log.csv", "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=["epoch", "lr", "train_loss", "dev_per_turn", "best_dev"],
                           lineterminator="\n")
        w.writeheader()
        w.writerows(result.log)
    summary = {
        "best_epoch": result.best_epoch,
        "dev_per_turn": 100 * result.best_dev,
        "train_per_turn": 100 * train_acc["per_turn"],
        "test_per_turn": 100 * test["per_turn"],
        "test_per_dialog": 100 * test["per_dialog"],
    }
    (out / "baseline.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    cfg.save(out / "config.ini")
    return summary


def _save_classifier(path, clf: ClassifierParams) -> None:
    np.savez(path, **dict(clf.items()))


def cmd_deploy(cfg: ExperimentConfig, data_dir: Optional[str] = None,
               checkpoint: Optional[str] = None, workers: int = 1) -> AggregateReport:
    out = Path(cfg.run.out_dir)
    ckpt = Path(checkpoint) if checkpoint else out / "model.npz"
    if not ckpt.exists():
        raise DataError(f"model checkpoint not found: {ckpt}")
    params, hyper, meta = load_checkpoint(ckpt)
    cfg = replace(cfg, model=hyper)
    wb = build_workbench(cfg, resolve_data_dir(cfg, data_dir))
    if meta["vocab_digest"] != wb.encoder.vocab.digest():
        raise DataError("checkpoint vocabulary does not match the corpus")
    agg, results = run_permutations(wb.model, params, wb.test, wb.dev, wb.train, cfg.deploy,
                                    workers=workers)
    run_dir = out / f"{_slug(cfg.deploy.mode.value)}_r{_slug(cfg.deploy.reward.label())}"
    run_dir.mkdir(parents=True, exist_ok=True)
    for res in results:
        i = res.report.permutation
        (run_dir / f"perm{i}_series.csv").write_text(res.report.series_csv())
        save_checkpoint(run_dir / f"perm{i}_model.npz", res.params, hyper, wb.encoder.vocab)
        _save_classifier(run_dir / f"perm{i}_classifier.npz", res.classifier)
    (run_dir / "report.json").write_text(agg.to_json() + "\n")
    cfg.save(run_dir / "config.ini")
    return agg


def _slug(text: str) -> str:
    return text.replace("*", "s").replace("+", "p").replace(",", "_").replace("-", "m")


def load_reports(run_dirs: Sequence[str]) -> list[AggregateReport]:
    paths = []
    for d in run_dirs:
        p = Path(d)
        if p.is_file():
            paths.append(p)
        else:
            paths.extend(sorted(p.rglob("report.json")))
    if not paths:
        raise DataError("no report.json found in " + ", ".join(map(str, run_dirs)))
    out = []
    for p in paths:
        raw = json.loads(p.read_text())
        runs = [MetricsReport(**r) for r in raw["permutations"]]
        out.append(AggregateReport(raw["mode"], raw["reward"], runs))
    return out


def render_table(reports: Sequence[AggregateReport]) -> tuple[str, str]:
    """Table with mean(std) per headline metric; returns (text, csv)."""
    cols = ["reward", "mode"] + list(HEADLINE)
    heads = ["reward", "mode", "user pt", "user pd", "model ratio", "final pt", "final pd"]
    rows = []
    for rep in reports:
        st = rep.stats()
        rows.append([rep.reward, rep.mode] + [f"{st[k]['mean']:.2f}({st[k]['std']:.2f})" for k in HEADLINE])
    widths = [max(len(h), *(len(r[i]) for r in rows)) for i, h in enumerate(heads)]
    fmt = " | ".join("{:<%d}" % w for w in widths)
    lines = [fmt.format(*heads), "-+-".join("-" * w for w in widths)]
    lines += [fmt.format(*r) for r in rows]
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["reward", "mode", "n_permutations"] + [f"{k}_{s}" for k in HEADLINE for s in ("mean", "std")])
    for rep in reports:
        st = rep.stats()
        w.writerow([rep.reward, rep.mode, len(rep.runs)] + [f"{st[k][s]:.4f}" for k in HEADLINE for s in ("mean", "std")])
    return "\n".join(lines) + "\n", buf.getvalue()


def cmd_report(run_dirs: Sequence[str], csv_path: Optional[str] = None) -> str:
    text, table_csv = render_table(load_reports(run_dirs))
    if csv_path:
        Path(csv_path).write_text(table_csv)
    return text


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="handoff-lab", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(sp, seed=True):
        sp.add_argument("--config", help="INI experiment config")
        sp.add_argument("--out", help="output directory")
        if seed:
            sp.add_argument("--seed", type=int, help="override the seed this command consumes")

    g = sub.add_parser("gen-data", help="generate train/dev/test corpora and statistics")
    common(g)
    t = sub.add_parser("train", help="train the baseline memory network")
    common(t)
    t.add_argument("--data", help="corpus directory")
    d = sub.add_parser("deploy", help="run seeded deployment permutations")
    common(d)
    d.add_argument("--data", help="corpus directory")
    d.add_argument("--checkpoint", help="model checkpoint (default <out>/model.npz)")
    d.add_argument("--mode", help="M, M+C*, M*+C* or Ma*+C*")
    d.add_argument("--reward", help="r_human,r_model_correct,r_model_incorrect")
    d.add_argument("--parallel", type=int, default=1, help="worker processes for permutations")
    d.add_argument("--permutations", type=int, help="number of test permutations")
    r = sub.add_parser("report", help="render a comparison table from deploy outputs")
    r.add_argument("run_dirs", nargs="+")
    r.add_argument("--csv", help="also write the table as CSV")
    return p


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(message)s")
    try:
        if args.command == "report":
            print(cmd_report(args.run_dirs, args.csv), end="")
            return EXIT_OK
        cfg = ExperimentConfig.load(args.config) if args.config else ExperimentConfig()
        out_dir = args.out if args.command != "gen-data" else None
        cfg = apply_overrides(cfg, seed=args.seed, command=args.command, out_dir=out_dir,
                              mode=getattr(args, "mode", None), reward=getattr(args, "reward", None))
        if args.command == "gen-data":
            path = cmd_gen_data(cfg, args.out)
            print(json.dumps(json.loads((path / "stats.json").read_text()), indent=2))
        elif args.command == "train":
            summary = cmd_train(cfg, args.data)
            print(f"test per-turn {summary['test_per_turn']:.2f}  per-dialog {summary['test_per_dialog']:.2f}")
        elif args.command == "deploy":
            if args.permutations is not None:
                cfg = replace(cfg, deploy=replace(cfg.deploy, n_permutations=args.permutations))
            agg = cmd_deploy(cfg, args.data, args.checkpoint, workers=args.parallel)
            print(render_table([agg])[0], end="")
    except (ConfigError, ValueError) as exc:
        if isinstance(exc, corpus.CorpusError):
            print(f"data error: {exc}", file=sys.stderr)
            return EXIT_DATA
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, FileNotFoundError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (TrainingDivergence, FloatingPointError) as exc:
        print(f"training diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    return EXIT_OK


def main_exit() -> None:
    sys.exit(main())


if __name__ == "__main__":
    main_exit()
