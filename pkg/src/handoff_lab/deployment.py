"""Streaming deployment: route each test turn to the model or a human, learn online, keep score.

The human agent and the user are both oracles backed by the test labels: a
human always answers correctly and the user reports exactly whether a model
answer was right.
"""

from __future__ import annotations

import csv
import enum
import io
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from typing import Optional, Sequence

import numpy as np

from .handoff import (HUMAN, MODEL, ClassifierParams, DecisionEpisode, RewardSpec,
                      init_classifier, policy, reinforce_update, reward)
from .memn2n import (EncodedInstances, MemN2N, ModelParams, accuracy, evaluate, sgd_step,
                     supervised_step)


class Mode(str, enum.Enum):
    BASELINE = "M"
    M_C = "M+C*"
    MSTAR_C = "M*+C*"
    MASTAR_C = "Ma*+C*"

    @property
    def uses_classifier(self) -> bool:
        return self is not Mode.BASELINE

    @property
    def updates_model(self) -> bool:
        return self in (Mode.MSTAR_C, Mode.MASTAR_C)

    @classmethod
    def parse(cls, text: str) -> "Mode":
        key = text.strip().lower().replace(" ", "")
        aliases = {
            "m": cls.BASELINE, "baseline": cls.BASELINE, "baselinem": cls.BASELINE,
            "m+c*": cls.M_C, "m+c": cls.M_C, "m_plus_cstar": cls.M_C,
            "m*+c*": cls.MSTAR_C, "mstar_plus_cstar": cls.MSTAR_C,
            "ma*+c*": cls.MASTAR_C, "ma_star_plus_cstar": cls.MASTAR_C,
        }
        if key not in aliases:
            raise ValueError(f"unknown mode {text!r}")
        return aliases[key]


@dataclass(frozen=True)
class DeploymentConfig:
    mode: Mode = Mode.MSTAR_C
    reward: RewardSpec = RewardSpec()
    deploy_batch: int = 32
    human_sl_repeats: int = 3
    replay_batches: int = 2
    alpha: float = 0.5
    alpha_cap: int = 10
    classifier_lr: float = 0.01
    model_lr: float = 0.01
    classifier_hidden: int = 20
    classifier_seed: int = 599
    permutation_seed: int = 0
    n_permutations: int = 5
    dev_subsample: int = 0  # 0 evaluates the full dev set after every batch

    def __post_init__(self):
        if self.deploy_batch < 1 or self.replay_batches < 0 or self.human_sl_repeats < 0:
            raise ValueError("deploy_batch >= 1, replay_batches >= 0, human_sl_repeats >= 0")
        if self.alpha < 0 or self.alpha_cap < 0:
            raise ValueError("alpha and alpha_cap must be non-negative")


class AugmentedStore:
    """Original training instances plus human-answered deployment turns.

    Collected turns are indices into `pool` (the deployment instances).
    """

    def __init__(self, base: EncodedInstances, pool: EncodedInstances):
        self.base = base
        self.pool = pool
        self.collected: list[int] = []

    def __len__(self) -> int:
        return len(self.base) + len(self.collected)

    def add(self, pool_index: int) -> None:
        self.collected.append(int(pool_index))

    def sample(self, n: int, rng: np.random.Generator) -> EncodedInstances:
        draw = rng.integers(len(self), size=n)
        n_base = len(self.base)
        from_base = draw[draw < n_base]
        from_pool = np.asarray(self.collected, dtype=np.int64)[draw[draw >= n_base] - n_base]
        parts = []
        if len(from_base):
            parts.append(self.base.take(from_base))
        if len(from_pool):
            parts.append(self.pool.take(from_pool))
        return parts[0] if len(parts) == 1 else EncodedInstances.concat(parts)


def adaptive_batches(v_current: float, v_best: float, alpha: float, cap: int) -> int:
    """Replay batch count from the drop in dev accuracy (percentage points)."""
    drop = max(0.0, v_best - v_current)
    return int(min(cap, math.floor(alpha * drop + 0.5)))


@dataclass
class MetricsAccumulator:
    reward_spec: RewardSpec
    n_human: int = 0
    n_model_correct: int = 0
    n_model_incorrect: int = 0
    dialog_ok: dict = field(default_factory=dict)
    total_reward: float = 0.0

    @property
    def n_turns(self) -> int:
        return self.n_human + self.n_model_correct + self.n_model_incorrect

    def record(self, dialog_id: int, action: int, model_correct: bool) -> float:
        r = reward(action, model_correct, self.reward_spec)
        if action == HUMAN:
            self.n_human += 1
        elif model_correct:
            self.n_model_correct += 1
        else:
            self.n_model_incorrect += 1
        delivered_ok = action == HUMAN or model_correct
        self.dialog_ok[dialog_id] = self.dialog_ok.get(dialog_id, True) and delivered_ok
        self.total_reward += r
        return r

    def user_per_turn(self) -> float:
        return 100.0 * (self.n_human + self.n_model_correct) / max(self.n_turns, 1)

    def user_per_dialog(self) -> float:
        return 100.0 * sum(self.dialog_ok.values()) / max(len(self.dialog_ok), 1)

    def model_ratio(self) -> float:
        return 100.0 * (self.n_model_correct + self.n_model_incorrect) / max(self.n_turns, 1)

    def expected_reward(self) -> float:
        s = self.reward_spec
        return (s.r_human * self.n_human + s.r_model_correct * self.n_model_correct
                + s.r_model_incorrect * self.n_model_incorrect)


HEADLINE = ("user_per_turn", "user_per_dialog", "model_ratio", "final_per_turn", "final_per_dialog")
SERIES_FIELDS = ("batch_no", "user_pt", "user_pd", "model_ratio", "reward", "b",
                 "n_turns", "n_human", "n_model_correct", "n_model_incorrect",
                 "n_dialogs", "n_dialogs_ok", "dev_per_turn", "dev_best")


@dataclass
class MetricsReport:
    mode: str
    reward: str
    permutation: int
    seed: int
    user_per_turn: float
    user_per_dialog: float
    model_ratio: float
    final_per_turn: float
    final_per_dialog: float
    total_reward: float
    n_turns: int
    n_human: int
    n_model_correct: int
    n_model_incorrect: int
    series: list = field(default_factory=list, repr=False)

    def summary(self) -> dict:
        d = asdict(self)
        d.pop("series")
        return d

    def series_csv(self) -> str:
        buf = io.StringIO()
        w = csv.DictWriter(buf, fieldnames=SERIES_FIELDS, lineterminator="\n")
        w.writeheader()
        for row in self.series:
            w.writerow(row)
        return buf.getvalue()


@dataclass
class DeploymentResult:
    report: MetricsReport
    params: ModelParams
    classifier: ClassifierParams
    store: AugmentedStore


def deployment_order(test: EncodedInstances, rng: Optional[np.random.Generator]) -> np.ndarray:
    """Instance order with dialogs shuffled as contiguous blocks (identity if rng is None)."""
    groups = test.dialogs()
    if rng is not None:
        groups = [groups[i] for i in rng.permutation(len(groups))]
    return np.concatenate(groups) if groups else np.zeros(0, dtype=np.int64)


def run_deployment(model: MemN2N, params: ModelParams, classifier: ClassifierParams,
                   test: EncodedInstances, dev: EncodedInstances, store: AugmentedStore,
                   config: DeploymentConfig, order: Optional[np.ndarray] = None,
                   seed: int = 0, permutation: int = 0) -> DeploymentResult:
    """One sequential pass over the test turns in `order` (default: stored order)."""
    mode = config.mode
    rng = np.random.default_rng(seed)
    act_rng, replay_rng = (np.random.default_rng(s) for s in rng.bit_generator.seed_seq.spawn(2))
    order = deployment_order(test, None) if order is None else np.asarray(order)
    params = params.copy()
    classifier = classifier.copy()
    acc = MetricsAccumulator(config.reward)

    dev_eval = dev
    if mode is Mode.MASTAR_C and config.dev_subsample and config.dev_subsample < len(dev):
        pick = np.sort(np.random.default_rng(seed).choice(len(dev), config.dev_subsample, replace=False))
        dev_eval = dev.take(pick)
    v_best = 100.0 * evaluate(model, dev_eval, params)["per_turn"] if mode is Mode.MASTAR_C else 0.0

    series = []
    for batch_no, lo in enumerate(range(0, len(order), config.deploy_batch)):
        idx = order[lo: lo + config.deploy_batch]
        batch = test.take(idx)
        fr = model.forward(batch, params)
        pred = np.argmax(fr.scores, axis=1)
        correct = pred == batch.answer
        if mode.uses_classifier:
            probs = policy(fr.state, classifier)
        else:
            probs = np.tile([1.0, 0.0], (len(idx), 1))

        episodes, human_rows = [], []
        for row, pool_i in enumerate(idx):
            p_model = probs[row, MODEL]
            action = MODEL if (not mode.uses_classifier or act_rng.random() < p_model) else HUMAN
            r = acc.record(int(batch.dialog_id[row]), action, bool(correct[row]))
            if action == HUMAN:
                store.add(pool_i)
                human_rows.append(row)
            episodes.append(DecisionEpisode(fr.state[row], action, float(probs[row, action]), r, int(pool_i)))

        b = 0
        dev_pt = float("nan")
        dev_best = v_best if mode is Mode.MASTAR_C else float("nan")
        if mode.uses_classifier:
            classifier, state_grads = reinforce_update(episodes, classifier, config.classifier_lr,
                                                       want_state_grads=mode.updates_model)
        if mode.updates_model:
            # ascend the classifier objective through the state: minimise its negative
            g = model.state_gradients(batch, params, -state_grads)
            params = sgd_step(params, g, config.model_lr, model.hyper.grad_clip)
            if human_rows:
                human_batch = batch.take(np.array(human_rows))
                for _ in range(config.human_sl_repeats):
                    params, _ = supervised_step(model, human_batch, params, config.model_lr)
            if mode is Mode.MASTAR_C:
                dev_pt = 100.0 * evaluate(model, dev_eval, params)["per_turn"]
                b = adaptive_batches(dev_pt, v_best, config.alpha, config.alpha_cap)
                v_best = max(v_best, dev_pt)
            else:
                b = config.replay_batches
            for _ in range(b):
                params, _ = supervised_step(model, store.sample(model.hyper.batch_size, replay_rng),
                                            params, config.model_lr)
            if not params.all_finite():
                raise FloatingPointError("model parameters became non-finite during deployment")

        series.append({
            "batch_no": batch_no, "user_pt": acc.user_per_turn(), "user_pd": acc.user_per_dialog(),
            "model_ratio": acc.model_ratio(), "reward": acc.total_reward, "b": b,
            "n_turns": acc.n_turns, "n_human": acc.n_human, "n_model_correct": acc.n_model_correct,
            "n_model_incorrect": acc.n_model_incorrect, "n_dialogs": len(acc.dialog_ok),
            "n_dialogs_ok": sum(acc.dialog_ok.values()), "dev_per_turn": dev_pt,
            "dev_best": dev_best,
        })

    final = final_model_accuracy(model, params, test)
    report = MetricsReport(
        mode=mode.value, reward=config.reward.label(), permutation=permutation, seed=seed,
        user_per_turn=acc.user_per_turn(), user_per_dialog=acc.user_per_dialog(),
        model_ratio=acc.model_ratio(), final_per_turn=final["per_turn"],
        final_per_dialog=final["per_dialog"], total_reward=acc.total_reward, n_turns=acc.n_turns,
        n_human=acc.n_human, n_model_correct=acc.n_model_correct,
        n_model_incorrect=acc.n_model_incorrect, series=series)
    return DeploymentResult(report, params, classifier, store)


def final_model_accuracy(model: MemN2N, params: ModelParams, test: EncodedInstances) -> dict:
    per_turn, per_dialog = accuracy(model.predict(test, params), test.answer, test.dialog_id)
    return {"per_turn": 100.0 * per_turn, "per_dialog": 100.0 * per_dialog}


@dataclass
class AggregateReport:
    mode: str
    reward: str
    runs: list[MetricsReport]

    def stats(self) -> dict:
        """Mean and sample standard deviation (0 for a single run) over permutations."""
        out = {}
        for key in HEADLINE + ("total_reward",):
            vals = np.array([getattr(r, key) for r in self.runs], dtype=float)
            std = float(vals.std(ddof=1)) if len(vals) > 1 else 0.0
            out[key] = {"mean": float(vals.mean()), "std": std}
        return out

    def mean(self, key: str) -> float:
        return self.stats()[key]["mean"]

    def std(self, key: str) -> float:
        return self.stats()[key]["std"]

    def to_json(self) -> str:
        return json.dumps({"mode": self.mode, "reward": self.reward, "aggregate": self.stats(),
                           "permutations": [r.summary() for r in self.runs]}, indent=2, sort_keys=True)


def _one_permutation(args) -> DeploymentResult:
    model, params, test, dev, base, config, i = args
    seed = config.permutation_seed + i
    order = deployment_order(test, np.random.default_rng(seed))
    clf = init_classifier(model.hyper.d, config.classifier_hidden, config.classifier_seed + i)
    store = AugmentedStore(base, test)
    return run_deployment(model, params, clf, test, dev, store, config, order=order,
                          seed=seed, permutation=i)


def run_permutations(model: MemN2N, params: ModelParams, test: EncodedInstances,
                     dev: EncodedInstances, base: EncodedInstances, config: DeploymentConfig,
                     n: Optional[int] = None, workers: int = 1) -> tuple[AggregateReport, list[DeploymentResult]]:
    """Independent deployments over `n` seeded test permutations, each from a fresh model copy."""
    n = config.n_permutations if n is None else n
    if n < 1:
        raise ValueError("need at least one permutation")
    jobs = [(model, params, test, dev, base, config, i) for i in range(n)]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            results = list(ex.map(_one_permutation, jobs))
    else:
        results = [_one_permutation(j) for j in jobs]
    agg = AggregateReport(config.mode.value, config.reward.label(), [r.report for r in results])
    return agg, results


def with_mode(config: DeploymentConfig, mode: Mode, reward_spec: Optional[RewardSpec] = None) -> DeploymentConfig:
    return replace(config, mode=mode, reward=reward_spec or config.reward)


def recompute_from_series(row: dict) -> dict:
    """Headline running metrics recomputed from the raw counters of one series row."""
    n = row["n_turns"]
    return {
        "user_pt": 100.0 * (row["n_human"] + row["n_model_correct"]) / max(n, 1),
        "model_ratio": 100.0 * (row["n_model_correct"] + row["n_model_incorrect"]) / max(n, 1),
        "user_pd": 100.0 * row["n_dialogs_ok"] / max(row["n_dialogs"], 1),
    }


def aggregate_from_reports(reports: Sequence[MetricsReport]) -> AggregateReport:
    return AggregateReport(reports[0].mode, reports[0].reward, list(reports))
