"""Train-and-evaluate helpers shared by the ablation runner and acceptance checks."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .config import RunConfig
from .data import Dataset, generate_synthetic, load_dataset, split
from .evaluation import collapse_diagnostics, knn_classify
from .numerics import Rng
from .training import TrainConfig, TrainingAborted, representations, train

KNN_K = 20

# variant name -> TrainConfig overrides
ABLATION_SUITES = {
    "prototypes": [(f"K={k}", {"k_prototypes": k}) for k in (8, 16, 32, 64, 128, 256)],
    "soft_hard": [("soft", {"hard_codes": False}), ("hard", {"hard_codes": True})],
    "learned_fixed": [("learned", {"learn_prototypes": True}), ("fixed", {"learn_prototypes": False})],
    "sinkhorn_iters": [(f"niters={n}", {"sinkhorn_iters": n}) for n in (1, 3, 10, 30)],
    "multicrop": [("2x", {"n_local": 0}), ("2x+4x", {"n_local": 4})],
    "methods": [
        (f"{m}{' +mc' if nl else ''}", {"method": m, "n_local": nl})
        for m in ("swav", "deepcluster_v2", "sela_v2", "simclr")
        for nl in (0, 4)
    ],
}


@dataclass
class SplitData:
    full: Dataset
    train_idx: np.ndarray
    test_idx: np.ndarray

    @property
    def train(self) -> Dataset:
        return self.full.subset(self.train_idx)


def prepare_data(cfg: RunConfig) -> SplitData:
    d = cfg.data
    ds = load_dataset(d.path) if d.path else generate_synthetic(d.synthetic(), Rng(d.seed, "data"))
    if ds.labels is None:
        idx = np.arange(len(ds))
        return SplitData(ds, idx, idx[:0])
    tr, te = split(ds.labels, (1.0 - d.holdout_fraction, d.holdout_fraction), Rng(d.seed, "split"))
    return SplitData(ds, tr, te)


def raw_knn_baseline(data: SplitData, k: int = KNN_K) -> float:
    x = data.full.flat()
    y = data.full.labels
    return knn_classify(x[data.train_idx], y[data.train_idx], x[data.test_idx], y[data.test_idx], k)


@dataclass
class RunResult:
    knn_acc: float
    collapse: bool
    aborted: bool
    history: list
    state: object = None


def run_and_evaluate(cfg: TrainConfig, data: SplitData, k: int = KNN_K) -> RunResult:
    """Train on the train split, then k-NN on the representation tap of held-out items.

    A numeric abort counts as a failed run (accuracy 0, collapse flagged).
    """
    try:
        state, history = train(cfg, data.train)
    except (TrainingAborted, ArithmeticError):
        return RunResult(0.0, True, True, [])
    rep, _ = representations(state, data.full)
    y = data.full.labels
    acc = knn_classify(rep[data.train_idx], y[data.train_idx], rep[data.test_idx], y[data.test_idx], k)
    _, _, rep_collapse = collapse_diagnostics([], rep[data.train_idx])
    collapse = bool(history[-1]["collapse"]) or rep_collapse
    return RunResult(acc, collapse, False, history, state)


def run_variant(cfg: TrainConfig, data: SplitData, seeds) -> dict:
    results = [run_and_evaluate(cfg.replace(seed=s), data) for s in seeds]
    accs = [r.knn_acc for r in results]
    return {
        "knn_acc": float(np.median(accs)),
        "knn_accs": accs,
        "collapse": any(r.collapse for r in results),
        "final_loss": float(np.median([r.history[-1]["loss"] if r.history else np.nan for r in results])),
    }


def run_suite(suite: str, base: RunConfig, seeds=(0,), data: SplitData | None = None):
    """Yield ``(variant, overrides, summary)`` for every variant of ``suite``."""
    data = data if data is not None else prepare_data(base)
    for name, overrides in ABLATION_SUITES[suite]:
        yield name, overrides, run_variant(base.train.replace(**overrides), data, seeds)
