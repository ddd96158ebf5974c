"""Permutation importance and Boruta all-relevant feature selection."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np
from scipy.stats import binom

from . import _tree
from .dataset import Table, design_matrix, target_codes
from .errors import ConfigError, EmptyConfig
from .forest import ForestConfig, RandomForest, _argmax_votes, derive_seed, fit_forest_arrays
from .metrics import auc, roc_curve

DEFAULT_PERMUTATIONS = 50
DEFAULT_BORUTA_NTREE = 500
DEFAULT_BORUTA_ROUNDS = 20
DECISIONS = ("Confirmed", "Rejected", "Tentative")


@dataclass(frozen=True)
class FeatureImportance:
    feature: str
    mean_loss_drop: float
    stddev: float
    n_permutations: int


@dataclass(frozen=True)
class ImportanceReport:
    features: tuple  # FeatureImportance, in the model's feature order
    loss: str
    baseline_loss: float

    def ranked(self) -> list:
        """Most important first; equal drops keep model order."""
        return sorted(self.features, key=lambda f: -f.mean_loss_drop)

    def __getitem__(self, name: str) -> FeatureImportance:
        for f in self.features:
            if f.feature == name:
                return f
        raise KeyError(name)


def _loss(model: RandomForest, X: np.ndarray, y: np.ndarray, kind: str) -> float:
    frac = model.vote_fractions(X)
    if kind == "accuracy":
        pred = _argmax_votes(frac * model.ntree, model.positive)
        return 1.0 - float(np.mean(pred == y))
    pos = model.positive if model.positive is not None else len(model.classes) - 1
    truth = np.where(y == pos, "pos", "neg").astype(object)
    return 1.0 - auc(roc_curve(frac[:, pos], truth, positive="pos"))


def permutation_importance(model: RandomForest, data: Table, n_permutations: int = DEFAULT_PERMUTATIONS,
                           seed: int = 0, loss: str = "accuracy") -> ImportanceReport:
    """Mean increase in loss when one feature is shuffled, over fresh shuffles.

    ``loss`` is ``"accuracy"`` (1 - accuracy) or ``"auc"`` (1 - AUC of the
    positive-class vote fraction).
    """
    if n_permutations < 1:
        raise EmptyConfig("n_permutations must be >= 1")
    if loss not in ("accuracy", "auc"):
        raise ConfigError(f"unknown loss {loss!r}")
    X, _ = design_matrix(data, model.features)
    y, _ = target_codes(data)
    base = _loss(model, X, y, loss)
    rng = np.random.default_rng(seed)
    out = []
    for j, name in enumerate(model.features):
        drops = np.empty(n_permutations)
        Xp = X.copy()
        for r in range(n_permutations):
            Xp[:, j] = X[rng.permutation(len(X)), j]
            drops[r] = _loss(model, Xp, y, loss) - base
        sd = float(np.std(drops, ddof=1)) if n_permutations > 1 else 0.0
        out.append(FeatureImportance(name, float(drops.mean()), sd, n_permutations))
    return ImportanceReport(tuple(out), loss, base)


@dataclass(frozen=True)
class BorutaFeature:
    feature: str
    decision: str
    hits: int
    rounds: int


@dataclass(frozen=True)
class BorutaReport:
    features: tuple  # BorutaFeature, in predictor order
    forest_ntree: int
    max_rounds: int
    alpha: float
    seed: int
    rounds_run: int

    def __getitem__(self, name: str) -> BorutaFeature:
        for f in self.features:
            if f.feature == name:
                return f
        raise KeyError(name)

    def with_decision(self, decision: str) -> list[str]:
        return [f.feature for f in self.features if f.decision == decision]


def _zscore_importance(forest: RandomForest, X: np.ndarray, y: np.ndarray, seed: int) -> np.ndarray:
    """OOB permutation importance, mean over trees divided by its standard error."""
    feature, threshold, catmask, left, right, offsets, node_vote = forest.packed()
    per_tree = _tree.oob_permutation_importance(feature, threshold, catmask, left, right, offsets, node_vote,
                                                forest.n_levels, X, y, forest.inbag, np.uint64(seed))
    mean = per_tree.mean(axis=0)
    sd = per_tree.std(axis=0, ddof=1) if per_tree.shape[0] > 1 else np.zeros(per_tree.shape[1])
    z = np.zeros_like(mean)
    ok = sd > 0
    z[ok] = mean[ok] / (sd[ok] / math.sqrt(per_tree.shape[0]))
    return z


def boruta(train: Table, forest_ntree: int = DEFAULT_BORUTA_NTREE, max_rounds: int = DEFAULT_BORUTA_ROUNDS,
           alpha: float = 0.05, seed: int = 0, features=None, n_jobs: int = 1) -> BorutaReport:
    """Compare each predictor against shuffled shadow copies over repeated forests.

    Each round refits on the non-rejected predictors plus one shadow per
    predictor.  A hit is an importance above the best shadow.  After every
    round, undecided features face two one-sided binomial tests against
    p = 1/2, Bonferroni-corrected over the undecided count.
    """
    if max_rounds < 1 or forest_ntree < 1:
        raise EmptyConfig("max_rounds and forest_ntree must be >= 1")
    if not 0 < alpha < 1:
        raise ConfigError("alpha must lie in (0, 1)")
    names = list(features) if features is not None else train.schema.predictors()
    X, n_levels = design_matrix(train, names)
    y, classes = target_codes(train)
    n, p = X.shape
    rng = np.random.default_rng(seed)
    hits = np.zeros(p, np.int64)
    rounds = np.zeros(p, np.int64)
    decision = np.array(["Tentative"] * p, dtype=object)
    undecided = np.ones(p, bool)
    rounds_run = 0
    for r in range(max_rounds):
        active = np.flatnonzero(decision != "Rejected")
        Xa = X[:, active]
        shadow = np.empty_like(Xa)
        for k in range(len(active)):
            shadow[:, k] = Xa[rng.permutation(n), k]
        Xs = np.hstack([Xa, shadow])
        lv = np.concatenate([n_levels[active], n_levels[active]])
        cfg = ForestConfig(ntree=forest_ntree, seed=derive_seed(seed, r, 0))
        forest = fit_forest_arrays(Xs, y, cfg, classes=classes, n_levels=lv, n_jobs=n_jobs)
        z = _zscore_importance(forest, Xs, y, derive_seed(seed, r, 1))
        best_shadow = z[len(active):].max()
        hits[active] += z[: len(active)] > best_shadow
        rounds[active] += 1
        rounds_run = r + 1

        idx = np.flatnonzero(undecided)
        m = len(idx)
        # Accept when hits are improbably many, reject when improbably few.
        p_hi = binom.sf(hits[idx] - 1, rounds[idx], 0.5)
        p_lo = binom.cdf(hits[idx], rounds[idx], 0.5)
        level = alpha / m
        for k, j in enumerate(idx):
            if p_hi[k] < level:
                decision[j] = "Confirmed"
            elif p_lo[k] < level:
                decision[j] = "Rejected"
        undecided = decision == "Tentative"
        if not undecided.any():
            break
    feats = tuple(BorutaFeature(names[j], str(decision[j]), int(hits[j]), int(rounds[j])) for j in range(p))
    return BorutaReport(feats, forest_ntree, max_rounds, alpha, seed, rounds_run)


def _fmt(v: float) -> str:
    return repr(float(v))


def write_importance_csv(report: ImportanceReport, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["feature", "mean_loss_drop", "stddev"])
        for f in report.features:
            w.writerow([f.feature, _fmt(f.mean_loss_drop), _fmt(f.stddev)])


def write_boruta_csv(report: BorutaReport, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["feature", "decision", "hits", "rounds"])
        for f in report.features:
            w.writerow([f.feature, f.decision, f.hits, f.rounds])
