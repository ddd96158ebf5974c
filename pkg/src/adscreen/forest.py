"""Random forest classifier built on the compiled CART kernels.

Each tree ``i`` draws its bootstrap sample and its per-node feature subsets
from a generator seeded by ``tree_seed(seed, i)``; nothing else carries
state between trees, so the fitted forest is identical for any number of
worker threads.
"""

from __future__ import annotations

import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from . import _tree
from .dataset import POSITIVE_LABEL, Table, design_matrix, target_codes
from .errors import DegenerateClass, EmptyGrid, EmptyNode, MissingAtPredict, SchemaMismatch

FORMAT_NAME = "adscreen-forest"
FORMAT_VERSION = 1


def derive_seed(*parts: int) -> int:
    """Hash integers into a 63-bit seed (SeedSequence entropy mixing)."""
    ss = np.random.SeedSequence([int(p) & 0xFFFFFFFFFFFFFFFF for p in parts])
    return int(ss.generate_state(1, np.uint64)[0] >> np.uint64(1))


def tree_seed(seed: int, index: int) -> int:
    return derive_seed(seed, index)


@dataclass(frozen=True)
class ForestConfig:
    ntree: int = 500
    mtry: int | None = None  # None: floor(sqrt(#predictors))
    min_node_size: int = 1
    max_depth: int | None = None
    seed: int = 0

    def __post_init__(self):
        if self.ntree < 1:
            raise ValueError("ntree must be >= 1")
        if self.mtry is not None and self.mtry < 1:
            raise ValueError("mtry must be positive")
        if self.min_node_size < 1:
            raise ValueError("min_node_size must be positive")
        if self.max_depth is not None and self.max_depth < 1:
            raise ValueError("max_depth must be positive")

    def resolved_mtry(self, n_features: int) -> int:
        if self.mtry is None:
            return max(1, int(math.isqrt(n_features)))
        if self.mtry > n_features:
            raise ValueError(f"mtry={self.mtry} exceeds {n_features} predictors")
        return self.mtry


def gini_impurity(class_counts) -> float:
    counts = np.asarray(class_counts, dtype=np.float64)
    if np.any(counts < 0):
        raise ValueError("class counts must be non-negative")
    total = counts.sum()
    if total <= 0:
        raise EmptyNode("gini impurity of an empty node")
    return float(1.0 - np.sum((counts / total) ** 2))


def rank_encode(X: np.ndarray):
    """Dense per-column value ranks and the matching distinct-value table."""
    n, p = X.shape
    R = np.empty((n, p), dtype=np.int64)
    uniq = []
    for j in range(p):
        u, inv = np.unique(X[:, j], return_inverse=True)
        R[:, j] = inv
        uniq.append(u)
    U = np.full((p, max((len(u) for u in uniq), default=1)), np.nan)
    for j, u in enumerate(uniq):
        U[j, : len(u)] = u
    return R, U


@dataclass(frozen=True)
class Split:
    feature: int
    threshold: float | None
    levels: frozenset | None
    decrease: float


@dataclass(eq=False)
class Tree:
    feature: np.ndarray
    threshold: np.ndarray
    catmask: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray
    n_node_samples: np.ndarray
    decrease: np.ndarray

    @property
    def n_nodes(self) -> int:
        return len(self.feature)

    def is_leaf(self, node: int) -> bool:
        return self.feature[node] < 0

    def depth(self) -> int:
        best, stack = 0, [(0, 0)]
        while stack:
            node, d = stack.pop()
            best = max(best, d)
            if self.feature[node] >= 0:
                stack += [(self.left[node], d + 1), (self.right[node], d + 1)]
        return best

    def same_structure(self, other: "Tree") -> bool:
        return all(
            np.array_equal(getattr(self, f), getattr(other, f), equal_nan=f in ("threshold", "value"))
            for f in ("feature", "threshold", "catmask", "left", "right", "value")
        )


def best_split(X, y, candidate_features: Sequence[int], n_levels=None, weights=None) -> Split | None:
    """Best Gini split of the rows of ``X`` among ``candidate_features``.

    Numeric thresholds are midpoints between consecutive distinct values
    (``x <= threshold`` goes left).  Categorical columns (``n_levels[j] > 2``)
    return the level set that goes left.  Ties go to the lowest feature
    index, then the lowest threshold.  Returns ``None`` when no split lowers
    the impurity.
    """
    X = np.ascontiguousarray(X, dtype=np.float64)
    y = np.asarray(y)
    if X.shape[0] < 2:
        return None
    n_levels = np.zeros(X.shape[1], np.int64) if n_levels is None else np.asarray(n_levels, np.int64)
    classes, y_codes = np.unique(y, return_inverse=True)
    wt = np.ones(X.shape[0], np.int64) if weights is None else np.asarray(weights, np.int64)
    R, U = rank_encode(X)
    idx = np.flatnonzero(wt > 0)
    cand = np.sort(np.asarray(candidate_features, dtype=np.int64))
    f, thr, mask, dec = _tree.best_split_node(
        X, R, U, y_codes.astype(np.int64), np.zeros(1), wt, idx, 0, len(idx), cand, n_levels,
        max(len(classes), 1), False,
    )
    if f < 0:
        return None
    if n_levels[f] > 0:
        lv = frozenset(k for k in range(int(n_levels[f])) if (int(mask) >> k) & 1)
        return Split(int(f), None, lv, float(dec))
    return Split(int(f), float(thr), None, float(dec))


def _build(X, R, U, y_cls, y_reg, n_classes, n_levels, wt, mtry, min_node_size, max_depth, seed,
           regression) -> Tree:
    out = _tree.build_tree(
        X, R, U, y_cls, y_reg, n_classes, n_levels, wt, mtry, min_node_size,
        -1 if max_depth is None else max_depth, np.uint64(seed), regression,
    )
    return Tree(*out)


def fit_tree(X, y, in_bag, config: ForestConfig, seed: int, n_levels=None) -> Tree:
    """Grow one classification tree on the in-bag row multiset ``in_bag``."""
    X = np.ascontiguousarray(X, dtype=np.float64)
    in_bag = np.asarray(in_bag, dtype=np.int64)
    if in_bag.size == 0:
        raise ValueError("in_bag must be non-empty")
    n_levels = np.zeros(X.shape[1], np.int64) if n_levels is None else np.asarray(n_levels, np.int64)
    y = np.asarray(y, dtype=np.int64)
    wt = np.bincount(in_bag, minlength=X.shape[0]).astype(np.int64)
    R, U = rank_encode(X)
    return _build(X, R, U, y, np.zeros(1), int(y.max()) + 1, n_levels, wt,
                  config.resolved_mtry(X.shape[1]), config.min_node_size, config.max_depth, seed, False)


@dataclass(eq=False)
class RandomForest:
    trees: list
    inbag: np.ndarray  # (ntree, n_train) bootstrap multiplicities
    config: ForestConfig
    classes: tuple
    features: tuple
    n_levels: np.ndarray
    mtry: int
    regression: bool = False
    _packed: tuple | None = field(default=None, repr=False)

    @property
    def ntree(self) -> int:
        return len(self.trees)

    @property
    def positive(self) -> int | None:
        if POSITIVE_LABEL in self.classes:
            return self.classes.index(POSITIVE_LABEL)
        return None

    def packed(self):
        """Trees concatenated into flat arrays for the compiled traversal."""
        if self._packed is None:
            sizes = [t.n_nodes for t in self.trees]
            offsets = np.zeros(len(sizes) + 1, np.int64)
            offsets[1:] = np.cumsum(sizes)
            cat = lambda name: np.concatenate([getattr(t, name) for t in self.trees])
            value = np.concatenate([t.value for t in self.trees])
            if self.regression:
                node_out = value[:, 0].copy()
            else:
                node_out = _argmax_votes(value, self.positive)
            self._packed = (cat("feature"), cat("threshold"), cat("catmask"), cat("left"),
                            cat("right"), offsets, node_out)
        return self._packed

    def apply(self, X: np.ndarray) -> np.ndarray:
        feature, threshold, catmask, left, right, offsets, _ = self.packed()
        return _tree.apply_forest(feature, threshold, catmask, left, right, offsets,
                                  self.n_levels, np.ascontiguousarray(X, dtype=np.float64))

    def tree_votes(self, X: np.ndarray) -> np.ndarray:
        """Per-tree output for every row, shape (ntree, n)."""
        return self.packed()[-1][self.apply(X)]

    def vote_fractions(self, X: np.ndarray) -> np.ndarray:
        votes = self.tree_votes(X)
        frac = np.stack([(votes == c).sum(axis=0) for c in range(len(self.classes))], axis=1)
        return frac / self.ntree

    def predict_codes(self, X: np.ndarray) -> np.ndarray:
        if self.regression:
            return self.tree_votes(X).mean(axis=0)
        return _argmax_votes(self.vote_fractions(X) * self.ntree, self.positive)


def _argmax_votes(counts: np.ndarray, positive: int | None) -> np.ndarray:
    """Row-wise argmax; exact ties go to ``positive`` when it is tied, else the lowest index."""
    best = counts.argmax(axis=1)
    if positive is not None:
        top = counts.max(axis=1)
        best = np.where(counts[:, positive] == top, positive, best)
    return best.astype(np.int64)


def _check_complete(X: np.ndarray, features: Sequence[str]) -> None:
    bad = np.isnan(X)
    if bad.any():
        i, j = np.argwhere(bad)[0]
        raise MissingAtPredict(f"row {i}: predictor {features[j]!r} is masked")


def fit_forest_arrays(X, y, config: ForestConfig, *, classes=None, features=None, n_levels=None,
                      regression=False, n_jobs: int = 1, mtry: int | None = None) -> RandomForest:
    X = np.ascontiguousarray(X, dtype=np.float64)
    n, p = X.shape
    features = tuple(features) if features is not None else tuple(f"x{j}" for j in range(p))
    _check_complete(X, features)
    n_levels = np.zeros(p, np.int64) if n_levels is None else np.ascontiguousarray(n_levels, np.int64)
    if regression:
        y_reg = np.ascontiguousarray(y, dtype=np.float64)
        y_cls = np.zeros(n, np.int64)
        n_classes = 1
        classes = ()
    else:
        y_cls = np.ascontiguousarray(y, dtype=np.int64)
        y_reg = np.zeros(1)
        if classes is None:
            classes = tuple(range(int(y_cls.max()) + 1))
        n_classes = len(classes)
        if len(np.unique(y_cls)) < 2:
            raise DegenerateClass("training data contains a single class")
    mtry = mtry if mtry is not None else config.resolved_mtry(p)
    R, U = rank_encode(X)
    seeds = [tree_seed(config.seed, i) for i in range(config.ntree)]

    def grow(i):
        wt = _tree.bootstrap_counts(n, np.uint64(seeds[i]))
        tree = _build(X, R, U, y_cls, y_reg, n_classes, n_levels, wt, mtry, config.min_node_size,
                      config.max_depth, derive_seed(seeds[i], 1), regression)
        return tree, wt

    if n_jobs > 1:
        with ThreadPoolExecutor(max_workers=n_jobs) as pool:
            grown = list(pool.map(grow, range(config.ntree)))
    else:
        grown = [grow(i) for i in range(config.ntree)]
    inbag = np.stack([g[1] for g in grown]).astype(np.int32)
    return RandomForest([g[0] for g in grown], inbag, config, tuple(classes), features,
                        n_levels, mtry, regression)


def fit_forest(train: Table, config: ForestConfig, features: Sequence[str] | None = None,
               n_jobs: int = 1) -> RandomForest:
    """Fit a classification forest on ``train``'s target from ``features``.

    ``features`` defaults to every numeric, binary and categorical column.
    """
    features = list(features) if features is not None else train.schema.predictors()
    X, n_levels = design_matrix(train, features)
    y, classes = target_codes(train)
    present = np.unique(y)
    if len(present) < 2:
        raise DegenerateClass("training data contains a single class")
    return fit_forest_arrays(X, y, config, classes=classes, features=features, n_levels=n_levels,
                             n_jobs=n_jobs)


def _predictor_matrix(forest: RandomForest, data) -> np.ndarray:
    if isinstance(data, Table):
        X, _ = design_matrix(data, forest.features)
    elif isinstance(data, dict):
        X = np.array([[np.nan if data.get(f) is None else float(data[f]) for f in forest.features]])
    else:
        X = np.atleast_2d(np.asarray(data, dtype=np.float64))
    _check_complete(X, forest.features)
    return X


def predict(forest: RandomForest, row) -> tuple[str, dict]:
    """Majority vote for one row; exact ties go to the positive (NonHC) class.

    ``row`` is a mapping from predictor name to encoded value, a 1-D array
    in ``forest.features`` order, or a one-row :class:`Table`.
    """
    X = _predictor_matrix(forest, row)
    if X.shape[0] != 1:
        raise ValueError("predict expects a single row")
    frac = forest.vote_fractions(X)[0]
    code = int(_argmax_votes(frac[None, :] * forest.ntree, forest.positive)[0])
    return forest.classes[code], {c: float(f) for c, f in zip(forest.classes, frac)}


def predict_table(forest: RandomForest, data) -> tuple[np.ndarray, np.ndarray]:
    """Predicted labels and vote fractions (n, n_classes) for every row."""
    X = _predictor_matrix(forest, data)
    frac = forest.vote_fractions(X)
    codes = _argmax_votes(frac * forest.ntree, forest.positive)
    return np.array([forest.classes[c] for c in codes], dtype=object), frac


# ------------------------------------------------------------------- OOB


@dataclass(frozen=True)
class OobCurve:
    overall: np.ndarray
    per_class: dict  # class label -> error series
    n_scored: np.ndarray  # rows with at least one OOB vote, per prefix

    @property
    def final(self) -> float:
        return float(self.overall[-1])


def _oob_vote_counts(forest: RandomForest, X: np.ndarray) -> np.ndarray:
    """Cumulative OOB votes, shape (ntree, n, n_classes)."""
    votes = forest.tree_votes(X)
    oob = forest.inbag == 0
    counts = np.stack([((votes == c) & oob) for c in range(len(forest.classes))], axis=2)
    return np.cumsum(counts, axis=0, dtype=np.int32)


def oob_error(forest: RandomForest, train) -> OobCurve:
    """OOB error after each prefix of trees, overall and per class."""
    if isinstance(train, Table):
        X, _ = design_matrix(train, forest.features)
        y, _ = target_codes(train)
    else:
        X, y = train
        y = np.asarray(y, dtype=np.int64)
    if X.shape[0] != forest.inbag.shape[1]:
        raise SchemaMismatch("training table does not match the forest's in-bag records")
    cum = _oob_vote_counts(forest, X)
    ntree, n, C = cum.shape
    scored = cum.sum(axis=2) > 0
    pred = _argmax_votes(cum.reshape(-1, C), forest.positive).reshape(ntree, n)
    wrong = (pred != y[None, :]) & scored
    n_scored = scored.sum(axis=1)
    with np.errstate(invalid="ignore", divide="ignore"):
        overall = np.where(n_scored > 0, wrong.sum(axis=1) / np.maximum(n_scored, 1), np.nan)
        per_class = {}
        for c, label in enumerate(forest.classes):
            in_c = y == c
            denom = (scored & in_c[None, :]).sum(axis=1)
            per_class[label] = np.where(denom > 0, (wrong & in_c[None, :]).sum(axis=1) / np.maximum(denom, 1), np.nan)
    return OobCurve(overall, per_class, n_scored)


def tune_mtry(train: Table, base_config: ForestConfig, grid: Sequence[int],
              features: Sequence[str] | None = None, n_jobs: int = 1) -> tuple[int, dict]:
    """Grid-search mtry by final OOB error; ties go to the smaller mtry.

    Tuning never looks at test data.
    """
    grid = sorted(set(int(g) for g in grid))
    if not grid:
        raise EmptyGrid("mtry grid is empty")
    features = list(features) if features is not None else train.schema.predictors()
    for m in grid:
        if not 1 <= m <= len(features):
            raise ValueError(f"mtry {m} outside [1, {len(features)}]")
    errors = {}
    for m in grid:
        cfg = replace(base_config, mtry=m, seed=derive_seed(base_config.seed, m))
        forest = fit_forest(train, cfg, features, n_jobs=n_jobs)
        errors[m] = oob_error(forest, train).final
    best = min(grid, key=lambda m: (errors[m], m))
    return best, errors


# --------------------------------------------------------------- dump/load


def save_forest(forest: RandomForest, path) -> None:
    """Write a versioned, self-describing JSON dump of the forest."""
    doc = {
        "format": FORMAT_NAME,
        "version": FORMAT_VERSION,
        "config": asdict(forest.config),
        "mtry": forest.mtry,
        "regression": forest.regression,
        "classes": list(forest.classes),
        "features": list(forest.features),
        "n_levels": forest.n_levels.tolist(),
        "inbag": forest.inbag.tolist(),
        "trees": [
            {
                "feature": t.feature.tolist(),
                "threshold": [None if np.isnan(v) else float(v) for v in t.threshold],
                "catmask": [int(v) for v in t.catmask],
                "left": t.left.tolist(),
                "right": t.right.tolist(),
                "value": t.value.tolist(),
                "n_node_samples": t.n_node_samples.tolist(),
                "decrease": t.decrease.tolist(),
            }
            for t in forest.trees
        ],
    }
    Path(path).write_text(json.dumps(doc, separators=(",", ":")))


def load_forest(path) -> RandomForest:
    doc = json.loads(Path(path).read_text())
    if doc.get("format") != FORMAT_NAME or doc.get("version") != FORMAT_VERSION:
        raise SchemaMismatch(f"{path}: not a {FORMAT_NAME} v{FORMAT_VERSION} file")
    trees = []
    for t in doc["trees"]:
        trees.append(Tree(
            np.array(t["feature"], np.int32),
            np.array([np.nan if v is None else v for v in t["threshold"]], np.float64),
            np.array(t["catmask"], np.uint64),
            np.array(t["left"], np.int32),
            np.array(t["right"], np.int32),
            np.array(t["value"], np.float64).reshape(len(t["feature"]), -1),
            np.array(t["n_node_samples"], np.float64),
            np.array(t["decrease"], np.float64),
        ))
    return RandomForest(
        trees,
        np.array(doc["inbag"], np.int32),
        ForestConfig(**doc["config"]),
        tuple(doc["classes"]),
        tuple(doc["features"]),
        np.array(doc["n_levels"], np.int64),
        doc["mtry"],
        doc["regression"],
    )
