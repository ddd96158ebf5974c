"""Slow, obviously-correct reference implementations used as test oracles."""

import json
from pathlib import Path

import numpy as np

TOL = 1e-12
CORPUS = Path(__file__).with_name("data") / "tree_corpus.json"


def load_tree_corpus():
    return json.loads(CORPUS.read_text())


def gini(labels):
    n = len(labels)
    return 1.0 - sum((labels.count(c) / n) ** 2 for c in set(labels))


def exhaustive_split(X, y, rows):
    """Try every feature and every midpoint; keep the first strictly better cut."""
    ys = [y[i] for i in rows]
    parent = gini(ys)
    best = None
    for f in range(len(X[0])):
        values = sorted({X[i][f] for i in rows})
        for a, b in zip(values, values[1:]):
            thr = 0.5 * (a + b)
            left = [y[i] for i in rows if X[i][f] <= thr]
            right = [y[i] for i in rows if X[i][f] > thr]
            n = len(rows)
            dec = parent - (len(left) / n * gini(left) + len(right) / n * gini(right))
            if best is None:
                if dec > TOL:
                    best = (f, thr, dec)
            elif dec > best[2] + TOL:
                best = (f, thr, dec)
    return best


def oracle_tree(X, y, rows=None):
    """Fully grown tree as nested dicts (min node size 1, no depth limit)."""
    rows = list(range(len(y))) if rows is None else rows
    ys = [y[i] for i in rows]
    if len(set(ys)) == 1 or len(rows) <= 1:
        return None
    split = exhaustive_split(X, y, rows)
    if split is None:
        return None
    f, thr, dec = split
    return {
        "feature": f, "threshold": thr, "decrease": dec,
        "left": oracle_tree(X, y, [i for i in rows if X[i][f] <= thr]),
        "right": oracle_tree(X, y, [i for i in rows if X[i][f] > thr]),
    }


def tree_mismatches(tree, oracle, node=0, path="root"):
    """Every node where the fitted tree disagrees with the oracle."""
    if oracle is None:
        return [] if tree.is_leaf(node) else [f"{path}: expected leaf, got split on {tree.feature[node]}"]
    if tree.is_leaf(node):
        return [f"{path}: expected split on {oracle['feature']}, got leaf"]
    bad = []
    if tree.feature[node] != oracle["feature"]:
        bad.append(f"{path}: feature {tree.feature[node]} != {oracle['feature']}")
    elif tree.threshold[node] != oracle["threshold"]:
        bad.append(f"{path}: threshold {tree.threshold[node]} != {oracle['threshold']}")
    elif abs(tree.decrease[node] - oracle["decrease"]) > TOL:
        bad.append(f"{path}: decrease {tree.decrease[node]} != {oracle['decrease']}")
    if bad:
        return bad
    return (tree_mismatches(tree, oracle["left"], tree.left[node], path + ".L")
            + tree_mismatches(tree, oracle["right"], tree.right[node], path + ".R"))


def corpus_mismatches():
    """Fit one full tree per corpus dataset and compare with the oracle."""
    from adscreen.forest import ForestConfig, fit_tree

    cfg = ForestConfig(ntree=1, mtry=2, min_node_size=1)
    failures = []
    for k, case in enumerate(load_tree_corpus()):
        X, y = case["X"], case["y"]
        tree = fit_tree(np.array(X), np.array(y), np.arange(len(y)), cfg, seed=k)
        bad = tree_mismatches(tree, oracle_tree(X, y))
        if bad:
            failures.append((k, bad))
    return failures


def smote_violations(train, config):
    """Contract breaches of one SMOTE call: parity, parent segments, untouched originals."""
    from adscreen.balance import smote, smote_parents

    out = smote(train, config)
    target = train.schema.target
    problems = []
    counts = out.class_counts()
    if config.ratio is None and len(set(counts.values())) != 1:
        problems.append(f"counts not equal: {counts}")
    n = train.n_rows
    head = out.take(np.arange(n))
    if not head.equals(train):
        problems.append("original rows changed")
    seeds, nbrs = smote_parents(train, config)
    if len(seeds) != out.n_rows - n:
        problems.append("parent count does not match synthetic rows")
        return problems
    for c in train.schema.columns:
        if c.kind != "numeric":
            continue
        v = out[c.name][n:]
        a, b = train[c.name][seeds], train[c.name][nbrs]
        if np.any(v < np.minimum(a, b)) or np.any(v > np.maximum(a, b)):
            problems.append(f"{c.name}: synthetic value off its parents' segment")
    minority = {train[target][i] for i in seeds}
    if len(minority) > 1 or set(out[target][n:]) - minority:
        problems.append("synthetic rows not all minority")
    return problems
