"""Regenerates tree_corpus.json; the committed file is the pinned copy."""

import json
from pathlib import Path

import numpy as np


def column(rng, n, kind):
    if kind == "binary":
        return rng.integers(0, 2, n).astype(float)
    if kind == "int":
        return rng.integers(0, 6, n).astype(float)
    return np.round(rng.normal(0, 3, n), 2)


def main():
    rng = np.random.default_rng(20240601)
    corpus = []
    for _ in range(400):
        n = int(rng.integers(2, 13))
        kinds = [str(rng.choice(["binary", "int", "real"])) for _ in range(2)]
        X = np.column_stack([column(rng, n, k) for k in kinds])
        y = (rng.random(n) < rng.uniform(0.2, 0.8)).astype(int)
        corpus.append({"kinds": kinds, "X": X.tolist(), "y": y.tolist()})
    Path(__file__).with_name("tree_corpus.json").write_text(json.dumps(corpus, indent=None))


if __name__ == "__main__":
    main()
