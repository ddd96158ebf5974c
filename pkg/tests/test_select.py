import numpy as np
import pytest

from adscreen.dataset import Column, Schema, Table
from adscreen.errors import ConfigError, EmptyConfig
from adscreen.forest import ForestConfig, fit_forest
from adscreen.select import (DEFAULT_BORUTA_NTREE, DEFAULT_BORUTA_ROUNDS, DEFAULT_PERMUTATIONS, boruta,
                             permutation_importance, write_boruta_csv, write_importance_csv)
from adscreen.synthgen import planted_table

from conftest import numeric_table


def copy_plus_noise(rng, n=1000):
    y = np.where(rng.random(n) < 0.5, "NonHC", "HC")
    copy = (y == "NonHC").astype(float)
    X = np.column_stack([copy, rng.normal(size=n)])
    return numeric_table(X, y, names=["copy", "noise"])


def test_defaults():
    assert DEFAULT_PERMUTATIONS == 50
    assert (DEFAULT_BORUTA_NTREE, DEFAULT_BORUTA_ROUNDS) == (500, 20)


def test_importance_copy_of_target_dominates(rng):
    t = copy_plus_noise(rng)
    f = fit_forest(t, ForestConfig(ntree=50, mtry=2, seed=1))
    rep = permutation_importance(f, t, n_permutations=50, seed=2)
    assert rep.ranked()[0].feature == "copy"
    assert rep["copy"].mean_loss_drop > 0.2
    assert abs(rep["noise"].mean_loss_drop) <= 0.02


def test_importance_noise_on_fresh_rows(rng):
    train = copy_plus_noise(rng)
    test = copy_plus_noise(rng)
    f = fit_forest(train, ForestConfig(ntree=50, mtry=2, seed=1))
    rep = permutation_importance(f, test, n_permutations=50, seed=3)
    assert abs(rep["noise"].mean_loss_drop) <= 0.02
    assert rep.baseline_loss == 0.0


def test_importance_auc_loss(rng):
    t = copy_plus_noise(rng, n=400)
    f = fit_forest(t, ForestConfig(ntree=30, mtry=2, seed=1))
    rep = permutation_importance(f, t, n_permutations=10, seed=0, loss="auc")
    assert rep.loss == "auc" and rep["copy"].mean_loss_drop > 0.2


def test_importance_errors(rng):
    t = copy_plus_noise(rng, n=50)
    f = fit_forest(t, ForestConfig(ntree=5, seed=1))
    with pytest.raises(EmptyConfig):
        permutation_importance(f, t, n_permutations=0)
    with pytest.raises(ConfigError):
        permutation_importance(f, t, loss="logloss")


def test_importance_deterministic(rng):
    t = copy_plus_noise(rng, n=200)
    f = fit_forest(t, ForestConfig(ntree=10, seed=1))
    a = permutation_importance(f, t, 5, seed=7)
    b = permutation_importance(f, t, 5, seed=7)
    assert a == b


def test_importance_csv(rng, tmp_path):
    t = copy_plus_noise(rng, n=60)
    rep = permutation_importance(fit_forest(t, ForestConfig(ntree=5)), t, 3)
    write_importance_csv(rep, tmp_path / "i.csv")
    lines = (tmp_path / "i.csv").read_text().splitlines()
    assert lines[0] == "feature,mean_loss_drop,stddev" and len(lines) == 3


def test_boruta_confirms_target_copy(rng):
    t = copy_plus_noise(rng, n=300)
    rep = boruta(t, forest_ntree=30, max_rounds=10, seed=4)
    f = rep["copy"]
    assert f.decision == "Confirmed" and f.hits == f.rounds


def test_boruta_planted_small():
    rep = boruta(planted_table(seed=3), forest_ntree=60, max_rounds=20, seed=3)
    assert all(rep[f"REL{j}"].decision == "Confirmed" for j in range(4))
    assert len([f for f in rep.with_decision("Rejected") if f.startswith("NOISE")]) >= 20


def test_boruta_report_partition_and_no_shadows():
    t = planted_table(n=200, n_noise=6, seed=1)
    rep = boruta(t, forest_ntree=20, max_rounds=6, seed=1)
    names = [f.feature for f in rep.features]
    assert names == t.schema.predictors()
    groups = [set(rep.with_decision(d)) for d in ("Confirmed", "Rejected", "Tentative")]
    assert set().union(*groups) == set(names)
    assert sum(len(g) for g in groups) == len(names)
    assert all(f.hits <= f.rounds <= rep.rounds_run for f in rep.features)


def test_boruta_hits_non_decreasing_with_rounds():
    t = planted_table(n=200, n_noise=6, seed=2)
    prev = None
    for r in (2, 4, 6):
        rep = boruta(t, forest_ntree=20, max_rounds=r, seed=5)
        if prev is not None:
            for a, b in zip(prev.features, rep.features):
                assert b.hits >= a.hits
        prev = rep


def test_boruta_deterministic():
    t = planted_table(n=150, n_noise=4, seed=0)
    assert boruta(t, 15, 4, seed=9) == boruta(t, 15, 4, seed=9)


def test_boruta_errors():
    t = planted_table(n=50, n_noise=2)
    with pytest.raises(EmptyConfig):
        boruta(t, max_rounds=0)
    with pytest.raises(ConfigError):
        boruta(t, forest_ntree=5, alpha=1.5)


def test_boruta_csv(tmp_path):
    rep = boruta(planted_table(n=100, n_noise=2), forest_ntree=10, max_rounds=2)
    write_boruta_csv(rep, tmp_path / "b.csv")
    lines = (tmp_path / "b.csv").read_text().splitlines()
    assert lines[0] == "feature,decision,hits,rounds" and len(lines) == 7
