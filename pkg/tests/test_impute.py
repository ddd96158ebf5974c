import numpy as np
import pytest

from adscreen.dataset import Column
from adscreen.errors import AllMissingColumn, ConfigError, NoEvalCells, SchemaMismatch
from adscreen.impute import ImputeConfig, imputation_nrmse, mean_mode_fill, missforest

from conftest import make_table, numeric_table

X_ = Column("x", "numeric")
Y_ = Column("y", "numeric")
B_ = Column("b", "binary")
C_ = Column("c", "categorical", "Meta", ("lo", "mid", "hi"))
DX = Column("dx", "target", "Target", ("HC", "NonHC"))


def test_defaults():
    cfg = ImputeConfig()
    assert (cfg.ntree, cfg.max_iter) == (100, 10)


@pytest.mark.parametrize("kw", [{"ntree": 0}, {"max_iter": 0}, {"mtry": 0}])
def test_config_validation(kw):
    with pytest.raises(ConfigError):
        ImputeConfig(**kw)


def test_mean_fill_numeric():
    t = make_table([X_], {"x": [1.0, 0.0, 3.0]}, {"x": [0, 1, 0]})
    out = mean_mode_fill(t)
    assert out["x"].tolist() == [1.0, 2.0, 3.0]
    assert not out.missing["x"].any()


def test_mode_fill_binary():
    t = make_table([B_], {"b": ["0", "0", "1", "1"]}, {"b": [0, 0, 0, 1]})
    assert mean_mode_fill(t)["b"][3] == "0"


def test_mode_tie_takes_first_level_lexicographically():
    t = make_table([C_], {"c": ["mid", "hi", "lo"]}, {"c": [0, 0, 1]})
    assert mean_mode_fill(t)["c"][2] == "hi"


def test_fill_without_missing_is_identity():
    t = make_table([X_, B_], {"x": [1.0, 2.0], "b": ["0", "1"]})
    out = mean_mode_fill(t)
    assert out["x"].tolist() == [1.0, 2.0] and out["b"].tolist() == ["0", "1"]


def test_fill_all_missing_column():
    t = make_table([X_], {"x": [0.0, 0.0]}, {"x": [1, 1]})
    with pytest.raises(AllMissingColumn):
        mean_mode_fill(t)


def line_table():
    xs = [float(v) for v in range(1, 11)]
    miss_y = [v == 7 for v in range(1, 11)]
    return make_table([X_, Y_], {"x": xs, "y": [0.0 if m else v for v, m in zip(xs, miss_y)]}, {"y": miss_y})


def test_missforest_on_a_line():
    res = missforest(line_table(), ImputeConfig(ntree=100, seed=0))
    y = res.table["y"]
    assert 1.0 <= y[6] <= 10.0
    assert abs(y[6] - 7.0) <= 1.5
    assert 1 <= res.iterations_run <= 10
    assert len(res.diff_trace) == res.iterations_run


def test_missforest_no_missing_returns_input():
    t = make_table([X_, Y_], {"x": [1.0, 2.0], "y": [3.0, 4.0]})
    res = missforest(t)
    assert res.table is t and res.iterations_run == 0


def test_missforest_needs_two_columns():
    t = make_table([X_], {"x": [1.0, 2.0, 0.0]}, {"x": [0, 0, 1]})
    with pytest.raises(SchemaMismatch):
        missforest(t)


def mixed_table(rng, n=120, rate=0.15):
    z = rng.normal(size=n)
    x = z + 0.3 * rng.normal(size=n)
    y = 2 * z + 0.3 * rng.normal(size=n)
    b = np.where(z + 0.5 * rng.normal(size=n) > 0, "1", "0")
    c = np.array(["lo", "mid", "hi"], dtype=object)[np.digitize(z, [-0.5, 0.5])]
    dx = np.where(z > 0, "NonHC", "HC")
    data = {"x": x, "y": y, "b": b, "c": c, "dx": dx}
    truth = make_table([X_, Y_, B_, C_, DX], data)
    miss = {k: rng.random(n) < rate for k in ("x", "y", "b", "c")}
    return make_table([X_, Y_, B_, C_, DX], data, miss), truth


def test_observed_cells_bit_identical_and_ranges(rng):
    masked, _ = mixed_table(rng)
    res = missforest(masked, ImputeConfig(ntree=30, seed=4))
    out = res.table
    for name in ("x", "y", "b", "c"):
        m = masked.missing[name]
        assert not out.missing[name].any()
        if masked.schema[name].kind == "numeric":
            assert np.array_equal(out[name][~m].view(np.int64), masked[name][~m].view(np.int64))
            lo, hi = masked[name][~m].min(), masked[name][~m].max()
            assert np.all((out[name][m] >= lo) & (out[name][m] <= hi))
        else:
            assert out[name][~m].tolist() == masked[name][~m].tolist()
            assert set(out[name][m]) <= set(masked.schema[name].levels)
    assert res.iterations_run <= 10


def test_missforest_is_deterministic(rng):
    masked, _ = mixed_table(rng)
    a = missforest(masked, ImputeConfig(ntree=20, seed=9))
    b = missforest(masked, ImputeConfig(ntree=20, seed=9))
    assert a.diff_trace == b.diff_trace
    for name in ("x", "y", "b", "c"):
        assert a.table[name].tolist() == b.table[name].tolist()


def test_missforest_beats_mean_fill_on_correlated_data(rng):
    masked, truth = mixed_table(rng, n=200)
    mask = {k: masked.missing[k] for k in ("x", "y")}
    mf = imputation_nrmse(missforest(masked, ImputeConfig(ntree=50, seed=1)).table, truth, mask)
    mean = imputation_nrmse(mean_mode_fill(masked), truth, mask)
    assert mf <= 0.8 * mean


def test_max_iter_caps_iterations(rng):
    masked, _ = mixed_table(rng)
    assert missforest(masked, ImputeConfig(ntree=10, max_iter=1)).iterations_run == 1


def test_target_is_not_a_predictor(rng):
    # Relabelling the target must not change the imputed features.
    masked, _ = mixed_table(rng)
    flipped = masked.with_column(DX, np.where(masked["dx"] == "HC", "NonHC", "HC").astype(object), masked.missing["dx"])
    a = missforest(masked, ImputeConfig(ntree=15, seed=2)).table
    b = missforest(flipped, ImputeConfig(ntree=15, seed=2)).table
    assert a["x"].tolist() == b["x"].tolist() and a["c"].tolist() == b["c"].tolist()


def test_nrmse_perfect_is_zero():
    t = numeric_table([[1.0], [2.0], [4.0]], ["HC", "NonHC", "HC"])
    assert imputation_nrmse(t, t, {"x0": [True, True, False]}) == 0.0


def test_nrmse_mean_imputation_is_about_one(rng):
    v = rng.normal(5, 2, 2000)
    hide = rng.random(2000) < 0.3
    truth = numeric_table(v[:, None], ["HC"] * 2000)
    filled = numeric_table(np.where(hide, v[hide].mean(), v)[:, None], ["HC"] * 2000)
    assert imputation_nrmse(filled, truth, {"x0": hide}) == pytest.approx(1.0, abs=1e-9)


def test_nrmse_needs_cells():
    t = numeric_table([[1.0], [2.0]], ["HC", "NonHC"])
    with pytest.raises(NoEvalCells):
        imputation_nrmse(t, t, {"x0": [False, False]})
    with pytest.raises(NoEvalCells):
        imputation_nrmse(t, t, {})
