import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from adscreen.dataset import (Column, Schema, Table, apply_scaler, binarize_diagnosis, derive_age, design_matrix,
                              drop_columns, fit_scaler, load_csv, merge_on_key, sanitize, split_indices,
                              split_stratified, stratified_counts, write_csv)
from adscreen.errors import (DegenerateClass, DuplicateKey, InvalidChronology, NameCollision, ParseError,
                             SchemaError, SchemaMismatch, TargetProtected, UnknownColumn, UnknownLevel)

from conftest import make_table

DX3 = Column("DIAGNOSIS", "target", "Target", ("HC", "MCI", "AD"))
MMSE = Column("MMSCORE", "numeric", "Neuropsych", (0, 30))


def small_schema():
    return Schema((Column("RID", "identifier"), MMSE, Column("SEX", "binary", "Demographic"), DX3))


# ----------------------------------------------------------------- schema


def test_schema_rejects_duplicate_names():
    with pytest.raises(SchemaError):
        Schema((MMSE, MMSE))


def test_schema_rejects_two_targets():
    with pytest.raises(SchemaError):
        Schema((DX3, Column("other", "target", "Target", ("a", "b"))))


def test_schema_rejects_bad_range_and_levels():
    with pytest.raises(SchemaError):
        Column("x", "numeric", valid_range=(5, 1))
    with pytest.raises(SchemaError):
        Column("c", "categorical", valid_range=("a", "a"))
    with pytest.raises(SchemaError):
        Column("c", "categorical", valid_range=())


def test_schema_json_round_trip(tmp_path):
    s = small_schema()
    s.save(tmp_path / "s.json")
    assert Schema.load(tmp_path / "s.json") == s


def test_schema_unknown_key_rejected():
    with pytest.raises(SchemaError):
        Column.from_dict({"name": "x", "kind": "numeric", "colour": "red"})


# ------------------------------------------------------------------- csv


def write_text(path, text):
    path.write_text(text)
    return path


def test_load_csv_na_cell_masked(tmp_path):
    p = write_text(tmp_path / "a.csv", "RID,MMSCORE,SEX,DIAGNOSIS\nS1,28,0,HC\nS2,NA,1,AD\nS3,25,,MCI\n")
    t = load_csv(p, small_schema())
    assert t.n_rows == 3
    assert t.missing["MMSCORE"].tolist() == [False, True, False]
    assert t.missing["SEX"].tolist() == [False, False, True]
    assert t.n_missing() == 2


def test_load_csv_header_order_insensitive(tmp_path):
    p = write_text(tmp_path / "a.csv", "DIAGNOSIS,SEX,MMSCORE,RID\nHC,0,28,S1\n")
    t = load_csv(p, small_schema())
    assert t["MMSCORE"][0] == 28.0


def test_load_csv_missing_target_column(tmp_path):
    p = write_text(tmp_path / "a.csv", "RID,MMSCORE,SEX\nS1,28,0\n")
    with pytest.raises(SchemaMismatch):
        load_csv(p, small_schema())


def test_load_csv_parse_error_location(tmp_path):
    p = write_text(tmp_path / "a.csv", "RID,MMSCORE,SEX,DIAGNOSIS\nS1,abc,0,HC\n")
    with pytest.raises(ParseError) as ei:
        load_csv(p, small_schema())
    assert ei.value.row == 2 and ei.value.col == "MMSCORE"


def test_load_csv_rejects_non_finite(tmp_path):
    p = write_text(tmp_path / "a.csv", "RID,MMSCORE,SEX,DIAGNOSIS\nS1,inf,0,HC\n")
    with pytest.raises(ParseError):
        load_csv(p, small_schema())


def test_extra_missing_markers(tmp_path):
    p = write_text(tmp_path / "a.csv", "RID,MMSCORE,SEX,DIAGNOSIS\nS1,-4,0,HC\n")
    t = load_csv(p, small_schema(), missing_markers=("", "NA", "-4"))
    assert t.missing["MMSCORE"][0]


@settings(max_examples=40, deadline=None)
@given(st.lists(st.tuples(st.one_of(st.none(), st.floats(-1e6, 1e6, allow_nan=False)),
                          st.sampled_from(["0", "1", None]),
                          st.sampled_from(["HC", "MCI", "AD"])), min_size=1, max_size=20))
def test_csv_round_trip(tmp_path_factory, rows):
    schema = Schema((Column("x", "numeric"), Column("b", "binary"), DX3))
    n = len(rows)
    t = Table(schema,
              {"x": [0.0 if r[0] is None else r[0] for r in rows], "b": [r[1] or "0" for r in rows],
               "DIAGNOSIS": [r[2] for r in rows]},
              {"x": [r[0] is None for r in rows], "b": [r[1] is None for r in rows],
               "DIAGNOSIS": [False] * n}, n)
    p = tmp_path_factory.mktemp("rt") / "t.csv"
    write_csv(t, p)
    assert load_csv(p, schema).equals(t)


def test_table_is_immutable():
    t = make_table([MMSE, DX3], {"MMSCORE": [1.0, 2.0], "DIAGNOSIS": ["HC", "AD"]})
    with pytest.raises(ValueError):
        t["MMSCORE"][0] = 5.0


def test_table_rejects_nonfinite_observed():
    with pytest.raises(SchemaMismatch):
        make_table([MMSE, DX3], {"MMSCORE": [np.inf], "DIAGNOSIS": ["HC"]})


# ----------------------------------------------------------------- merge


def keyed(name, keys, col):
    return make_table([Column("RID", "identifier"), Column(col, "numeric")],
                      {"RID": keys, col: list(range(len(keys)))})


def test_merge_full_overlap_preserves_rows():
    a = keyed("a", ["1", "2", "3"], "u")
    b = keyed("b", ["3", "1", "2"], "v")
    m, rep = merge_on_key([a, b], ["RID"])
    assert m.n_rows == 3 and len(m.names) == 3
    assert rep.dropped == (0, 0)
    # row "3" of a pairs with row 0 of b
    assert m["v"][m["RID"].tolist().index("3")] == 0.0


def test_merge_partial_overlap_reports_drops():
    a = keyed("a", ["1", "2", "3", "4", "5"], "u")
    b = keyed("b", ["2", "4", "5"], "v")
    m, rep = merge_on_key([a, b], ["RID"])
    assert m.n_rows == 3
    assert rep.dropped == (2, 0)


def test_merge_name_collision():
    with pytest.raises(NameCollision):
        merge_on_key([keyed("a", ["1"], "u"), keyed("b", ["1"], "u")], ["RID"])


def test_merge_duplicate_key():
    with pytest.raises(DuplicateKey):
        merge_on_key([keyed("a", ["1", "1"], "u"), keyed("b", ["1"], "v")], ["RID"])


# ------------------------------------------------------------------- age


def dates_table(pairs):
    cols = [Column("B", "date", "Demographic"), Column("E", "date", "Demographic")]
    return make_table(cols, {"B": [p[0] for p in pairs], "E": [p[1] for p in pairs]})


def test_derive_age_calendar_floor():
    t = derive_age(dates_table([("1940-03-15", "2010-03-14"), ("1940-03-15", "2010-03-15"),
                                ("1950-01-01", "1950-01-01")]), "B", "E")
    assert t["age"].tolist() == [69.0, 70.0, 0.0]


def test_derive_age_leap_day_birthday():
    t = derive_age(dates_table([("1944-02-29", "2011-02-28"), ("1944-02-29", "2011-03-01")]), "B", "E")
    assert t["age"].tolist() == [66.0, 67.0]


def test_derive_age_invalid_chronology_masks_and_warns():
    with pytest.warns(InvalidChronology) as rec:
        t = derive_age(dates_table([("2000-01-01", "1999-12-31"), ("1950-06-01", "2000-06-01")]), "B", "E")
    assert rec[0].message.rows == [0]
    assert t.missing["age"].tolist() == [True, False]


def test_derive_age_masked_date_propagates():
    t = dates_table([("1940-01-01", "2000-01-01")])
    t = Table(t.schema, dict(t.columns), {"B": [True], "E": [False]}, 1)
    assert derive_age(t, "B", "E").missing["age"][0]


# -------------------------------------------------------------- sanitize


def test_sanitize_masks_out_of_range():
    t = make_table([MMSE, DX3], {"MMSCORE": [34.0, 20.0], "DIAGNOSIS": ["HC", "AD"]})
    out, rep = sanitize(t)
    assert rep.replaced == {"MMSCORE": 1}
    assert out.missing["MMSCORE"].tolist() == [True, False]
    assert out["MMSCORE"][1] == 20.0


def test_sanitize_unknown_level_and_idempotence():
    apo = Column("APGEN", "categorical", "ApoE", ("e3e3", "e3e4"))
    t = make_table([apo, DX3], {"APGEN": ["XZ", "e3e3"], "DIAGNOSIS": ["HC", "Bogus"]})
    once, rep = sanitize(t)
    assert rep.replaced == {"APGEN": 1, "DIAGNOSIS": 1}
    twice, rep2 = sanitize(once)
    assert twice.equals(once) and rep2.total == 0


def test_sanitize_all_valid_identity():
    t = make_table([MMSE, DX3], {"MMSCORE": [0.0, 30.0], "DIAGNOSIS": ["HC", "AD"]})
    out, rep = sanitize(t)
    assert out.equals(t) and rep.replaced == {}


# ------------------------------------------------------------------ drop


def test_drop_columns_policies():
    t = make_table(list(small_schema().columns),
                   {"RID": ["a"], "MMSCORE": [1.0], "SEX": ["0"], "DIAGNOSIS": ["HC"]})
    assert "RID" not in drop_columns(t, ["RID"]).schema
    assert drop_columns(t, []).equals(t)
    with pytest.raises(UnknownColumn):
        drop_columns(t, ["nope"])
    with pytest.raises(TargetProtected):
        drop_columns(t, ["DIAGNOSIS"])
    assert "DIAGNOSIS" not in drop_columns(t, ["DIAGNOSIS"], allow_target=True).schema


# ------------------------------------------------------------- binarize


def test_binarize_diagnosis():
    t = make_table([MMSE, DX3], {"MMSCORE": [1.0, 2.0, 3.0], "DIAGNOSIS": ["HC", "MCI", "AD"]})
    b = binarize_diagnosis(t)
    assert b["DIAGNOSIS"].tolist() == ["HC", "NonHC", "NonHC"]
    assert np.array_equal(b["MMSCORE"], t["MMSCORE"])
    assert b.n_rows == 3


def test_binarize_unexpected_level():
    t = make_table([Column("DIAGNOSIS", "target", "Target", ("HC", "MCI", "AD", "Unknown"))],
                   {"DIAGNOSIS": ["Unknown"]})
    with pytest.raises(UnknownLevel):
        binarize_diagnosis(t)


# ----------------------------------------------------------------- split


def labelled(n_a, n_b):
    y = ["HC"] * n_a + ["NonHC"] * n_b
    return make_table([Column("x", "numeric"), Column("dx", "target", "Target", ("HC", "NonHC"))],
                      {"x": list(range(n_a + n_b)), "dx": y})


def test_split_counts_60_40():
    tr, te = split_stratified(labelled(60, 40), 0.7, seed=3)
    assert tr.class_counts() == {"HC": 42, "NonHC": 28}
    assert te.class_counts() == {"HC": 18, "NonHC": 12}


def test_split_cohort_sizes():
    assert sum(stratified_counts([542, 320], 0.7)) == 603


def test_split_deterministic_and_partition():
    t = labelled(37, 23)
    a = split_indices(t, 0.7, 9)
    b = split_indices(t, 0.7, 9)
    assert all(np.array_equal(x, y) for x, y in zip(a, b))
    assert sorted(np.concatenate(a).tolist()) == list(range(60))


def test_split_empty_class():
    with pytest.raises(DegenerateClass):
        split_stratified(labelled(10, 0), 0.7, 0)


@settings(max_examples=60, deadline=None)
@given(st.integers(1, 200), st.integers(1, 200), st.floats(0.05, 0.95))
def test_split_proportion_within_one_row(n_a, n_b, frac):
    counts = stratified_counts([n_a, n_b], frac)
    assert sum(counts) == round((n_a + n_b) * frac)
    for c, n in zip(counts, (n_a, n_b)):
        assert abs(c - n * frac) <= 1.0 + 1e-9


# ------------------------------------------------------------------ scale


def test_scaler_population_std():
    t = make_table([Column("x", "numeric"), Column("s", "binary")], {"x": [2.0, 4.0, 6.0], "s": ["0", "1", "0"]})
    p = fit_scaler(t)
    assert p.mean["x"] == 4.0 and p.std["x"] == pytest.approx(np.sqrt(8 / 3))
    # population convention: sqrt(8/3), not the sample value 2
    out = apply_scaler(t, p)
    assert np.allclose(out["x"], (np.array([2, 4, 6]) - 4) / np.sqrt(8 / 3))
    assert out["s"].tolist() == ["0", "1", "0"]


def test_scaler_refit_idempotent(rng):
    t = make_table([Column("x", "numeric")], {"x": rng.normal(3, 2, 50).tolist()})
    once = apply_scaler(t, fit_scaler(t))
    twice = apply_scaler(once, fit_scaler(once))
    assert np.allclose(once["x"], twice["x"], atol=1e-12)


def test_scaler_constant_column_warns():
    t = make_table([Column("x", "numeric")], {"x": [5.0, 5.0]})
    with pytest.warns(RuntimeWarning):
        out = apply_scaler(t, fit_scaler(t))
    assert out["x"].tolist() == [0.0, 0.0]


def test_scaler_preserves_mask():
    t = make_table([Column("x", "numeric")], {"x": [1.0, 0.0, 3.0]}, {"x": [False, True, False]})
    out = apply_scaler(t, fit_scaler(t))
    assert out.missing["x"].tolist() == [False, True, False]
    assert np.allclose(out["x"][[0, 2]], [-1, 1])


def test_design_matrix_codes():
    apo = Column("APGEN", "categorical", "ApoE", ("e3e3", "e3e4", "e4e4"))
    t = make_table([apo, Column("s", "binary"), Column("x", "numeric")],
                   {"APGEN": ["e4e4", "e3e3"], "s": ["1", "0"], "x": [0.5, 2.0]}, {"x": [False, True]})
    X, lv = design_matrix(t)
    assert X[0].tolist() == [2.0, 1.0, 0.5]
    assert np.isnan(X[1, 2])
    assert lv.tolist() == [3, 0, 0]
