import json

import numpy as np
import pytest

from opflearn import dataset as dsm
from opflearn.errors import SchemaMismatch


def _equal(a, b):
    assert a.fingerprint == b.fingerprint
    assert (a.input_labels, a.output_labels, a.dual_labels) == (b.input_labels, b.output_labels, b.dual_labels)
    assert len(a) == len(b)
    for ra, rb in zip(a.records, b.records):
        assert ra.x.tobytes() == rb.x.tobytes()
        assert ra.y.tobytes() == rb.y.tobytes()
        assert ra.duals.tobytes() == rb.duals.tobytes()
        assert np.float64(ra.objective).tobytes() == np.float64(rb.objective).tobytes()


def test_round_trip_bitwise(run5, tmp_path):
    ds, _ = run5
    dsm.write_csv(ds, tmp_path)
    back = dsm.read_csv(tmp_path)
    _equal(ds, back)
    assert back.metadata["method"] == ds.metadata["method"]


def test_empty_dataset_header_only(case5, tmp_path):
    ds = dsm.Dataset.for_model(case5)
    dsm.write_csv(ds, tmp_path)
    for f in dsm.FILES:
        lines = (tmp_path / f).read_text().splitlines()
        assert len(lines) == 1
    assert len(dsm.read_csv(tmp_path)) == 0


def test_case5_row_widths(run5, tmp_path):
    ds, _ = run5
    sub = ds.subset([0])
    dsm.write_csv(sub, tmp_path)
    x_rows = (tmp_path / "inputs.csv").read_text().splitlines()
    y_rows = (tmp_path / "outputs.csv").read_text().splitlines()
    assert [h[:3] for h in x_rows[0].split(",")] == ["pl_"] * 3 + ["ql_"] * 3
    assert len(x_rows[1].split(",")) == 6
    assert len(y_rows[1].split(",")) == 10
    assert y_rows[0].split(",")[0].startswith("vg_")


def test_missing_duals(run5, tmp_path):
    dsm.write_csv(run5[0], tmp_path)
    (tmp_path / "duals.csv").unlink()
    with pytest.raises(SchemaMismatch):
        dsm.read_csv(tmp_path)


def test_truncated_row_reports_index(run5, tmp_path):
    dsm.write_csv(run5[0], tmp_path)
    p = tmp_path / "outputs.csv"
    lines = p.read_text().splitlines()
    lines[4] = ",".join(lines[4].split(",")[:-1])
    p.write_text("\n".join(lines) + "\n")
    with pytest.raises(SchemaMismatch, match="row 3"):
        dsm.read_csv(tmp_path)


def test_row_count_mismatch(run5, tmp_path):
    dsm.write_csv(run5[0], tmp_path)
    p = tmp_path / "inputs.csv"
    p.write_text("\n".join(p.read_text().splitlines()[:-1]) + "\n")
    with pytest.raises(SchemaMismatch):
        dsm.read_csv(tmp_path)


def test_append_dimension_check(run5):
    ds = run5[0].subset([])
    r = run5[0].records[0]
    with pytest.raises(SchemaMismatch):
        ds.append(dsm.DatasetRecord(r.x[:-1], r.y, r.duals))


def _with_patterns(case5, patterns, n_dual):
    ds = dsm.Dataset.for_model(case5)
    for p in patterns:
        d = np.zeros(n_dual)
        d[list(p)] = 1.0
        ds.records.append(dsm.DatasetRecord(np.zeros(6), np.zeros(10), d))
    return ds


def test_unique_active_sets_identical(case5, run5):
    n = len(run5[0].dual_labels)
    count, curve = dsm.unique_active_sets(_with_patterns(case5, [(0, 3)] * 100, n))
    assert count == 1 and curve == [1] * 100


def test_unique_active_sets_curve(case5, run5):
    n = len(run5[0].dual_labels)
    A, B, C = (0,), (1, 2), ()
    count, curve = dsm.unique_active_sets(_with_patterns(case5, [A, B, A, C], n))
    assert count == 3 and curve == [1, 2, 2, 3]


def test_curve_nondecreasing_ends_at_count(run5):
    count, curve = dsm.unique_active_sets(run5[0])
    assert np.all(np.diff(curve) >= 0) and curve[-1] == count


def test_split_sizes_and_determinism(run5):
    ds = run5[0]
    tr, te = dsm.split(ds, 0.8, 7)
    assert (len(tr), len(te)) == (8, 2)
    tr2, te2 = dsm.split(ds, 0.8, 7)
    assert [r.x.tobytes() for r in tr.records] == [r.x.tobytes() for r in tr2.records]
    ids = {id(r) for r in tr.records}, {id(r) for r in te.records}
    assert not ids[0] & ids[1]
    assert ids[0] | ids[1] == {id(r) for r in ds.records}


def test_split_fraction_validated(run5):
    with pytest.raises(ValueError):
        dsm.split(run5[0], 1.0, 0)


def test_dual_columns_follow_families(run5, tmp_path):
    dsm.write_csv(run5[0], tmp_path)
    header = (tmp_path / "duals.csv").read_text().splitlines()[0].split(",")
    assert header == run5[0].dual_labels
    meta = json.loads((tmp_path / "metadata.json").read_text())
    assert meta["fingerprint"] == run5[0].fingerprint


def test_target_columns(run5):
    ds = run5[0]
    assert ds.target("Pg").shape == (10, 5) and ds.target("vg").shape == (10, 5)
    with pytest.raises(ValueError):
        ds.target("Qg")
