import json

import numpy as np
import pytest

from gtreg import duality, report
from gtreg.data import ColumnError, DataError, load_dataset, read_table
from gtreg.drf import DrfEvaluator, qgm_check
from gtreg.inference import sandwich


def write(tmp_path, text, name="d.csv"):
    p = tmp_path / name
    p.write_text(text, encoding="utf-8")
    return p


def test_read_and_select_columns(tmp_path):
    p = write(tmp_path, "y,a,b\n1,2,3\n4,5,6\n7,8,9\n")
    header, table, digest = read_table(p)
    assert header == ["y", "a", "b"] and table.shape == (3, 3) and len(digest) == 64
    ds = load_dataset(p, covariates=["b"])
    np.testing.assert_array_equal(ds.x[:, 0], [3, 6, 9])
    ds = load_dataset(p)
    assert ds.covariates == ("a", "b")


def test_lagged_outcome(tmp_path):
    p = write(tmp_path, "y\n1\n2\n4\n8\n")
    ds = load_dataset(p, lag=True)
    np.testing.assert_array_equal(ds.y, [2, 4, 8])
    np.testing.assert_array_equal(ds.x[:, 0], [1, 2, 4])
    assert ds.covariates == ("y_lag1",)


def test_data_errors_report_lines(tmp_path):
    with pytest.raises(DataError, match="lines 3"):
        load_dataset(write(tmp_path, "y,x\n1,2\n3,\n5,6\n"))
    with pytest.raises(DataError, match="line 2, column 'x'"):
        load_dataset(write(tmp_path, "y,x\n1,abc\n"))
    with pytest.raises(DataError, match="no data rows"):
        load_dataset(write(tmp_path, "y,x\n"))
    with pytest.raises(DataError, match="cannot read"):
        load_dataset(tmp_path / "missing.csv")
    with pytest.raises(ColumnError):
        load_dataset(write(tmp_path, "a,b\n1,2\n"))
    with pytest.raises(ColumnError):
        load_dataset(write(tmp_path, "y,x\n1,2\n"), covariates=["z"])


def _fit_report(ls_designs, ls_fits, name="spline-spline"):
    d, fit = ls_designs[name], ls_fits[name]
    return report.fit_report(
        d, fit.b_hat, estimator="ml", converged=True, score_norm=fit.score_norm,
        iterations=fit.iterations, value=fit.value, message="converged",
        certificate=duality.certificate(fit.b_hat, d),
        qgm=qgm_check(DrfEvaluator(d.dictionary, fit.b_hat)), sandwich=sandwich(fit, d),
    )


def test_fit_report_round_trip(tmp_path, ls_designs, ls_fits):
    rep = _fit_report(ls_designs, ls_fits)
    assert rep["consistency"]["raw_vs_std_max_abs"] < 1e-8
    path = tmp_path / "fit.json"
    report.write_report(path, rep)
    stored = report.load_fit(path)
    np.testing.assert_array_equal(stored.b_std, ls_fits["spline-spline"].b_hat)
    d = ls_designs["spline-spline"]
    np.testing.assert_allclose(stored.dictionary.eval_T(d.x[:5], d.y[:5]),
                               d.dictionary.eval_T(d.x[:5], d.y[:5]))
    assert stored.cov_std.shape == (d.jk, d.jk)


def test_schema_rejections(tmp_path, ls_designs, ls_fits):
    rep = _fit_report(ls_designs, ls_fits, "linear-linear")
    bad = dict(rep)
    del bad["b_std"]
    with pytest.raises(report.SchemaError):
        report.write_report(tmp_path / "x.json", bad)
    p = tmp_path / "wrong.json"
    p.write_text(json.dumps({**json.loads(report.dumps(rep)), "schema": "other/9"}))
    with pytest.raises(report.SchemaError, match="schema tag"):
        report.load_fit(p)
    p.write_text("{not json")
    with pytest.raises(report.SchemaError):
        report.load_fit(p)


def test_non_finite_values_serialize_as_null():
    text = report.dumps({"a": float("nan"), "b": [np.inf, 1.0], "c": np.float64(2.5)})
    assert json.loads(text) == {"a": None, "b": [None, 1.0], "c": 2.5}
