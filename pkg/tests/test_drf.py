import warnings

import numpy as np
import pytest
from scipy.integrate import quad
from scipy.stats import norm

from gtreg.dictionary import DictionarySpec, build_dictionary
from gtreg.drf import (
    BAND_COLUMNS,
    DrfEvaluator,
    QuantileError,
    band_grid,
    default_x_grid,
    qgm_check,
    z_multiplier,
)
from gtreg.inference import sandwich
from gtreg.simulate import linear_linear_raw

B0 = np.array([-1.0, 1.0, -1.0, 0.5])  # beta1 = -1 - x, beta2 = 1 + 0.5 x


@pytest.fixture(scope="module")
def truth():
    return DrfEvaluator(linear_linear_raw(1), B0)


def test_analytic_location_scale_functions(truth):
    x = np.linspace(0.05, 0.95, 7)
    y = np.linspace(-3, 3, 7)
    b1, b2 = -1 - x, 1 + 0.5 * x
    est, se = truth.cdf(x, y)
    assert se is None
    np.testing.assert_allclose(est, norm.cdf(b1 + b2 * y), rtol=1e-13)
    np.testing.assert_allclose(truth.pdf(x, y)[0], norm.pdf(b1 + b2 * y) * b2, rtol=1e-13)
    u = np.linspace(0.02, 0.98, 7)
    np.testing.assert_allclose(truth.quantile(x, u)[0], (norm.ppf(u) - b1) / b2, atol=1e-10)


def test_scalar_inputs_give_scalars(truth):
    est, se = truth.cdf(0.5, 0.1)
    assert isinstance(est, float) and se is None
    assert isinstance(truth.quantile(0.5, 0.3)[0], float)
    assert isinstance(truth.inverse(0.5, 0.0), float)


@pytest.mark.parametrize("name", ["linear-linear", "spline-x", "spline-y", "spline-spline"])
def test_round_trip_and_monotone_quantiles(ls_designs, ls_fits, name):
    d, fit = ls_designs[name], ls_fits[name]
    ev = DrfEvaluator(d.dictionary, fit.b_hat)
    X = default_x_grid(d.dictionary, 21)
    u = np.linspace(0.01, 0.99, 49)
    for x in X[:, 0]:
        q, _ = ev.quantile(np.full(u.size, x), u)
        assert np.all(np.diff(q) > 0)
        assert np.max(np.abs(ev.cdf(np.full(u.size, x), q)[0] - u)) <= 1e-8


def test_pdf_integrates_to_one_on_spline_spline(ls_designs, ls_fits):
    d, fit = ls_designs["spline-spline"], ls_fits["spline-spline"]
    ev = DrfEvaluator(d.dictionary, fit.b_hat)
    knots = d.dictionary.scaling.y_raw(np.asarray(d.dictionary.s_knots))
    for x in (0.1, 0.5, 0.9):
        total = quad(lambda y: ev.pdf(x, y)[0], -np.inf, np.inf, points=None, limit=500)[0]
        inner = sum(quad(lambda y: ev.pdf(x, y)[0], a, b, limit=200)[0] for a, b in zip(knots, knots[1:]))
        tails = quad(lambda y: ev.pdf(x, y)[0], -np.inf, knots[0])[0] + quad(lambda y: ev.pdf(x, y)[0], knots[-1], np.inf)[0]
        assert abs(inner + tails - 1) <= 1e-4
        assert abs(total - 1) <= 1e-3


def test_inverse_solves_transform(ls_designs, ls_fits):
    d, fit = ls_designs["spline-spline"], ls_fits["spline-spline"]
    ev = DrfEvaluator(d.dictionary, fit.b_hat)
    x = np.linspace(0.1, 0.9, 9)
    e = np.linspace(-6, 6, 9)
    y = ev.inverse(x, e)
    np.testing.assert_allclose(ev.g(x, y), e, atol=1e-9)


def _fd_delta_se(ev, fn, x, y, h=1e-6):
    base = fn(DrfEvaluator(ev.dictionary, ev.b), x, y)
    grads = []
    for l in range(ev.b.size):
        bp = ev.b.copy()
        bp[l] += h
        grads.append((fn(DrfEvaluator(ev.dictionary, bp), x, y) - base) / h)
    G = np.array(grads)
    return np.sqrt(np.einsum("lm,li,mi->i", ev.cov, G, G))


def test_delta_method_against_finite_differences(ls_designs, ls_fits):
    d, fit = ls_designs["spline-spline"], ls_fits["spline-spline"]
    ev = DrfEvaluator(d.dictionary, fit.b_hat, sandwich(fit, d))
    x = np.linspace(0.1, 0.9, 5)
    y = np.linspace(-2.5, 1.5, 5)
    u = np.linspace(0.1, 0.9, 5)
    for kind, grid in (("cdf", y), ("pdf", y), ("quantile", u)):
        fn = lambda e, xx, gg, kind=kind: getattr(e, kind)(xx, gg)[0]
        se = getattr(ev, kind)(x, grid)[1]
        np.testing.assert_allclose(se, _fd_delta_se(ev, fn, x, grid), rtol=1e-3)


def test_qgm_flags_negative_slope_and_reports_reasons():
    # beta2(x) = 1 - 2x is negative for x > 1/2
    dic = linear_linear_raw(1)
    dic.summary.update({"x_min": [0.0], "x_max": [1.0]})
    rep = qgm_check(DrfEvaluator(dic, np.array([0.0, 1.0, 0.0, -2.0])))
    assert not rep.passed
    assert rep.n_checked == 201 * 99
    assert rep.reasons["not_attained"] > 0
    flagged_x = {v[0] for v in rep.violations}
    assert min(flagged_x) >= 0.5 - 1e-12
    assert qgm_check(DrfEvaluator(dic, B0)).passed


def test_quantile_error_on_unattained_level():
    dic = linear_linear_raw(1)
    ev = DrfEvaluator(dic, np.array([0.0, 1.0, 0.0, -2.0]))
    with pytest.raises(QuantileError) as exc:
        ev.quantile(0.75, 0.5)
    assert exc.value.attained is not None


def test_extrapolation_warning(ls_designs, ls_fits):
    d, fit = ls_designs["linear-linear"], ls_fits["linear-linear"]
    ev = DrfEvaluator(d.dictionary, fit.b_hat)
    with pytest.warns(UserWarning, match="outside"):
        ev.cdf(5.0, 0.0)
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        ev.cdf(0.5, 0.0)


def test_band_grid(ls_designs, ls_fits):
    d, fit = ls_designs["spline-x"], ls_fits["spline-x"]
    ev = DrfEvaluator(d.dictionary, fit.b_hat, sandwich(fit, d))
    rows = band_grid(ev, [0.2, 0.8], np.linspace(-8, 8, 11), "cdf")
    assert len(rows) == 22 and set(rows[0]) == set(BAND_COLUMNS)
    for r in rows:
        assert 0 <= r["lower"] <= r["estimate"] <= r["upper"] <= 1
    q = band_grid(ev, [0.5], [0.25, 0.5], "quantile", level=0.9)
    est, se = ev.quantile([0.5, 0.5], [0.25, 0.5])
    np.testing.assert_allclose([r["upper"] - r["estimate"] for r in q], z_multiplier(0.9) * se)
    with pytest.raises(ValueError, match="covariance"):
        band_grid(DrfEvaluator(d.dictionary, fit.b_hat), [0.5], [0.5])
    with pytest.raises(ValueError):
        band_grid(ev, [0.5], [0.5], "hazard")
    assert z_multiplier(0.95) == pytest.approx(1.959963984540054)


def test_default_grid_multivariate():
    rng = np.random.default_rng(0)
    x = rng.uniform(size=(500, 2))
    y = rng.normal(size=500)
    d = build_dictionary(DictionarySpec.linear_linear(), y, x)
    X = default_x_grid(d.dictionary)
    assert X.shape == (201, 2)
    assert np.all(np.diff(X[:, 0]) >= 0)


@pytest.fixture(scope="module")
def identity_fit(ls_designs):
    d = ls_designs["spline-spline"]
    b = np.zeros(d.jk)
    b[1] = 1.0
    rng = np.random.default_rng(3)
    A = rng.normal(size=(d.jk, d.jk)) * 0.01
    return d.dictionary, DrfEvaluator(d.dictionary, b, A @ A.T)


def test_identity_fit_functions(identity_fit):
    dic, ev = identity_fit
    sc = dic.scaling
    y = np.linspace(-3, 3, 11)
    for x in (0.1, 0.5, 0.9):
        np.testing.assert_allclose(ev.cdf(np.full(y.size, x), y)[0], norm.cdf(sc.y_std(y)), rtol=1e-13)
        assert ev.quantile(x, 0.5)[0] == pytest.approx(sc.y_raw(0.0), abs=1e-12)
        assert sc.y_std(ev.quantile(x, 0.975)[0]) == pytest.approx(1.959963984540054, abs=1e-9)
    assert qgm_check(ev).passed


def test_zero_level_cdf_and_se(identity_fit):
    dic, ev = identity_fit
    y0 = float(dic.scaling.y_raw(0.0))
    est, se = ev.cdf(0.4, y0)
    T = dic.eval_T([0.4], [y0])[0]
    assert est == 0.5
    assert se == pytest.approx(0.3989422804014327 * np.sqrt(T @ ev.cov @ T), rel=1e-12)


def test_unit_derivative_pdf():
    ev = DrfEvaluator(linear_linear_raw(1), np.array([0.0, 1.0, 0.0, 0.0]))
    assert ev.pdf(0.5, 0.0)[0] == pytest.approx(0.3989422804014327, rel=1e-15)


def test_location_scale_fit_within_three_se_of_truth(ls_designs, ls_fits, truth):
    d, fit = ls_designs["linear-linear"], ls_fits["linear-linear"]
    ev = DrfEvaluator(d.dictionary, fit.b_hat, sandwich(fit, d))
    X, Y = np.meshgrid(np.linspace(0.05, 0.95, 10), np.linspace(-1.5, 3.0, 10), indexing="ij")
    est, se = ev.cdf(X.ravel(), Y.ravel())
    assert np.all(np.abs(est - truth.cdf(X.ravel(), Y.ravel())[0]) <= 3 * se)
    assert qgm_check(ev).passed
    u = np.array([0.1, 0.25, 0.5, 0.75, 0.9])
    for x in np.linspace(0.05, 0.95, 10):
        q, sq = ev.quantile(np.full(u.size, x), u)
        assert np.all(np.abs(q - truth.quantile(np.full(u.size, x), u)[0]) <= 3 * sq)


def test_qgm_reports_exactly_the_violating_points():
    dic = linear_linear_raw(1)
    ev = DrfEvaluator(dic, np.array([0.0, 1.0, 0.0, -2.0]))  # beta2 = 1 - 2x
    grid = np.array([0.0, 0.2, 0.4, 0.8])
    u = np.array([0.1, 0.5, 0.9])
    rep = qgm_check(ev, grid, u)
    assert sorted((v[0], v[1]) for v in rep.violations) == [(0.8, 0.1), (0.8, 0.5), (0.8, 0.9)]
