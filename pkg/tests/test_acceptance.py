"""Acceptance criteria: each test records one PASS/FAIL line (printed in the
terminal summary) before asserting.  Slow Monte Carlo criteria carry the
``slow`` marker; deselect them with ``-m "not slow"``."""

import os
import time
import warnings

import numpy as np
import pytest
from scipy.integrate import quad
from scipy.stats import norm

from gtreg import duality, objective
from gtreg.dictionary import DictionarySpec, build_dictionary, full_candidates
from gtreg.drf import DEFAULT_U_GRID, DrfEvaluator, default_x_grid, qgm_check
from gtreg.inference import info_matrix_gap, sandwich
from gtreg.simulate import DgpSpec, generate
from gtreg.solver import fit_adaptive_lasso, fit_ml, fit_ml_monotone, select_model, theory_lambda

from conftest import ACCEPTANCE_LINES, CLASS_SPECS, random_feasible_point


def record(number: int, title: str, passed: bool, detail: str) -> None:
    ACCEPTANCE_LINES.append(f"[{'PASS' if passed else 'FAIL'}] criterion {number} ({title}): {detail}")
    print(ACCEPTANCE_LINES[-1])
    assert passed, detail


def _quiet_build(spec, y, x):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        return build_dictionary(spec, y, x)


# -- 1. optimality certificates ---------------------------------------------------------------


def test_criterion_1_optimality_certificate(ls_designs, ls_fits):
    cases = [(ls_designs[k], ls_fits[k], f"location-scale/{k}") for k in CLASS_SPECS]
    for kind, n, seed in (("baseline-gaussian", 1000, 1), ("bimodal-misspec", 1000, 2)):
        s = generate(DgpSpec(kind, n, seed))
        for name, spec in CLASS_SPECS.items():
            d = _quiet_build(spec, s.y, s.x)
            cases.append((d, fit_ml(d), f"{kind}/{name}"))
    worst = {"score": 0.0, "rel_gap": 0.0, "res_per_n": 0.0}
    failures = []
    for d, fit, label in cases:
        if not fit.converged:
            continue
        cert = duality.recover_dual(fit, d)
        score = float(np.max(np.abs(objective.evaluate(fit.b_hat, d).score)))
        rel_gap = cert.gap / (1 + abs(cert.primal_value))
        res = cert.constraint_residual / d.n
        worst = {"score": max(worst["score"], score), "rel_gap": max(worst["rel_gap"], rel_gap),
                 "res_per_n": max(worst["res_per_n"], res)}
        if not (score <= 1e-8 and rel_gap <= 1e-8 and res <= 1e-8):
            failures.append(label)
    n_conv = sum(f.converged for _, f, _ in cases)
    record(1, "optimality certificate", not failures and n_conv == len(cases),
           f"{n_conv}/{len(cases)} fits converged; max |score| {worst['score']:.2e}, "
           f"max relative gap {worst['rel_gap']:.2e}, max residual/n {worst['res_per_n']:.2e}"
           + (f"; failing: {failures}" if failures else ""))


# -- 2. derivative oracles --------------------------------------------------------------------


def _rel_err(analytic, numeric):
    return float(np.max(np.abs(analytic - numeric)) / max(np.max(np.abs(analytic)), 1e-300))


def test_criterion_2_derivative_oracles(ls_designs):
    rng = np.random.default_rng(2024)
    worst_g = worst_h = 0.0
    points = 0
    for d in ls_designs.values():
        for _ in range(50):
            b = random_feasible_point(d, rng, scale=0.5)
            rep = objective.evaluate(b, d)
            fd_g = np.empty(d.jk)
            fd_h = np.empty((d.jk, d.jk))
            for l in range(d.jk):
                h = 1e-5 * max(1.0, abs(b[l]))
                bp, bm = b.copy(), b.copy()
                bp[l] += h
                bm[l] -= h
                fd_g[l] = (objective.value(bp, d) - objective.value(bm, d)) / (2 * h)
                fd_h[:, l] = (objective.evaluate(bp, d).score - objective.evaluate(bm, d).score) / (2 * h)
            worst_g = max(worst_g, _rel_err(rep.score, fd_g))
            worst_h = max(worst_h, _rel_err(rep.hessian, fd_h))
            points += 1
    record(2, "derivative oracles", worst_g <= 1e-5 and worst_h <= 1e-5,
           f"{points} feasible points over {len(ls_designs)} dictionary classes; "
           f"max relative error score {worst_g:.2e}, Hessian {worst_h:.2e} (tol 1e-5)")


# -- 3. baseline recovery ---------------------------------------------------------------------


def test_criterion_3_baseline_recovery():
    b0 = np.array([0.0, 1.0, 0.0, 0.0])
    passes, worst = 0, 0.0
    for seed in range(20):
        s = generate(DgpSpec("baseline-gaussian", 5000, seed))
        d = build_dictionary(DictionarySpec.linear_linear(), s.y, s.x)
        fit = fit_ml(d)
        sw = sandwich(fit, d)
        t = np.abs(d.dictionary.raw_coefficients(fit.b_hat) - b0) / sw.raw_se(d.dictionary)
        worst = max(worst, float(t.max()))
        passes += bool(fit.converged and np.all(t <= 5))
    record(3, "baseline recovery", passes >= 19,
           f"{passes}/20 seeds with every |b - b0|/SE <= 5 (need >= 19); max ratio {worst:.2f}")


# -- 4. correct-specification coverage --------------------------------------------------------


@pytest.mark.slow
def test_criterion_4_coverage():
    reps, n = 500, 2000
    xs = np.array([0.1, 0.3, 0.5, 0.7, 0.9])
    us = np.array([0.1, 0.3, 0.5, 0.7, 0.9])
    X, U = np.repeat(xs, us.size), np.tile(us, xs.size)
    q_true = (norm.ppf(U) + 1 + X) / (1 + 0.5 * X)  # the cdf grid points: F(q_true | x) = u
    z = norm.ppf(0.975)
    est = {"cdf": np.empty((reps, X.size)), "quantile": np.empty((reps, X.size))}
    ses = {k: np.empty_like(v) for k, v in est.items()}
    for r in range(reps):
        s = generate(DgpSpec("linear-location-scale", n, 10_000 + r))
        d = build_dictionary(DictionarySpec.linear_linear(), s.y, s.x)
        fit = fit_ml(d)
        assert fit.converged
        ev = DrfEvaluator(d.dictionary, fit.b_hat, sandwich(fit, d))
        est["cdf"][r], ses["cdf"][r] = ev.cdf(X, q_true)
        est["quantile"][r], ses["quantile"][r] = ev.quantile(X, U)
    truth = {"cdf": U, "quantile": q_true}
    cover, se_ratio = {}, {}
    for k in est:
        cover[k] = np.mean(np.abs(est[k] - truth[k]) <= z * ses[k], axis=0)
        se_ratio[k] = ses[k].mean(axis=0) / est[k].std(axis=0, ddof=1)
    cov_all = np.concatenate(list(cover.values()))
    rat_all = np.concatenate(list(se_ratio.values()))
    ok_cov = np.all((cov_all >= 0.92) & (cov_all <= 0.98))
    ok_se = np.all(np.abs(rat_all - 1) <= 0.15)
    record(4, "coverage", bool(ok_cov and ok_se),
           f"{reps} replications, 25 grid points each for cdf and quantile; coverage range "
           f"cdf [{cover['cdf'].min():.3f}, {cover['cdf'].max():.3f}], quantile "
           f"[{cover['quantile'].min():.3f}, {cover['quantile'].max():.3f}] (need 0.92-0.98); "
           f"delta SE / MC SD range [{rat_all.min():.3f}, {rat_all.max():.3f}] (need within 15%)")


# -- 5. selection consistency -----------------------------------------------------------------

SPARSE_B0 = [-1.0, 1.0, -1.0, 0.5, 0.5, 0.0]  # columns 1, y, x1, x1*y, x2, x2*y


@pytest.mark.slow
def test_criterion_5_selection_consistency():
    reps, n = 200, 4000
    lam = theory_lambda(n, 0.5)
    true_support = tuple(i for i, v in enumerate(SPARSE_B0) if v != 0)
    exact, kkt_ok, worst_kkt = 0, 0, 0.0
    for r in range(reps):
        s = generate(DgpSpec("custom-b0", n, 1000 + r, {"p": 2, "b0": SPARSE_B0}))
        d = build_dictionary(DictionarySpec.linear_linear(), s.y, s.x)
        pf = fit_adaptive_lasso(d, lam=lam)
        rep = duality.check_lasso_kkt(pf, d)
        kkt_ok += rep.passed
        worst_kkt = max(worst_kkt, rep.max_violation)
        exact += pf.active_set == true_support
    rate = exact / reps
    record(5, "selection consistency", rate >= 0.9 and kkt_ok == reps,
           f"exact zero-set recovery {exact}/{reps} = {rate:.3f} (need >= 0.90); KKT box holds at "
           f"{kkt_ok}/{reps} fits, max violation {worst_kkt:.2e} (tol 1e-6*n = {1e-6 * n:.1e}); "
           f"summed-scale lambda {lam * n:.3f}")


# -- 6. DRF structural properties -------------------------------------------------------------


def test_criterion_6_drf_structure(ls_designs, ls_fits):
    rt_err, pdf_err, crossings, checked = 0.0, 0.0, 0, 0
    extra = generate(DgpSpec("bimodal-misspec", 1500, 6))
    fits = [(ls_designs[k], ls_fits[k]) for k in CLASS_SPECS]
    d_bi = _quiet_build(DictionarySpec.spline_spline(6, 6, 3, 2), extra.y, extra.x)
    fits.append((d_bi, fit_ml_monotone(d_bi)))
    U = np.asarray(DEFAULT_U_GRID)
    for d, fit in fits:
        ev = DrfEvaluator(d.dictionary, fit.b_hat)
        if not qgm_check(ev).passed:
            continue
        checked += 1
        X = default_x_grid(d.dictionary)[:, 0]
        Q = np.array([ev.quantile(np.full(U.size, x), U)[0] for x in X])  # 201 x 99
        crossings += int(np.sum(~(np.diff(Q, axis=1) > 0)))
        for x, q in zip(X[::20], Q[::20]):
            rt_err = max(rt_err, float(np.max(np.abs(ev.cdf(np.full(U.size, x), q)[0] - U))))
        if d.dictionary.spec.spec_class == 4:
            knots = d.dictionary.scaling.y_raw(np.asarray(d.dictionary.s_knots))
            for x in (X[0], X[100], X[-1]):
                f = lambda y: ev.pdf(x, y)[0]
                total = quad(f, -np.inf, knots[0], limit=200)[0] + quad(f, knots[-1], np.inf, limit=200)[0]
                total += sum(quad(f, a, b, limit=200)[0] for a, b in zip(knots, knots[1:]))
                pdf_err = max(pdf_err, abs(total - 1))
    ok = rt_err <= 1e-8 and pdf_err <= 1e-4 and crossings == 0 and checked == len(fits)
    record(6, "DRF structure", ok,
           f"{checked}/{len(fits)} QGM-passing fits; max |cdf(quantile) - u| {rt_err:.2e}; "
           f"max |integral pdf - 1| on Spline-Spline {pdf_err:.2e}; crossings on 201x99 grids: {crossings}")


# -- 7. QGM repair ----------------------------------------------------------------------------


def test_criterion_7_qgm_repair():
    s = generate(DgpSpec("bimodal-misspec", 200, 0))
    d = _quiet_build(DictionarySpec.spline_spline(8, 6, 3, 2), s.y, s.x)
    ml = fit_ml(d)
    before = qgm_check(DrfEvaluator(d.dictionary, ml.b_hat))
    fit = fit_ml_monotone(d, fit=ml, rounds=4)
    rounds = int(fit.message.split("round ")[1].split(":")[0]) if "round" in fit.message else 0
    pts = fit.constraints_added
    A = d.dictionary.eval_t(np.array([c[0] for c in pts]), np.array([c[1] for c in pts])) if pts else np.zeros((0, d.jk))
    slack = A @ fit.b_hat - np.array([c[2] for c in pts]) if pts else np.zeros(0)
    after = qgm_check(DrfEvaluator(d.dictionary, fit.b_hat))
    ok = (not before.passed) and after.passed and fit.converged and 1 <= rounds <= 4 and np.all(slack >= 0)
    record(7, "QGM repair", bool(ok),
           f"unpenalized fit violates QGM at {len(before.violations)} grid points; repaired in {rounds} "
           f"round(s) with {len(pts)} constraints, min slack {slack.min() if slack.size else float('nan'):.3e}; "
           f"QGM after repair: {'pass' if after.passed else 'fail'}")


# -- 8. information-matrix trend --------------------------------------------------------------


@pytest.mark.slow
def test_criterion_8_information_matrix_trend():
    sizes = (500, 2000, 8000)
    med = {}
    for kind in ("linear-location-scale", "bimodal-misspec"):
        med[kind] = []
        for n in sizes:
            gaps = []
            for seed in range(50):
                s = generate(DgpSpec(kind, n, 500 + seed))
                d = build_dictionary(DictionarySpec.linear_linear(), s.y, s.x)
                gaps.append(info_matrix_gap(fit_ml(d), d))
            med[kind].append(float(np.median(gaps)))
    correct, wrong = med["linear-location-scale"], med["bimodal-misspec"]
    ok = correct[0] > correct[1] > correct[2] and correct[2] <= 0.1 and min(wrong) >= 0.2
    record(8, "information-matrix trend", ok,
           f"median gap ratio over 50 seeds at n={sizes}: correct spec "
           f"{', '.join(f'{v:.3f}' for v in correct)}; bimodal {', '.join(f'{v:.3f}' for v in wrong)}")


# -- 9. empirical target ----------------------------------------------------------------------


@pytest.mark.slow
def test_criterion_9_empirical_target():
    path = os.environ.get("GTREG_MELBOURNE_CSV")
    if not path:
        ACCEPTANCE_LINES.append("[SKIP] criterion 9 (empirical target): set GTREG_MELBOURNE_CSV "
                                "to a CSV with a 'y' column of the 3,650 daily observations")
        pytest.skip("GTREG_MELBOURNE_CSV not set")
    from gtreg.data import load_dataset

    ds = load_dataset(path, "y", lag=True)
    t0 = time.perf_counter()
    sel = select_model(full_candidates(), ds.y, ds.x)
    elapsed = time.perf_counter() - t0
    best = sel.best
    ok = best is not None and best.spec.spec_class == 4 and best.best.qgm_ok
    detail = "no winner"
    if best is not None:
        detail = (f"winner {best.label} (class {best.spec.spec_class}), {best.best.n_active} of "
                  f"{best.design.jk} coefficients nonzero [reference: 35 parameters, 25 nonzero]; "
                  f"{elapsed:.0f} s")
    record(9, "empirical target", ok, detail)
