"""Command-line front end: fit, select, eval, diagnose, simulate.

Exit codes: 0 success, 2 configuration error, 3 data error,
4 non-convergence, 5 QGM failure (after any requested repair).
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
import warnings
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np

from . import __version__, duality, inference, report, simulate, solver
from .data import ColumnError, DataError, load_dataset
from .dictionary import DictionarySpec, build_dictionary, full_candidates, small_candidates
from .drf import BAND_COLUMNS, DrfEvaluator, QuantileError, band_grid, qgm_check

log = logging.getLogger("gtreg")

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NONCONV, EXIT_QGM = 0, 2, 3, 4, 5


class ConfigError(ValueError):
    pass


# -- dictionary shorthand ---------------------------------------------------------------


def parse_spec(text) -> DictionarySpec:
    """Parse a dictionary from a JSON object or shorthand.

    Shorthand: ``linear-linear``, ``spline-x:K[:deg]``, ``spline-y:J[:deg]``,
    ``spline-spline:K:J[:x_deg:y_deg]``.
    """
    if isinstance(text, dict):
        return DictionarySpec.from_dict(text)
    s = str(text).strip()
    if s.startswith("{"):
        return DictionarySpec.from_dict(json.loads(s))
    head, *nums = s.split(":")
    try:
        v = [int(n) for n in nums]
        if head == "linear-linear" and not v:
            return DictionarySpec.linear_linear()
        if head == "spline-x" and len(v) in (1, 2):
            return DictionarySpec.spline_x(*v)
        if head == "spline-y" and len(v) in (1, 2):
            return DictionarySpec.spline_y(*v)
        if head == "spline-spline" and len(v) in (2, 4):
            return DictionarySpec.spline_spline(*v)
    except ValueError as exc:
        raise ConfigError(f"bad dictionary specification {s!r}: {exc}") from exc
    raise ConfigError(
        f"bad dictionary specification {s!r}; expected linear-linear, spline-x:K[:deg], "
        "spline-y:J[:deg] or spline-spline:K:J[:x_deg:y_deg]"
    )


def candidate_set(name_or_list):
    if name_or_list == "full":
        return full_candidates()
    if name_or_list == "small":
        return small_candidates()
    if isinstance(name_or_list, str):
        name_or_list = [p for p in name_or_list.split(",") if p.strip()]
    return [parse_spec(c) for c in name_or_list]


def _floats(text) -> list:
    if text is None:
        return None
    if isinstance(text, (list, tuple)):
        return [float(v) for v in text]
    try:
        return [float(v) for v in str(text).split(",") if v.strip()]
    except ValueError as exc:
        raise ConfigError(f"expected a comma-separated list of numbers, got {text!r}") from exc


# -- configuration ----------------------------------------------------------------------------


@dataclass
class RunConfig:
    data: str | None = None
    outcome: str = "y"
    covariates: list | None = None
    lag: bool = False
    spec: str | dict = "linear-linear"
    candidates: str | list = "small"
    lambdas: list = field(default_factory=lambda: list(solver.DEFAULT_LAMBDAS))
    solver: dict = field(default_factory=dict)
    qgm_x_points: int = 201
    qgm_u_grid: list | None = None
    repair: bool = False
    repair_eps: float = 1e-3
    repair_rounds: int = 4
    compute_se: bool = True
    probe: str | dict | None = None
    out: str = "gtreg-out"
    seed: int = 0
    level: float = 0.95
    n_jobs: int = 1

    @classmethod
    def load(cls, path) -> dict:
        try:
            with open(path, encoding="utf-8") as fh:
                raw = json.load(fh)
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc.strerror or exc}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
        if not isinstance(raw, dict):
            raise ConfigError("config file must hold a JSON object")
        known = {f.name for f in fields(cls)}
        unknown = set(raw) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        return raw

    @classmethod
    def resolve(cls, args: argparse.Namespace) -> "RunConfig":
        values = cls.load(args.config) if getattr(args, "config", None) else {}
        for f in fields(cls):
            v = getattr(args, f.name, None)
            if v is not None:
                values[f.name] = v
        cfg = cls(**values)
        if isinstance(cfg.covariates, str):
            cfg.covariates = [c.strip() for c in cfg.covariates.split(",") if c.strip()]
        cfg.lambdas = _floats(cfg.lambdas)
        cfg.qgm_u_grid = _floats(cfg.qgm_u_grid)
        if not cfg.lambdas or any(not lam > 0 for lam in cfg.lambdas):
            raise ConfigError("lambda grid must be a nonempty list of positive numbers")
        if cfg.lag and cfg.covariates and cfg.outcome in cfg.covariates:
            raise ConfigError("the lag option excludes listing the outcome as a covariate")
        if cfg.qgm_x_points < 2:
            raise ConfigError("qgm_x_points must be at least 2")
        return cfg

    def solver_config(self) -> solver.SolverConfig:
        try:
            return solver.SolverConfig.from_dict(self.solver)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"invalid solver settings: {exc}") from exc


def _x_grid(design, points: int):
    dic = design.dictionary
    p = dic.n_cov
    if p == 1:
        return np.linspace(design.x[:, 0].min(), design.x[:, 0].max(), points)[:, None]
    return None  # library default (sample rows for several covariates, none for p = 0)


# -- commands ----------------------------------------------------------------------------


def _load(cfg: RunConfig):
    if not cfg.data:
        raise ConfigError("no data file given (--data)")
    ds = load_dataset(cfg.data, cfg.outcome, cfg.covariates, cfg.lag)
    log.info("loaded %d rows from %s (outcome %s, covariates %s)", ds.n, ds.source,
             ds.outcome, list(ds.covariates) or "none")
    return ds


def _out_dir(cfg: RunConfig) -> Path:
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _penalized_as_fit_fields(pfit):
    return dict(converged=pfit.converged, score_norm=pfit.kkt_residual, iterations=pfit.iterations,
                value=pfit.value, message=pfit.message)


def cmd_fit(cfg: RunConfig) -> int:
    ds = _load(cfg)
    spec = parse_spec(cfg.spec)
    scfg = cfg.solver_config()
    d = build_dictionary(spec, ds.y, ds.x if ds.x.shape[1] else None)
    fit = solver.fit_ml(d, scfg)
    estimator = "ml"
    x_grid = _x_grid(d, cfg.qgm_x_points)
    if fit.converged and cfg.repair:
        fit = solver.fit_ml_monotone(d, scfg, fit, eps=cfg.repair_eps, rounds=cfg.repair_rounds,
                                     x_grid=x_grid, u_grid=cfg.qgm_u_grid)
        if fit.constraints_added:
            estimator = "ml-constrained"
    qgm = qgm_check(DrfEvaluator(d.dictionary, fit.b_hat), x_grid, cfg.qgm_u_grid)
    sw = inference.sandwich(fit, d) if (cfg.compute_se and fit.converged) else None
    cert = duality.certificate(fit.b_hat, d)
    rep = report.fit_report(
        d, fit.b_hat, estimator=estimator, converged=fit.converged, score_norm=fit.score_norm,
        iterations=fit.iterations, value=fit.value, message=fit.message, certificate=cert,
        qgm=qgm, sandwich=sw, data=ds.describe(), solver=scfg.to_dict(),
        extra={"repair": {"requested": cfg.repair, "constraints": len(fit.constraints_added)}},
    )
    out = _out_dir(cfg)
    report.write_report(out / "fit.json", rep)
    _print_fit(rep)
    print(f"report written to {out / 'fit.json'}")
    if not fit.converged:
        return EXIT_NONCONV
    return EXIT_OK if qgm.passed else EXIT_QGM


def _print_fit(rep: dict) -> None:
    print(f"{rep['spec']}  n={rep['n']}  estimator={rep['estimator']}  converged={rep['converged']}")
    print(f"  log-likelihood per obs {rep['value']:.6f}   |score|_inf {rep['score_norm']:.3e}   "
          f"duality gap {rep['duality']['gap']:.3e}")
    print(f"  QGM {'pass' if rep['qgm']['passed'] else 'FAIL'} ({rep['qgm']['n_violations']} violations)")
    se = rep.get("se_raw")
    width = max(len(lab) for lab in rep["column_labels"])
    print(f"  {'term':<{width}}  {'b (raw)':>12}  {'se (raw)':>10}  {'b (std)':>12}")
    for i, lab in enumerate(rep["column_labels"]):
        s = "" if se is None else f"{se[i]:10.4g}"
        print(f"  {lab:<{width}}  {rep['b_raw'][i]:12.6g}  {s:>10}  {rep['b_std'][i]:12.6g}")


def cmd_select(cfg: RunConfig) -> int:
    ds = _load(cfg)
    cands = candidate_set(cfg.candidates)
    if not cands:
        raise ConfigError("no candidate specifications")
    scfg = cfg.solver_config()
    x = ds.x if ds.x.shape[1] else None
    x_grid = None
    if ds.x.shape[1] == 1:
        x_grid = np.linspace(ds.x[:, 0].min(), ds.x[:, 0].max(), cfg.qgm_x_points)[:, None]
    sel = solver.select_model(cands, ds.y, x, scfg, cfg.lambdas, x_grid, cfg.qgm_u_grid,
                              n_jobs=cfg.n_jobs)
    out = _out_dir(cfg)
    cand_rows = []
    for c in sel.candidates:
        row = {
            "index": c.index, "label": c.label, "spec": c.spec.to_dict(),
            "spec_class": c.spec.spec_class, "dropped": c.dropped,
            "n_params": None if c.design is None else c.design.jk,
            "path": report.path_rows(c.path),
            "best": None if c.best is None else {
                "lam": c.best.lam, "bic": c.best.bic, "n_active": c.best.n_active},
        }
        cand_rows.append(row)
    best = sel.best
    rep = {
        "schema": report.SCHEMA_TAG, "command": "select", "data": ds.describe(),
        "lambdas": cfg.lambdas, "solver": scfg.to_dict(), "candidates": cand_rows,
        "ranking": [{"index": i, "bic": b} for i, b in sel.ranking],
        "winner": None if best is None else best.index,
    }
    report.write_report(out / "select.json", rep)
    print(f"{len(cands)} candidates, lambda grid {', '.join(f'{v:.4g}' for v in cfg.lambdas)}")
    for i, b in sel.ranking[:10]:
        c = sel.candidates[i]
        print(f"  [{i:2d}] BIC {b:12.3f}  lam {c.best.lam:.4g}  active {c.best.n_active}/{c.design.jk}  {c.label}")
    dropped = [c for c in sel.candidates if c.best is None]
    if dropped:
        print(f"  {len(dropped)} candidate(s) without a QGM-passing converged fit")
    if best is None:
        print("no candidate produced a converged, QGM-passing penalized fit")
        nonconv = all("converge" in c.dropped for c in sel.candidates)
        return EXIT_NONCONV if nonconv else EXIT_QGM
    d = best.design
    pfit = best.best.fit
    sw = inference.sandwich(pfit, d) if cfg.compute_se else None
    cert = duality.certificate(pfit.b_al, d)
    kkt = duality.check_lasso_kkt(pfit, d)
    qgm = qgm_check(DrfEvaluator(d.dictionary, pfit.b_al), x_grid, cfg.qgm_u_grid)
    frep = report.fit_report(
        d, pfit.b_al, estimator="adaptive-lasso", certificate=cert, qgm=qgm, sandwich=sw,
        path=best.path, data=ds.describe(), solver=scfg.to_dict(),
        extra={"lam": pfit.lam, "bic": pfit.bic, "active_set": list(pfit.active_set),
               "lasso_kkt": {"passed": kkt.passed, "max_violation": kkt.max_violation, "tol": kkt.tol},
               "candidate_index": best.index},
        **_penalized_as_fit_fields(pfit),
    )
    report.write_report(out / "fit.json", frep)
    print(f"winner [{best.index}] {best.label}: {len(pfit.active_set)} of {d.jk} coefficients nonzero, "
          f"lambda {pfit.lam:.4g}, BIC {pfit.bic:.3f}")
    print(f"reports written to {out / 'select.json'} and {out / 'fit.json'}")
    return EXIT_OK


def cmd_eval(args) -> int:
    stored = report.load_fit(args.fit)
    if stored.cov_std is None:
        raise ConfigError("the stored fit has no covariance; refit with standard errors to get bands")
    ev = DrfEvaluator(stored.dictionary, stored.b_std, stored.cov_std)
    dic = stored.dictionary
    if dic.n_cov > 1:
        raise ConfigError("band grids are produced for fits with at most one covariate")
    xs = _floats(args.x) if args.x is not None else None
    if dic.n_cov == 1 and not xs:
        lo, hi = dic.summary["x_min"][0], dic.summary["x_max"][0]
        xs = list(np.linspace(lo, hi, 5))
    if dic.n_cov == 0:
        xs = [None]
    kinds = ["cdf", "pdf", "quantile"] if args.kind == "all" else [args.kind]
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for kind in kinds:
        if kind == "quantile":
            grid = _floats(args.u_grid) or [round(0.05 * k, 2) for k in range(1, 20)]
        else:
            grid = _floats(args.y_grid) or list(
                np.linspace(dic.summary["y_min"], dic.summary["y_max"], 101))
        x_vals = np.zeros((1, 0)) if dic.n_cov == 0 else np.asarray(xs)[:, None]
        rows = band_grid(ev, x_vals, grid, kind, args.level)
        path = out / f"bands_{kind}.csv"
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.DictWriter(fh, fieldnames=BAND_COLUMNS, lineterminator="\n")
            w.writeheader()
            for r in rows:
                w.writerow({k: ("" if r[k] is None else r[k]) for k in BAND_COLUMNS})
        print(f"{kind}: {len(rows)} rows written to {path}")
    return EXIT_OK


def _default_probe(p: int) -> DictionarySpec:
    if p == 0:
        return DictionarySpec.spline_y(6, 2)
    if p == 1:
        return DictionarySpec.spline_spline(6, 6, 3, 2)
    return DictionarySpec.linear_linear()


def cmd_diagnose(args) -> int:
    stored = report.load_fit(args.fit)
    src = stored.report.get("data") or {}
    path = args.data or src.get("path")
    if not path:
        raise ConfigError("the stored fit does not record its data; pass --data")
    ds = load_dataset(path, src.get("outcome", "y"), src.get("columns", []), bool(src.get("lag", False)))
    if src.get("sha256") and ds.sha256 != src["sha256"]:
        warnings.warn("data file differs from the one used for the stored fit")
    dic = stored.dictionary
    d = build_dictionary(dic.spec, ds.y, ds.x if ds.x.shape[1] else None, dictionary=dic)
    fit = solver.FitResult(b_hat=stored.b_std, value=stored.report["value"],
                           score_norm=stored.report["score_norm"], iterations=0,
                           converged=stored.report["converged"])
    probe = parse_spec(args.probe) if args.probe else _default_probe(dic.n_cov)
    stein = inference.stein_diagnostics(fit, d, probe)
    gap = inference.info_matrix_gap(fit, d)
    cert = duality.certificate(stored.b_std, d)
    qgm = qgm_check(DrfEvaluator(dic, stored.b_std))
    rep = {
        "schema": report.SCHEMA_TAG, "command": "diagnose", "fit": str(args.fit),
        "stein": stein.to_dict(), "info_matrix_gap": gap, "duality": cert.to_dict(),
        "qgm": report.qgm_summary(qgm),
    }
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    report.write_report(out / "diagnose.json", rep)
    if args.export_matrices:
        sw = inference.sandwich(fit, d)
        for name, mat in (("gamma_hat", sw.gamma_hat), ("psi_hat", sw.psi_hat), ("cov_std", sw.cov)):
            np.savetxt(out / f"{name}.csv", mat, delimiter=",", fmt="%.17g")
    print(f"Stein moments over probe {stein.probe} (studentized: {stein.studentization})")
    for lab, m, z in zip(stein.labels, stein.moments, stein.z):
        flag = "  <--" if abs(z) > inference.STEIN_FLAG else ""
        print(f"  {lab:<12} {m: .4e}  z={z: .2f}{flag}")
    print(f"information-matrix gap ratio {gap:.4f}")
    print(f"duality gap {cert.gap:.3e} (relative {cert.gap / (1 + abs(cert.primal_value)):.3e})")
    print(f"QGM {'pass' if qgm.passed else 'FAIL'} ({len(qgm.violations)} violations)")
    print(f"report written to {out / 'diagnose.json'}")
    return EXIT_OK


def cmd_simulate(args) -> int:
    out = Path(args.output)
    if out.parent:
        out.parent.mkdir(parents=True, exist_ok=True)
    params = json.loads(args.params) if args.params else {}
    if not isinstance(params, dict):
        raise ConfigError("--params must be a JSON object")
    if args.kind == "melbourne-like":
        series = simulate.melbourne_like(args.n, args.seed, params)
        text = simulate.sample_csv(series)
        out.write_text(text, encoding="utf-8")
        print(f"wrote {series.size} rows to {out} (fit with --lag to use y_(t-1) as covariate)")
        return EXIT_OK
    spec = simulate.DgpSpec(args.kind, args.n, args.seed, params)
    sample = simulate.generate(spec)
    out.write_text(simulate.sample_csv(sample.y, sample.x), encoding="utf-8")
    print(f"wrote {sample.n} rows to {out}")
    if sample.b0_raw is not None and args.kind in ("linear-location-scale", "custom-b0"):
        side = out.with_name(out.stem + ".b0.json")
        side.write_text(simulate.b0_sidecar(sample, spec) + "\n", encoding="utf-8")
        print(f"true coefficients written to {side}")
    return EXIT_OK


# -- argument parsing ------------------------------------------------------------------------


def _data_args(p):
    p.add_argument("--config", help="JSON run configuration; flags override its keys")
    p.add_argument("--data", help="CSV file with a header row")
    p.add_argument("--outcome", help="outcome column (default y)")
    p.add_argument("--covariates", help="comma-separated covariate columns (default: all others)")
    p.add_argument("--lag", action="store_const", const=True, default=None,
                   help="use the lagged outcome y_(t-1) as covariate")
    p.add_argument("--out", help="output directory (default gtreg-out)")
    p.add_argument("--qgm-x-points", dest="qgm_x_points", type=int)
    p.add_argument("--qgm-u-grid", dest="qgm_u_grid", help="comma-separated quantile levels")
    p.add_argument("--max-iter", type=int, help="Newton iteration cap")
    p.add_argument("--grad-tol", type=float, help="score sup-norm tolerance")
    p.add_argument("--no-se", dest="compute_se", action="store_const", const=False, default=None,
                   help="skip the sandwich covariance")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="gtreg", description="Gaussian-transform distributional regression")
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    ap.add_argument("-v", "--verbose", action="count", default=0)
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("fit", help="maximum-likelihood fit of one dictionary")
    _data_args(p)
    p.add_argument("--spec", help="dictionary, e.g. spline-spline:8:6 (default linear-linear)")
    p.add_argument("--repair", action="store_const", const=True, default=None,
                   help="re-estimate with derivative constraints when QGM fails")
    p.add_argument("--repair-rounds", dest="repair_rounds", type=int)
    p.add_argument("--repair-eps", dest="repair_eps", type=float)

    p = sub.add_parser("select", help="adaptive-Lasso path + QGM screen + BIC selection")
    _data_args(p)
    p.add_argument("--candidates", help="'full', 'small', or comma-separated dictionaries")
    p.add_argument("--lambdas", help="comma-separated per-observation penalty levels")
    p.add_argument("--n-jobs", dest="n_jobs", type=int)

    p = sub.add_parser("eval", help="CDF/PDF/quantile grids with pointwise bands")
    p.add_argument("--fit", required=True, help="fit.json written by fit or select")
    p.add_argument("--kind", choices=["cdf", "pdf", "quantile", "all"], default="all")
    p.add_argument("--x", help="comma-separated covariate values (raw units)")
    p.add_argument("--u-grid", dest="u_grid", help="quantile levels (default 0.05,...,0.95)")
    p.add_argument("--y-grid", dest="y_grid", help="outcome values for cdf/pdf (default 101 points)")
    p.add_argument("--level", type=float, default=0.95)
    p.add_argument("--out", default="gtreg-out")

    p = sub.add_parser("diagnose", help="Stein moments, information-matrix gap, certificate, QGM")
    p.add_argument("--fit", required=True)
    p.add_argument("--data", help="override the data file recorded in the fit")
    p.add_argument("--probe", help="probe dictionary over (x, e) for the Stein moments")
    p.add_argument("--export-matrices", action="store_true", help="also write Gamma, Psi, cov as CSV")
    p.add_argument("--out", default="gtreg-out")

    p = sub.add_parser("simulate", help="write a simulated CSV")
    p.add_argument("--kind", required=True, choices=list(simulate.KINDS) + ["melbourne-like"])
    p.add_argument("--n", type=int, required=True, help="sample size (series length for melbourne-like)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--params", help="JSON object of generator parameters")
    p.add_argument("--output", required=True, help="CSV path")
    return ap


def _run_config(args) -> RunConfig:
    cfg = RunConfig.resolve(args)
    for key in ("max_iter", "grad_tol"):
        v = getattr(args, key, None)
        if v is not None:
            cfg.solver = {**cfg.solver, key: v}
    return cfg


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    logging.captureWarnings(True)
    try:
        if args.command == "fit":
            return cmd_fit(_run_config(args))
        if args.command == "select":
            return cmd_select(_run_config(args))
        if args.command == "eval":
            return cmd_eval(args)
        if args.command == "diagnose":
            return cmd_diagnose(args)
        return cmd_simulate(args)
    except (ConfigError, ColumnError, report.SchemaError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except simulate.InfeasibleDgpError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except QuantileError as exc:
        print(f"evaluation error: {exc}", file=sys.stderr)
        return EXIT_QGM
    except solver.ConvergenceError as exc:
        print(f"non-convergence: {exc}", file=sys.stderr)
        return EXIT_NONCONV
    except ValueError as exc:
        # invalid specifications or data that fail dictionary construction
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
