"""Maximum likelihood and adaptive-Lasso estimation over the effective domain.

All iterates stay strictly inside {b : b't_i > 0}: every step is capped at a
fixed fraction of the distance to the boundary before the Armijo search.
"""

from __future__ import annotations

import logging
import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from numba import njit
from scipy.linalg import LinAlgError, cho_factor, cho_solve

from . import objective
from .dictionary import DesignMatrices, DictionarySpec, build_dictionary
from .objective import DomainError

log = logging.getLogger(__name__)

DEFAULT_LAMBDAS = tuple(np.geomspace(0.001, 0.5, 5))


class ConvergenceError(RuntimeError):
    pass


class InfeasibleError(ValueError):
    pass


@dataclass(frozen=True)
class SolverConfig:
    max_iter: int = 200
    grad_tol: float = 1e-8
    boundary_fraction: float = 0.99
    armijo_c: float = 1e-4
    backtrack_ratio: float = 0.5
    max_backtrack: int = 60
    inner_tol: float = 1e-10
    inner_max_sweeps: int = 100_000

    def __post_init__(self):
        if self.max_iter < 1 or self.max_backtrack < 1 or self.inner_max_sweeps < 1:
            raise ValueError("iteration limits must be positive")
        for name in ("grad_tol", "armijo_c", "inner_tol"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if not 0 < self.boundary_fraction < 1:
            raise ValueError("boundary_fraction must lie in (0, 1)")
        if not 0 < self.backtrack_ratio < 1:
            raise ValueError("backtrack_ratio must lie in (0, 1)")

    def to_dict(self) -> dict:
        return dict(self.__dict__)

    @classmethod
    def from_dict(cls, d: dict) -> "SolverConfig":
        known = {k: d[k] for k in cls.__dataclass_fields__ if k in d}
        return cls(**known)


@dataclass(eq=False)
class FitResult:
    """Outcome of `fit_ml` / `fit_ml_constrained`.

    ``score_norm`` is the sup-norm of the gradient of the objective actually
    maximized: the score for unconstrained fits, the Lagrangian gradient
    (score plus constraint multipliers) for constrained ones.
    """

    b_hat: np.ndarray
    value: float
    score_norm: float
    iterations: int
    converged: bool
    constraints_added: list = field(default_factory=list)
    qgm_ok: bool | None = None
    message: str = ""
    gradient_fallback: bool = False
    multipliers: np.ndarray | None = None
    history: list = field(default_factory=list)
    min_eig_ratio: float | None = None


@dataclass(eq=False)
class PenalizedFit:
    b_al: np.ndarray
    lam: float
    weights: np.ndarray
    active_set: tuple
    kkt_residual: float
    bic: float
    value: float
    n: int
    converged: bool
    iterations: int
    unpenalized: tuple
    qgm_ok: bool | None = None
    message: str = ""

    @property
    def lam_sum(self) -> float:
        """Penalty level on the summed log-likelihood n * Q_n."""
        return self.n * self.lam


def bic(value: float, n_active: int, n: int) -> float:
    return -2.0 * n * value + n_active * math.log(n)


def theory_lambda(n: int, c: float = 0.5) -> float:
    """Per-observation penalty for a summed-likelihood level c * n**(1/4)."""
    return c * n ** 0.25 / n


def initial_point(d: DesignMatrices) -> np.ndarray:
    b = np.zeros(d.jk)
    b[d.dictionary.pure_y_index] = 1.0
    return b


def _max_step(slack, rows, delta) -> float:
    """Largest alpha with slack + alpha * rows @ delta > 0."""
    dr = rows @ delta
    neg = dr < 0
    if not np.any(neg):
        return np.inf
    return float(np.min(-slack[neg] / dr[neg]))


def _roundoff(v: float) -> float:
    return 1e-14 * (1.0 + abs(v))


def _newton(funs, b0, cfg: SolverConfig, tol: float, polish: bool = True, decrement_stop: bool = False):
    """Damped Newton ascent for a smooth strictly concave barrier objective.

    ``funs`` supplies value(b), derivs(b) -> (value, grad, hess) and
    slack(b) -> (slack, rows) describing the open domain {rows @ b - off > 0}.
    With ``decrement_stop`` an iterate also counts as converged once the
    Newton decrement g'H^-1 g predicts a gain below floating-point resolution
    of the objective (ill-conditioned barrier stages cannot push the
    gradient further).
    """
    value_fn, derivs_fn, slack_fn = funs
    b = np.array(b0, dtype=float)
    val, g, H = derivs_fn(b)
    history = []
    fallback = False
    converged = False
    message = ""
    it = 0
    polished = not polish
    while True:
        gn = float(np.max(np.abs(g))) if g.size else 0.0
        s, _ = slack_fn(b)
        history.append({"value": val, "score_norm": gn, "min_slack": float(np.min(s)), "b": b.copy()})
        if gn <= tol:
            converged = True
            if polished:
                break
        if it >= cfg.max_iter:
            message = f"iteration cap {cfg.max_iter} reached"
            break
        try:
            c = cho_factor(-H, lower=True, check_finite=True)
            delta = cho_solve(c, g)
        except (LinAlgError, ValueError):
            delta = g.copy()
            fallback = True
        slope = float(g @ delta)
        if decrement_stop and not fallback and 0.5 * slope <= _roundoff(val):
            converged = True
            break
        s, rows = slack_fn(b)
        alpha = min(1.0, cfg.boundary_fraction * _max_step(s, rows, delta))
        accepted = False
        for _ in range(cfg.max_backtrack):
            bn = b + alpha * delta
            try:
                vn = value_fn(bn)
            except DomainError:
                alpha *= cfg.backtrack_ratio
                continue
            if vn >= val + cfg.armijo_c * alpha * slope:
                accepted = True
                break
            if alpha * slope <= _roundoff(val) and vn >= val - _roundoff(val):
                accepted = True
                break
            alpha *= cfg.backtrack_ratio
        if converged:
            # one polishing step: keep it only if it lowers the gradient
            polished = True
            if accepted:
                vn_, gn_, Hn_ = derivs_fn(bn)
                if np.max(np.abs(gn_)) < gn:
                    b, val, g, H = bn, vn_, gn_, Hn_
                    it += 1
                    history[-1]["polished"] = True
                    history.append({"value": val, "score_norm": float(np.max(np.abs(g))),
                                    "min_slack": float(np.min(slack_fn(b)[0])), "b": b.copy()})
            break
        if not accepted:
            message = "line search failed"
            break
        b = bn
        val, g, H = derivs_fn(b)
        it += 1
    gn = float(np.max(np.abs(g))) if g.size else 0.0
    return b, val, g, gn, it, converged, fallback, message, history


def _ml_funs(d: DesignMatrices):
    def value_fn(b):
        return objective.value(b, d)

    def derivs_fn(b):
        r = objective.evaluate(b, d)
        return r.value, r.score, r.hessian

    def slack_fn(b):
        return d.t @ b, d.t

    return value_fn, derivs_fn, slack_fn


def _design_check(d: DesignMatrices) -> float:
    ev = np.linalg.eigvalsh(d.T.T @ d.T / d.n)
    ratio = float(ev[0] / ev[-1]) if ev[-1] > 0 else 0.0
    if ratio < 1e-10:
        warnings.warn(
            f"dictionary is numerically collinear on this sample "
            f"(smallest/largest eigenvalue of T'T/n = {ratio:.3g})",
            RuntimeWarning,
            stacklevel=3,
        )
    return ratio


def fit_ml(d: DesignMatrices, cfg: SolverConfig | None = None, start=None) -> FitResult:
    """Unpenalized maximum likelihood by damped Newton from the canonical point."""
    cfg = cfg or SolverConfig()
    ratio = _design_check(d)
    b0 = initial_point(d) if start is None else np.asarray(start, dtype=float)
    if not objective.in_domain(b0, d):
        raise InfeasibleError("starting point is outside the effective domain")
    b, val, g, gn, it, conv, fb, msg, hist = _newton(_ml_funs(d), b0, cfg, cfg.grad_tol)
    if fb:
        log.warning("Hessian not negative definite at some iterate; used gradient steps")
    if not conv:
        log.warning("fit_ml did not converge: %s (|score| = %.3g)", msg, gn)
    return FitResult(
        b_hat=b, value=val, score_norm=gn, iterations=it, converged=conv,
        message=msg or "converged", gradient_fallback=fb, history=hist, min_eig_ratio=ratio,
    )


BARRIER_SCHEDULE = (1e-2, 1e-4, 1e-6, 1e-8, 1e-10, 1e-12)


def _constraint_rows(d: DesignMatrices, constraints):
    xs, ys, eps = [], [], []
    for c in constraints:
        x_c, y_c, e_c = c
        if not e_c > 0:
            raise ValueError("constraint margins must be positive")
        xs.append(np.atleast_1d(np.asarray(x_c, dtype=float)) if d.dictionary.n_cov else np.zeros(0))
        ys.append(float(y_c))
        eps.append(float(e_c))
    X = np.array(xs).reshape(len(xs), d.dictionary.n_cov)
    Y = np.array(ys)
    if not (np.all(np.isfinite(X)) and np.all(np.isfinite(Y))):
        raise ValueError("constraint points must be finite")
    A = d.dictionary.eval_t(X, Y)
    return np.atleast_2d(A), np.array(eps)


def fit_ml_constrained(
    d: DesignMatrices, cfg: SolverConfig | None = None, constraints=(), start=None
) -> FitResult:
    """Maximize Q_n subject to b't(x_c, y_c) >= eps_c for each (x_c, y_c, eps_c).

    Constraint points are in raw units, margins in standardized derivative
    units.  Solved as a sequence of log-barrier problems with decreasing
    weight, each warm-started from the previous solution.
    """
    cfg = cfg or SolverConfig()
    constraints = list(constraints)
    if not constraints:
        return fit_ml(d, cfg, start=start)
    ratio = _design_check(d)
    A, eps = _constraint_rows(d, constraints)
    if start is None:
        b = initial_point(d)
        need = float(np.max(eps))
        if need >= 1.0:
            b = b * 2.0 * need
    else:
        b = np.asarray(start, dtype=float)
    if not (objective.in_domain(b, d) and np.all(A @ b - eps > 0)):
        raise InfeasibleError("no strictly feasible starting point for the constraint set")
    rows_all = np.vstack([d.t, A])
    off_all = np.concatenate([np.zeros(d.n), eps])
    total_it = 0
    fb_any = False
    hist_all = []
    conv = False
    msg = ""
    for mu in BARRIER_SCHEDULE:

        def value_fn(b, mu=mu):
            s = A @ b - eps
            if not np.all(s > 0):
                i = int(np.argmin(s))
                raise DomainError(d.n + i, s[i])
            return objective.value(b, d) + mu * float(np.sum(np.log(s)))

        def derivs_fn(b, mu=mu):
            r = objective.evaluate(b, d)
            s = A @ b - eps
            if not np.all(s > 0):
                i = int(np.argmin(s))
                raise DomainError(d.n + i, s[i])
            As = A / s[:, None]
            val = r.value + mu * float(np.sum(np.log(s)))
            g = r.score + mu * As.sum(axis=0)
            H = r.hessian - mu * (As.T @ As)
            return val, g, H

        def slack_fn(b):
            return rows_all @ b - off_all, rows_all

        b, val, g, gn, it, conv, fb, msg, hist = _newton(
            (value_fn, derivs_fn, slack_fn), b, cfg, cfg.grad_tol, decrement_stop=True
        )
        total_it += it
        fb_any |= fb
        hist_all.extend(hist)
        if not conv:
            break
    s = A @ b - eps
    mult = BARRIER_SCHEDULE[-1] / s
    q = objective.evaluate(b, d)
    return FitResult(
        b_hat=b, value=q.value, score_norm=gn, iterations=total_it, converged=conv,
        constraints_added=constraints, message=msg or "converged",
        gradient_fallback=fb_any, multipliers=mult, history=hist_all, min_eig_ratio=ratio,
    )


def fit_ml_monotone(
    d: DesignMatrices,
    cfg: SolverConfig | None = None,
    fit: FitResult | None = None,
    eps: float = 1e-3,
    rounds: int = 4,
    base_grid: int = 5,
    x_grid=None,
    u_grid=None,
) -> FitResult:
    """ML fit followed by the QGM check and, on failure, constrained refits.

    Round r adds derivative constraints b't >= eps on a (base_grid * 2**r)^2
    grid over the sample range of (y, x); stops at the first passing round.
    """
    from .drf import DrfEvaluator, qgm_check

    cfg = cfg or SolverConfig()
    fit = fit if fit is not None else fit_ml(d, cfg)
    if not fit.converged:
        return fit
    rep = qgm_check(DrfEvaluator(d.dictionary, fit.b_hat), x_grid, u_grid)
    fit.qgm_ok = rep.passed
    if rep.passed:
        return fit
    log.info("QGM violated at %d grid points; starting repair", len(rep.violations))
    dic = d.dictionary
    for r in range(rounds):
        m = base_grid * 2 ** r
        ys = np.linspace(d.y.min(), d.y.max(), m)
        xs = _repair_x_points(d, m)
        cons = [(xc, yc, eps) for xc in xs for yc in ys]
        new = fit_ml_constrained(d, cfg, cons)
        if not new.converged:
            new.qgm_ok = False
            return new
        rep = qgm_check(DrfEvaluator(dic, new.b_hat), x_grid, u_grid)
        new.qgm_ok = rep.passed
        new.message = f"QGM repair round {r + 1}: {len(cons)} constraints"
        log.info("repair round %d: %d constraints, QGM %s", r + 1, len(cons),
                 "ok" if rep.passed else f"violated at {len(rep.violations)} points")
        if rep.passed:
            return new
        fit = new
    return fit


def _repair_x_points(d: DesignMatrices, m: int):
    p = d.dictionary.n_cov
    if p == 0:
        return [np.zeros(0)]
    if p == 1:
        return [np.array([v]) for v in np.linspace(d.x[:, 0].min(), d.x[:, 0].max(), m)]
    order = np.argsort(d.x[:, 0], kind="stable")
    idx = order[np.unique(np.linspace(0, d.n - 1, m).round().astype(int))]
    return [d.x[i].copy() for i in idx]


# -- adaptive Lasso --------------------------------------------------------------


@njit(cache=True)
def _cd_l1(H, g, b, pen, tol, max_sweeps):
    # minimize g'(z-b) + (z-b)'H(z-b)/2 + sum_l pen_l |z_l|  (H positive definite)
    p = b.size
    z = b.copy()
    r = np.zeros(p)
    sweeps = 0
    for sweep in range(max_sweeps):
        sweeps = sweep + 1
        max_change = 0.0
        for l in range(p):
            a = H[l, l]
            v = a * z[l] - g[l] - r[l]
            if v > pen[l]:
                zn = (v - pen[l]) / a
            elif v < -pen[l]:
                zn = (v + pen[l]) / a
            else:
                zn = 0.0
            dz = zn - z[l]
            if dz != 0.0:
                for m in range(p):
                    r[m] += H[m, l] * dz
                z[l] = zn
                if abs(dz) > max_change:
                    max_change = abs(dz)
        if max_change <= tol:
            break
    return z, sweeps


def adaptive_weights(b_hat, unpenalized=()) -> np.ndarray:
    b_hat = np.asarray(b_hat, dtype=float)
    # an exactly-zero first-step coefficient gets a prohibitive (finite) weight
    w = 1.0 / np.maximum(np.abs(b_hat), np.finfo(float).tiny)
    w[list(unpenalized)] = 0.0
    return w


def kkt_violations(score, b, pen) -> np.ndarray:
    """Per-coordinate violation of the optimality conditions of Q_n - sum pen_l |b_l|."""
    return np.where(
        b != 0,
        np.abs(score - pen * np.sign(b)),
        np.maximum(np.abs(score) - pen, 0.0),
    )


def fit_adaptive_lasso(
    d: DesignMatrices,
    cfg: SolverConfig | None = None,
    first_step: FitResult | None = None,
    lam: float = 0.01,
    unpenalized=None,
    weights=None,
) -> PenalizedFit:
    """Maximize Q_n(b) - lam * sum_l w_l |b_l| by proximal Newton.

    ``lam`` is on the per-observation scale of Q_n; the equivalent level on
    the summed log-likelihood is ``n * lam`` (see `theory_lambda`).
    """
    cfg = cfg or SolverConfig()
    if not lam > 0:
        raise ValueError("penalty level must be positive")
    if first_step is None:
        first_step = fit_ml(d, cfg)
    if not first_step.converged:
        raise ConvergenceError("first-step ML fit did not converge")
    if unpenalized is None:
        unpenalized = d.dictionary.unpenalized_default()
    unpenalized = tuple(sorted(set(int(i) for i in unpenalized)))
    if weights is None:
        weights = adaptive_weights(first_step.b_hat, unpenalized)
    weights = np.asarray(weights, dtype=float)
    pen = lam * weights

    def F(b):
        return -objective.value(b, d) + float(pen @ np.abs(b))

    b = first_step.b_hat.copy()
    fval = F(b)
    conv = False
    msg = ""
    it = 0
    kkt = np.inf
    while True:
        rep = objective.evaluate(b, d)
        kkt = float(np.max(kkt_violations(rep.score, b, pen)))
        if kkt <= cfg.grad_tol:
            conv = True
            break
        if it >= cfg.max_iter:
            msg = f"iteration cap {cfg.max_iter} reached"
            break
        H = -rep.hessian
        g = -rep.score
        z, _ = _cd_l1(H, g, b, pen, cfg.inner_tol, cfg.inner_max_sweeps)
        delta = z - b
        decrease = float(g @ delta) + float(pen @ (np.abs(z) - np.abs(b)))
        alpha = min(1.0, cfg.boundary_fraction * _max_step(rep.eta, d.t, delta))
        accepted = False
        for _ in range(cfg.max_backtrack):
            bn = z.copy() if alpha == 1.0 else b + alpha * delta
            try:
                fn = F(bn)
            except DomainError:
                alpha *= cfg.backtrack_ratio
                continue
            if fn <= fval + cfg.armijo_c * alpha * decrease:
                accepted = True
                break
            if abs(alpha * decrease) <= _roundoff(fval) and fn <= fval + _roundoff(fval):
                accepted = True
                break
            alpha *= cfg.backtrack_ratio
        if not accepted:
            msg = "line search failed"
            break
        b, fval = bn, fn
        it += 1
    value = objective.value(b, d)
    active = tuple(int(i) for i in np.flatnonzero(b != 0))
    return PenalizedFit(
        b_al=b, lam=float(lam), weights=weights, active_set=active, kkt_residual=kkt,
        bic=bic(value, len(active), d.n), value=value, n=d.n, converged=conv,
        iterations=it, unpenalized=unpenalized, message=msg or "converged",
    )


# -- model selection ---------------------------------------------------------------


@dataclass(eq=False)
class PathEntry:
    lam: float
    bic: float
    n_active: int
    qgm_ok: bool
    converged: bool
    fit: PenalizedFit | None
    message: str = ""


@dataclass(eq=False)
class CandidateResult:
    index: int
    spec: DictionarySpec
    design: DesignMatrices | None
    ml_fit: FitResult | None
    path: list
    best: PathEntry | None
    dropped: str = ""

    @property
    def label(self) -> str:
        return self.spec.label


@dataclass(eq=False)
class SelectionReport:
    candidates: list
    ranking: list  # (candidate index, bic) sorted ascending, ties by index

    @property
    def best(self) -> CandidateResult | None:
        if not self.ranking:
            return None
        return self.candidates[self.ranking[0][0]]


def _fit_candidate(index, spec, lambdas, y, x, cfg, x_grid, u_grid) -> CandidateResult:
    from .drf import DrfEvaluator, qgm_check

    try:
        d = build_dictionary(spec, y, x)
    except ValueError as exc:
        return CandidateResult(index, spec, None, None, [], None, f"dictionary: {exc}")
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        ml = fit_ml(d, cfg)
    if not ml.converged:
        return CandidateResult(index, spec, d, ml, [], None, "first-step fit did not converge")
    path = []
    for lam in lambdas:
        try:
            pf = fit_adaptive_lasso(d, cfg, ml, lam)
        except (ConvergenceError, ValueError) as exc:
            path.append(PathEntry(lam, np.inf, 0, False, False, None, str(exc)))
            continue
        ok = False
        if pf.converged:
            ok = qgm_check(DrfEvaluator(d.dictionary, pf.b_al), x_grid, u_grid).passed
        pf.qgm_ok = ok
        path.append(PathEntry(lam, pf.bic, len(pf.active_set), ok, pf.converged, pf))
    sizes = [e.n_active for e in path if e.converged]
    if any(b > a for a, b in zip(sizes, sizes[1:])):
        log.info("%s: active-set size not monotone along the lambda path: %s", spec.label, sizes)
    ok = [e for e in path if e.qgm_ok and e.converged]
    if not ok:
        return CandidateResult(index, spec, d, ml, path, None, "no lambda passes QGM")
    best = min(ok, key=lambda e: e.bic)
    return CandidateResult(index, spec, d, ml, path, best)


def select_model(
    candidates,
    y,
    x=None,
    cfg: SolverConfig | None = None,
    lambdas=None,
    x_grid=None,
    u_grid=None,
    n_jobs: int = 1,
) -> SelectionReport:
    """First-step fit, adaptive-Lasso path, QGM screen and BIC ranking per candidate.

    ``candidates`` holds DictionarySpec objects or (DictionarySpec, lambdas)
    pairs.  Candidates whose every lambda fails QGM are dropped from the
    ranking; ties in BIC go to the lower candidate index.
    """
    cfg = cfg or SolverConfig()
    if not candidates:
        raise ValueError("no candidate specifications")
    default = tuple(DEFAULT_LAMBDAS if lambdas is None else lambdas)
    jobs = []
    for i, c in enumerate(candidates):
        if isinstance(c, DictionarySpec):
            jobs.append((i, c, default))
        else:
            spec, lams = c
            jobs.append((i, spec, tuple(default if lams is None else lams)))
    args = [(i, s, l, y, x, cfg, x_grid, u_grid) for i, s, l in jobs]
    if n_jobs > 1:
        with ThreadPoolExecutor(max_workers=n_jobs) as ex:
            results = list(ex.map(lambda a: _fit_candidate(*a), args))
    else:
        results = [_fit_candidate(*a) for a in args]
    ranking = sorted(
        ((r.index, r.best.bic) for r in results if r.best is not None),
        key=lambda t: (t[1], t[0]),
    )
    for r in results:
        if r.best is None:
            log.info("candidate %d (%s) dropped: %s", r.index, r.label, r.dropped)
    return SelectionReport(results, ranking)

