"""Fitted conditional CDF, density and quantile functions with pointwise bands.

Inputs and outputs are in raw data units; the fitted transform itself lives
in the dictionary's standardized coordinates.  With covariance Xi of the
coefficients (already divided by n), the delta-method standard errors are

    cdf       phi(g) * sqrt(T' Xi T)
    pdf       phi(g) * sqrt(D' Xi D) / sd_y,   D = -g * (b't) * T + t
    quantile  sd_y * sqrt(T' Xi T) / (b't)     at y = Q(x, u)
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import norm

from .dictionary import Dictionary

DEFAULT_U_GRID = tuple(np.round(np.arange(1, 100) / 100.0, 2))
DEFAULT_X_POINTS = 201


class QuantileError(ValueError):
    def __init__(self, message, attained=None):
        super().__init__(message)
        self.attained = attained


@dataclass(eq=False)
class QgmReport:
    passed: bool
    violations: list
    x_grid: np.ndarray
    u_grid: np.ndarray
    n_checked: int = 0
    reasons: dict = field(default_factory=dict)

    @property
    def grid(self) -> str:
        return f"{len(self.x_grid)} x-values by {len(self.u_grid)} u-levels"


def _quad_rows(A, cov):
    return np.einsum("ij,jk,ik->i", A, cov, A)


class DrfEvaluator:
    def __init__(self, dictionary: Dictionary, b, cov=None):
        self.dictionary = dictionary
        self.b = np.asarray(b, dtype=float)
        if self.b.shape != (dictionary.jk,):
            raise ValueError("coefficient length does not match the dictionary")
        if cov is not None and hasattr(cov, "cov"):
            cov = cov.cov
        self.cov = None if cov is None else np.asarray(cov, dtype=float)
        self._B = self.b.reshape(dictionary.K, dictionary.J)

    @classmethod
    def from_fit(cls, design, fit, sandwich=None):
        b = fit.b_al if hasattr(fit, "b_al") else fit.b_hat
        return cls(design.dictionary, b, sandwich)

    # -- helpers ----------------------------------------------------------------
    def _warn_extrapolation(self, xs_raw):
        summ = self.dictionary.summary
        if not summ.get("x_min") or xs_raw.shape[1] == 0:
            return
        lo = np.asarray(summ["x_min"])
        hi = np.asarray(summ["x_max"])
        slack = 1e-9 * np.maximum(1.0, hi - lo)
        if np.any(xs_raw < lo - slack) or np.any(xs_raw > hi + slack):
            warnings.warn("covariate values outside the observed range; extrapolating", stacklevel=3)

    def _inputs(self, x, y):
        dic = self.dictionary
        xs, ys, scalar = dic._coerce(x, y)
        if dic.n_cov:
            self._warn_extrapolation(xs * dic.scaling.x_sd + dic.scaling.x_mean)
        return xs, ys, scalar

    def _se(self, A):
        if self.cov is None:
            return None
        return np.sqrt(np.maximum(_quad_rows(A, self.cov), 0.0))

    @staticmethod
    def _out(est, se, scalar):
        if scalar:
            return float(est[0]), (None if se is None else float(se[0]))
        return est, se

    def beta(self, xs) -> np.ndarray:
        """Varying coefficients beta(x) = B'W(x) at standardized covariates, shape (m, J)."""
        return self.dictionary.W(xs) @ self._B

    def g(self, x, y):
        xs, ys, scalar = self._inputs(x, y)
        v = self.dictionary.T_std(xs, ys) @ self.b
        return float(v[0]) if scalar else v

    def eta(self, x, y):
        """b't(x, y): derivative of the transform in standardized y."""
        xs, ys, scalar = self._inputs(x, y)
        v = self.dictionary.t_std(xs, ys) @ self.b
        return float(v[0]) if scalar else v

    # -- distributional regression functions ----------------------------------------
    def cdf(self, x, y):
        xs, ys, scalar = self._inputs(x, y)
        T = self.dictionary.T_std(xs, ys)
        g = T @ self.b
        est = norm.cdf(g)
        se = self._se(T)
        if se is not None:
            se = norm.pdf(g) * se
        return self._out(est, se, scalar)

    def pdf(self, x, y):
        dic = self.dictionary
        xs, ys, scalar = self._inputs(x, y)
        T = dic.T_std(xs, ys)
        t = dic.t_std(xs, ys)
        g = T @ self.b
        eta = t @ self.b
        sd = dic.scaling.y_sd
        est = norm.pdf(g) * eta / sd
        se = None
        if self.cov is not None:
            D = -(g * eta)[:, None] * T + t
            se = norm.pdf(g) * self._se(D) / sd
        return self._out(est, se, scalar)

    def quantile(self, x, u):
        dic = self.dictionary
        u_arr = np.asarray(u, dtype=float)
        if np.any((u_arr <= 0) | (u_arr >= 1)):
            raise ValueError("quantile levels must lie in (0, 1)")
        xs, _, scalar = self._inputs(x, u_arr)
        z = norm.ppf(np.broadcast_to(np.atleast_1d(u_arr), (xs.shape[0],)))
        ys, ok = self.solve_std(xs, z)
        if not np.all(ok):
            i = int(np.flatnonzero(~ok)[0])
            rng = self.attained_range(xs[i:i + 1])
            raise QuantileError(
                f"level u={np.atleast_1d(u_arr)[min(i, u_arr.size - 1)]} is not attained "
                f"at this covariate value (attained CDF range {rng})",
                attained=rng,
            )
        est = dic.scaling.y_raw(ys)
        se = None
        if self.cov is not None:
            T = dic.T_std(xs, ys)
            eta = dic.t_std(xs, ys) @ self.b
            se = dic.scaling.y_sd * self._se(T) / eta
        return self._out(est, se, scalar)

    def attained_range(self, xs) -> tuple:
        """(lim inf, lim sup) of the fitted CDF over y at one standardized covariate row."""
        beta = self.beta(xs)[0]
        vals = []
        for y in (-1e12, 1e12):
            vals.append(float(norm.cdf(beta @ self.dictionary.S(np.array([y]))[0])))
        return min(vals), max(vals)

    # -- level inversion --------------------------------------------------------------
    def _g_eta(self, beta, ys):
        dic = self.dictionary
        return np.sum(beta * dic.S(ys), axis=1), np.sum(beta * dic.s(ys), axis=1)

    def tail_solution(self, beta, z):
        """Closed-form roots where the level falls in an affine tail; NaN elsewhere."""
        out = np.full(z.shape, np.nan)
        b1, b2 = beta[:, 0], beta[:, 1]
        pos = b2 > 0
        span = self.dictionary.y_span
        if span is None:
            out[pos] = (z[pos] - b1[pos]) / b2[pos]
            return out
        lo, hi = span
        g_lo = b1 + b2 * lo
        top = beta[:, 2:].sum(axis=1)
        g_hi = b1 + b2 * hi + top
        below = pos & (z < g_lo)
        above = pos & (z > g_hi)
        out[below] = (z[below] - b1[below]) / b2[below]
        out[above] = (z[above] - b1[above] - top[above]) / b2[above]
        return out

    def bracket(self, beta, z, center, max_doublings: int = 64):
        """Grow [center - h, center + h] by doubling until g(lo) <= z <= g(hi)."""
        m = z.size
        c = np.broadcast_to(np.asarray(center, dtype=float), (m,)).copy()
        lo = c - 1.0
        hi = c + 1.0
        for _ in range(max_doublings):
            g_lo, _ = self._g_eta(beta, lo)
            g_hi, _ = self._g_eta(beta, hi)
            need_lo = g_lo > z
            need_hi = g_hi < z
            if not (need_lo.any() or need_hi.any()):
                break
            lo = np.where(need_lo, c - 2.0 * (c - lo), lo)
            hi = np.where(need_hi, c + 2.0 * (hi - c), hi)
        g_lo, _ = self._g_eta(beta, lo)
        g_hi, _ = self._g_eta(beta, hi)
        ok = (g_lo <= z) & (g_hi >= z)
        return lo, hi, ok

    def root_find(self, beta, z, lo, hi, tol: float = 1e-10, max_iter: int = 200):
        """Safeguarded Newton with bisection fallback on brackets g(lo) <= z <= g(hi)."""
        lo = lo.copy()
        hi = hi.copy()
        y = 0.5 * (lo + hi)
        done = np.zeros(z.shape, dtype=bool)
        idx = np.arange(z.size)
        for _ in range(max_iter):
            g, eta = self._g_eta(beta[idx], y[idx])
            f = g - z[idx]
            fin = np.abs(f) <= tol
            done[idx[fin]] = True
            keep = ~fin
            idx, f, eta = idx[keep], f[keep], eta[keep]
            if idx.size == 0:
                break
            yi = y[idx]
            li = np.where(f < 0, yi, lo[idx])
            hi_ = np.where(f > 0, yi, hi[idx])
            lo[idx], hi[idx] = li, hi_
            with np.errstate(divide="ignore", invalid="ignore"):
                newton = yi - f / eta
            ok = (eta > 0) & (newton > li) & (newton < hi_)
            y[idx] = np.where(ok, newton, 0.5 * (li + hi_))
        # final Newton polish (exact on affine stretches)
        g, eta = self._g_eta(beta, y)
        with np.errstate(divide="ignore", invalid="ignore"):
            newton = y - (g - z) / eta
        g2, _ = self._g_eta(beta, np.where(np.isfinite(newton), newton, y))
        better = np.isfinite(newton) & (eta > 0) & (np.abs(g2 - z) < np.abs(g - z))
        y = np.where(better, newton, y)
        return y, done | better

    def solve_std(self, xs, z, center=None):
        """Standardized y with g(y, x) = z for each row of xs; returns (y, ok)."""
        xs = np.asarray(xs, dtype=float)
        z = np.asarray(z, dtype=float)
        beta = self.beta(xs)
        y = self.tail_solution(beta, z)
        todo = ~np.isfinite(y)
        ok = ~todo
        if todo.any():
            bt, zt = beta[todo], z[todo]
            span = self.dictionary.y_span
            lo = np.zeros(zt.shape)
            hi = np.zeros(zt.shape)
            # a negative y-slope makes g decrease in both tails: no increasing inverse
            br_ok = bt[:, 1] >= 0
            inside = br_ok & (bt[:, 1] > 0) if span is not None else np.zeros(zt.shape, bool)
            lo[inside], hi[inside] = span if span is not None else (0.0, 0.0)
            search = br_ok & ~inside
            if search.any():
                if center is None:
                    med = self.dictionary.summary.get("y_median")
                    center = 0.0 if med is None else float(self.dictionary.scaling.y_std(med))
                lo[search], hi[search], br_ok[search] = self.bracket(bt[search], zt[search], center)
            yt = np.full(zt.shape, np.nan)
            conv = np.zeros(zt.shape, dtype=bool)
            if br_ok.any():
                yt[br_ok], conv[br_ok] = self.root_find(bt[br_ok], zt[br_ok], lo[br_ok], hi[br_ok])
            good = br_ok & conv
            yt[~good] = np.nan
            y[todo] = yt
            ok[todo] = good
        return y, ok

    def inverse(self, x, e):
        """Raw y with g(y, x) = e (the inverse transform h(x, e))."""
        dic = self.dictionary
        xs, _, scalar = self._inputs(x, e)
        z = np.broadcast_to(np.atleast_1d(np.asarray(e, dtype=float)), (xs.shape[0],))
        ys, ok = self.solve_std(xs, z)
        if not np.all(ok):
            raise QuantileError("transform level not attained at some covariate value")
        y = dic.scaling.y_raw(ys)
        return float(y[0]) if scalar else y


def default_x_grid(dictionary: Dictionary, n_points: int = DEFAULT_X_POINTS) -> np.ndarray:
    """Covariate rows (raw units) spanning the sample covariate range."""
    p = dictionary.n_cov
    summ = dictionary.summary
    if p == 0:
        return np.zeros((1, 0))
    if p == 1:
        return np.linspace(summ["x_min"][0], summ["x_max"][0], n_points)[:, None]
    rows = summ.get("x_rows")
    if rows:
        return np.asarray(rows, dtype=float)
    lo, hi = np.asarray(summ["x_min"]), np.asarray(summ["x_max"])
    return lo + np.linspace(0, 1, n_points)[:, None] * (hi - lo)


def qgm_check(ev: DrfEvaluator, x_grid=None, u_grid=None) -> QgmReport:
    """Check b't(x, Q(x, u)) > 0 and strictly increasing quantiles on a grid.

    A grid point whose quantile cannot be computed counts as a violation.
    """
    dic = ev.dictionary
    X = default_x_grid(dic) if x_grid is None else np.asarray(x_grid, dtype=float)
    if X.ndim == 1:
        X = X[:, None] if dic.n_cov == 1 else X.reshape(-1, dic.n_cov)
    U = np.asarray(DEFAULT_U_GRID if u_grid is None else u_grid, dtype=float)
    if X.shape[0] == 0 or U.size == 0:
        raise ValueError("QGM grids must be nonempty")
    U = np.sort(U)
    nx, nu = X.shape[0], U.size
    xs = dic.scaling.x_std(np.repeat(X, nu, axis=0))
    z = np.tile(norm.ppf(U), nx)
    ys, ok = ev.solve_std(xs, z)
    eta = np.full(ys.shape, np.nan)
    eta[ok] = np.sum(ev.beta(xs[ok]) * dic.s(ys[ok]), axis=1)
    bad = ~ok | ~(eta > 0)
    reasons = {"not_attained": int(np.sum(~ok)), "nonpositive_derivative": int(np.sum(ok & ~(eta > 0)))}
    Y = ys.reshape(nx, nu)
    with np.errstate(invalid="ignore"):
        cross = np.zeros((nx, nu), dtype=bool)
        cross[:, 1:] = ~(np.diff(Y, axis=1) > 0)
    cross = cross.ravel() & ~bad
    reasons["crossing"] = int(np.sum(cross))
    bad |= cross
    violations = []
    for i in np.flatnonzero(bad):
        xi = X[i // nu]
        violations.append((xi[0] if xi.size == 1 else tuple(xi), float(U[i % nu]), float(eta[i])))
    return QgmReport(not violations, violations, X, U, nx * nu, reasons)


def z_multiplier(level: float) -> float:
    if not 0 < level < 1:
        raise ValueError("confidence level must lie in (0, 1)")
    return float(norm.ppf(0.5 + level / 2.0))


BAND_COLUMNS = ("x", "grid", "estimate", "lower", "upper", "kind")


def band_grid(ev: DrfEvaluator, x_values, grid, kind: str = "quantile", level: float = 0.95) -> list:
    """Rows (x, grid, estimate, lower, upper, kind) of pointwise bands, raw units.

    ``grid`` holds y values for kind "cdf"/"pdf" and u levels for "quantile".
    CDF bands are clipped to [0, 1] and PDF lower bands at 0; this clipping is
    applied to the reported rows only.
    """
    if ev.cov is None:
        raise ValueError("bands need a coefficient covariance; none is attached to this fit")
    fn = {"cdf": ev.cdf, "pdf": ev.pdf, "quantile": ev.quantile}.get(kind)
    if fn is None:
        raise ValueError(f"unknown DRF kind {kind!r}")
    zq = z_multiplier(level)
    dic = ev.dictionary
    X = np.asarray(x_values, dtype=float)
    if dic.n_cov <= 1:
        X = X.reshape(-1, dic.n_cov)
    grid = np.asarray(grid, dtype=float)
    rows = []
    for xrow in X:
        est, se = fn(np.broadcast_to(xrow, (grid.size, dic.n_cov)), grid)
        lo = est - zq * se
        hi = est + zq * se
        if kind == "cdf":
            lo, hi = np.clip(lo, 0, 1), np.clip(hi, 0, 1)
        elif kind == "pdf":
            lo = np.maximum(lo, 0)
        xv = float(xrow[0]) if xrow.size == 1 else ";".join(f"{v:.10g}" for v in xrow)
        for gpt, e_, l_, h_ in zip(grid, est, lo, hi):
            rows.append({"x": xv, "grid": float(gpt), "estimate": float(e_),
                         "lower": float(l_), "upper": float(h_), "kind": kind})
    return rows
