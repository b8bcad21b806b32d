"""Closed-form dual recovery and optimality certificates.

The dual of the (sum-scale) GT likelihood maximization is

    min over (u, v < 0):  -n (log(2 pi)/2 + 1) + sum_i { u_i^2 / 2 - log(-v_i) }
    subject to            sum_i { T_i u_i + t_i v_i } = 0

with primal-dual link u_i = b'T_i, v_i = -1 / (b't_i).  For any primal point b
in the domain and any dual-feasible (u, v) the dual value bounds n Q_n(b)
from above, with equality at the optimum.  The penalized problem replaces the
equality by the box |sum_i {T_il u_i + t_il v_i}| <= n lam w_l.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import objective
from .dictionary import DesignMatrices
from .objective import HALF_LOG_2PI, DomainError


@dataclass(frozen=True, eq=False)
class DualCertificate:
    u: np.ndarray
    v: np.ndarray
    dual_value: float
    primal_value: float
    gap: float
    constraint_residual: float

    def passed(self, grad_tol: float = 1e-8) -> bool:
        n = self.u.size
        return (
            self.gap <= grad_tol * (1.0 + abs(self.primal_value))
            and self.constraint_residual <= n * grad_tol
        )

    def to_dict(self) -> dict:
        return {
            "dual_value": self.dual_value,
            "primal_value": self.primal_value,
            "gap": self.gap,
            "relative_gap": self.gap / (1.0 + abs(self.primal_value)),
            "constraint_residual": self.constraint_residual,
            "n": int(self.u.size),
        }


def dual_variables(b, d: DesignMatrices):
    """(u, v) = (b'T_i, -1/(b't_i)); raises DomainError when some b't_i <= 0."""
    b = np.asarray(b, dtype=float)
    eta = d.t @ b
    i = int(np.argmin(eta))
    if not eta[i] > 0:
        raise DomainError(i, eta[i])
    return d.T @ b, -1.0 / eta


def dual_value(u, v) -> float:
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    if np.any(v >= 0):
        raise ValueError("dual variables v must be strictly negative")
    n = u.size
    return float(-n * (HALF_LOG_2PI + 1.0) + np.sum(0.5 * u * u - np.log(-v)))


def dual_residuals(u, v, d: DesignMatrices) -> np.ndarray:
    """Per-coordinate sums sum_i {T_il u_i + t_il v_i}."""
    return d.T.T @ u + d.t.T @ v


def certificate(b, d: DesignMatrices) -> DualCertificate:
    """Certificate for an arbitrary domain point b (used along iterates)."""
    u, v = dual_variables(b, d)
    dv = dual_value(u, v)
    pv = d.n * objective.value(b, d)
    res = float(np.max(np.abs(dual_residuals(u, v, d))))
    return DualCertificate(u, v, dv, pv, abs(pv - dv), res)


def recover_dual(fit, d: DesignMatrices) -> DualCertificate:
    if not getattr(fit, "converged", True):
        raise ValueError("dual recovery needs a converged fit")
    b = fit.b_al if hasattr(fit, "b_al") else fit.b_hat
    return certificate(b, d)


@dataclass(frozen=True, eq=False)
class LassoKKTReport:
    residual: np.ndarray  # |sum_i {T_il u_i + t_il v_i}|
    bound: np.ndarray  # n * lam * w_l
    active: np.ndarray  # boolean mask of nonzero coordinates
    box_ok: np.ndarray  # residual <= bound + tol
    slack_ok: np.ndarray  # residual >= bound - tol on active penalized coordinates
    tol: float

    @property
    def passed(self) -> bool:
        return bool(np.all(self.box_ok) and np.all(self.slack_ok))

    @property
    def max_violation(self) -> float:
        over = np.maximum(self.residual - self.bound, 0.0)
        pen_active = self.active & (self.bound > 0)
        under = np.where(pen_active, np.maximum(self.bound - self.residual, 0.0), 0.0)
        return float(max(over.max(), under.max()))

    def to_dict(self) -> dict:
        return {
            "passed": self.passed,
            "tol": self.tol,
            "max_violation": self.max_violation,
            "residual": self.residual.tolist(),
            "bound": self.bound.tolist(),
        }


def check_lasso_kkt(pfit, d: DesignMatrices, tol: float | None = None) -> LassoKKTReport:
    """Dual box constraints of the adaptive-Lasso problem at the penalized fit.

    The bound on coordinate l is n * lam * w_l on the sum scale (lam is the
    per-observation penalty level used by the solver).
    """
    weights = getattr(pfit, "weights", None)
    if weights is None:
        raise ValueError("penalized fit carries no weights")
    weights = np.asarray(weights, dtype=float)
    n = d.n
    tol = 1e-6 * n if tol is None else float(tol)
    b = np.asarray(pfit.b_al, dtype=float)
    u, v = dual_variables(b, d)
    res = np.abs(dual_residuals(u, v, d))
    bound = n * pfit.lam * weights
    active = b != 0
    box_ok = res <= bound + tol
    slack_ok = ~(active & (bound > 0)) | (res >= bound - tol)
    return LassoKKTReport(res, bound, active, box_ok, slack_ok, tol)
