"""Sample log-likelihood of a Gaussian-transform regression and its derivatives.

    Q_n(b) = mean_i [ -(log(2 pi) + (b'T_i)^2) / 2 + log(b't_i) ]

is finite exactly on the open set {b : b't_i > 0 for all i}, so the log
Jacobian acts as a barrier that keeps every iterate monotone in y.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dictionary import DesignMatrices

HALF_LOG_2PI = 0.5 * np.log(2.0 * np.pi)


class DomainError(ValueError):
    """b't_i <= 0 at some sample point; the likelihood is not finite there."""

    def __init__(self, row: int, eta: float):
        self.row = int(row)
        self.eta = float(eta)
        super().__init__(f"b't <= 0 at row {self.row} (eta = {self.eta:.6g})")


@dataclass(frozen=True, eq=False)
class LikelihoodReport:
    value: float
    score: np.ndarray
    hessian: np.ndarray
    e: np.ndarray
    eta: np.ndarray


def _check_dims(b, d: DesignMatrices) -> np.ndarray:
    b = np.asarray(b, dtype=float)
    if b.shape != (d.jk,):
        raise ValueError(f"coefficient vector has shape {b.shape}, dictionary has {d.jk} columns")
    return b


def in_domain(b, d: DesignMatrices) -> bool:
    b = _check_dims(b, d)
    return bool(np.min(d.t @ b) > 0.0)


def value(b, d: DesignMatrices) -> float:
    """Q_n(b); raises DomainError outside the effective domain."""
    b = _check_dims(b, d)
    eta = d.t @ b
    i = int(np.argmin(eta))
    if not eta[i] > 0.0:
        raise DomainError(i, eta[i])
    e = d.T @ b
    return float(-HALF_LOG_2PI - 0.5 * np.mean(e * e) + np.mean(np.log(eta)))


def evaluate(b, d: DesignMatrices) -> LikelihoodReport:
    b = _check_dims(b, d)
    eta = d.t @ b
    i = int(np.argmin(eta))
    if not eta[i] > 0.0:
        raise DomainError(i, eta[i])
    e = d.T @ b
    n = d.n
    val = -HALF_LOG_2PI - 0.5 * np.mean(e * e) + np.mean(np.log(eta))
    t_over = d.t / eta[:, None]
    score = (-(d.T.T @ e) + t_over.sum(axis=0)) / n
    hess = -(d.T.T @ d.T + t_over.T @ t_over) / n
    hess = 0.5 * (hess + hess.T)
    return LikelihoodReport(float(val), score, hess, e, eta)


def scores(b, d: DesignMatrices) -> np.ndarray:
    """Per-observation scores psi_i = -T_i (b'T_i) + t_i / (b't_i), shape (n, JK)."""
    b = _check_dims(b, d)
    eta = d.t @ b
    i = int(np.argmin(eta))
    if not eta[i] > 0.0:
        raise DomainError(i, eta[i])
    e = d.T @ b
    return -d.T * e[:, None] + d.t / eta[:, None]


def penalized_value(b, d: DesignMatrices, lam: float, weights) -> float:
    """Q_n(b) - lam * sum_l w_l |b_l| (per-observation scale)."""
    weights = np.asarray(weights, dtype=float)
    if lam < 0:
        raise ValueError("penalty level must be nonnegative")
    if weights.shape != (d.jk,):
        raise ValueError(f"weights must have length {d.jk}")
    if np.any(weights < 0):
        raise ValueError("weights must be nonnegative")
    b = _check_dims(b, d)
    return value(b, d) - lam * float(np.sum(weights * np.abs(b)))
