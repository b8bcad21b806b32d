"""Sandwich covariance and specification diagnostics for fitted GT models.

    Gamma_hat = n^-1 sum_i gamma_i(b)     (Hessian of Q_n)
    Psi_hat   = n^-1 sum_i psi_i psi_i'   (outer product of per-observation scores)
    cov       = Gamma_hat^-1 Psi_hat Gamma_hat^-1 / n

Penalized fits use the blocks of the active coordinates; inactive
coordinates get zero variance.  Under correct specification
Gamma = -Psi, which `info_matrix_gap` measures.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass

import numpy as np

from . import objective
from .dictionary import DesignMatrices, DictionarySpec, build_dictionary

log = logging.getLogger(__name__)

SINGULAR_RCOND = 1e-12
STEIN_FLAG = 3.0


@dataclass(frozen=True, eq=False)
class Sandwich:
    gamma_hat: np.ndarray
    psi_hat: np.ndarray
    cov: np.ndarray
    which: str  # "full" or "active-block"
    active: tuple
    pseudo_inverse: bool = False

    @property
    def se(self) -> np.ndarray:
        return np.sqrt(np.maximum(np.diag(self.cov), 0.0))

    def raw_cov(self, dictionary) -> np.ndarray:
        """Covariance of the raw-unit coefficients M' b."""
        M = dictionary.coefficient_map()
        return M.T @ self.cov @ M

    def raw_se(self, dictionary) -> np.ndarray:
        return np.sqrt(np.maximum(np.diag(self.raw_cov(dictionary)), 0.0))


def _coefficients(fit):
    if hasattr(fit, "b_al"):
        return np.asarray(fit.b_al, dtype=float), tuple(fit.active_set), True
    return np.asarray(fit.b_hat, dtype=float), None, False


def _inverse(G: np.ndarray):
    """Inverse of a symmetric matrix, or its pseudo-inverse when near singular."""
    ev = np.linalg.eigvalsh(G)
    scale = np.max(np.abs(ev)) if ev.size else 0.0
    if ev.size == 0 or scale == 0.0 or np.min(np.abs(ev)) <= SINGULAR_RCOND * scale:
        return np.linalg.pinv(G, rcond=SINGULAR_RCOND, hermitian=True), True
    return np.linalg.inv(G), False


def sandwich(fit, d: DesignMatrices) -> Sandwich:
    if not getattr(fit, "converged", True):
        raise ValueError("covariance needs a converged fit")
    b, active, penalized = _coefficients(fit)
    rep = objective.evaluate(b, d)
    psi = objective.scores(b, d)
    gamma = rep.hessian
    psi_hat = psi.T @ psi / d.n
    if penalized:
        A = np.asarray(active, dtype=int)
        which = "active-block"
    else:
        A = np.arange(d.jk)
        which = "full"
    cov = np.zeros((d.jk, d.jk))
    pinv = False
    if A.size:
        Ginv, pinv = _inverse(gamma[np.ix_(A, A)])
        block = Ginv @ psi_hat[np.ix_(A, A)] @ Ginv / d.n
        cov[np.ix_(A, A)] = 0.5 * (block + block.T)
    if pinv:
        warnings.warn(
            "Hessian is numerically singular; covariance uses a pseudo-inverse "
            "(the dictionary is nearly collinear on this sample)",
            RuntimeWarning,
            stacklevel=2,
        )
    return Sandwich(gamma, psi_hat, cov, which, tuple(int(a) for a in A), pinv)


def info_matrix_gap(fit, d: DesignMatrices) -> float:
    """||Gamma_hat + Psi_hat||_F / ||Psi_hat||_F at the fitted coefficients."""
    b, _, _ = _coefficients(fit)
    gamma = objective.evaluate(b, d).hessian
    psi = objective.scores(b, d)
    psi_hat = psi.T @ psi / d.n
    return gap_ratio(gamma, psi_hat)


def gap_ratio(gamma, psi_hat) -> float:
    den = np.linalg.norm(psi_hat, "fro")
    if den == 0.0:
        raise ValueError("score outer product is zero")
    return float(np.linalg.norm(gamma + psi_hat, "fro") / den)


@dataclass(frozen=True, eq=False)
class SteinReport:
    moments: np.ndarray
    se: np.ndarray
    z: np.ndarray
    labels: list
    probe: str
    studentization: str = "i.i.d. sample variance of the summands (heuristic, no formal test)"

    @property
    def max_abs_z(self) -> float:
        finite = np.abs(self.z[np.isfinite(self.z)])
        return float(finite.max()) if finite.size else 0.0

    @property
    def flagged(self) -> list:
        return [lab for lab, z in zip(self.labels, self.z) if abs(z) > STEIN_FLAG]

    def to_dict(self) -> dict:
        return {
            "probe": self.probe,
            "studentization": self.studentization,
            "max_abs_z": self.max_abs_z,
            "flagged": self.flagged,
            "table": [
                {"component": lab, "moment": float(m), "se": float(s), "z": float(z)}
                for lab, m, s, z in zip(self.labels, self.moments, self.se, self.z)
            ],
        }


def _studentize(summands: np.ndarray):
    n = summands.shape[0]
    m = summands.mean(axis=0)
    sd = summands.std(axis=0, ddof=1) if n > 1 else np.zeros(summands.shape[1])
    se = sd / np.sqrt(n)
    with np.errstate(divide="ignore", invalid="ignore"):
        z = np.where(se > 0, m / se, np.where(m == 0, 0.0, np.inf))
    return m, se, z


def stein_diagnostics(fit, d: DesignMatrices, probe: DictionarySpec | None = None) -> SteinReport:
    """Sample Stein moments n^-1 sum_i {-T~(x_i, e_i) e_i + t~(x_i, e_i)} at e_i = b'T_i.

    With ``probe=None`` the fitted dictionary itself is used in the score
    form -T_i e_i + t_i / (b't_i), which vanishes at an exact optimum.
    """
    b, _, _ = _coefficients(fit)
    e = d.T @ b
    if probe is None:
        summands = objective.scores(b, d)
        m, se, z = _studentize(summands)
        return SteinReport(m, se, z, d.dictionary.column_labels(), "fitted dictionary (score form)")
    if not isinstance(probe, DictionarySpec):
        raise TypeError("probe must be a DictionarySpec")
    x = d.x if d.x.shape[1] else None
    pd_ = build_dictionary(probe, e, x)
    # derivative with respect to e itself, not its standardized version
    t_e = pd_.t / pd_.dictionary.scaling.y_sd
    summands = -pd_.T * e[:, None] + t_e
    m, se, z = _studentize(summands)
    labels = [lab.replace("y", "e") for lab in pd_.dictionary.column_labels()]
    return SteinReport(m, se, z, labels, probe.label)
