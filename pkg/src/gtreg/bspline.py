"""B-spline primitives on strictly ascending (unclamped) knot vectors.

Basis functions are evaluated with the Cox-de Boor recursion.  Integrated
splines use the degree-elevation identity

    int_{-inf}^{x} B_{i,p}(s) ds = (t_{i+p+1} - t_i) / (p + 1) * sum_{j >= i} B_{j,p+1}(x)

so every normalized integral is exact (no quadrature).
"""

from __future__ import annotations

import numpy as np


def check_knots(knots, degree: int) -> np.ndarray:
    knots = np.asarray(knots, dtype=float)
    if knots.ndim != 1:
        raise ValueError("knots must be a 1-d sequence")
    if degree < 1:
        raise ValueError(f"spline degree must be >= 1, got {degree}")
    if knots.size < degree + 2:
        raise ValueError(
            f"need at least degree + 2 = {degree + 2} knots, got {knots.size}"
        )
    if not np.all(np.isfinite(knots)):
        raise ValueError("knots must be finite")
    if np.any(np.diff(knots) <= 0):
        raise ValueError("knots must be strictly ascending")
    return knots


def n_functions(knots, degree: int) -> int:
    return len(knots) - degree - 1


def basis(x, knots, degree: int) -> np.ndarray:
    """Evaluate all B-splines of `degree` on `knots` at points `x`.

    Returns an array of shape (len(x), len(knots) - degree - 1).  Each
    function is supported on [t_i, t_{i+degree+1}] and vanishes outside.
    """
    x = np.atleast_1d(np.asarray(x, dtype=float))
    t = np.asarray(knots, dtype=float)
    xc = x[:, None]
    B = ((xc >= t[:-1]) & (xc < t[1:])).astype(float)
    for k in range(1, degree + 1):
        m = B.shape[1] - 1
        left = (xc - t[:m]) / (t[k:m + k] - t[:m]) * B[:, :m]
        right = (t[k + 1:m + k + 1] - xc) / (t[k + 1:m + k + 1] - t[1:m + 1]) * B[:, 1:m + 1]
        B = left + right
    return B


def normalized_basis(x, knots, degree: int) -> np.ndarray:
    """B-splines rescaled to unit integral, i.e. densities on their supports."""
    t = np.asarray(knots, dtype=float)
    m = n_functions(t, degree)
    scale = (degree + 1) / (t[degree + 1:degree + 1 + m] - t[:m])
    return basis(x, t, degree) * scale


def integrated_basis(x, knots, degree: int) -> np.ndarray:
    """CDF-like integrals of the normalized B-splines.

    Column i is 0 left of t_i, 1 right of t_{i+degree+1}, and increases
    monotonically in between.  Its derivative is `normalized_basis`.
    """
    x = np.atleast_1d(np.asarray(x, dtype=float))
    t = np.asarray(knots, dtype=float)
    p = degree
    m = n_functions(t, p)
    # Right extension supplies the degree p+1 functions whose support leaves
    # the original knot span; any ascending extension gives the same integral.
    h = t[-1] - t[-2]
    u = np.concatenate([t, t[-1] + h * np.arange(1, p + 2)])
    Bu = basis(x, u, p + 1)
    # tail sums: cum[:, i] = sum_{j >= i} Bu[:, j]
    cum = np.cumsum(Bu[:, ::-1], axis=1)[:, ::-1]
    out = cum[:, :m]
    right_end = t[p + 1:p + 1 + m]
    out = np.where(x[:, None] >= right_end, 1.0, out)
    out = np.where(x[:, None] <= t[:m], 0.0, out)
    return out


def equispaced_knots(lo: float, hi: float, n_fun: int, degree: int) -> np.ndarray:
    """`n_fun + degree + 1` equispaced knots spanning [lo, hi]."""
    if n_fun < 1:
        raise ValueError("need at least one spline function")
    if not hi > lo:
        raise ValueError(f"degenerate knot range [{lo}, {hi}]")
    return np.linspace(lo, hi, n_fun + degree + 1)
