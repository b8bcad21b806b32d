"""Tensor-product dictionaries T(x, y) = W(x) kron S(y) and their y-derivatives.

W(x) always starts with the constant 1 and is either linear in the covariates
or (1, B_1(x), ..., B_{K-1}(x)) for a single covariate.  S(y) always starts
with (1, y); optional further components are integrated, normalized B-splines
whose derivatives are nonnegative and vanish outside the knot span, so
b't(x, y) reduces to the pure-y slope in the tails.

Column l (0-based) of T holds W_k * S_j with l = k * J + j.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any

import numpy as np

from . import bspline

LINEAR = "linear"
BSPLINE = "bspline"


@dataclass(frozen=True)
class BasisSpec:
    """One factor of the dictionary.

    For ``kind="bspline"`` either give explicit strictly ascending ``knots``
    (in the dictionary's working coordinates, i.e. standardized units when
    the dictionary standardizes) or a ``size`` (number of spline functions),
    in which case equispaced knots over the observed range are placed at
    build time.
    """

    kind: str = LINEAR
    degree: int = 3
    size: int | None = None
    knots: tuple[float, ...] | None = None

    def __post_init__(self):
        if self.kind not in (LINEAR, BSPLINE):
            raise ValueError(f"unknown basis kind {self.kind!r}")
        if self.kind == BSPLINE:
            if self.knots is not None:
                object.__setattr__(self, "knots", tuple(float(k) for k in self.knots))
                bspline.check_knots(self.knots, self.degree)
                n_fun = bspline.n_functions(self.knots, self.degree)
                if self.size is not None and self.size != n_fun:
                    raise ValueError(
                        f"size={self.size} disagrees with {len(self.knots)} knots "
                        f"of degree {self.degree} ({n_fun} functions)"
                    )
                object.__setattr__(self, "size", n_fun)
            elif self.size is None or self.size < 1:
                raise ValueError("bspline basis needs knots or size >= 1")
            if self.degree < 1:
                raise ValueError("bspline degree must be >= 1")

    def to_dict(self) -> dict:
        d: dict[str, Any] = {"kind": self.kind}
        if self.kind == BSPLINE:
            d["degree"] = self.degree
            d["size"] = self.size
            if self.knots is not None:
                d["knots"] = list(self.knots)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "BasisSpec":
        knots = d.get("knots")
        return cls(
            kind=d.get("kind", LINEAR),
            degree=int(d.get("degree", 3)),
            size=d.get("size"),
            knots=tuple(knots) if knots is not None else None,
        )


@dataclass(frozen=True)
class DictionarySpec:
    w: BasisSpec = field(default_factory=BasisSpec)
    s_tilde: BasisSpec | None = None
    standardize: bool = True

    def __post_init__(self):
        if self.s_tilde is not None and self.s_tilde.kind != BSPLINE:
            raise ValueError("s_tilde must be a bspline basis")

    @classmethod
    def linear_linear(cls, standardize: bool = True) -> "DictionarySpec":
        return cls(BasisSpec(LINEAR), None, standardize)

    @classmethod
    def spline_x(cls, K: int, degree: int = 3, standardize: bool = True) -> "DictionarySpec":
        return cls(BasisSpec(BSPLINE, degree, K - 1), None, standardize)

    @classmethod
    def spline_y(cls, J: int, degree: int = 2, standardize: bool = True) -> "DictionarySpec":
        return cls(BasisSpec(LINEAR), BasisSpec(BSPLINE, degree, J - 2), standardize)

    @classmethod
    def spline_spline(
        cls, K: int, J: int, x_degree: int = 3, y_degree: int = 2, standardize: bool = True
    ) -> "DictionarySpec":
        return cls(
            BasisSpec(BSPLINE, x_degree, K - 1),
            BasisSpec(BSPLINE, y_degree, J - 2),
            standardize,
        )

    @property
    def spec_class(self) -> int:
        """Specification class 1-4: Linear-Linear, Spline-X, Spline-Y, Spline-Spline."""
        sx = self.w.kind == BSPLINE
        sy = self.s_tilde is not None
        return 1 + int(sx) + 2 * int(sy)

    @property
    def label(self) -> str:
        if self.w.kind == BSPLINE:
            w = f"W=bspline(deg={self.w.degree},K={self.w.size + 1})"
        else:
            w = "W=linear"
        if self.s_tilde is None:
            s = "S=linear"
        else:
            s = f"S=bspline(deg={self.s_tilde.degree},J={self.s_tilde.size + 2})"
        return f"{w}|{s}"

    def to_dict(self) -> dict:
        return {
            "w": self.w.to_dict(),
            "s_tilde": None if self.s_tilde is None else self.s_tilde.to_dict(),
            "standardize": self.standardize,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "DictionarySpec":
        s = d.get("s_tilde")
        return cls(
            BasisSpec.from_dict(d.get("w", {"kind": LINEAR})),
            None if s is None else BasisSpec.from_dict(s),
            bool(d.get("standardize", True)),
        )


def full_candidates() -> list[DictionarySpec]:
    """The 50 specifications of the four classes used for the AR(1) illustration."""
    out = [DictionarySpec.linear_linear()]
    out += [DictionarySpec.spline_x(K) for K in range(6, 15)]
    y_choices = [(5, 2), (6, 2), (6, 3), (7, 3)]
    out += [DictionarySpec.spline_y(J, deg) for J, deg in y_choices]
    out += [
        DictionarySpec.spline_spline(K, J, 3, deg)
        for K in range(6, 15)
        for J, deg in y_choices
    ]
    return out


def small_candidates() -> list[DictionarySpec]:
    """One small member of each class; cheap enough for tests and demos."""
    return [
        DictionarySpec.linear_linear(),
        DictionarySpec.spline_x(5),
        DictionarySpec.spline_y(5, 2),
        DictionarySpec.spline_spline(5, 5, 3, 2),
    ]


@dataclass(frozen=True, eq=False)
class Standardization:
    y_mean: float
    y_sd: float
    x_mean: np.ndarray
    x_sd: np.ndarray

    @classmethod
    def identity(cls, p: int) -> "Standardization":
        return cls(0.0, 1.0, np.zeros(p), np.ones(p))

    def y_std(self, y):
        return (np.asarray(y, dtype=float) - self.y_mean) / self.y_sd

    def y_raw(self, ys):
        return self.y_mean + self.y_sd * np.asarray(ys, dtype=float)

    def x_std(self, x):
        return (np.asarray(x, dtype=float) - self.x_mean) / self.x_sd

    def to_dict(self) -> dict:
        return {
            "y_mean": float(self.y_mean),
            "y_sd": float(self.y_sd),
            "x_means": [float(v) for v in self.x_mean],
            "x_sds": [float(v) for v in self.x_sd],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Standardization":
        return cls(
            float(d["y_mean"]),
            float(d["y_sd"]),
            np.asarray(d["x_means"], dtype=float),
            np.asarray(d["x_sds"], dtype=float),
        )


class Dictionary:
    """A dictionary with resolved knots and standardization.

    Evaluation methods without the ``_std`` suffix take raw-unit inputs; all
    returned vectors are in the working (standardized) coordinates, so t is
    the derivative with respect to the standardized outcome.
    """

    def __init__(
        self,
        spec: DictionarySpec,
        n_cov: int,
        scaling: Standardization,
        w_knots=None,
        s_knots=None,
        summary: dict | None = None,
    ):
        if spec.w.kind == BSPLINE and n_cov != 1:
            raise ValueError(
                f"a spline covariate basis needs exactly one covariate, got {n_cov}"
            )
        self.spec = spec
        self.n_cov = int(n_cov)
        self.scaling = scaling
        self.w_knots = None if w_knots is None else bspline.check_knots(w_knots, spec.w.degree)
        self.s_knots = (
            None if s_knots is None else bspline.check_knots(s_knots, spec.s_tilde.degree)
        )
        if spec.w.kind == BSPLINE and self.w_knots is None:
            raise ValueError("spline covariate basis has no resolved knots")
        if spec.s_tilde is not None and self.s_knots is None:
            raise ValueError("spline outcome basis has no resolved knots")
        # raw-unit data summary used for default grids and extrapolation warnings
        self.summary = dict(summary or {})
        for a in (self.w_knots, self.s_knots):
            if a is not None:
                a.setflags(write=False)

    # -- sizes ---------------------------------------------------------------
    @property
    def K(self) -> int:
        if self.spec.w.kind == BSPLINE:
            return 1 + bspline.n_functions(self.w_knots, self.spec.w.degree)
        return 1 + self.n_cov

    @property
    def J(self) -> int:
        if self.s_knots is None:
            return 2
        return 2 + bspline.n_functions(self.s_knots, self.spec.s_tilde.degree)

    @property
    def jk(self) -> int:
        return self.K * self.J

    @property
    def intercept_index(self) -> int:
        return 0

    @property
    def pure_y_index(self) -> int:
        return 1

    def index(self, k: int, j: int) -> int:
        """0-based column of W_k * S_j for 0-based k, j."""
        return k * self.J + j

    def unpenalized_default(self) -> tuple[int, ...]:
        return (self.intercept_index, self.pure_y_index)

    @property
    def y_span(self):
        """Knot span of the outcome splines in standardized units (None if linear)."""
        if self.s_knots is None:
            return None
        return float(self.s_knots[0]), float(self.s_knots[-1])

    # -- factor bases (standardized inputs) ------------------------------------
    def W(self, xs) -> np.ndarray:
        xs = np.asarray(xs, dtype=float)
        m = xs.shape[0]
        if self.spec.w.kind == BSPLINE:
            Bx = bspline.basis(xs[:, 0], self.w_knots, self.spec.w.degree)
            return np.hstack([np.ones((m, 1)), Bx])
        return np.hstack([np.ones((m, 1)), xs])

    def S(self, ys) -> np.ndarray:
        ys = np.atleast_1d(np.asarray(ys, dtype=float))
        cols = [np.ones_like(ys)[:, None], ys[:, None]]
        if self.s_knots is not None:
            cols.append(bspline.integrated_basis(ys, self.s_knots, self.spec.s_tilde.degree))
        return np.hstack(cols)

    def s(self, ys) -> np.ndarray:
        ys = np.atleast_1d(np.asarray(ys, dtype=float))
        cols = [np.zeros_like(ys)[:, None], np.ones_like(ys)[:, None]]
        if self.s_knots is not None:
            cols.append(bspline.normalized_basis(ys, self.s_knots, self.spec.s_tilde.degree))
        return np.hstack(cols)

    @staticmethod
    def _kron_rows(W, S):
        m = W.shape[0]
        return (W[:, :, None] * S[:, None, :]).reshape(m, W.shape[1] * S.shape[1])

    def T_std(self, xs, ys) -> np.ndarray:
        return self._kron_rows(self.W(xs), self.S(ys))

    def t_std(self, xs, ys) -> np.ndarray:
        return self._kron_rows(self.W(xs), self.s(ys))

    # -- raw-unit evaluation ---------------------------------------------------
    def _coerce(self, x, y):
        y_arr = np.asarray(y, dtype=float)
        scalar = y_arr.ndim == 0
        ys = np.atleast_1d(y_arr)
        p = self.n_cov
        if p == 0:
            if x is not None and np.size(x) != 0:
                raise ValueError("this dictionary takes no covariates")
            return np.zeros((ys.size, 0)), ys, scalar
        x_arr = np.asarray(x, dtype=float)
        if x_arr.ndim == 0:
            if p != 1:
                raise ValueError(f"expected {p} covariates, got a scalar")
            x_arr = x_arr.reshape(1, 1)
        elif x_arr.ndim == 1:
            if p == 1:
                x_arr = x_arr[:, None]
            elif x_arr.size == p:
                x_arr = x_arr[None, :]
            else:
                raise ValueError(f"expected {p} covariates, got {x_arr.size}")
        if x_arr.ndim != 2 or x_arr.shape[1] != p:
            raise ValueError(f"expected covariate array with {p} columns, got shape {x_arr.shape}")
        m = max(x_arr.shape[0], ys.size)
        if x_arr.shape[0] not in (1, m) or ys.size not in (1, m):
            raise ValueError("x and y have incompatible lengths")
        x_arr = np.broadcast_to(x_arr, (m, p))
        ys = np.broadcast_to(ys, (m,))
        scalar = scalar and m == 1
        return self.scaling.x_std(x_arr), self.scaling.y_std(ys), scalar

    def eval_T(self, x, y) -> np.ndarray:
        xs, ys, scalar = self._coerce(x, y)
        out = self.T_std(xs, ys)
        return out[0] if scalar else out

    def eval_t(self, x, y) -> np.ndarray:
        xs, ys, scalar = self._coerce(x, y)
        out = self.t_std(xs, ys)
        return out[0] if scalar else out

    def std_inputs(self, x, y):
        xs, ys, _ = self._coerce(x, y)
        return xs, ys

    # -- coordinates -----------------------------------------------------------
    def coefficient_map(self) -> np.ndarray:
        """Matrix M with T_std(x, y) = M @ T_raw(x, y); raw coefficients are M.T @ b."""
        sc = self.scaling
        A_s = np.eye(self.J)
        A_s[1, 0] = -sc.y_mean / sc.y_sd
        A_s[1, 1] = 1.0 / sc.y_sd
        A_w = np.eye(self.K)
        if self.spec.w.kind == LINEAR:
            for k in range(self.n_cov):
                A_w[k + 1, 0] = -sc.x_mean[k] / sc.x_sd[k]
                A_w[k + 1, k + 1] = 1.0 / sc.x_sd[k]
        return np.kron(A_w, A_s)

    def raw_coefficients(self, b) -> np.ndarray:
        return self.coefficient_map().T @ np.asarray(b, dtype=float)

    def raw_dictionary(self) -> "Dictionary":
        """The same function space expressed in raw units (identity scaling)."""
        sc = self.scaling
        w_knots = None
        if self.w_knots is not None:
            w_knots = sc.x_mean[0] + sc.x_sd[0] * self.w_knots
        s_knots = None if self.s_knots is None else sc.y_raw(self.s_knots)
        spec = DictionarySpec(self.spec.w, self.spec.s_tilde, standardize=False)
        return Dictionary(
            spec, self.n_cov, Standardization.identity(self.n_cov), w_knots, s_knots, self.summary
        )

    def column_labels(self) -> list[str]:
        if self.spec.w.kind == BSPLINE:
            wl = ["1"] + [f"Bx{k}" for k in range(1, self.K)]
        elif self.n_cov == 1:
            wl = ["1", "x"]
        else:
            wl = ["1"] + [f"x{k}" for k in range(1, self.n_cov + 1)]
        sl = ["1", "y"] + [f"Sy{j}" for j in range(1, self.J - 1)]
        out = []
        for w in wl:
            for s in sl:
                if w == "1":
                    out.append(s)
                elif s == "1":
                    out.append(w)
                else:
                    out.append(f"{w}*{s}")
        return out

    # -- serialization ---------------------------------------------------------
    def to_dict(self) -> dict:
        return {
            "spec": self.spec.to_dict(),
            "n_cov": self.n_cov,
            "standardization": self.scaling.to_dict(),
            "w_knots": None if self.w_knots is None else [float(v) for v in self.w_knots],
            "s_knots": None if self.s_knots is None else [float(v) for v in self.s_knots],
            "summary": self.summary,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Dictionary":
        return cls(
            DictionarySpec.from_dict(d["spec"]),
            int(d["n_cov"]),
            Standardization.from_dict(d["standardization"]),
            d.get("w_knots"),
            d.get("s_knots"),
            d.get("summary"),
        )


@dataclass(frozen=True, eq=False)
class DesignMatrices:
    T: np.ndarray
    t: np.ndarray
    dictionary: Dictionary
    y: np.ndarray
    x: np.ndarray

    @property
    def n(self) -> int:
        return self.T.shape[0]

    @property
    def jk(self) -> int:
        return self.T.shape[1]

    @property
    def standardization(self) -> Standardization:
        return self.dictionary.scaling


def as_covariates(x, n: int) -> np.ndarray:
    if x is None:
        return np.zeros((n, 0))
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    if x.ndim != 2 or x.shape[0] != n:
        raise ValueError(f"covariates must have {n} rows, got shape {x.shape}")
    return x


def resolve(spec: DictionarySpec, y, x=None) -> Dictionary:
    """Fix standardization and knot placement from a sample."""
    y = np.asarray(y, dtype=float).ravel()
    if y.size == 0:
        raise ValueError("empty sample")
    x = as_covariates(x, y.size)
    if not (np.all(np.isfinite(y)) and np.all(np.isfinite(x))):
        raise ValueError("data contain non-finite values")
    p = x.shape[1]
    if spec.standardize:
        y_sd = float(y.std())
        x_sd = x.std(axis=0)
        if y_sd == 0.0:
            raise ValueError("outcome is constant; cannot standardize")
        if np.any(x_sd == 0.0):
            raise ValueError(f"constant covariate column(s) {np.flatnonzero(x_sd == 0).tolist()}")
        scaling = Standardization(float(y.mean()), y_sd, x.mean(axis=0), x_sd)
    else:
        scaling = Standardization.identity(p)
    ys = scaling.y_std(y)
    xs = scaling.x_std(x)

    w_knots = None
    if spec.w.kind == BSPLINE:
        if p != 1:
            raise ValueError(f"a spline covariate basis needs exactly one covariate, got {p}")
        if spec.w.knots is not None:
            w_knots = np.asarray(spec.w.knots)
        else:
            w_knots = bspline.equispaced_knots(xs.min(), xs.max(), spec.w.size, spec.w.degree)
    s_knots = None
    if spec.s_tilde is not None:
        if spec.s_tilde.knots is not None:
            s_knots = np.asarray(spec.s_tilde.knots)
        else:
            s_knots = bspline.equispaced_knots(
                ys.min(), ys.max(), spec.s_tilde.size, spec.s_tilde.degree
            )
    summary = {
        "n": int(y.size),
        "y_min": float(y.min()),
        "y_max": float(y.max()),
        "y_median": float(np.median(y)),
        "x_min": [float(v) for v in x.min(axis=0)] if p else [],
        "x_max": [float(v) for v in x.max(axis=0)] if p else [],
    }
    if p > 1:
        # evenly spaced sample rows ordered by the first covariate
        order = np.argsort(x[:, 0], kind="stable")
        pick = order[np.unique(np.linspace(0, y.size - 1, min(201, y.size)).round().astype(int))]
        summary["x_rows"] = x[pick].tolist()
    return Dictionary(spec, p, scaling, w_knots, s_knots, summary)


def build_dictionary(spec: DictionarySpec, y, x=None, dictionary: Dictionary | None = None) -> DesignMatrices:
    """Evaluate T and t at every sample point.

    Pass an already resolved ``dictionary`` to reuse its knots and scaling on
    new data (e.g. a probe or a stored fit).
    """
    y = np.asarray(y, dtype=float).ravel()
    x = as_covariates(x, y.size)
    if y.size == 0:
        raise ValueError("empty sample")
    if not (np.all(np.isfinite(y)) and np.all(np.isfinite(x))):
        raise ValueError("data contain non-finite values")
    if dictionary is None:
        dictionary = resolve(spec, y, x)
    xs = dictionary.scaling.x_std(x)
    ys = dictionary.scaling.y_std(y)
    T = dictionary.T_std(xs, ys)
    t = dictionary.t_std(xs, ys)
    return DesignMatrices(T, t, dictionary, y, x)
