"""Data generators with known conditional laws.

Random numbers come from ``numpy.random.Generator(PCG64(seed))``.  Within a
sample, covariates are drawn first (``n * p`` uniforms, row-major), then the
``n`` standard-normal innovations, so any PCG64 implementation reproduces a
stream exactly.

Kinds
-----
baseline-gaussian       y ~ N(0, 1) independent of x ~ U[0, 1]^p
linear-location-scale   e = beta1(x) + beta2(x) y with beta1 = a0 + a1 x, beta2 = c0 + c1 x
custom-b0               e = b0'T(x, y) for a user dictionary (raw units), y = h(x, e)
bimodal-misspec         y | x ~ 0.5 N(-(m0 + m1 x), s^2) + 0.5 N(m0 + m1 x, s^2)
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field

import numpy as np

from .dictionary import Dictionary, DictionarySpec, Standardization
from .drf import DrfEvaluator

KINDS = ("baseline-gaussian", "linear-location-scale", "custom-b0", "bimodal-misspec")

LOCATION_SCALE_DEFAULTS = {"a0": -1.0, "a1": -1.0, "c0": 1.0, "c1": 0.5}
BIMODAL_DEFAULTS = {"m0": 1.5, "m1": 1.0, "s": 0.5}

# Preset calibration of the synthetic daily-temperature series (degrees C).
# Ordinary days follow a heteroskedastic AR(1) around a seasonal-free mean;
# after hot days a "cool change" may drop the temperature sharply, which
# makes the next-day law bimodal in the upper range of y_{t-1}.
MELBOURNE_DEFAULTS = {
    "mean": 20.0,
    "phi": 0.7,
    "sigma0": 2.5,
    "sigma_slope": 0.2,
    "sigma_pivot": 10.0,
    "change_max_prob": 0.6,
    "change_center": 27.0,
    "change_width": 2.5,
    "change_drop": 12.0,
    "change_sd": 2.5,
    "start": 20.0,
    "burn_in": 200,
}


class InfeasibleDgpError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class DgpSpec:
    kind: str
    n: int
    seed: int = 0
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown DGP kind {self.kind!r}; choose from {KINDS}")
        if int(self.n) < 1:
            raise ValueError("sample size must be positive")
        if not 0 <= int(self.seed) < 2 ** 64:
            raise ValueError("seed must be a 64-bit unsigned integer")

    def to_dict(self) -> dict:
        return {"kind": self.kind, "n": int(self.n), "seed": int(self.seed), "params": self.params}

    @classmethod
    def from_dict(cls, d: dict) -> "DgpSpec":
        return cls(d["kind"], int(d["n"]), int(d.get("seed", 0)), dict(d.get("params", {})))


@dataclass(frozen=True, eq=False)
class Sample:
    y: np.ndarray
    x: np.ndarray  # shape (n, p)
    b0_raw: np.ndarray | None = None
    dictionary: Dictionary | None = None  # raw-unit dictionary that b0_raw refers to

    @property
    def n(self) -> int:
        return self.y.size


def rng_for(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(int(seed)))


def linear_linear_raw(p: int = 1) -> Dictionary:
    """Linear-Linear dictionary in raw units (no standardization)."""
    return Dictionary(DictionarySpec.linear_linear(standardize=False), p, Standardization.identity(p))


def location_scale_b0(params: dict | None = None) -> np.ndarray:
    q = {**LOCATION_SCALE_DEFAULTS, **(params or {})}
    return np.array([q["a0"], q["c0"], q["a1"], q["c1"]])


def _covariates(rng, n: int, p: int, lo: float, hi: float) -> np.ndarray:
    return lo + (hi - lo) * rng.random((n, p))


def _custom_dictionary(params: dict, p: int) -> Dictionary:
    dic = params.get("dictionary")
    if dic is None:
        return linear_linear_raw(p)
    if isinstance(dic, Dictionary):
        return dic
    return Dictionary.from_dict(dic)


def check_feasible(dic: Dictionary, b0, lo: float, hi: float, n_grid: int = 501) -> None:
    """Require beta2(x) > 0 over the covariate box (checked on a grid)."""
    b0 = np.asarray(b0, dtype=float)
    if b0.shape != (dic.jk,):
        raise InfeasibleDgpError(f"b0 has length {b0.size}, dictionary has {dic.jk} columns")
    p = dic.n_cov
    if p == 0:
        grid = np.zeros((1, 0))
    elif p == 1:
        grid = np.linspace(lo, hi, n_grid)[:, None]
    else:
        g1 = np.linspace(lo, hi, 11)
        grid = np.array(np.meshgrid(*([g1] * p), indexing="ij")).reshape(p, -1).T
    beta = DrfEvaluator(dic, b0).beta(dic.scaling.x_std(grid))
    if not np.all(beta[:, 1] > 0):
        i = int(np.argmin(beta[:, 1]))
        raise InfeasibleDgpError(
            f"b0 is infeasible: the y-slope beta2(x) = {beta[i, 1]:.4g} <= 0 at x = {grid[i].tolist()}"
        )


def generate(spec: DgpSpec) -> Sample:
    rng = rng_for(spec.seed)
    n = int(spec.n)
    prm = dict(spec.params)
    p = int(prm.get("p", 1))
    lo, hi = float(prm.get("x_low", 0.0)), float(prm.get("x_high", 1.0))
    if not hi > lo:
        raise ValueError("covariate range must have x_high > x_low")
    x = _covariates(rng, n, p, lo, hi)
    e = rng.standard_normal(n)
    if spec.kind == "baseline-gaussian":
        b0 = np.zeros(2 * (p + 1))
        b0[1] = 1.0
        return Sample(e.copy(), x, b0, linear_linear_raw(p))
    if spec.kind == "linear-location-scale":
        if p != 1:
            raise ValueError("linear-location-scale uses a single covariate")
        b0 = location_scale_b0(prm)
        dic = linear_linear_raw(1)
        check_feasible(dic, b0, lo, hi)
        x1 = x[:, 0]
        y = (e - b0[0] - b0[2] * x1) / (b0[1] + b0[3] * x1)
        return Sample(y, x, b0, dic)
    if spec.kind == "custom-b0":
        if "b0" not in prm:
            raise ValueError("custom-b0 needs params['b0']")
        dic = _custom_dictionary(prm, p)
        if dic.n_cov != p:
            raise ValueError(f"dictionary takes {dic.n_cov} covariates, params give p={p}")
        b0 = np.asarray(prm["b0"], dtype=float)
        check_feasible(dic, b0, lo, hi)
        ev = DrfEvaluator(dic, b0)
        ys, ok = ev.solve_std(dic.scaling.x_std(x), e)
        if not np.all(ok):
            raise InfeasibleDgpError("b0'T(x, .) does not attain every level; inversion failed")
        return Sample(dic.scaling.y_raw(ys), x, b0, dic)
    # bimodal-misspec
    q = {**BIMODAL_DEFAULTS, **prm}
    sign = np.where(rng.random(n) < 0.5, -1.0, 1.0)
    center = q["m0"] + q["m1"] * x[:, 0]
    return Sample(sign * center + q["s"] * e, x, None, None)


def melbourne_like(n_days: int = 3650, seed: int = 0, params: dict | None = None) -> np.ndarray:
    """Synthetic daily maximum-temperature-like series of length ``n_days``."""
    if n_days < 2:
        raise ValueError("series length must be at least 2")
    q = {**MELBOURNE_DEFAULTS, **(params or {})}
    rng = rng_for(seed)
    burn = int(q["burn_in"])
    total = n_days + burn
    e = rng.standard_normal(total)
    u = rng.random(total)
    c = rng.standard_normal(total)
    y = np.empty(total)
    prev = float(q["start"])
    for t in range(total):
        sigma = q["sigma0"] + q["sigma_slope"] * max(prev - q["sigma_pivot"], 0.0)
        p_change = q["change_max_prob"] / (1.0 + np.exp(-(prev - q["change_center"]) / q["change_width"]))
        if u[t] < p_change:
            cur = prev - q["change_drop"] + q["change_sd"] * c[t]
        else:
            cur = q["mean"] + q["phi"] * (prev - q["mean"]) + sigma * e[t]
        y[t] = cur
        prev = cur
    return y[burn:]


def lag_pairs(series) -> tuple[np.ndarray, np.ndarray]:
    """(y_t, y_{t-1}) pairs: outcome of length T-1 and covariate matrix (T-1, 1)."""
    s = np.asarray(series, dtype=float).ravel()
    if s.size < 2:
        raise ValueError("need at least two observations to form lag pairs")
    return s[1:].copy(), s[:-1, None].copy()


def sample_csv(y, x=None, names=None) -> str:
    """CSV text with header; floats written with 17 significant digits."""
    y = np.asarray(y, dtype=float).ravel()
    cols = [y]
    header = ["y"]
    if x is not None:
        x = np.asarray(x, dtype=float).reshape(y.size, -1)
        p = x.shape[1]
        header += names or (["x"] if p == 1 else [f"x{k + 1}" for k in range(p)])
        cols += [x[:, k] for k in range(p)]
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in zip(*cols):
        w.writerow([repr(float(v)) for v in row])
    return buf.getvalue()


def b0_sidecar(sample: Sample, spec: DgpSpec) -> str:
    return json.dumps(
        {
            "dgp": spec.to_dict(),
            "b0_raw": None if sample.b0_raw is None else sample.b0_raw.tolist(),
            "dictionary": None if sample.dictionary is None else sample.dictionary.to_dict(),
        },
        indent=2,
        default=_json_default,
    )


def _json_default(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    if isinstance(o, Dictionary):
        return o.to_dict()
    raise TypeError(f"not JSON serializable: {type(o).__name__}")
