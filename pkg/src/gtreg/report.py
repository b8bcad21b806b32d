"""Versioned JSON reports and stored-fit artifacts."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from functools import lru_cache
from importlib import resources

import jsonschema
import numpy as np

from .dictionary import DesignMatrices, Dictionary

SCHEMA_TAG = "gtreg.report/1"


class SchemaError(ValueError):
    pass


@lru_cache(maxsize=1)
def _validator():
    text = resources.files("gtreg").joinpath("schemas/report.schema.json").read_text()
    schema = json.loads(text)
    cls = jsonschema.validators.validator_for(schema)
    cls.check_schema(schema)
    return cls(schema)


def validate(report: dict) -> None:
    errors = sorted(_validator().iter_errors(report), key=lambda e: list(e.path))
    if errors:
        e = errors[0]
        where = "/".join(str(p) for p in e.path) or "<root>"
        raise SchemaError(f"report fails schema {SCHEMA_TAG} at {where}: {e.message}")


def _clean(o):
    if isinstance(o, dict):
        return {str(k): _clean(v) for k, v in o.items()}
    if isinstance(o, (list, tuple)):
        return [_clean(v) for v in o]
    if isinstance(o, np.ndarray):
        return _clean(o.tolist())
    if isinstance(o, (np.bool_,)):
        return bool(o)
    if isinstance(o, np.integer):
        return int(o)
    if isinstance(o, (float, np.floating)):
        v = float(o)
        return v if math.isfinite(v) else None
    return o


def dumps(report: dict) -> str:
    return json.dumps(_clean(report), indent=2, allow_nan=False) + "\n"


def write_report(path, report: dict) -> None:
    report = _clean(report)
    validate(report)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(dumps(report))


def raw_consistency(design: DesignMatrices, b_std) -> float:
    """max_i |T_raw(x_i, y_i)'b_raw - T_std(x_i, y_i)'b_std| over the sample."""
    dic = design.dictionary
    b_raw = dic.raw_coefficients(b_std)
    raw = dic.raw_dictionary()
    x = design.x if dic.n_cov else None
    g_raw = raw.eval_T(x, design.y) @ b_raw
    g_std = design.T @ np.asarray(b_std, dtype=float)
    return float(np.max(np.abs(g_raw - g_std)))


def path_rows(path) -> list:
    return [
        {"lam": e.lam, "bic": e.bic, "n_active": e.n_active, "qgm_ok": bool(e.qgm_ok),
         "converged": bool(e.converged), "message": e.message}
        for e in path
    ]


def qgm_summary(rep, max_listed: int = 50) -> dict:
    return {
        "passed": bool(rep.passed),
        "n_violations": len(rep.violations),
        "n_checked": rep.n_checked,
        "reasons": rep.reasons,
        "grid": rep.grid,
        "violations": [
            {"x": list(v[0]) if isinstance(v[0], tuple) else v[0], "u": v[1], "eta": v[2]}
            for v in rep.violations[:max_listed]
        ],
    }


def fit_report(
    design: DesignMatrices,
    b_std,
    *,
    estimator: str,
    converged: bool,
    score_norm: float,
    iterations: int,
    value: float,
    message: str,
    certificate,
    qgm,
    sandwich=None,
    path=None,
    data: dict | None = None,
    solver: dict | None = None,
    extra: dict | None = None,
) -> dict:
    dic = design.dictionary
    b_std = np.asarray(b_std, dtype=float)
    rep = {
        "schema": SCHEMA_TAG,
        "command": "fit",
        "estimator": estimator,
        "spec": dic.spec.label,
        "dictionary": dic.to_dict(),
        "n": design.n,
        "converged": bool(converged),
        "score_norm": score_norm,
        "iterations": iterations,
        "value": value,
        "message": message,
        "column_labels": dic.column_labels(),
        "b_std": b_std,
        "b_raw": dic.raw_coefficients(b_std),
        "se_std": None if sandwich is None else sandwich.se,
        "se_raw": None if sandwich is None else sandwich.raw_se(dic),
        "cov_std": None if sandwich is None else sandwich.cov,
        "covariance": None if sandwich is None else {
            "which": sandwich.which, "pseudo_inverse": sandwich.pseudo_inverse,
        },
        "duality": certificate.to_dict(),
        "qgm": qgm_summary(qgm),
        "consistency": {"raw_vs_std_max_abs": raw_consistency(design, b_std)},
        "data": data,
        "solver": solver,
    }
    if path is not None:
        rep["penalized_path"] = path_rows(path)
    if extra:
        rep.update(extra)
    return rep


@dataclass(frozen=True, eq=False)
class StoredFit:
    dictionary: Dictionary
    b_std: np.ndarray
    cov_std: np.ndarray | None
    report: dict


def load_fit(path) -> StoredFit:
    try:
        with open(path, encoding="utf-8") as fh:
            rep = json.load(fh)
    except OSError as exc:
        raise SchemaError(f"cannot read fit artifact {path}: {exc.strerror or exc}") from exc
    except json.JSONDecodeError as exc:
        raise SchemaError(f"{path} is not valid JSON: {exc}") from exc
    if not isinstance(rep, dict) or rep.get("schema") != SCHEMA_TAG:
        found = rep.get("schema") if isinstance(rep, dict) else None
        raise SchemaError(f"{path}: schema tag {found!r} does not match {SCHEMA_TAG!r}")
    if rep.get("command") != "fit":
        raise SchemaError(f"{path} is a {rep.get('command')!r} report, not a stored fit")
    validate(rep)
    cov = rep.get("cov_std")
    return StoredFit(
        Dictionary.from_dict(rep["dictionary"]),
        np.asarray(rep["b_std"], dtype=float),
        None if cov is None else np.asarray(cov, dtype=float),
        rep,
    )
