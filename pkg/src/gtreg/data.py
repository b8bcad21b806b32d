"""CSV ingestion: header row, UTF-8, '.' decimals, no missing cells."""

from __future__ import annotations

import csv
import hashlib
from dataclasses import dataclass

import numpy as np


class DataError(ValueError):
    """The data file cannot be read or contains invalid cells."""


class ColumnError(KeyError):
    """A requested column is absent (a configuration problem, not a data one)."""

    def __str__(self):
        return str(self.args[0]) if self.args else "missing column"


@dataclass(frozen=True, eq=False)
class Dataset:
    y: np.ndarray
    x: np.ndarray  # (n, p)
    outcome: str
    covariates: tuple
    lag: bool
    sha256: str
    source: str
    columns: tuple = ()  # covariate columns read from the file (before lagging)

    @property
    def n(self) -> int:
        return self.y.size

    def describe(self) -> dict:
        return {
            "path": self.source,
            "outcome": self.outcome,
            "covariates": list(self.covariates),
            "columns": list(self.columns),
            "lag": self.lag,
            "n": int(self.n),
            "sha256": self.sha256,
        }


def read_table(path) -> tuple[list, np.ndarray, str]:
    """(header, float matrix, sha256 of the file bytes)."""
    try:
        with open(path, "rb") as fh:
            raw = fh.read()
    except OSError as exc:
        raise DataError(f"cannot read data file {path}: {exc.strerror or exc}") from exc
    digest = hashlib.sha256(raw).hexdigest()
    try:
        text = raw.decode("utf-8-sig")
    except UnicodeDecodeError as exc:
        raise DataError(f"{path} is not valid UTF-8") from exc
    rows = list(csv.reader(text.splitlines()))
    rows = [r for r in rows if r]
    if not rows:
        raise DataError(f"{path} is empty")
    header = [h.strip() for h in rows[0]]
    if len(set(header)) != len(header) or any(h == "" for h in header):
        raise DataError(f"{path}: header must contain distinct nonempty column names")
    body = rows[1:]
    if not body:
        raise DataError(f"{path} has a header but no data rows")
    out = np.empty((len(body), len(header)))
    missing = []
    for i, r in enumerate(body):
        line = i + 2
        if len(r) != len(header):
            raise DataError(f"{path}, line {line}: expected {len(header)} fields, found {len(r)}")
        for j, cell in enumerate(r):
            cell = cell.strip()
            if cell == "" or cell.lower() in ("na", "nan", "null"):
                missing.append(line)
                break
            try:
                out[i, j] = float(cell)
            except ValueError:
                raise DataError(
                    f"{path}, line {line}, column {header[j]!r}: non-numeric value {cell!r}"
                ) from None
            if not np.isfinite(out[i, j]):
                raise DataError(f"{path}, line {line}, column {header[j]!r}: non-finite value")
    if missing:
        shown = ", ".join(str(m) for m in missing[:10])
        more = f" (and {len(missing) - 10} more)" if len(missing) > 10 else ""
        raise DataError(f"{path}: rows with missing cells at lines {shown}{more}")
    return header, out, digest


def load_dataset(path, outcome: str = "y", covariates=None, lag: bool = False) -> Dataset:
    """Load outcome/covariate columns; ``lag`` prepends y_{t-1} as a covariate.

    With ``covariates=None`` every non-outcome column is a covariate (none
    when ``lag`` is set).
    """
    header, table, digest = read_table(path)
    if outcome not in header:
        raise ColumnError(f"outcome column {outcome!r} not found; columns are {header}")
    if covariates is None:
        covariates = [] if lag else [h for h in header if h != outcome]
    covariates = list(covariates)
    for c in covariates:
        if c not in header:
            raise ColumnError(f"covariate column {c!r} not found; columns are {header}")
    if outcome in covariates:
        raise ColumnError(
            f"outcome column {outcome!r} listed as a covariate; use the lag option for y_(t-1)"
        )
    y = table[:, header.index(outcome)]
    x = table[:, [header.index(c) for c in covariates]] if covariates else np.zeros((y.size, 0))
    names = tuple(covariates)
    if lag:
        if y.size < 2:
            raise DataError("lagging needs at least two rows")
        x = np.hstack([y[:-1, None], x[1:]])
        y = y[1:]
        names = (f"{outcome}_lag1",) + names
    return Dataset(
        y.copy(), np.ascontiguousarray(x), outcome, names, bool(lag), digest, str(path),
        tuple(covariates),
    )
