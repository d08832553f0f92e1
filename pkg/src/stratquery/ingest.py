"""CSV ingestion for experimental datasets and covariate collapsing."""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass

import numpy as np

from .regions import Dataset

logger = logging.getLogger(__name__)

MAX_REPORTED_LINES = 20


class IngestError(ValueError):
    """Malformed input file. ``lines`` holds up to 20 offending 1-based line numbers."""

    def __init__(self, message: str, lines=()):
        self.lines = list(lines)[:MAX_REPORTED_LINES]
        if self.lines:
            message = f"{message} (lines {', '.join(map(str, self.lines))})"
        super().__init__(message)


@dataclass(frozen=True)
class CSVSchema:
    features: tuple[str, ...]
    treatment: str = "treatment"
    outcome: str = "outcome"
    propensity: float = 0.5

    def __post_init__(self):
        if not self.features:
            raise ValueError("schema needs at least one feature column")
        object.__setattr__(self, "features", tuple(self.features))
        if not 0.0 < self.propensity < 1.0:
            raise ValueError("propensity must lie strictly inside (0, 1)")

    @property
    def columns(self) -> tuple[str, ...]:
        return (*self.features, self.treatment, self.outcome)


def _read_columns(path, columns):
    """Parse the requested columns as floats, collecting bad line numbers."""
    try:
        fh = open(path, encoding="utf-8", newline="")
    except FileNotFoundError:
        raise IngestError(f"{path}: file not found") from None
    with fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise IngestError(f"{path}: empty file") from None
        missing = [c for c in columns if c not in header]
        if missing:
            raise IngestError(f"{path}: missing columns {missing}")
        idx = [header.index(c) for c in columns]
        rows, bad = [], []
        # header is line 1
        for lineno, rec in enumerate(reader, start=2):
            if not rec:
                continue
            try:
                rows.append([float(rec[i]) for i in idx])
            except (ValueError, IndexError):
                bad.append(lineno)
                rows.append(None)
    if bad:
        raise IngestError(f"{path}: unparseable or short rows", bad)
    if not rows:
        raise IngestError(f"{path}: no data rows")
    return np.array(rows, dtype=float)


def ingest_csv(path, schema: CSVSchema) -> Dataset:
    """Load a header-first, comma-separated UTF-8 file into a :class:`Dataset`.

    Raises
    ------
    IngestError
        On missing columns, non-numeric cells, non-finite values or
        treatment values outside ``{0, 1}``; the message lists the first
        offending line numbers.
    """
    arr = _read_columns(path, schema.columns)
    lines = np.arange(2, arr.shape[0] + 2)
    nonfinite = ~np.all(np.isfinite(arr), axis=1)
    if nonfinite.any():
        raise IngestError(f"{path}: non-finite values", lines[nonfinite])
    W = arr[:, -2]
    nonbinary = (W != 0) & (W != 1)
    if nonbinary.any():
        raise IngestError(f"{path}: treatment column {schema.treatment!r} must be 0 or 1", lines[nonbinary])
    logger.info("ingested %d rows from %s", arr.shape[0], path)
    return Dataset(arr[:, :-2], W.astype(np.int8), arr[:, -1], schema.propensity, schema.features)


def read_column(path, name: str) -> np.ndarray:
    """One numeric column, validated like :func:`ingest_csv` validates covariates."""
    arr = _read_columns(path, (name,))[:, 0]
    bad = ~np.isfinite(arr)
    if bad.any():
        raise IngestError(f"{path}: non-finite values in {name!r}", np.flatnonzero(bad) + 2)
    return arr


def write_csv(dataset: Dataset, path, treatment: str = "treatment", outcome: str = "outcome") -> CSVSchema:
    """Write ``dataset`` so that :func:`ingest_csv` with the returned schema restores it exactly."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow([*dataset.feature_names, treatment, outcome])
        for x, w, y in zip(dataset.covariates, dataset.treatment, dataset.outcome):
            # repr round-trips doubles exactly
            writer.writerow([*map(repr, x.tolist()), int(w), repr(float(y))])
    return CSVSchema(dataset.feature_names, treatment, outcome, dataset.propensity)


def collapse_features(dataset: Dataset, keep, sum_rest: bool = True) -> Dataset:
    """Keep the named covariates and optionally append the row sum of all others."""
    keep = list(keep)
    if not keep and not sum_rest:
        raise ValueError("nothing to keep: empty keep list with sum_rest=False")
    names = list(dataset.feature_names)
    unknown = [k for k in keep if k not in names]
    if unknown:
        raise ValueError(f"unknown feature columns {unknown}")
    kept = [names.index(k) for k in keep]
    cols = [dataset.covariates[:, kept]]
    out_names = list(keep)
    if sum_rest:
        rest = [i for i in range(len(names)) if i not in kept]
        cols.append(dataset.covariates[:, rest].sum(axis=1, keepdims=True))
        out_names.append("rest_sum")
    X = np.hstack(cols)
    return Dataset(X, dataset.treatment, dataset.outcome, dataset.propensity, tuple(out_names))
