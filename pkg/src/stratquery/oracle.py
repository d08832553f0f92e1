"""Platform-side aggregate query interface with Gaussian-mechanism noise.

A :class:`QuerySession` owns the raw data and answers difference-in-means
queries over boxes. Only noisy results ever leave the session.
"""

from __future__ import annotations

import json
import threading
from dataclasses import dataclass, field

import numpy as np

from .regions import Dataset, Region, contains_mask


class BudgetExhausted(RuntimeError):
    pass


@dataclass(frozen=True)
class PrivacyConfig:
    """Query budget ``Q``, noise scale ``s`` and the minimum cell count.

    The noise sd of a query is ``s / n`` with ``n`` the number of rows (both
    arms) that fall in the queried box.
    """

    query_budget: int
    noise_scale: float
    min_count: int = 0
    seed: int | None = 0
    disclose_count: bool = True

    def __post_init__(self):
        if int(self.query_budget) < 1:
            raise ValueError("query_budget must be >= 1")
        if self.noise_scale < 0:
            raise ValueError("noise_scale must be non-negative")
        if self.min_count < 0:
            raise ValueError("min_count must be non-negative")


@dataclass(frozen=True)
class QueryRecord:
    """What the querier sees for one query. The pre-noise statistic is not kept."""

    region: Region
    noisy_result: float | None
    noise_sd: float | None
    affected_count: int | None
    treated_count: int | None
    control_count: int | None
    suppressed: bool

    def to_dict(self) -> dict:
        return {
            "lo": list(self.region.lo),
            "hi": list(self.region.hi),
            "noisy_result": self.noisy_result,
            "noise_sd": self.noise_sd,
            "affected_count": self.affected_count,
            "treated_count": self.treated_count,
            "control_count": self.control_count,
            "suppressed": self.suppressed,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "QueryRecord":
        return cls(
            Region(d["lo"], d["hi"]),
            d["noisy_result"],
            d["noise_sd"],
            d["affected_count"],
            d["treated_count"],
            d["control_count"],
            d["suppressed"],
        )


@dataclass(eq=False)
class QuerySession:
    dataset: Dataset = field(repr=False)
    config: PrivacyConfig
    queries_used: int = 0
    audit_log: list = field(default_factory=list)

    def __post_init__(self):
        self._rng = np.random.default_rng(self.config.seed)
        self._lock = threading.Lock()

    @property
    def ndim(self) -> int:
        return self.dataset.ndim

    def remaining_budget(self) -> int:
        return self.config.query_budget - self.queries_used

    def execute(self, region: Region) -> QueryRecord:
        return execute_query(self, region)


def open_session(dataset: Dataset, config: PrivacyConfig) -> QuerySession:
    if len(dataset) == 0:
        raise ValueError("cannot open a session on an empty dataset")
    return QuerySession(dataset, config)


def remaining_budget(session: QuerySession) -> int:
    return session.remaining_budget()


def execute_query(session: QuerySession, region: Region) -> QueryRecord:
    """Answer one difference-in-means query over ``region``.

    Suppressed answers (too few rows, or an empty arm) still use up budget.
    """
    if region.ndim != session.ndim:
        raise ValueError(f"query has {region.ndim} dims, data has {session.ndim}")
    data, cfg = session.dataset, session.config
    with session._lock:
        if session.remaining_budget() <= 0:
            raise BudgetExhausted(f"query budget of {cfg.query_budget} exhausted")
        inside = contains_mask(region, data.covariates)
        treated = inside & (data.treatment == 1)
        control = inside & (data.treatment == 0)
        n, n1, n0 = int(inside.sum()), int(treated.sum()), int(control.sum())
        suppressed = n < cfg.min_count or n1 == 0 or n0 == 0
        # one normal draw per query keeps the noise stream aligned with query order
        z = session._rng.standard_normal()
        if suppressed:
            result = sd = None
        else:
            diff = data.outcome[treated].mean() - data.outcome[control].mean()
            sd = cfg.noise_scale / n
            result = float(diff + sd * z)
        disclose = cfg.disclose_count
        record = QueryRecord(
            region,
            result,
            None if sd is None else float(sd),
            n if disclose else None,
            n1 if disclose else None,
            n0 if disclose else None,
            suppressed,
        )
        session.queries_used += 1
        session.audit_log.append(record)
    return record


def write_audit_log(records, path) -> None:
    """One JSON object per line: bounds, noisy result, noise sd, counts, suppression flag."""
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps(rec.to_dict(), sort_keys=True) + "\n")


def read_audit_log(path) -> list[QueryRecord]:
    with open(path, encoding="utf-8") as fh:
        return [QueryRecord.from_dict(json.loads(line)) for line in fh if line.strip()]
