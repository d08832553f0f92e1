"""Policy values: ground truth on synthetic populations and IPW on experimental data.

Population values are increments over the treat-nobody policy. IPW values
carry the outcome level of the data; their lifts over treat-everyone do not.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .regions import Dataset, Population


def _actions(policy, X) -> np.ndarray:
    if hasattr(policy, "assign"):
        return np.asarray(policy.assign(X), dtype=bool)
    acts = np.asarray(policy, dtype=bool)
    if acts.shape != (len(X),):
        raise ValueError("explicit action vector must have one entry per row")
    return acts


def oracle_policy_value(population: Population, cost: float) -> float:
    """Per-capita value of treating exactly the units whose effect exceeds ``cost``."""
    if len(population) == 0:
        raise ValueError("empty population")
    return float(np.mean(np.maximum(population.effects - cost, 0.0)))


def policy_value_on_population(policy, population: Population, cost: float) -> float:
    treat = _actions(policy, population.covariates)
    return float(np.mean((population.effects - cost) * treat))


def best_blanket_value(population: Population, cost: float) -> float:
    return max(0.0, float(np.mean(population.effects)) - cost)


def oracle_fraction(value: float, oracle: float, blanket: float) -> float:
    """Share of the personalisation gain (oracle minus best blanket policy) a policy recovers."""
    gap = oracle - blanket
    if gap <= 0:
        return float("nan")
    return (value - blanket) / gap


def ipw_terms(policy, data: Dataset, cost: float, paper_literal: bool = False) -> np.ndarray:
    """Per-unit IPW contributions.

    The default is the matched-arm estimator: treated units followed by the
    policy's treat decision are weighted by ``1/e``, control units followed by
    its control decision by ``1/(1-e)``. ``paper_literal`` drops the arm match
    and weights every unit by the decision alone; that variant is biased and
    kept only for comparison.
    """
    treat = _actions(policy, data.covariates)
    e = data.propensity
    Y = data.outcome
    if paper_literal:
        return treat * (Y - cost) / e + (~treat) * Y / (1.0 - e)
    W = data.treatment == 1
    return (treat & W) * (Y - cost) / e + (~treat & ~W) * Y / (1.0 - e)


def ipw_value(policy, data: Dataset, cost: float, paper_literal: bool = False) -> tuple[float, float]:
    """IPW estimate of a policy's value and its standard error (sd of terms / sqrt(n))."""
    terms = ipw_terms(policy, data, cost, paper_literal)
    n = len(terms)
    se = float(np.std(terms, ddof=1) / np.sqrt(n)) if n > 1 else float("nan")
    return float(np.mean(terms)), se


def lift_vs_treat_all(policy_value: float, treat_all_value: float) -> float:
    return policy_value - treat_all_value


def ipw_lift(policy, data: Dataset, cost: float, paper_literal: bool = False) -> tuple[float, float]:
    """IPW lift over treat-everyone with a paired standard error."""
    diff = ipw_terms(policy, data, cost, paper_literal) - ipw_terms(
        np.ones(len(data), dtype=bool), data, cost, paper_literal
    )
    return float(diff.mean()), float(diff.std(ddof=1) / np.sqrt(len(diff)))


@dataclass(frozen=True)
class EvaluationReport:
    policy_value: float
    treat_all_value: float
    control_all_value: float
    lift_vs_treat_all: float
    standard_error: float
    oracle_fraction: float | None = None

    def to_dict(self) -> dict:
        return asdict(self)


def evaluate_on_population(policy, population: Population, cost: float) -> EvaluationReport:
    value = policy_value_on_population(policy, population, cost)
    treat_all = float(np.mean(population.effects)) - cost
    oracle = oracle_policy_value(population, cost)
    frac = oracle_fraction(value, oracle, max(0.0, treat_all))
    return EvaluationReport(value, treat_all, 0.0, value - treat_all, 0.0, frac)


def evaluate_ipw(policy, data: Dataset, cost: float, paper_literal: bool = False) -> EvaluationReport:
    value, se = ipw_value(policy, data, cost, paper_literal)
    treat_all, _ = ipw_value(np.ones(len(data), dtype=bool), data, cost, paper_literal)
    control_all, _ = ipw_value(np.zeros(len(data), dtype=bool), data, cost, paper_literal)
    return EvaluationReport(value, treat_all, control_all, value - treat_all, se)


def ratio_summary(values, reference, level: float = 0.95) -> dict:
    """Mean and percentile interval of per-repeat ratios ``values / reference``.

    Ratios are formed repeat by repeat because the estimators share data and
    are not independent.
    """
    values = np.asarray(values, dtype=float)
    reference = np.broadcast_to(np.asarray(reference, dtype=float), values.shape)
    ratios = values / reference
    tail = 100 * (1 - level) / 2
    lo, hi = np.percentile(ratios, [tail, 100 - tail])
    return {"mean": float(ratios.mean()), "ci_low": float(lo), "ci_high": float(hi), "n": int(ratios.size)}
