"""Uniform grid querying and strategic (Bayesian-optimisation) querying."""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field

import numpy as np

from .acquisition import AFConfig, NoFeasibleCandidates, _candidate_arrays, select_from_arrays, widened
from .gp import GPHyperparams, GPState, RegionObservation
from .hyperfit import FitConfig, FitError, fit_hyperparams
from .oracle import QuerySession, execute_query
from .regions import Bounds, Region, stack_regions

logger = logging.getLogger(__name__)


class InsufficientBudget(RuntimeError):
    pass


@dataclass(frozen=True, eq=False)
class TargetingPolicy:
    """Treat/control decision on every cell of an axis-aligned grid over ``bounds``.

    Cells are half-open ``[e_k, e_{k+1})`` except the last one along each
    axis, which also holds the upper boundary, so every point in bounds maps
    to exactly one cell.
    """

    bounds: Bounds
    edges: tuple[np.ndarray, ...]
    actions: np.ndarray

    def __post_init__(self):
        edges = tuple(np.asarray(e, dtype=float) for e in self.edges)
        actions = np.asarray(self.actions, dtype=bool)
        if len(edges) != self.bounds.ndim:
            raise ValueError("one edge vector per dimension is required")
        if actions.shape != tuple(len(e) - 1 for e in edges):
            raise ValueError("actions shape does not match grid")
        for e, a, b in zip(edges, self.bounds.lo, self.bounds.hi):
            if not (np.isclose(e[0], a) and np.isclose(e[-1], b) and np.all(np.diff(e) > 0)):
                raise ValueError("grid edges must increase and span the bounds")
        actions.setflags(write=False)
        object.__setattr__(self, "edges", edges)
        object.__setattr__(self, "actions", actions)

    @classmethod
    def uniform_grid(cls, bounds: Bounds, bins_per_dim, actions) -> "TargetingPolicy":
        edges = tuple(np.linspace(a, b, int(k) + 1) for a, b, k in zip(bounds.lo, bounds.hi, bins_per_dim))
        return cls(bounds, edges, np.asarray(actions, dtype=bool).reshape([len(e) - 1 for e in edges]))

    @classmethod
    def constant(cls, bounds: Bounds, treat: bool) -> "TargetingPolicy":
        return cls.uniform_grid(bounds, [1] * bounds.ndim, [treat])

    @property
    def shape(self) -> tuple[int, ...]:
        return self.actions.shape

    def cell_index(self, X) -> tuple[np.ndarray, ...]:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if X.shape[1] != self.bounds.ndim:
            raise ValueError("covariate dimension does not match policy")
        outside = np.any((X < self.bounds.lo) | (X > self.bounds.hi), axis=1)
        if outside.any():
            raise ValueError(f"{int(outside.sum())} points lie outside the policy bounds")
        return tuple(np.searchsorted(e[1:-1], X[:, d], side="right") for d, e in enumerate(self.edges))

    def assign(self, X, clip: bool = False) -> np.ndarray:
        """Boolean treat decision for each row of ``X``.

        With ``clip`` rows outside the bounds take the nearest boundary cell's
        action; otherwise they raise.
        """
        if clip:
            X = np.clip(np.atleast_2d(np.asarray(X, dtype=float)), self.bounds.lo, self.bounds.hi)
        return self.actions[self.cell_index(X)]

    def cells(self) -> list[Region]:
        out = []
        for idx in np.ndindex(*self.shape):
            lo = [self.edges[d][i] for d, i in enumerate(idx)]
            hi = [self.edges[d][i + 1] for d, i in enumerate(idx)]
            out.append(Region(lo, hi))
        return out

    def to_dict(self) -> dict:
        return {
            "bounds": self.bounds.to_dict(),
            "edges": [e.tolist() for e in self.edges],
            "cells": [
                {"lo": list(c.lo), "hi": list(c.hi), "action": "treat" if a else "control"}
                for c, a in zip(self.cells(), self.actions.ravel())
            ],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TargetingPolicy":
        bounds = Bounds(d["bounds"]["lo"], d["bounds"]["hi"])
        edges = tuple(np.asarray(e) for e in d["edges"])
        actions = np.array([c["action"] == "treat" for c in d["cells"]]).reshape([len(e) - 1 for e in edges])
        return cls(bounds, edges, actions)

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh, sort_keys=True)

    @classmethod
    def load(cls, path) -> "TargetingPolicy":
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))


# -- uniform querying ---------------------------------------------------------


def bins_for_budget(budget: int, ndim: int) -> list[int]:
    """Near-cubic grid with at most ``budget`` cells; per-axis counts differ by at most one."""
    base = max(1, int(np.floor(budget ** (1.0 / ndim) + 1e-9)))
    while base**ndim > budget and base > 1:
        base -= 1
    bins = [base] * ndim
    for d in range(ndim):
        trial = bins.copy()
        trial[d] += 1
        if np.prod(trial) <= budget:
            bins = trial
        else:
            break
    return bins


def uniform_plan(bounds: Bounds, bins_per_dim) -> list[Region]:
    bins = [int(b) for b in bins_per_dim]
    if len(bins) != bounds.ndim or any(b < 1 for b in bins):
        raise ValueError("need one bin count >= 1 per dimension")
    return TargetingPolicy.uniform_grid(bounds, bins, np.zeros(bins, dtype=bool)).cells()


def run_uniform(session: QuerySession, bounds: Bounds, bins_per_dim, cost: float = 0.0):
    """Query every grid cell once and treat the cells whose result exceeds ``cost``.

    Suppressed cells default to control.
    """
    plan = uniform_plan(bounds, bins_per_dim)
    if session.remaining_budget() < len(plan):
        raise InsufficientBudget(f"uniform plan needs {len(plan)} queries, {session.remaining_budget()} left")
    records = [execute_query(session, cell) for cell in plan]
    actions = [(not r.suppressed) and (r.noisy_result - cost) > 0 for r in records]
    return TargetingPolicy.uniform_grid(bounds, bins_per_dim, actions), records


# -- strategic querying -------------------------------------------------------


@dataclass(frozen=True)
class AffineMap:
    """Per-dimension ``(x - loc) / scale`` map from data units to model units."""

    loc: tuple[float, ...]
    scale: tuple[float, ...]

    def to_model(self, lo, hi):
        loc, scale = np.asarray(self.loc), np.asarray(self.scale)
        return (np.asarray(lo) - loc) / scale, (np.asarray(hi) - loc) / scale

    def from_model(self, lo, hi):
        loc, scale = np.asarray(self.loc), np.asarray(self.scale)
        return np.asarray(lo) * scale + loc, np.asarray(hi) * scale + loc


@dataclass(frozen=True, eq=False)
class MarginalCountModel:
    """Client-side row-count estimate from disclosed per-feature percentiles.

    Each marginal is rebuilt from its percentile grid as point masses at
    tied percentiles (spikes) plus uniform mass between distinct values.
    Features are treated as independent, so a box's estimated count is
    ``total * prod_d P(lo_d <= X_d <= hi_d)``.
    """

    total: int
    support: tuple[np.ndarray, ...]
    point_mass: tuple[np.ndarray, ...]
    gap_mass: tuple[np.ndarray, ...]

    @classmethod
    def from_quantiles(cls, total: int, quantiles) -> "MarginalCountModel":
        support, point, gap = [], [], []
        for q in quantiles:
            q = np.asarray(q, dtype=float)
            p = np.linspace(0.0, 1.0, q.size)
            u, first = np.unique(q, return_index=True)
            last = np.r_[first[1:] - 1, q.size - 1]
            support.append(u)
            point.append(p[last] - p[first])
            gap.append(p[first[1:]] - p[last[:-1]])
        return cls(int(total), tuple(support), tuple(point), tuple(gap))

    @classmethod
    def from_data(cls, X, levels: int = 1001) -> "MarginalCountModel":
        X = np.atleast_2d(np.asarray(X, dtype=float))
        probs = np.linspace(0.0, 1.0, levels)
        return cls.from_quantiles(X.shape[0], [np.quantile(X[:, d], probs) for d in range(X.shape[1])])

    def expected_counts(self, lo, hi) -> np.ndarray:
        lo, hi = np.atleast_2d(lo), np.atleast_2d(hi)
        prob = np.ones(lo.shape[0])
        for d, (u, pm, gm) in enumerate(zip(self.support, self.point_mass, self.gap_mass)):
            a, b = lo[:, d], hi[:, d]
            cum_pm = np.r_[0.0, np.cumsum(pm)]
            mass = cum_pm[np.searchsorted(u, b, side="right")] - cum_pm[np.searchsorted(u, a, side="left")]
            if u.size > 1:
                cum_gm = np.r_[0.0, np.cumsum(gm)]

                def spread_cdf(x):
                    # gap mass below x, with each gap's mass spread uniformly
                    k = np.clip(np.searchsorted(u, x, side="right") - 1, 0, u.size - 2)
                    frac = np.clip((x - u[k]) / (u[k + 1] - u[k]), 0.0, 1.0)
                    return cum_gm[k] + gm[k] * frac

                mass = mass + np.maximum(spread_cdf(b) - spread_cdf(a), 0.0)
            prob *= mass
        return self.total * prob


def _inside_suppressed(lo, hi, suppressed) -> np.ndarray:
    """Boxes contained in a suppressed region: their count cannot be larger."""
    if not suppressed:
        return np.zeros(len(lo), dtype=bool)
    slo, shi = stack_regions(suppressed)
    within = np.all(lo[:, None, :] >= slo[None], axis=2) & np.all(hi[:, None, :] <= shi[None], axis=2)
    return within.any(axis=1)


@dataclass(frozen=True)
class StrategicRunConfig:
    """Configuration for one strategic querying run.

    ``hyperparams`` are used throughout when ``fit`` is None; with a
    ``FitConfig`` they serve until ``fit.activation_step`` observations are
    in, after which the GP is refitted after every query. ``model_map``
    optionally standardises coordinates for the GP. With a ``count_model``,
    candidates whose estimated row count is under the session's
    ``min_count`` are skipped. ``count_scaled_noise`` weights the latent
    noise of each observation by ``1/n1 + 1/n0`` from the disclosed arm
    counts, so the fitted noise is a per-unit outcome sd and small regions
    are trusted less.
    """

    af: AFConfig = field(default_factory=AFConfig)
    hyperparams: GPHyperparams | None = None
    fit: FitConfig | None = None
    cost: float = 0.0
    resolution: int = 10
    model_map: AffineMap | None = None
    count_model: MarginalCountModel | None = None
    count_scaled_noise: bool = False

    def __post_init__(self):
        if self.resolution < 1:
            raise ValueError("resolution must be >= 1")


def policy_from_posterior(state: GPState, bounds: Bounds, resolution: int, cost: float = 0.0, model_map=None):
    """Treat each of the ``resolution**V`` micro-cells iff its posterior mean exceeds ``cost``.

    Observations are normally stored net of cost already, hence the default 0.
    """
    if resolution < 1:
        raise ValueError("resolution must be >= 1")
    bins = [resolution] * bounds.ndim
    template = TargetingPolicy.uniform_grid(bounds, bins, np.zeros(bins, dtype=bool))
    lows = np.meshgrid(*[e[:-1] for e in template.edges], indexing="ij")
    highs = np.meshgrid(*[e[1:] for e in template.edges], indexing="ij")
    lo = np.stack([g.ravel() for g in lows], axis=1)
    hi = np.stack([g.ravel() for g in highs], axis=1)
    if model_map is not None:
        lo, hi = model_map.to_model(lo, hi)
    mean, _ = state.predict(lo, hi)
    return TargetingPolicy(bounds, template.edges, (mean - cost > 0).reshape(bins))


@dataclass
class StrategicTrace:
    states: list = field(default_factory=list)
    hyperparams: list = field(default_factory=list)


def run_strategic(session: QuerySession, bounds: Bounds, config: StrategicRunConfig, rng):
    """Spend the session's whole remaining budget on sequentially chosen regions.

    Returns ``(policy, records, trace)``; ``trace.states`` holds the GP state
    after every query.
    """
    rng = np.random.default_rng(rng)
    ndim = bounds.ndim
    mmap = config.model_map
    if mmap is None:
        model_bounds = bounds
    else:
        mlo, mhi = mmap.to_model(bounds.lo, bounds.hi)
        model_bounds = Bounds(mlo, mhi)
    if config.hyperparams is not None:
        hyper = config.hyperparams
    elif config.fit is not None:
        hyper = config.fit.initial_hyperparams(ndim)
    else:
        raise ValueError("strategic run needs fixed hyperparams or a fit config")
    fixed = hyper
    af = config.af
    state = GPState(hyper, ndim)
    history: list[Region] = []
    records = []
    trace = StrategicTrace()
    suppressed: list[Region] = []
    min_count = session.config.min_count

    def allowed(lo, hi):
        dlo, dhi = (lo, hi) if mmap is None else mmap.from_model(lo, hi)
        ok = ~_inside_suppressed(dlo, dhi, suppressed)
        if config.count_model is not None and min_count > 0:
            ok &= config.count_model.expected_counts(dlo, dhi) >= min_count
        return ok

    step = 0
    while session.remaining_budget() > 0:
        cand_lo, cand_hi = _candidate_arrays(model_bounds, af, rng)
        try:
            model_region, _ = select_from_arrays(
                state, cand_lo, cand_hi, history, model_bounds, af, config.cost, rng, step, allowed(cand_lo, cand_hi)
            )
        except NoFeasibleCandidates:
            logger.warning("no feasible candidate at step %d; widening size window", step)
            af = widened(af)
            cand_lo, cand_hi = _candidate_arrays(model_bounds, af, rng)
            model_region, _ = select_from_arrays(
                state, cand_lo, cand_hi, history, model_bounds, af, config.cost, rng, step, allowed(cand_lo, cand_hi)
            )
        history.append(model_region)
        if mmap is None:
            query_region = model_region
        else:
            qlo, qhi = mmap.from_model(model_region.lo, model_region.hi)
            query_region = Region(np.maximum(qlo, bounds.lo), np.minimum(qhi, bounds.hi))
        record = execute_query(session, query_region)
        records.append(record)
        if record.suppressed:
            suppressed.append(query_region)
        else:
            weight = 1.0
            if config.count_scaled_noise:
                if record.treated_count is None:
                    raise ValueError("count_scaled_noise needs disclosed arm counts")
                weight = 1.0 / record.treated_count + 1.0 / record.control_count
            obs = RegionObservation(model_region, record.noisy_result - config.cost, record.noise_sd, weight)
            observations = state.observations + (obs,)
            if config.fit is not None and len(observations) >= config.fit.activation_step:
                try:
                    hyper = fit_hyperparams(
                        observations,
                        config.fit,
                        rng_seed=rng.integers(2**63),
                        span=model_bounds.widths,
                        start=fixed,
                    )
                except FitError:
                    logger.warning("hyperparameter fit failed at step %d; keeping previous values", step)
            state = GPState(hyper, ndim, observations)
        trace.states.append(state)
        trace.hyperparams.append(hyper)
        step += 1
    policy = policy_from_posterior(state, bounds, config.resolution, 0.0, mmap)
    return policy, records, trace
