"""Acquisition functions over candidate regions and next-query selection."""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
from scipy.special import ndtr

from .gp import GPState
from .regions import Bounds, Region, region_volume, side_fractions, stack_regions

FAMILIES = (
    "taaf",
    "variance_mi",
    "regret",
    "pure_variance",
    "pure_abs_mean",
    "log_weighted",
    "area_weighted",
    "ratio",
    "full_posterior",
)
SIZE_MODES = ("none", "penalty", "constraint", "penalty_and_constraint")
APPENDIX_FAMILIES = ("pure_variance", "pure_abs_mean", "log_weighted", "area_weighted", "ratio")

SCORE_CAP = 1e12
_TINY_MEAN = 1e-12


class NoFeasibleCandidates(RuntimeError):
    """No candidate survived the size constraint and repeat filter.

    Callers are expected to widen the side-fraction bounds once and retry.
    """


@dataclass(frozen=True)
class AFConfig:
    family: str = "taaf"
    beta: float = 1.96
    beta_schedule: str = "fixed"
    beta_slope: float = 0.01
    tau: float = 1.0
    size_mode: str = "none"
    penalty_weight: float | None = None
    f_min: float = 0.15
    f_max: float = 0.60
    top_k: int = 1
    candidate_count: int | None = None
    forbid_exact_repeats: bool = False
    full_posterior_samples: int = 200
    full_posterior_resolution: int = 5

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unknown acquisition family {self.family!r}")
        if self.size_mode not in SIZE_MODES:
            raise ValueError(f"unknown size_mode {self.size_mode!r}")
        if self.beta_schedule not in ("fixed", "linear_decay"):
            raise ValueError(f"unknown beta_schedule {self.beta_schedule!r}")
        if not 0 < self.f_min < self.f_max <= 1:
            raise ValueError("need 0 < f_min < f_max <= 1")
        if not self.tau > 0:
            raise ValueError("tau must be positive")
        if self.penalty_weight is not None and self.penalty_weight < 0:
            raise ValueError("penalty_weight must be non-negative")
        if self.top_k < 1 or self.top_k > self.n_candidates:
            raise ValueError("need 1 <= top_k <= candidate_count")

    @property
    def n_candidates(self) -> int:
        if self.candidate_count is not None:
            return self.candidate_count
        return 50 if self.family == "full_posterior" else 1000

    @property
    def constrained(self) -> bool:
        return self.size_mode in ("constraint", "penalty_and_constraint")

    @property
    def penalized(self) -> bool:
        return self.size_mode in ("penalty", "penalty_and_constraint")

    def beta_at(self, step: int) -> float:
        if self.beta_schedule == "linear_decay":
            return self.beta - self.beta_slope * step
        return self.beta


def empirical_af() -> AFConfig:
    """TAAF preset for the empirical pipeline: beta = 3 - i/100, top-5 randomisation, no repeats."""
    return AFConfig(
        family="taaf",
        beta=3.0,
        beta_schedule="linear_decay",
        beta_slope=0.01,
        size_mode="none",
        top_k=5,
        forbid_exact_repeats=True,
    )


@dataclass(frozen=True)
class ScoredCandidate:
    region: Region
    mean: float
    variance: float
    score: float
    feasible: bool


# -- scoring rules -----------------------------------------------------------


def taaf(m, V, beta):
    """Targeting-aware score ``beta * V - |m|``: uncertain regions whose mean is near zero."""
    return beta * np.asarray(V) - np.abs(m)


def af_variance_mi(var, tau):
    var = np.asarray(var, dtype=float)
    safe = np.where(var > 0, var, 1.0)
    out = safe - safe / (safe + tau) * np.log1p(tau / safe)
    out = np.where(var > 0, out, 0.0)
    return out if out.ndim else float(out)


def af_regret(m, sd):
    return np.asarray(sd) * np.abs(m)


def af_appendix(family: str, m, sd, region=None, volume=None):
    """The pretest candidates: pure variance, pure |mean|, log-weighted, area-weighted, ratio.

    Every score is oriented so that larger is better; ``pure_abs_mean``
    therefore returns ``-|m|``. ``area_weighted`` needs either a region or an
    explicit volume. Log and ratio scores are capped at ``1e12`` when
    ``|m|`` is numerically zero.
    """
    m = np.asarray(m, dtype=float)
    sd = np.asarray(sd, dtype=float)
    absm = np.abs(m)
    tiny = absm < _TINY_MEAN
    safe_m = np.where(tiny, 1.0, absm)
    if family == "pure_variance":
        out = sd + 0.0 * m
    elif family == "pure_abs_mean":
        out = -absm + 0.0 * sd
    elif family == "log_weighted":
        with np.errstate(divide="ignore"):
            out = np.log(sd**2) - np.log(safe_m)
        out = np.where(tiny, SCORE_CAP, np.maximum(out, -SCORE_CAP))
    elif family == "ratio":
        out = np.where(tiny, SCORE_CAP, np.minimum(sd / safe_m, SCORE_CAP))
    elif family == "area_weighted":
        if volume is None:
            if region is None:
                raise ValueError("area_weighted needs a region or volume")
            volume = region_volume(region)
        out = (sd - m) / np.asarray(volume, dtype=float)
    else:
        raise ValueError(f"{family!r} is not an appendix family")
    return out if out.ndim else float(out)


def value_of_querying(m, sd):
    """Expected gain from revealing ``tau ~ N(m, sd^2)`` before deciding to treat.

    ``E[max(tau, 0)] - max(m, 0)``, computed as ``sd*phi(m/sd) - |m|*Phi(-|m|/sd)``
    which avoids cancellation when the decision is already clear.
    """
    m = np.asarray(m, dtype=float)
    sd = np.asarray(sd, dtype=float)
    pos = sd > 0
    s = np.where(pos, sd, 1.0)
    z = np.abs(m) / s
    out = s * np.exp(-0.5 * z * z) / np.sqrt(2 * np.pi) - np.abs(m) * ndtr(-z)
    out = np.where(pos, np.maximum(out, 0.0), 0.0)
    return out if out.ndim else float(out)


def _grid_boxes(bounds: Bounds, resolution: int):
    edges = [np.linspace(a, b, resolution + 1) for a, b in zip(bounds.lo, bounds.hi)]
    lows = np.meshgrid(*[e[:-1] for e in edges], indexing="ij")
    highs = np.meshgrid(*[e[1:] for e in edges], indexing="ij")
    lo = np.stack([g.ravel() for g in lows], axis=1)
    hi = np.stack([g.ravel() for g in highs], axis=1)
    return lo, hi


def _full_posterior_scores(state, cand_lo, cand_hi, part_lo, part_hi, sample_count, cost, rng, noise_sd):
    weights = np.prod(part_hi - part_lo, axis=1)
    weights = weights / weights.sum()
    cell_mean, _ = state.predict(part_lo, part_hi)
    cand_mean, cand_var = state.predict(cand_lo, cand_hi)
    cross = state.posterior_cov(part_lo, part_hi, cand_lo, cand_hi)
    current = np.sum(weights * np.maximum(cell_mean - cost, 0.0))
    noise_var = noise_sd**2
    # variances at the jitter floor are numerically zero
    var_floor = 1e-8 * state.hyperparams.amplitude_sq
    scores = np.zeros(len(cand_lo))
    for j in range(len(cand_lo)):
        z = rng.standard_normal(sample_count)
        pred_var = cand_var[j] + noise_var
        if pred_var <= 1e-300 or cand_var[j] <= var_floor:
            continue
        # sampled result for the candidate, then rank-one update of every cell mean
        y = cand_mean[j] + np.sqrt(pred_var) * z
        gain = cross[:, j] / pred_var
        updated = cell_mean[:, None] + gain[:, None] * (y - cand_mean[j])[None, :]
        after = weights @ np.maximum(updated - cost, 0.0)
        scores[j] = np.mean(after) - current
    return scores


def af_full_posterior(state: GPState, candidate: Region, sample_count: int, partition, cost: float, rng, noise_sd=None):
    """Monte-Carlo expected improvement of the partition policy from querying ``candidate``.

    Each sample draws a result from the posterior predictive of the
    candidate, conditions the GP on it, and re-scores the policy
    ``treat iff mean > cost`` on every cell (weighted by cell volume). The
    score is the average value after the update minus the current value.
    """
    if sample_count < 1:
        raise ValueError("sample_count must be >= 1")
    rng = np.random.default_rng(rng)
    part_lo, part_hi = stack_regions(partition)
    lo, hi = stack_regions([candidate])
    if noise_sd is None:
        noise_sd = state.hyperparams.noise_sd
    return float(_full_posterior_scores(state, lo, hi, part_lo, part_hi, sample_count, cost, rng, noise_sd)[0])


# -- size treatments and candidates -------------------------------------------


def _fractions_ok(frac, config: AFConfig):
    return np.all((frac >= config.f_min - 1e-12) & (frac <= config.f_max + 1e-12), axis=-1)


def apply_size_treatment(score: float, region: Region, bounds: Bounds, config: AFConfig, penalty_weight=None):
    """Return ``(score, feasible)`` after the configured size penalty and/or constraint."""
    feasible = True
    if config.constrained:
        feasible = bool(_fractions_ok(side_fractions(region, bounds), config))
    if config.penalized:
        lam = config.penalty_weight if penalty_weight is None else penalty_weight
        if lam is None:
            raise ValueError("penalty mode needs a penalty weight")
        score = score - lam * region_volume(region) / region_volume(bounds)
    return score, feasible


def _candidate_arrays(bounds: Bounds, config: AFConfig, rng, n=None):
    n = config.n_candidates if n is None else n
    blo, bhi = np.asarray(bounds.lo), np.asarray(bounds.hi)
    span = bhi - blo
    V = len(blo)
    if config.constrained:
        # draw the box so it fits inside bounds; side fractions stay in [f_min, f_max]
        frac = rng.uniform(config.f_min, config.f_max, size=(n, V))
        width = frac * span
        lo = blo + rng.uniform(size=(n, V)) * (span - width)
        hi = np.minimum(lo + width, bhi)
    else:
        center = blo + rng.uniform(size=(n, V)) * span
        frac = 1.0 - rng.uniform(size=(n, V))
        half = 0.5 * frac * span
        lo = np.maximum(center - half, blo)
        hi = np.minimum(center + half, bhi)
    return lo, hi


def generate_candidates(bounds: Bounds, config: AFConfig, rng) -> list[Region]:
    rng = np.random.default_rng(rng)
    lo, hi = _candidate_arrays(bounds, config, rng)
    return [Region(a, b) for a, b in zip(lo, hi)]


def score_arrays(state: GPState, lo, hi, bounds: Bounds, config: AFConfig, cost=0.0, step=0, rng=None):
    """Score a stack of candidate boxes.

    Returns a dict of arrays: ``mean`` (net of cost), ``variance``, ``raw``
    (unpenalised score), ``score`` (after size treatment) and ``feasible``.
    """
    mean, var = state.predict(lo, hi)
    m = mean - cost
    sd = np.sqrt(var)
    fam = config.family
    if fam == "taaf":
        raw = taaf(m, var, config.beta_at(step))
    elif fam == "variance_mi":
        raw = af_variance_mi(var, config.tau)
    elif fam == "regret":
        raw = af_regret(m, sd)
    elif fam == "area_weighted":
        raw = af_appendix(fam, m, sd, volume=np.prod(hi - lo, axis=1))
    elif fam in APPENDIX_FAMILIES:
        raw = af_appendix(fam, m, sd)
    else:
        rng = np.random.default_rng(rng)
        part_lo, part_hi = _grid_boxes(bounds, config.full_posterior_resolution)
        raw = _full_posterior_scores(
            state, lo, hi, part_lo, part_hi, config.full_posterior_samples, cost, rng, state.hyperparams.noise_sd
        )
    raw = np.asarray(raw, dtype=float)

    feasible = np.ones(len(lo), dtype=bool)
    span = np.asarray(bounds.widths)
    if config.constrained:
        feasible = _fractions_ok((hi - lo) / span, config)
    score = raw.copy()
    if config.penalized:
        lam = config.penalty_weight
        if lam is None:
            pool = raw[feasible] if feasible.any() else raw
            lam = 0.5 * float(np.std(pool))
        score = raw - lam * np.prod((hi - lo) / span, axis=1)
    return {"mean": m, "variance": var, "raw": raw, "score": score, "feasible": feasible}


def _repeat_mask(lo, hi, history):
    if not history:
        return np.zeros(len(lo), dtype=bool)
    hlo, hhi = stack_regions(history)
    same = np.all(lo[:, None, :] == hlo[None, :, :], axis=2) & np.all(hi[:, None, :] == hhi[None, :, :], axis=2)
    return same.any(axis=1)


def select_from_arrays(state, lo, hi, history, bounds, config, cost, rng, step=0, allowed=None):
    """Pick among the ``top_k`` best feasible candidates; ``allowed`` is an optional extra mask."""
    scored = score_arrays(state, lo, hi, bounds, config, cost, step, rng)
    ok = scored["feasible"] & np.isfinite(scored["score"])
    if allowed is not None:
        ok &= np.asarray(allowed, dtype=bool)
    if config.forbid_exact_repeats:
        ok &= ~_repeat_mask(lo, hi, history)
    idx = np.flatnonzero(ok)
    if idx.size == 0:
        raise NoFeasibleCandidates("no feasible candidate region; widen f_min/f_max and retry")
    k = min(config.top_k, idx.size)
    order = idx[np.argsort(-scored["score"][idx], kind="stable")]
    pick = order[0] if k == 1 else order[rng.integers(k)]
    return Region(lo[pick], hi[pick]), scored


def select_next(state: GPState, history, bounds: Bounds, config: AFConfig, cost: float, rng, step: int = 0) -> Region:
    """Draw candidates, score them, and pick uniformly among the ``top_k`` feasible best.

    ``cost`` is subtracted from posterior means before scoring. ``step`` is
    the zero-based query index, used by scheduled ``beta``.
    """
    rng = np.random.default_rng(rng)
    lo, hi = _candidate_arrays(bounds, config, rng)
    region, _ = select_from_arrays(state, lo, hi, list(history), bounds, config, cost, rng, step)
    return region


def budget_size_window(budget: int, ndim: int = 3) -> tuple[float, float]:
    """Side-fraction window scaled to the query budget.

    ``f_min`` is the side of a cube grid with ``budget`` cells (so the budget
    can cover the space), clipped to [0.15, 0.5]; ``f_max`` is at least 0.6.
    """
    f_min = float(np.clip(budget ** (-1.0 / ndim), 0.15, 0.5))
    return f_min, min(1.0, max(0.6, f_min + 0.2))


def widened(config: AFConfig) -> AFConfig:
    """Config with the size window opened once, used as the no-feasible fallback."""
    return replace(config, f_min=config.f_min / 2, f_max=min(1.0, config.f_max * 1.5))
