"""Synthetic treatment-effect surfaces, the factorial experiment harness and dominance analysis."""

from __future__ import annotations

import csv
import io
import itertools
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.interpolate import RegularGridInterpolator

from .acquisition import AFConfig, budget_size_window
from .evaluation import best_blanket_value, oracle_fraction, oracle_policy_value, policy_value_on_population
from .gp import GPHyperparams
from .oracle import PrivacyConfig, open_session
from .regions import Bounds, Dataset, Population
from .strategies import StrategicRunConfig, bins_for_budget, run_strategic, run_uniform

logger = logging.getLogger(__name__)

SCHEMA_VERSION = "stratquery-results/1"

FAMILY_ALIASES = {"taaf": "taaf", "var": "variance_mi", "regret": "regret"}
SIZE_ALIASES = {
    "none": "none",
    "penalty": "penalty",
    "constraint": "constraint",
    "penalty_constraint": "penalty_and_constraint",
}
ALL_METHODS = ("uniform",) + tuple(f"{f}_{s}" for f in FAMILY_ALIASES for s in SIZE_ALIASES)
DESK_METHODS = ("uniform", "taaf_none", "taaf_constraint", "taaf_penalty_constraint", "regret_none")


@dataclass(frozen=True)
class DGPConfig:
    """GP surface parameters. ``amplitude`` is the kernel's sqrt(alpha)."""

    amplitude: float = 5.0
    lengthscale: float = 30.0
    ndim: int = 3
    lo: float = 0.0
    hi: float = 100.0
    resolution: int = 20
    population_size: int = 5000
    treat_prob: float = 0.5

    def __post_init__(self):
        if self.resolution < 2:
            raise ValueError("resolution must be >= 2")
        if self.population_size < 1:
            raise ValueError("population_size must be >= 1")
        if not (self.amplitude > 0 and self.lengthscale > 0):
            raise ValueError("amplitude and lengthscale must be positive")

    @property
    def amplitude_sq(self) -> float:
        return self.amplitude**2

    @property
    def bounds(self) -> Bounds:
        return Bounds.cube(self.lo, self.hi, self.ndim)


@dataclass(frozen=True, eq=False)
class GPSurface:
    """Treatment effects on a regular grid, evaluated elsewhere by multilinear interpolation."""

    axes: tuple[np.ndarray, ...]
    values: np.ndarray

    def __call__(self, X) -> np.ndarray:
        interp = RegularGridInterpolator(self.axes, self.values, method="linear")
        return interp(np.atleast_2d(X))


def _axis_factor(axis, lengthscale):
    K = np.exp(-((axis[:, None] - axis[None, :]) ** 2) / lengthscale**2)
    w, Q = np.linalg.eigh(K)
    return Q * np.sqrt(np.clip(w, 0.0, None))


def sample_gp_surface(config: DGPConfig, rng) -> GPSurface:
    """Exact joint draw of the zero-mean SE-kernel GP at the grid nodes.

    The node Gram matrix of a separable kernel on a tensor grid is the
    Kronecker product of per-axis matrices, so a square-root factor is the
    Kronecker product of per-axis factors; we never form the full matrix.
    """
    rng = np.random.default_rng(rng)
    axes = tuple(np.linspace(config.lo, config.hi, config.resolution) for _ in range(config.ndim))
    factors = [_axis_factor(a, config.lengthscale) for a in axes]
    z = rng.standard_normal((config.resolution,) * config.ndim)
    vals = z
    for d, F in enumerate(factors):
        vals = np.moveaxis(np.tensordot(F, vals, axes=([1], [d])), 0, d)
    if not np.all(np.isfinite(vals)):
        raise np.linalg.LinAlgError("surface draw is not finite")
    return GPSurface(axes, config.amplitude * vals)


def sample_population(surface: GPSurface, n: int, rng, treat_prob: float = 0.5) -> tuple[Population, Dataset]:
    """Uniform covariates, true effects from the surface, outcome ``Y = W * tau``.

    With no idiosyncratic outcome noise, arm-mean differences carry only
    sampling variation from which units fall in a region.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    rng = np.random.default_rng(rng)
    lo = np.array([a[0] for a in surface.axes])
    hi = np.array([a[-1] for a in surface.axes])
    X = lo + rng.uniform(size=(n, len(lo))) * (hi - lo)
    tau = surface(X)
    W = (rng.uniform(size=n) < treat_prob).astype(np.int8)
    return Population(X, tau), Dataset(X, W, W * tau, propensity=treat_prob)


# -- methods --------------------------------------------------------------------


@dataclass(frozen=True)
class MethodDefaults:
    """Knobs shared by all strategic variants in a simulation run."""

    beta: float = 1.96
    tau: float = 1.0
    candidate_count: int = 1000
    resolution: int = 10
    latent_noise_frac: float = 0.0
    f_min: float | None = None
    f_max: float | None = None


def method_af(method: str, defaults: MethodDefaults = MethodDefaults(), budget: int = 27, ndim: int = 3) -> AFConfig:
    """Acquisition config for a method id such as ``taaf_penalty_constraint``.

    Without explicit ``f_min``/``f_max`` the size window follows the budget.
    """
    family, size = method.split("_", 1)
    f_min, f_max = budget_size_window(budget, ndim)
    return AFConfig(
        family=FAMILY_ALIASES[family],
        beta=defaults.beta,
        tau=defaults.tau,
        size_mode=SIZE_ALIASES[size],
        candidate_count=defaults.candidate_count,
        f_min=f_min if defaults.f_min is None else defaults.f_min,
        f_max=f_max if defaults.f_max is None else defaults.f_max,
    )


@dataclass(frozen=True)
class ExperimentSetting:
    dgp: DGPConfig
    query_budget: int
    noise_scale: float
    methods: tuple[str, ...] = DESK_METHODS
    repeats: int = 30
    cost: float = 0.0
    min_count: int = 0
    defaults: MethodDefaults = field(default_factory=MethodDefaults)

    def __post_init__(self):
        if not self.methods:
            raise ValueError("method list must not be empty")
        unknown = set(self.methods) - set(ALL_METHODS)
        if unknown:
            raise ValueError(f"unknown methods: {sorted(unknown)}")

    def label(self) -> dict:
        return {
            "amplitude": self.dgp.amplitude,
            "lengthscale": self.dgp.lengthscale,
            "query_budget": self.query_budget,
            "noise_scale": self.noise_scale,
        }


def build_grid(amplitudes, lengthscales, budgets, noise_scales, **kwargs) -> list[ExperimentSetting]:
    dgp_kw = {k: kwargs.pop(k) for k in ("resolution", "population_size", "treat_prob") if k in kwargs}
    return [
        ExperimentSetting(DGPConfig(amplitude=a, lengthscale=l, **dgp_kw), int(q), float(s), **kwargs)
        for a, l, q, s in itertools.product(amplitudes, lengthscales, budgets, noise_scales)
    ]


def desk_grid(repeats: int = 30, methods=DESK_METHODS, **kwargs) -> list[ExperimentSetting]:
    return build_grid([5.0], [10.0, 30.0], [8, 27, 64], [1.0, 10.0], repeats=repeats, methods=tuple(methods), **kwargs)


def full_grid(repeats: int = 100, methods=ALL_METHODS, **kwargs) -> list[ExperimentSetting]:
    return build_grid(
        [2.0, 5.0, 10.0], [10.0, 30.0, 50.0], [8, 27, 64, 125], [0.1, 1.0, 10.0, 100.0],
        repeats=repeats, methods=tuple(methods), **kwargs,
    )


def _seed(master: int, *keys: int) -> np.random.SeedSequence:
    return np.random.SeedSequence([int(master) & 0xFFFFFFFF, *[int(k) for k in keys]])


def run_method(method: str, setting: ExperimentSetting, population: Population, data: Dataset, seed_seq):
    """Run one querying method on one dataset; returns its policy value on the population."""
    bounds = setting.dgp.bounds
    noise_seed, client_seed = seed_seq.spawn(2)
    privacy = PrivacyConfig(setting.query_budget, setting.noise_scale, setting.min_count, seed=noise_seed)
    session = open_session(data, privacy)
    if method == "uniform":
        bins = bins_for_budget(setting.query_budget, bounds.ndim)
        policy, records = run_uniform(session, bounds, bins, setting.cost)
    else:
        d = setting.defaults
        hyper = GPHyperparams.isotropic(
            setting.dgp.amplitude_sq,
            setting.dgp.lengthscale,
            bounds.ndim,
            d.latent_noise_frac * setting.dgp.amplitude,
        )
        cfg = StrategicRunConfig(af=method_af(method, d, setting.query_budget, bounds.ndim), hyperparams=hyper, cost=setting.cost, resolution=d.resolution)
        policy, records, _ = run_strategic(session, bounds, cfg, np.random.default_rng(client_seed))
    return policy_value_on_population(policy, population, setting.cost), records


def _run_repeat(args):
    setting_id, setting, repeat, master_seed = args
    data_seed = _seed(master_seed, setting_id, repeat, 0)
    surf_seed, pop_seed = data_seed.spawn(2)
    surface = sample_gp_surface(setting.dgp, np.random.default_rng(surf_seed))
    population, data = sample_population(surface, setting.dgp.population_size, np.random.default_rng(pop_seed), setting.dgp.treat_prob)
    oracle = oracle_policy_value(population, setting.cost)
    blanket = best_blanket_value(population, setting.cost)
    values = {}
    errors = {}
    for m_idx, method in enumerate(ALL_METHODS):
        if method not in setting.methods:
            continue
        try:
            values[method], _ = run_method(method, setting, population, data, _seed(master_seed, setting_id, repeat, 1 + m_idx))
        except Exception as exc:  # recorded per run; one failure must not sink the grid
            logger.exception("run failed: setting %d repeat %d method %s", setting_id, repeat, method)
            errors[method] = f"{type(exc).__name__}: {exc}"
    rows = []
    for method in setting.methods:
        row = {"setting_id": setting_id, **setting.label(), "method": method, "repeat": repeat}
        val = values.get(method)
        row.update(
            value=val,
            oracle=oracle,
            blanket=blanket,
            uniform=values.get("uniform"),
            fraction=None if val is None else oracle_fraction(val, oracle, blanket),
            error=errors.get(method, ""),
        )
        rows.append(row)
    return rows


class ResultsTable:
    """One row per (setting, method, repeat)."""

    COLUMNS = (
        "setting_id", "amplitude", "lengthscale", "query_budget", "noise_scale",
        "method", "repeat", "value", "oracle", "blanket", "uniform", "fraction", "error",
    )

    def __init__(self, rows=()):
        self.rows = [dict(r) for r in rows]

    def __len__(self):
        return len(self.rows)

    def __iter__(self):
        return iter(self.rows)

    def column(self, name, **where) -> np.ndarray:
        sel = [r[name] for r in self.rows if all(r[k] == v for k, v in where.items())]
        return np.array([np.nan if v is None else v for v in sel], dtype=float)

    def methods(self) -> list[str]:
        return list(dict.fromkeys(r["method"] for r in self.rows))

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write(f"# schema: {SCHEMA_VERSION}\n")
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(self.COLUMNS)
        for r in self.rows:
            writer.writerow(["" if r[c] is None else (repr(float(r[c])) if isinstance(r[c], float) else r[c]) for c in self.COLUMNS])
        return buf.getvalue()

    def write(self, path) -> None:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write(self.to_csv())

    @classmethod
    def read(cls, path) -> "ResultsTable":
        with open(path, encoding="utf-8") as fh:
            lines = [ln for ln in fh if not ln.startswith("#")]
        reader = csv.DictReader(lines)
        missing = set(cls.COLUMNS) - set(reader.fieldnames or ())
        if missing:
            raise ValueError(f"{path}: missing columns {sorted(missing)}")
        rows = []
        for raw in reader:
            row = {}
            for c in cls.COLUMNS:
                v = raw[c]
                if c in ("method", "error"):
                    row[c] = v
                elif c in ("setting_id", "repeat", "query_budget"):
                    row[c] = int(v)
                else:
                    row[c] = None if v == "" else float(v)
            rows.append(row)
        return cls(rows)


def run_setting(setting: ExperimentSetting, setting_id: int = 0, master_seed: int = 0, parallelism: int = 1) -> ResultsTable:
    return run_grid([setting], master_seed, parallelism, setting_ids=[setting_id])


def run_grid(settings, master_seed: int = 0, parallelism: int = 1, setting_ids=None, progress=None) -> ResultsTable:
    """Run every repeat of every setting. Output order and values do not depend on scheduling."""
    settings = list(settings)
    ids = list(range(len(settings))) if setting_ids is None else list(setting_ids)
    tasks = [(sid, s, r, master_seed) for sid, s in zip(ids, settings) for r in range(s.repeats)]
    rows = []
    if parallelism <= 1:
        for i, t in enumerate(tasks):
            rows.extend(_run_repeat(t))
            if progress:
                progress(i + 1, len(tasks))
    else:
        with ProcessPoolExecutor(max_workers=parallelism) as pool:
            for i, chunk in enumerate(pool.map(_run_repeat, tasks, chunksize=1)):
                rows.extend(chunk)
                if progress:
                    progress(i + 1, len(tasks))
    return ResultsTable(rows)


def dominance_matrix(results: ResultsTable, threshold: float = 0.95, methods=None):
    """Count, for each (focal, competitor) pair, the settings where the competitor wins.

    A competitor wins a setting when its value strictly exceeds the focal
    method's value in at least ``threshold`` of the repeats. Returns
    ``(matrix, methods)``; rows are focal methods.
    """
    methods = list(methods or results.methods())
    by_key = {}
    for r in results:
        by_key.setdefault(r["setting_id"], {}).setdefault(r["method"], {})[r["repeat"]] = r["value"]
    index = {m: i for i, m in enumerate(methods)}
    mat = np.zeros((len(methods), len(methods)), dtype=int)
    for sid, per_method in sorted(by_key.items()):
        reps = {m: set(v) for m, v in per_method.items() if m in index}
        if len({frozenset(v) for v in reps.values()}) > 1 or set(reps) != set(methods):
            raise ValueError(f"setting {sid} has unbalanced repeats across methods")
        rep_ids = sorted(next(iter(reps.values())))
        vals = {m: np.array([np.nan if per_method[m][k] is None else per_method[m][k] for k in rep_ids]) for m in methods}
        for f, c in itertools.permutations(methods, 2):
            wins = np.mean(vals[c] > vals[f])
            if wins >= threshold:
                mat[index[f], index[c]] += 1
    return mat, methods


def summarize(results: ResultsTable, by: str, methods=None) -> list[dict]:
    """Mean fraction-of-oracle with a normal 95% interval per method and level of ``by``."""
    out = []
    methods = methods or results.methods()
    levels = sorted({r[by] for r in results})
    for m in methods:
        for lvl in levels:
            f = results.column("fraction", method=m, **{by: lvl})
            f = f[np.isfinite(f)]
            if f.size == 0:
                continue
            half = 1.96 * f.std(ddof=1) / math.sqrt(f.size) if f.size > 1 else float("nan")
            out.append({"method": m, by: lvl, "mean": float(f.mean()), "ci_low": float(f.mean() - half), "ci_high": float(f.mean() + half), "n": int(f.size)})
    return out


# -- Criteo-like synthetic data --------------------------------------------------

CRITEO_FEATURES = tuple(f"f{i}" for i in range(12))
# per-feature (mean, sd) loosely following the public uplift dataset's summary table
_CRITEO_MARGINALS = {
    "f0": (19.62, 5.38), "f1": (10.07, 0.10), "f2": (8.45, 0.30), "f3": (4.18, 1.34),
    "f4": (10.34, 0.34), "f5": (4.03, 0.43), "f6": (-4.16, 4.58), "f7": (5.10, 1.21),
    "f8": (3.93, 0.06), "f9": (16.03, 7.02), "f10": (5.33, 0.17), "f11": (-0.17, 0.02),
}


def criteo_like_effect(f0, f6, rest_sum, strength: float = 1.0):
    """Planted visit uplift. Sign changes sit inside the dense bulk of f0 and f6."""
    return strength * (0.03 * np.tanh((np.asarray(f6) + 2.5) / 0.75) + 0.01 * np.tanh((np.asarray(f0) - 22.0) / 1.5) - 0.005)


def make_criteo_like(n: int, rng, propensity: float = 0.85, base_rate: float = 0.05, strength: float = 1.0) -> dict:
    """Columns of a Criteo-shaped uplift file with a known CATE column ``tau``.

    f0 has a point mass at its minimum and a left-skewed bulk, f6 a long
    left tail, and the other features sit on a spike with a thin tail, which
    roughly matches the public dataset's quartiles. The effect varies with
    f0 and f6 only.
    """
    rng = np.random.default_rng(rng)
    cols = {}
    for name in CRITEO_FEATURES:
        mean, sd = _CRITEO_MARGINALS[name]
        if name == "f0":
            spike = rng.uniform(size=n) < 0.3
            cols[name] = np.where(spike, 12.62, np.maximum(26.7 - rng.gamma(2.0, 1.8, size=n), 12.62))
        elif name == "f6":
            cols[name] = np.maximum(1.0 - rng.gamma(1.2, 4.5, size=n), -31.0)
        else:
            spike = rng.uniform(size=n) < 0.75
            cols[name] = np.where(spike, mean, mean + sd * rng.standard_normal(n))
    rest = sum(cols[k] for k in CRITEO_FEATURES if k not in ("f0", "f6"))
    tau = criteo_like_effect(cols["f0"], cols["f6"], rest, strength)
    W = (rng.uniform(size=n) < propensity).astype(np.int8)
    z0 = (cols["f0"] - 19.62) / 5.38
    p0 = np.clip(base_rate * (1 + 0.3 * np.tanh(z0)), 0.0, 1.0)
    p = np.clip(p0 + W * tau, 0.0, 1.0)
    Y = (rng.uniform(size=n) < p).astype(np.int8)
    cols["treatment"] = W
    cols["visit"] = Y
    cols["tau"] = np.clip(p0 + tau, 0.0, 1.0) - p0
    return cols


def write_criteo_like_csv(path, n: int, seed, **kwargs) -> None:
    """Write :func:`make_criteo_like` output as CSV: 12 features, treatment, visit, tau."""
    cols = make_criteo_like(n, seed, **kwargs)
    names = [*CRITEO_FEATURES, "treatment", "visit", "tau"]
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(names)
        data = [cols[k].tolist() for k in names]
        writer.writerows(zip(*[map(repr, c) if isinstance(c[0], float) else c for c in data]))
