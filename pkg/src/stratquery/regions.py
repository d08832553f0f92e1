"""Geometric and data primitives: hyperrectangles, datasets and populations."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


def _as_tuple(values) -> tuple[float, ...]:
    arr = np.atleast_1d(np.asarray(values, dtype=float))
    if arr.ndim != 1:
        raise ValueError(f"expected a flat vector of bounds, got shape {arr.shape}")
    return tuple(float(v) for v in arr)


@dataclass(frozen=True)
class Region:
    """Closed axis-aligned box ``[lo_d, hi_d]`` in covariate space.

    Regions are the unit of querying and of kernel evaluation. Both ends of
    every interval belong to the region.
    """

    lo: tuple[float, ...]
    hi: tuple[float, ...]

    def __post_init__(self):
        lo, hi = _as_tuple(self.lo), _as_tuple(self.hi)
        if len(lo) != len(hi):
            raise ValueError("lo and hi must have the same length")
        if len(lo) == 0:
            raise ValueError("a region needs at least one dimension")
        if not all(np.isfinite(lo)) or not all(np.isfinite(hi)):
            raise ValueError("region bounds must be finite")
        if any(a > b for a, b in zip(lo, hi)):
            raise ValueError(f"region has lo > hi: {lo} vs {hi}")
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)

    @property
    def ndim(self) -> int:
        return len(self.lo)

    @property
    def widths(self) -> np.ndarray:
        return np.subtract(self.hi, self.lo)

    @property
    def center(self) -> np.ndarray:
        return 0.5 * (np.asarray(self.lo) + np.asarray(self.hi))

    def is_degenerate(self) -> bool:
        return bool(np.any(self.widths <= 0.0))

    def to_dict(self) -> dict:
        return {"lo": list(self.lo), "hi": list(self.hi)}

    @classmethod
    def from_dict(cls, d: dict) -> "Region":
        return cls(d["lo"], d["hi"])


@dataclass(frozen=True)
class Bounds(Region):
    """Ambient box of the covariate space; every side must have positive length."""

    def __post_init__(self):
        super().__post_init__()
        if any(a >= b for a, b in zip(self.lo, self.hi)):
            raise ValueError("bounds need lo < hi in every dimension")

    @classmethod
    def cube(cls, lo: float, hi: float, ndim: int) -> "Bounds":
        return cls((lo,) * ndim, (hi,) * ndim)

    def as_region(self) -> Region:
        return Region(self.lo, self.hi)


def region_volume(region: Region) -> float:
    return float(np.prod(region.widths))


def region_contains(region: Region, point) -> bool:
    x = np.asarray(point, dtype=float)
    if x.shape != (region.ndim,):
        raise ValueError(f"point of shape {x.shape} does not match a {region.ndim}-d region")
    return bool(np.all(x >= region.lo) and np.all(x <= region.hi))


def contains_mask(region: Region, points: np.ndarray) -> np.ndarray:
    """Vectorised membership test for an ``(n, V)`` array of points."""
    pts = np.asarray(points, dtype=float)
    if pts.ndim != 2 or pts.shape[1] != region.ndim:
        raise ValueError(f"points of shape {pts.shape} do not match a {region.ndim}-d region")
    return np.all((pts >= region.lo) & (pts <= region.hi), axis=1)


def clip_region(region: Region, bounds: Region) -> Region:
    if region.ndim != bounds.ndim:
        raise ValueError("region and bounds differ in dimension")
    lo = np.maximum(region.lo, bounds.lo)
    hi = np.minimum(region.hi, bounds.hi)
    if np.any(lo > hi):
        raise ValueError(f"region {region} does not intersect bounds {bounds}")
    return Region(lo, hi)


def side_fractions(region: Region, bounds: Region) -> np.ndarray:
    return region.widths / bounds.widths


def stack_regions(regions) -> tuple[np.ndarray, np.ndarray]:
    """Return ``(lo, hi)`` arrays of shape ``(n, V)`` for a sequence of regions."""
    regions = list(regions)
    if not regions:
        return np.empty((0, 0)), np.empty((0, 0))
    lo = np.array([r.lo for r in regions], dtype=float)
    hi = np.array([r.hi for r in regions], dtype=float)
    return lo, hi


@dataclass(frozen=True, eq=False)
class Dataset:
    """Experimental data: covariates ``X``, binary treatment ``W``, outcome ``Y``.

    ``propensity`` is the (known, constant) probability of treatment.
    """

    covariates: np.ndarray
    treatment: np.ndarray
    outcome: np.ndarray
    propensity: float = 0.5
    feature_names: tuple[str, ...] = field(default=())

    def __post_init__(self):
        X = np.asarray(self.covariates, dtype=float)
        if X.ndim == 1:
            X = X[:, None]
        W = np.asarray(self.treatment).astype(np.int8)
        Y = np.asarray(self.outcome, dtype=float)
        if X.ndim != 2 or W.shape != (X.shape[0],) or Y.shape != (X.shape[0],):
            raise ValueError("covariates, treatment and outcome lengths disagree")
        if not np.all((W == 0) | (W == 1)):
            raise ValueError("treatment must be 0/1")
        if not 0.0 < self.propensity < 1.0:
            raise ValueError("propensity must lie strictly inside (0, 1)")
        names = tuple(self.feature_names) or tuple(f"x{d}" for d in range(X.shape[1]))
        if len(names) != X.shape[1]:
            raise ValueError("feature_names does not match covariate dimension")
        for attr, val in (("covariates", X), ("treatment", W), ("outcome", Y)):
            val.setflags(write=False)
            object.__setattr__(self, attr, val)
        object.__setattr__(self, "feature_names", names)
        object.__setattr__(self, "propensity", float(self.propensity))

    def __len__(self) -> int:
        return self.covariates.shape[0]

    @property
    def ndim(self) -> int:
        return self.covariates.shape[1]

    def subset(self, index) -> "Dataset":
        return Dataset(
            self.covariates[index],
            self.treatment[index],
            self.outcome[index],
            self.propensity,
            self.feature_names,
        )


@dataclass(frozen=True, eq=False)
class Population:
    """Ground-truth carrier: covariates and the true treatment effect of every unit."""

    covariates: np.ndarray
    effects: np.ndarray

    def __post_init__(self):
        X = np.asarray(self.covariates, dtype=float)
        tau = np.asarray(self.effects, dtype=float)
        if X.ndim != 2 or tau.shape != (X.shape[0],):
            raise ValueError("covariates must be (n, V) and effects (n,)")
        X.setflags(write=False)
        tau.setflags(write=False)
        object.__setattr__(self, "covariates", X)
        object.__setattr__(self, "effects", tau)

    def __len__(self) -> int:
        return self.covariates.shape[0]


def bounding_box(points: np.ndarray) -> Bounds:
    """Smallest box containing all points (widened where a column is constant)."""
    pts = np.asarray(points, dtype=float)
    lo, hi = pts.min(axis=0), pts.max(axis=0)
    flat = hi <= lo
    lo = np.where(flat, lo - 0.5, lo)
    hi = np.where(flat, hi + 0.5, hi)
    return Bounds(lo, hi)
