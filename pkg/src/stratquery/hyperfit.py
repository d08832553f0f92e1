"""Maximum-likelihood fitting of GP hyperparameters from region observations."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from scipy import linalg, optimize

from .gp import GPError, GPHyperparams, _factor, unit_grams_dl
from .regions import stack_regions

logger = logging.getLogger(__name__)


class FitError(RuntimeError):
    pass


@dataclass(frozen=True)
class FitConfig:
    """Search space and schedule for hyperparameter MLE.

    Lengthscale bounds are fractions of each dimension's span. Before
    ``activation_step`` observations have been collected, the fixed
    ``initial_*`` values are used instead of a fit.
    """

    amplitude_sq_bounds: tuple[float, float] = (1e-4, 1e4)
    lengthscale_fraction_bounds: tuple[float, float] = (0.01, 3.0)
    noise_sd_bounds: tuple[float, float] = (1e-6, 1e2)
    restarts: int = 5
    tol: float = 1e-6
    max_iter: int = 200
    activation_step: int = 10
    tie_lengthscales: bool = False
    initial_amplitude_sq: float = 1.0
    initial_lengthscale: float = 1.0
    initial_noise_sd: float = 0.01

    def __post_init__(self):
        for name in ("amplitude_sq_bounds", "lengthscale_fraction_bounds", "noise_sd_bounds"):
            lo, hi = getattr(self, name)
            if not (0 < lo < hi and np.isfinite(hi)):
                raise ValueError(f"{name} must satisfy 0 < lo < hi < inf")
        if self.restarts < 1:
            raise ValueError("restarts must be >= 1")
        if self.activation_step < 1:
            raise ValueError("activation_step must be >= 1")

    def initial_hyperparams(self, ndim: int) -> GPHyperparams:
        return GPHyperparams.isotropic(
            self.initial_amplitude_sq, self.initial_lengthscale, ndim, self.initial_noise_sd
        )


def _log_bounds(config: FitConfig, span: np.ndarray, n_ls: int):
    ls_lo = np.log(config.lengthscale_fraction_bounds[0] * span)
    ls_hi = np.log(config.lengthscale_fraction_bounds[1] * span)
    if n_ls == 1:
        ls_lo, ls_hi = ls_lo.min(keepdims=True), ls_hi.max(keepdims=True)
    return np.array(
        [np.log(config.amplitude_sq_bounds)]
        + list(zip(ls_lo, ls_hi))
        + [np.log(config.noise_sd_bounds)]
    )


def _unpack(theta, n_ls):
    return GPHyperparams(np.exp(theta[0]), tuple(np.exp(theta[1 : 1 + n_ls])), np.exp(theta[-1]))


def _pack(hyper: GPHyperparams, n_ls, bounds):
    ls = np.asarray(hyper.lengthscales, dtype=float)
    ls = np.repeat(ls, n_ls) if ls.size == 1 else ls[:n_ls]
    theta = np.concatenate([[np.log(hyper.amplitude_sq)], np.log(ls), [np.log(max(hyper.noise_sd, 1e-300))]])
    return np.clip(theta, bounds[:, 0], bounds[:, 1])


def neg_lml_objective(lo, hi, y, dp_noise, weight, n_ls):
    """Objective for the fit: ``theta -> (-lml, -grad)`` with ``theta`` the log parameters.

    ``theta`` is ``[log amplitude_sq, log l_1..l_k, log noise_sd]`` with
    ``k = n_ls`` (1 when lengthscales are tied). Unfactorisable points map to
    a huge value with zero gradient.
    """
    ndim = lo.shape[1]

    def objective(theta):
        """Negative log evidence and its gradient in log-parameter space."""
        try:
            hyper = _unpack(theta, n_ls)
            ls = hyper.for_ndim(ndim)
            M, dM = unit_grams_dl(lo, hi, ls)
            K = hyper.amplitude_sq * np.prod(M, axis=0)
            latent = weight * hyper.noise_sd**2
            chol = _factor(K, dp_noise**2 + latent, hyper.amplitude_sq)
        except (GPError, ValueError, FloatingPointError):
            return 1e300, np.zeros_like(theta)
        alpha = linalg.cho_solve(chol, y)
        val = -0.5 * y @ alpha - np.sum(np.log(np.diag(chol[0]))) - 0.5 * len(y) * np.log(2 * np.pi)
        if not np.isfinite(val):
            return 1e300, np.zeros_like(theta)
        # d lml / d theta = 0.5 tr((alpha alpha' - K^-1) dK/dtheta)
        inner = np.outer(alpha, alpha) - linalg.cho_solve(chol, np.eye(len(y)))
        grad = np.empty_like(theta)
        grad[0] = 0.5 * np.sum(inner * K)
        dls = []
        for d in range(ndim):
            others = np.prod(np.delete(M, d, axis=0), axis=0)
            dls.append(0.5 * np.sum(inner * (hyper.amplitude_sq * others * dM[d])))
        if n_ls == 1:
            grad[1] = sum(dls)
        else:
            grad[1 : 1 + ndim] = dls
        grad[-1] = np.sum(np.diag(inner) * 2.0 * latent) * 0.5
        return -val, -grad

    return objective


def fit_hyperparams(observations, config: FitConfig, rng_seed=0, span=None, start=None) -> GPHyperparams:
    """Multi-start L-BFGS-B maximisation of the log marginal likelihood in log space.

    One restart always begins at ``start`` (default: the config's fixed
    pre-activation values), the others log-uniformly inside the bounds. The
    returned hyperparameters are never worse than any starting point.

    Parameters
    ----------
    observations : sequence of RegionObservation
    config : FitConfig
    rng_seed : int or numpy Generator seed material
    span : array-like, optional
        Per-dimension range used to scale the lengthscale bounds. Defaults to
        the extent of the union of the observed regions.
    start : GPHyperparams, optional
    """
    observations = list(observations)
    if not observations:
        raise FitError("cannot fit hyperparameters without observations")
    lo, hi = stack_regions(o.region for o in observations)
    y = np.array([o.value for o in observations])
    dp_noise = np.array([o.noise_sd for o in observations])
    weight = np.array([o.noise_weight for o in observations])
    ndim = lo.shape[1]
    if span is None:
        span = hi.max(axis=0) - lo.min(axis=0)
    span = np.broadcast_to(np.asarray(span, dtype=float), (ndim,))
    n_ls = 1 if config.tie_lengthscales else ndim
    bounds = _log_bounds(config, span, n_ls)

    objective = neg_lml_objective(lo, hi, y, dp_noise, weight, n_ls)

    rng = np.random.default_rng(rng_seed)
    if start is None:
        start = config.initial_hyperparams(ndim)
    starts = [_pack(start, n_ls, bounds)]
    for _ in range(config.restarts - 1):
        starts.append(rng.uniform(bounds[:, 0], bounds[:, 1]))

    best_theta, best_val = None, np.inf
    for theta0 in starts:
        f0 = objective(theta0)[0]
        if f0 < best_val:
            best_theta, best_val = theta0, f0
        with np.errstate(all="ignore"):
            res = optimize.minimize(
                objective,
                theta0,
                method="L-BFGS-B",
                jac=True,
                bounds=bounds,
                options={"maxiter": config.max_iter, "ftol": config.tol},
            )
        if np.isfinite(res.fun) and res.fun < best_val:
            best_theta, best_val = res.x, res.fun
    if best_theta is None or best_val >= 1e300:
        raise FitError(
            f"no restart produced a finite likelihood (n={len(y)}, y range "
            f"[{y.min():.3g}, {y.max():.3g}], span {span})"
        )
    logger.debug("fitted hyperparameters: lml=%.4f theta=%s", -best_val, best_theta)
    return _unpack(best_theta, n_ls)
