"""Gaussian-process regression on region averages.

The latent treatment-effect function has a zero-mean GP prior with the
squared-exponential kernel ``k(x, x') = alpha * exp(-sum_d (x_d - x'_d)**2 / l_d**2)``.
Observations are noisy averages of that function over axis-aligned boxes, so
every covariance we need is the kernel averaged over one or two boxes. Because
the kernel factorises over dimensions, the box average is a product of
one-dimensional range averages that have a closed form in terms of
``g(x) = x sqrt(pi) erf(x) + exp(-x**2)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import linalg
from scipy.special import erf, erfcx

from .regions import Region, stack_regions

SQRT_PI = np.sqrt(np.pi)
JITTER = 1e-8


class GPError(RuntimeError):
    """Raised when a Gram matrix cannot be factorised."""


def g_fn(x):
    """``x sqrt(pi) erf(x) + exp(-x^2)``; even, and never below 1."""
    x = np.asarray(x, dtype=float)
    out = x * SQRT_PI * erf(x) + np.exp(-x * x)
    return out if out.ndim else float(out)


def _g_tail(x):
    # g(x) - |x| sqrt(pi), written with erfcx so that it stays accurate once
    # exp(-x^2) is small. Decays like exp(-x^2) / (2 x^2).
    ax = np.abs(x)
    return np.exp(-ax * ax) * (1.0 - ax * SQRT_PI * erfcx(ax))


def _range_integral(s, t, s2, t2, l):
    """Double integral of ``exp(-(x-x')^2/l^2)`` over ``[s,t] x [s2,t2]`` (broadcasting).

    Algebraically this is ``(l^2/2)[g((t-s2)/l) + g((t2-s)/l) - g((t-t2)/l) - g((s-s2)/l)]``.
    The linear part of ``g`` collapses to ``l sqrt(pi) * overlap``, which is
    evaluated exactly; only the fast-decaying tails are differenced. That keeps
    full relative precision for distant ranges where the plain form cancels.
    """
    overlap = np.maximum(0.0, np.minimum(t, t2) - np.maximum(s, s2))
    tails = (
        _g_tail((t - s2) / l)
        + _g_tail((t2 - s) / l)
        - _g_tail((t - t2) / l)
        - _g_tail((s - s2) / l)
    )
    return l * SQRT_PI * overlap + 0.5 * l * l * tails


def _self_average(width, l):
    # range average of the unit kernel over [0, w] x [0, w]
    integral = l * SQRT_PI * width + l * l * (_g_tail(width / l) - 1.0)
    return integral / (width * width)


def avg_kernel_1d(range1, range2, alpha: float, l: float) -> float:
    """Covariance between averages of the latent function over two 1-D ranges."""
    s, t = map(float, range1)
    s2, t2 = map(float, range2)
    if not (t > s and t2 > s2):
        raise ValueError("ranges must have positive width")
    if l <= 0:
        raise ValueError("lengthscale must be positive")
    return float(alpha * _range_integral(s, t, s2, t2, l) / ((t - s) * (t2 - s2)))


@dataclass(frozen=True)
class GPHyperparams:
    """Kernel amplitude (variance units), per-dimension lengthscales and latent noise sd.

    ``noise_sd`` is homoskedastic noise added on top of the per-observation
    noise each :class:`RegionObservation` carries.
    """

    amplitude_sq: float
    lengthscales: tuple[float, ...]
    noise_sd: float = 0.0

    def __post_init__(self):
        ls = tuple(float(v) for v in np.atleast_1d(self.lengthscales))
        if not self.amplitude_sq > 0:
            raise ValueError("amplitude_sq must be positive")
        if not ls or any(not v > 0 for v in ls):
            raise ValueError("lengthscales must be positive")
        if self.noise_sd < 0:
            raise ValueError("noise_sd must be non-negative")
        object.__setattr__(self, "lengthscales", ls)
        object.__setattr__(self, "amplitude_sq", float(self.amplitude_sq))
        object.__setattr__(self, "noise_sd", float(self.noise_sd))

    @classmethod
    def isotropic(cls, amplitude_sq, lengthscale, ndim, noise_sd=0.0) -> "GPHyperparams":
        return cls(amplitude_sq, (float(lengthscale),) * ndim, noise_sd)

    def for_ndim(self, ndim: int) -> np.ndarray:
        ls = np.asarray(self.lengthscales)
        if ls.size == 1:
            return np.repeat(ls, ndim)
        if ls.size != ndim:
            raise ValueError(f"hyperparameters have {ls.size} lengthscales, regions have {ndim} dims")
        return ls


def _check_boxes(lo, hi):
    if np.any(hi - lo <= 0.0):
        raise ValueError("degenerate region: every side must have positive width")


def cross_kernel(lo1, hi1, lo2, hi2, hyper: GPHyperparams) -> np.ndarray:
    """Matrix of box-average covariances between two stacks of boxes, ``(n, m)``."""
    lo1, hi1, lo2, hi2 = (np.asarray(a, dtype=float) for a in (lo1, hi1, lo2, hi2))
    _check_boxes(lo1, hi1)
    _check_boxes(lo2, hi2)
    ndim = lo1.shape[1]
    ls = hyper.for_ndim(ndim)
    out = np.full((lo1.shape[0], lo2.shape[0]), hyper.amplitude_sq)
    for d in range(ndim):
        s, t = lo1[:, d, None], hi1[:, d, None]
        s2, t2 = lo2[None, :, d], hi2[None, :, d]
        out *= _range_integral(s, t, s2, t2, ls[d]) / ((t - s) * (t2 - s2))
    return out


def prior_variance(lo, hi, hyper: GPHyperparams) -> np.ndarray:
    """Prior variance of the average over each box in a stack."""
    lo, hi = np.asarray(lo, dtype=float), np.asarray(hi, dtype=float)
    _check_boxes(lo, hi)
    ls = hyper.for_ndim(lo.shape[1])
    out = np.full(lo.shape[0], hyper.amplitude_sq)
    for d in range(lo.shape[1]):
        out *= _self_average(hi[:, d] - lo[:, d], ls[d])
    return out


def avg_kernel(r1: Region, r2: Region, hyper: GPHyperparams) -> float:
    if r1.ndim != r2.ndim:
        raise ValueError("regions differ in dimension")
    lo1, hi1 = stack_regions([r1])
    lo2, hi2 = stack_regions([r2])
    return float(cross_kernel(lo1, hi1, lo2, hi2, hyper)[0, 0])


@dataclass(frozen=True)
class RegionObservation:
    """A noisy average ``y`` of the latent function over ``region``.

    ``noise_sd`` is the disclosed noise of this observation. The latent noise
    variance of the hyperparameters enters multiplied by ``noise_weight``
    (1 means homoskedastic).
    """

    region: Region
    value: float
    noise_sd: float = 0.0
    noise_weight: float = 1.0

    def __post_init__(self):
        if self.noise_sd < 0:
            raise ValueError("noise_sd must be non-negative")
        if not self.noise_weight > 0:
            raise ValueError("noise_weight must be positive")
        if self.region.is_degenerate():
            raise ValueError("observed region must be non-degenerate")


def gram_matrix(observations, hyper: GPHyperparams) -> np.ndarray:
    lo, hi = stack_regions(r.region for r in observations)
    return cross_kernel(lo, hi, lo, hi, hyper)


def _factor(K, noise_var, amplitude_sq):
    A = K + np.diag(noise_var)
    A = 0.5 * (A + A.T)
    jitter = JITTER * amplitude_sq
    for _ in range(4):
        try:
            return linalg.cho_factor(A + jitter * np.eye(len(A)), lower=True, check_finite=True)
        except linalg.LinAlgError:
            jitter *= 100.0
    raise GPError("Gram matrix is not positive definite even after jitter")


@dataclass(frozen=True, eq=False)
class GPState:
    """Hyperparameters plus the conditioned set of region observations.

    Instances are immutable; :func:`condition` returns a new state. The
    Cholesky factor of ``K + diag(noise)`` and the weight vector are cached at
    construction.
    """

    hyperparams: GPHyperparams
    ndim: int
    observations: tuple[RegionObservation, ...] = ()
    _lo: np.ndarray = field(init=False, repr=False)
    _hi: np.ndarray = field(init=False, repr=False)
    _chol: tuple | None = field(init=False, repr=False)
    _weights: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        obs = tuple(self.observations)
        object.__setattr__(self, "observations", obs)
        if any(o.region.ndim != self.ndim for o in obs):
            raise ValueError("observation dimension does not match state")
        if obs:
            lo, hi = stack_regions(o.region for o in obs)
            y = np.array([o.value for o in obs])
            noise_var = np.array([o.noise_sd**2 + o.noise_weight * self.hyperparams.noise_sd**2 for o in obs])
            K = cross_kernel(lo, hi, lo, hi, self.hyperparams)
            chol = _factor(K, noise_var, self.hyperparams.amplitude_sq)
            weights = linalg.cho_solve(chol, y)
        else:
            lo = hi = np.empty((0, self.ndim))
            chol, weights = None, np.empty(0)
        object.__setattr__(self, "_lo", lo)
        object.__setattr__(self, "_hi", hi)
        object.__setattr__(self, "_chol", chol)
        object.__setattr__(self, "_weights", weights)

    def __len__(self) -> int:
        return len(self.observations)

    def with_hyperparams(self, hyper: GPHyperparams) -> "GPState":
        return GPState(hyper, self.ndim, self.observations)

    def predict(self, lo, hi, return_cross=False):
        """Posterior mean and variance of the averages over a stack of boxes.

        With ``return_cross`` the whitened cross-covariances ``L^{-1} k_*`` are
        returned as well (shape ``(n_obs, n_query)``), which lets callers form
        posterior covariances cheaply.
        """
        lo, hi = np.atleast_2d(lo), np.atleast_2d(hi)
        prior = prior_variance(lo, hi, self.hyperparams)
        if not self.observations:
            mean, var = np.zeros(len(lo)), prior
            white = np.empty((0, len(lo)))
        else:
            k_star = cross_kernel(self._lo, self._hi, lo, hi, self.hyperparams)
            mean = k_star.T @ self._weights
            white = linalg.solve_triangular(self._chol[0], k_star, lower=True)
            var = np.maximum(prior - np.einsum("ij,ij->j", white, white), 0.0)
        if return_cross:
            return mean, var, white
        return mean, var

    def posterior_cov(self, lo1, hi1, lo2, hi2) -> np.ndarray:
        prior = cross_kernel(lo1, hi1, lo2, hi2, self.hyperparams)
        if not self.observations:
            return prior
        w1 = linalg.solve_triangular(
            self._chol[0], cross_kernel(self._lo, self._hi, lo1, hi1, self.hyperparams), lower=True
        )
        w2 = linalg.solve_triangular(
            self._chol[0], cross_kernel(self._lo, self._hi, lo2, hi2, self.hyperparams), lower=True
        )
        return prior - w1.T @ w2


def empty_state(hyper: GPHyperparams, ndim: int) -> GPState:
    return GPState(hyper, ndim)


def posterior_region(state: GPState, query: Region) -> tuple[float, float]:
    """Posterior predictive ``(mean, variance)`` of the average over ``query``."""
    if query.ndim != state.ndim:
        raise ValueError("query dimension does not match state")
    lo, hi = stack_regions([query])
    mean, var = state.predict(lo, hi)
    return float(mean[0]), float(var[0])


def condition(state: GPState, obs: RegionObservation) -> GPState:
    # full refactorisation; budgets are small enough that rank-1 updates buy nothing
    return GPState(state.hyperparams, state.ndim, state.observations + (obs,))


def log_marginal_likelihood(observations, hyper: GPHyperparams) -> float:
    """Gaussian log evidence of the observed region averages under ``hyper``."""
    observations = list(observations)
    if not observations:
        raise ValueError("need at least one observation")
    lo, hi = stack_regions(o.region for o in observations)
    y = np.array([o.value for o in observations])
    noise = np.array([o.noise_sd for o in observations])
    weight = np.array([o.noise_weight for o in observations])
    return lml_arrays(lo, hi, y, noise, hyper, weight)


def lml_arrays(lo, hi, y, noise_sd, hyper: GPHyperparams, noise_weight=1.0) -> float:
    K = cross_kernel(lo, hi, lo, hi, hyper)
    return lml_from_gram(K, y, noise_sd**2 + noise_weight * hyper.noise_sd**2, hyper.amplitude_sq)


def _range_integral_with_dl(s, t, s2, t2, l):
    """:func:`_range_integral` and its derivative in ``l``, sharing the special-function work."""
    overlap = np.maximum(0.0, np.minimum(t, t2) - np.maximum(s, s2))
    tails = 0.0
    dtails = 0.0
    for sign, a in ((1.0, t - s2), (1.0, t2 - s), (-1.0, t - t2), (-1.0, s - s2)):
        u = np.abs(a) / l
        e = np.exp(-u * u)
        c = erfcx(u)
        gt = e * (1.0 - u * SQRT_PI * c)
        tails = tails + sign * gt
        # d/dl [l^2/2 g_tail(|a|/l)] = l g_tail + (sqrt(pi)/2) |a| erfc(|a|/l)
        dtails = dtails + sign * (l * gt + 0.5 * SQRT_PI * l * u * e * c)
    value = l * SQRT_PI * overlap + 0.5 * l * l * tails
    return value, SQRT_PI * overlap + dtails


def unit_grams_dl(lo, hi, lengthscales):
    """Per-dimension unit-amplitude Gram factors and their ``log l`` derivatives.

    Returns two arrays of shape ``(ndim, n, n)``.
    """
    ls = np.asarray(lengthscales, dtype=float)[:, None, None]
    s, t = lo.T[:, :, None], hi.T[:, :, None]
    s2, t2 = lo.T[:, None, :], hi.T[:, None, :]
    area = (t - s) * (t2 - s2)
    R, dR = _range_integral_with_dl(s, t, s2, t2, ls)
    return R / area, ls * dR / area


def lml_from_gram(K, y, noise_var, amplitude_sq) -> float:
    chol = _factor(K, noise_var, amplitude_sq)
    alpha = linalg.cho_solve(chol, y)
    logdet = 2.0 * np.sum(np.log(np.diag(chol[0])))
    return float(-0.5 * y @ alpha - 0.5 * logdet - 0.5 * len(y) * np.log(2 * np.pi))
