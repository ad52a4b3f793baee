"""Confidence regions for the next disturbance and the rules that pick one.

Every radius is a closed-form function of the sample count ``t``, the state
dimension ``n`` and the risk level ``delta``. The scalar formulas avoid
``float()`` casts so that ``fractions.Fraction`` arguments give exact results
wherever no square root is involved.
"""

from __future__ import annotations

import enum
import math

import numpy as np

from .errors import BoundNotValidYet, ConfigError
from .estimation import EstimationMode, MomentEstimate
from .model import ConfidenceConfig, UncertaintySet


class BoundKind(str, enum.Enum):
    MARKOV_ZERO_MEAN = "MarkovZeroMean"
    CHEBYSHEV_ZERO_MEAN = "ChebyshevZeroMean"
    ALL_T_ZERO_MEAN = "AllT_ZeroMean"
    NOISY_LTI = "NoisyLTI"
    MARKOV_NONZERO_MEAN = "MarkovNonZeroMean"
    CHEBYSHEV_NONZERO_MEAN = "ChebyshevNonZeroMean"
    ALL_T_NONZERO_MEAN = "AllT_NonZeroMean"
    NON_GAUSSIAN_ZERO_MEAN = "NonGaussianZeroMean"
    NON_GAUSSIAN_NONZERO_MEAN = "NonGaussianNonZeroMean"
    # Cold-start fallback used before any residual has been seen.
    PRIOR = "Prior"

    def min_samples(self, n: int) -> int:
        """Smallest sample count for which the bound is valid."""
        return {
            BoundKind.MARKOV_ZERO_MEAN: n + 2,
            BoundKind.CHEBYSHEV_ZERO_MEAN: n + 4,
            BoundKind.ALL_T_ZERO_MEAN: 1,
            BoundKind.NOISY_LTI: 2 * n + 4,
            BoundKind.MARKOV_NONZERO_MEAN: n + 3,
            BoundKind.CHEBYSHEV_NONZERO_MEAN: n + 5,
            BoundKind.ALL_T_NONZERO_MEAN: 2,
            BoundKind.NON_GAUSSIAN_ZERO_MEAN: 1,
            BoundKind.NON_GAUSSIAN_NONZERO_MEAN: 2,
            BoundKind.PRIOR: 0,
        }[self]

    @property
    def zero_mean(self) -> bool:
        return self in (
            BoundKind.MARKOV_ZERO_MEAN,
            BoundKind.CHEBYSHEV_ZERO_MEAN,
            BoundKind.ALL_T_ZERO_MEAN,
            BoundKind.NON_GAUSSIAN_ZERO_MEAN,
        )


def _require_t(kind: BoundKind, t: int, n: int) -> None:
    need = kind.min_samples(n)
    if t < need:
        raise BoundNotValidYet(kind.value, t, need)


def _check_delta(delta) -> None:
    if not 0 < delta <= 1:
        raise ConfigError(f"delta must lie in (0, 1], got {delta}")


# ---------------------------------------------------------------- zero mean


def markov_radius_zero_mean(t, n, delta):
    """``d = t n / ((t - n - 1) delta)``, valid for ``t > n + 1``."""
    _require_t(BoundKind.MARKOV_ZERO_MEAN, t, n)
    _check_delta(delta)
    return t * n / ((t - n - 1) * delta)


def chebyshev_ev_zero_mean(t, n):
    """Mean and variance of ``w' inv(Sigma_hat) w`` for Gaussian ``w``."""
    _require_t(BoundKind.CHEBYSHEV_ZERO_MEAN, t, n)
    E = t * n / (t - n - 1)
    V = 2 * t * t * (t - 1) * n / ((t - n - 1) ** 2 * (t - n - 3))
    return E, V


def chebyshev_radius_zero_mean(t, n, delta) -> float:
    """Outer radius ``E + sqrt(V / delta)``; the inner ellipsoid is never needed."""
    _check_delta(delta)
    E, V = chebyshev_ev_zero_mean(t, n)
    return float(E) + math.sqrt(float(V) / float(delta))


def loewner_slack_zero_mean(t, n, delta, sigma) -> float:
    """Loewner slack ``sigma sqrt(n(n+1)/(delta t))`` covering the covariance."""
    return sigma * math.sqrt(n * (n + 1) / (delta * t))


def all_t_inflation_zero_mean(t, n, delta, sigma) -> float:
    return sigma * math.sqrt(2 * n * (n + 1) / (delta * t))


def all_t_set_zero_mean(Sigma_hat, t: int, n: int, delta: float, sigma: float | None) -> UncertaintySet:
    """Set valid for every ``t >= 1`` using the covariance bound ``sigma``."""
    _require_t(BoundKind.ALL_T_ZERO_MEAN, t, n)
    _check_delta(delta)
    if sigma is None:
        raise ConfigError("the all-t bound needs the covariance bound sigma")
    W = np.asarray(Sigma_hat, dtype=float) + all_t_inflation_zero_mean(t, n, delta, sigma) * np.eye(n)
    return UncertaintySet(np.zeros(n), W, 2 * n / delta)


def noisy_lti_radius(t, n, delta):
    """Markov radius on ``k = floor(t/2)`` measurement pairs, valid for ``t > 2n + 3``."""
    _require_t(BoundKind.NOISY_LTI, t, n)
    _check_delta(delta)
    k = t // 2
    return k * n / ((k - n - 1) * delta)


# ------------------------------------------------------------- nonzero mean


def markov_radius_nonzero_mean(t, n, delta):
    """``d = (t+1)(t-1) n / (t (t-n-2) delta)``, valid for ``t > n + 2``."""
    _require_t(BoundKind.MARKOV_NONZERO_MEAN, t, n)
    _check_delta(delta)
    return (t + 1) * (t - 1) * n / (t * (t - n - 2) * delta)


def chebyshev_ev_nonzero_mean(t, n):
    _require_t(BoundKind.CHEBYSHEV_NONZERO_MEAN, t, n)
    E = (t + 1) * (t - 1) * n / (t * (t - n - 2))
    V = 2 * (t + 1) ** 2 * (t - 1) ** 2 * (t - 2) * n / (t * t * (t - n - 2) ** 2 * (t - n - 4))
    return E, V


def chebyshev_radius_nonzero_mean(t, n, delta) -> float:
    _check_delta(delta)
    E, V = chebyshev_ev_nonzero_mean(t, n)
    return float(E) + math.sqrt(float(V) / float(delta))


def loewner_slack_nonzero_mean(t, n, delta, sigma) -> float:
    """Loewner slack ``sigma sqrt(n(n+1)/(delta (t-1)))`` for the 1/(t-1) estimator."""
    return sigma * math.sqrt(n * (n + 1) / (delta * (t - 1)))


def all_t_set_nonzero_mean(mu_hat, Sigma_hat, t: int, n: int, delta: float, sigma: float | None) -> UncertaintySet:
    """Ellipsoid around ``mu_hat`` inflated by a ball for the mean error.

    The risk is split three ways (mean, covariance, draw), hence the factor 3.
    """
    _require_t(BoundKind.ALL_T_NONZERO_MEAN, t, n)
    _check_delta(delta)
    if sigma is None:
        raise ConfigError("the all-t bound needs the covariance bound sigma")
    infl = sigma * math.sqrt(3 * n * (n + 1) / (delta * (t - 1)))
    W = np.asarray(Sigma_hat, dtype=float) + infl * np.eye(n)
    r = math.sqrt(3 * n * sigma / (t * delta))
    return UncertaintySet(np.asarray(mu_hat, dtype=float), W, 3 * n / delta, r)


# ------------------------------------------------------------ non-Gaussian


def gaussian_zeta(sigma: float, n: int) -> float:
    """Fourth-moment constant of a Gaussian with covariance below ``sigma I``."""
    return sigma**2 * n * (n + 2)


def non_gaussian_set_zero_mean(Sigma_hat, t: int, n: int, delta: float, zeta: float | None) -> UncertaintySet:
    _require_t(BoundKind.NON_GAUSSIAN_ZERO_MEAN, t, n)
    _check_delta(delta)
    if zeta is None:
        raise ConfigError("the non-Gaussian bound needs the fourth-moment constant zeta")
    W = np.asarray(Sigma_hat, dtype=float) + math.sqrt(2 * zeta / (t * delta)) * np.eye(n)
    return UncertaintySet(np.zeros(n), W, 2 * n / delta)


def gamma_nonzero_mean(t, zeta, nu, kappa, sigma, n):
    """Variance proxy for the centered sample covariance with unknown mean."""
    if t < 2:
        raise BoundNotValidYet(BoundKind.NON_GAUSSIAN_NONZERO_MEAN.value, t, 2)
    for name, val in (("zeta", zeta), ("nu", nu), ("kappa", kappa), ("sigma", sigma)):
        if val is None:
            raise ConfigError(f"gamma needs the constant {name}")
    num = (t * t - t + 1) * nu**4 + (t * t + 2 * t - 1) * n * sigma * nu**2 + 4 * t * kappa * nu
    return zeta / t + num / (t * (t - 1))


def non_gaussian_set_nonzero_mean(
    Sigma_hat, t: int, n: int, delta: float, zeta, nu, kappa, sigma
) -> UncertaintySet:
    """Set ``w' inv(Sigma_hat + sqrt(gamma/delta) I) w <= 2n/delta``, centered at 0."""
    _require_t(BoundKind.NON_GAUSSIAN_NONZERO_MEAN, t, n)
    _check_delta(delta)
    gamma = gamma_nonzero_mean(t, zeta, nu, kappa, sigma, n)
    W = np.asarray(Sigma_hat, dtype=float) + math.sqrt(gamma / delta) * np.eye(n)
    return UncertaintySet(np.zeros(n), W, 2 * n / delta)


def prior_set(n: int, delta: float, sigma: float | None, nu: float | None = None) -> UncertaintySet:
    """Data-free ball from ``E||w||^2 <= n sigma + nu^2`` and Markov's inequality."""
    _check_delta(delta)
    if sigma is None:
        raise ConfigError("the cold-start bound needs the covariance bound sigma")
    nu = 0.0 if nu is None else nu
    return UncertaintySet(np.zeros(n), np.eye(n), (n * sigma + nu**2) / delta)


# --------------------------------------------------------------- selection


def chebyshev_beats_markov_zero_mean(t, n, delta) -> bool:
    """True when the Chebyshev outer radius is the smaller one."""
    return 2 * (t - 1) / (t - n - 3) < n * (1 - delta) ** 2 / delta


def chebyshev_beats_markov_nonzero_mean(t, n, delta) -> bool:
    return chebyshev_beats_markov_zero_mean(t - 1, n, delta)


def select_bound_zero_mean(t: int, n: int, delta: float, sigma_available: bool) -> BoundKind:
    """Pick the bound used by the zero-mean learning loop."""
    if t <= n + 1:
        if not sigma_available:
            raise ConfigError(f"t = {t} <= n + 1 needs the covariance bound sigma")
        return BoundKind.ALL_T_ZERO_MEAN
    if t <= n + 3:
        return BoundKind.MARKOV_ZERO_MEAN
    if chebyshev_beats_markov_zero_mean(t, n, delta):
        return BoundKind.CHEBYSHEV_ZERO_MEAN
    return BoundKind.MARKOV_ZERO_MEAN


def select_bound_nonzero_mean(t: int, n: int, delta: float, sigma_available: bool) -> BoundKind:
    """Pick the bound used by the unknown-mean learning loop."""
    if t <= n + 2:
        if not sigma_available:
            raise ConfigError(f"t = {t} <= n + 2 needs the covariance bound sigma")
        return BoundKind.ALL_T_NONZERO_MEAN
    if t <= n + 4:
        return BoundKind.MARKOV_NONZERO_MEAN
    if chebyshev_beats_markov_nonzero_mean(t, n, delta):
        return BoundKind.CHEBYSHEV_NONZERO_MEAN
    return BoundKind.MARKOV_NONZERO_MEAN


def markov_vs_allt_test(Sigma_hat, H, t: int, n: int, delta: float, sigma: float) -> np.ndarray:
    """Row-wise check that the Markov tightening is below the all-t one."""
    _require_t(BoundKind.MARKOV_ZERO_MEAN, t, n)
    S = np.asarray(Sigma_hat, dtype=float)
    H = np.atleast_2d(np.asarray(H, dtype=float))
    lhs = (t / (t - n - 1)) * np.einsum("ij,jk,ik->i", H, S, H)
    W = S + all_t_inflation_zero_mean(t, n, delta, sigma) * np.eye(n)
    rhs = 2 * np.einsum("ij,jk,ik->i", H, W, H)
    return lhs < rhs


def build_set(kind: BoundKind, est: MomentEstimate, delta: float, consts: ConfidenceConfig) -> UncertaintySet:
    """Assemble the uncertainty set of ``kind`` from the current estimate."""
    n, t = est.n, est.t
    _require_t(kind, t, n)
    if kind is BoundKind.PRIOR:
        nu = None if est.mode is EstimationMode.ZERO_MEAN else consts.require("nu")
        return prior_set(n, delta, consts.sigma, nu)
    if kind is BoundKind.NOISY_LTI:
        return UncertaintySet(np.zeros(n), est.cov, noisy_lti_radius(t, n, delta))
    S = est.cov
    if kind is BoundKind.MARKOV_ZERO_MEAN:
        return UncertaintySet(np.zeros(n), S, markov_radius_zero_mean(t, n, delta))
    if kind is BoundKind.CHEBYSHEV_ZERO_MEAN:
        return UncertaintySet(np.zeros(n), S, chebyshev_radius_zero_mean(t, n, delta))
    if kind is BoundKind.ALL_T_ZERO_MEAN:
        return all_t_set_zero_mean(S, t, n, delta, consts.require("sigma"))
    if kind is BoundKind.NON_GAUSSIAN_ZERO_MEAN:
        return non_gaussian_set_zero_mean(S, t, n, delta, consts.require("zeta"))
    if kind is BoundKind.NON_GAUSSIAN_NONZERO_MEAN:
        return non_gaussian_set_nonzero_mean(
            S, t, n, delta,
            consts.require("zeta"), consts.require("nu"), consts.require("kappa"), consts.require("sigma"),
        )
    mu = est.mean
    if kind is BoundKind.MARKOV_NONZERO_MEAN:
        return UncertaintySet(mu, S, markov_radius_nonzero_mean(t, n, delta))
    if kind is BoundKind.CHEBYSHEV_NONZERO_MEAN:
        return UncertaintySet(mu, S, chebyshev_radius_nonzero_mean(t, n, delta))
    if kind is BoundKind.ALL_T_NONZERO_MEAN:
        return all_t_set_nonzero_mean(mu, S, t, n, delta, consts.require("sigma"))
    raise ValueError(f"unhandled bound kind {kind}")  # pragma: no cover

