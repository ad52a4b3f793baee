"""Independent Monte Carlo checks of the statistical facts behind the bounds.

Nothing here calls the estimators or the bound formulas of the package:
Wishart matrices come from the Bartlett decomposition and targets are written
out directly, so these checks can falsify the rest of the code.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np


@dataclass(frozen=True)
class CheckResult:
    """One oracle comparison. ``kind`` is ``"relative"`` or ``"coverage"``."""

    check: str
    target: float
    estimate: float
    tolerance: float
    passed: bool
    kind: str = "relative"

    @property
    def relative_error(self) -> float:
        return abs(self.estimate - self.target) / abs(self.target)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["pass"] = d.pop("passed")
        return d


def _relative(check: str, target: float, estimate: float, tol: float) -> CheckResult:
    err = abs(estimate - target) / abs(target)
    return CheckResult(check, float(target), float(estimate), tol, bool(err <= tol))


def _coverage(check: str, level: float, freq: float, slack: float = 0.02) -> CheckResult:
    return CheckResult(check, float(level), float(freq), slack, bool(freq >= level - slack), "coverage")


def wishart_bartlett(rng: np.random.Generator, scale, dof: int, size: int) -> np.ndarray:
    """Draw ``size`` matrices from ``Wishart(scale, dof)`` (sum of ``dof`` outer products)."""
    scale = np.atleast_2d(np.asarray(scale, dtype=float))
    n = scale.shape[0]
    if dof < n:
        raise ValueError("Bartlett sampling needs dof >= n")
    L = np.linalg.cholesky(scale)
    A = np.zeros((size, n, n))
    for i in range(n):
        A[:, i, i] = np.sqrt(rng.chisquare(dof - i, size))
        if i:
            A[:, i, :i] = rng.standard_normal((size, i))
    LA = L @ A
    return LA @ np.swapaxes(LA, 1, 2)


def _safe_inverse(rng, mats, redraw):
    """Invert a batch, redrawing the (probability zero) singular members."""
    while True:
        cond = np.linalg.cond(mats)
        bad = ~np.isfinite(cond) | (cond > 1e14)
        if not np.any(bad):
            return np.linalg.inv(mats)
        mats[bad] = redraw(int(bad.sum()))


def verify_inverse_wishart_mean(n: int, t: int, Sigma=None, trials: int = 100_000, seed: int = 0, tol: float = 0.02) -> CheckResult:
    """Compare the Monte Carlo mean of ``inv(Sigma_hat)`` with ``t/(t-n-1) inv(Sigma)``.

    ``Sigma_hat`` is the zero-mean sample covariance of ``t`` Gaussian draws.
    For ``n > 1`` the estimate reported is the Frobenius-relative error mapped
    onto the scalar factor, so ``|estimate - target| / target`` is that error.
    For ``n = 1`` the scalar mean of ``1/Sigma_hat`` itself is reported.
    """
    if t <= n + 1:
        raise ValueError("the inverse Wishart mean needs t > n + 1")
    Sigma = np.eye(n) if Sigma is None else np.atleast_2d(np.asarray(Sigma, dtype=float))
    rng = np.random.default_rng(seed)
    draw = lambda k: wishart_bartlett(rng, Sigma, t, k) / t  # noqa: E731
    inv = _safe_inverse(rng, draw(trials), draw)
    mean_inv = inv.mean(axis=0)
    factor = t / (t - n - 1)
    target = factor * np.linalg.inv(Sigma)
    err = np.linalg.norm(mean_inv - target) / np.linalg.norm(target)
    if n == 1:
        return CheckResult("inverse_wishart_mean", float(target[0, 0]), float(mean_inv[0, 0]), tol, bool(err <= tol))
    return CheckResult("inverse_wishart_mean", factor, factor * (1 + err), tol, bool(err <= tol))


def verify_quadratic_form_moments(n: int, t: int, trials: int = 100_000, seed: int = 1) -> list[CheckResult]:
    """Moments of ``q = v' inv(S) v`` with ``v ~ N(0, I)`` independent of ``S``.

    Three checks: the mean of ``q`` with ``S`` the normalized sample
    covariance (target ``t n/(t-n-1)``), the second moment with ``S`` an
    unnormalized ``Wishart(I, t)`` (target ``n(n+2)/((t-n-1)(t-n-3))``), and the
    variance of the normalized form implied by those two moments.

    The inner expectation over ``v`` is taken in closed form,
    ``E[q | S] = tr(B)`` and ``E[q^2 | S] = tr(B)^2 + 2 tr(B^2)`` with
    ``B = inv(S)``, which leaves only the Wishart draw to Monte Carlo.
    """
    if t <= n + 3:
        raise ValueError("the second moment needs t > n + 3")
    rng = np.random.default_rng(seed)
    draw = lambda k: wishart_bartlett(rng, np.eye(n), t, k)  # noqa: E731
    B = _safe_inverse(rng, draw(trials), draw)
    tr = np.trace(B, axis1=1, axis2=2)
    tr2 = np.einsum("kij,kji->k", B, B)
    raw_second = float(np.mean(tr * tr + 2 * tr2))
    norm_mean = t * float(np.mean(tr))
    norm_second = t * t * raw_second
    E = t * n / (t - n - 1)
    second = n * (n + 2) / ((t - n - 1) * (t - n - 3))
    V = 2 * t * t * (t - 1) * n / ((t - n - 1) ** 2 * (t - n - 3))
    return [
        _relative("quadratic_form_mean", E, norm_mean, 0.02),
        _relative("quadratic_form_second_moment", second, raw_second, 0.05),
        _relative("quadratic_form_variance", V, norm_second - norm_mean**2, 0.07),
    ]


def _gaussian_batch(rng, means, covs, trials):
    """``trials`` independent sequences ``w_i ~ N(means[i], covs[i])``."""
    t, n = means.shape
    L = np.linalg.cholesky(covs)
    z = rng.standard_normal((trials, t, n))
    return means[None] + np.einsum("tij,ktj->kti", L, z)


def _centered_cov(w):
    t = w.shape[1]
    mu = w.mean(axis=1)
    d = w - mu[:, None, :]
    return mu, np.einsum("kti,ktj->kij", d, d) / (t - 1)


def verify_matrix_concentration(
    n: int,
    t: int,
    delta: float,
    trials: int = 20_000,
    seed: int = 2,
    sigma: float = 1.0,
) -> list[CheckResult]:
    """Coverage of the Loewner covariance event and of the i.i.d. trace event.

    Data are i.i.d. ``N(0, sigma I)``. The Loewner event is
    ``Sigma <= Sigma_hat + sigma sqrt(n(n+1)/(delta t)) I`` with the zero-mean
    estimator. The trace event is ``|tr(Sigma_hat - Sigma)| <= 2n(n r2 + 2 nu r1)/delta``
    for the centered estimator at ``r1 = r2 = 0``, i.e. identically
    distributed samples.
    """
    rng = np.random.default_rng(seed)
    Sigma = sigma * np.eye(n)
    W = wishart_bartlett(rng, Sigma, t, trials) / t
    slack = sigma * math.sqrt(n * (n + 1) / (delta * t))
    gap = np.linalg.eigvalsh(W + slack * np.eye(n) - Sigma)[:, 0]
    loewner = float(np.mean(gap >= 0.0))

    w = _gaussian_batch(rng, np.zeros((t, n)), np.broadcast_to(Sigma, (t, n, n)), trials)
    _, S = _centered_cov(w)
    trace_dev = np.abs(np.trace(S, axis1=1, axis2=2) - np.trace(Sigma))
    trace_cov = float(np.mean(trace_dev <= 0.0))
    return [
        _coverage("loewner_covariance_all_t", 1 - delta, loewner),
        _coverage("varying_trace_iid", 1 - delta, trace_cov),
    ]


def verify_mean_concentration(n: int, t: int, delta: float, trials: int = 20_000, seed: int = 3, sigma: float = 1.0) -> CheckResult:
    """Coverage of ``||mu - mu_hat||^2 <= n sigma/(t delta)`` for Gaussian data."""
    rng = np.random.default_rng(seed)
    mu = np.linspace(-1.0, 1.0, n)
    err = rng.standard_normal((trials, n)) * math.sqrt(sigma / t)
    mu_hat = mu + err
    freq = float(np.mean(np.sum((mu_hat - mu) ** 2, axis=1) <= n * sigma / (t * delta)))
    return _coverage("mean_concentration", 1 - delta, freq)


@dataclass(frozen=True)
class VaryingField:
    """Per-sample Gaussian parameters near a reference ``(mean, cov)``.

    ``rho1``/``rho2`` are the declared deviations, ``nu`` bounds every
    ``||means[i]||`` and ``sigma`` bounds every ``covs[i]`` in Loewner order.
    """

    means: np.ndarray
    covs: np.ndarray
    ref_mean: np.ndarray
    ref_cov: np.ndarray
    rho1: float
    rho2: float
    nu: float
    sigma: float

    @property
    def t(self) -> int:
        return self.means.shape[0]

    @property
    def n(self) -> int:
        return self.means.shape[1]

    def violations(self) -> list[str]:
        """Declared constants that the per-sample parameters break."""
        out = []
        if np.max(np.linalg.norm(self.means - self.ref_mean, axis=1)) > self.rho1 + 1e-12:
            out.append("rho1")
        if np.max(np.linalg.norm(self.covs - self.ref_cov, axis=(1, 2))) > self.rho2 + 1e-12:
            out.append("rho2")
        if np.max(np.linalg.norm(self.means, axis=1)) > self.nu + 1e-12:
            out.append("nu")
        if np.max(np.linalg.eigvalsh(self.covs)) > self.sigma + 1e-12:
            out.append("sigma")
        return out

    def permuted(self, order) -> "VaryingField":
        order = np.asarray(order)
        return VaryingField(self.means[order], self.covs[order], self.ref_mean, self.ref_cov,
                            self.rho1, self.rho2, self.nu, self.sigma)


def identical_field(n: int, t: int, sigma: float = 1.0, nu: float = 1.0) -> VaryingField:
    """All samples share ``N(0, sigma I)``; declared deviations are zero."""
    means = np.zeros((t, n))
    covs = np.broadcast_to(sigma * np.eye(n), (t, n, n)).copy()
    return VaryingField(means, covs, np.zeros(n), sigma * np.eye(n), 0.0, 0.0, nu, sigma)


def two_level_field(n: int, t: int, gap: float, sigma: float = 1.0) -> VaryingField:
    """Means alternate between ``+gap e1`` and ``-gap e1`` around a zero reference."""
    means = np.zeros((t, n))
    means[0::2, 0] = gap
    means[1::2, 0] = -gap
    covs = np.broadcast_to(sigma * np.eye(n), (t, n, n)).copy()
    return VaryingField(means, covs, np.zeros(n), sigma * np.eye(n), gap, 0.0, gap, sigma)


def verify_varying_distribution_bounds(field: VaryingField, delta: float, trials: int = 20_000, seed: int = 4, label: str = "") -> list[CheckResult]:
    """Coverage of the mean, Loewner and trace events for non-identical samples."""
    rng = np.random.default_rng(seed)
    w = _gaussian_batch(rng, field.means, field.covs, trials)
    mu_hat, S = _centered_cov(w)
    n, t = field.n, field.t
    r1, r2, nu, sigma = field.rho1, field.rho2, field.nu, field.sigma
    mean_ok = np.sum((mu_hat - field.ref_mean) ** 2, axis=1) <= r1**2 / delta + sigma * n / (t * t * delta)
    c = (n * r2 + 2 * nu * r1) / delta
    loew_ok = np.linalg.eigvalsh(field.ref_cov + c * np.eye(n) - S)[:, 0] >= 0.0
    trace_ok = np.abs(np.trace(S - field.ref_cov, axis1=1, axis2=2)) <= 2 * n * c
    suffix = f"[{label}]" if label else ""
    return [
        _coverage("varying_mean" + suffix, 1 - delta, float(np.mean(mean_ok))),
        _coverage("varying_loewner" + suffix, 1 - delta, float(np.mean(loew_ok))),
        _coverage("varying_trace" + suffix, 1 - delta, float(np.mean(trace_ok))),
    ]


SUITES = ("wishart", "moments", "concentration", "varying")


def run_suite(name: str) -> list[CheckResult]:
    """Fixed-seed oracle runs used by the ``verify`` command."""
    if name == "wishart":
        return [
            verify_inverse_wishart_mean(3, 10, trials=100_000),
            verify_inverse_wishart_mean(1, 10, Sigma=[[2.0]], trials=100_000),
        ]
    if name == "moments":
        return verify_quadratic_form_moments(3, 10, trials=100_000)
    if name == "concentration":
        return verify_matrix_concentration(3, 20, 0.3) + [verify_mean_concentration(3, 10, 0.3)]
    if name == "varying":
        return verify_varying_distribution_bounds(identical_field(3, 20), 0.3, label="identical") + \
            verify_varying_distribution_bounds(two_level_field(3, 20, 0.5), 0.3, label="two-level")
    if name == "all":
        return [r for s in SUITES for r in run_suite(s)]
    raise KeyError(name)
