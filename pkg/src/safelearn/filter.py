"""Safety filter: pick a confidence region, tighten, project the nominal input.

If the tightened problem is infeasible at the requested risk level, the filter
searches for the smallest larger risk level that is feasible by bisection.
Feasibility is monotone in ``delta`` because every radius shrinks as
``delta`` grows.
"""

from __future__ import annotations

import enum
import logging
from dataclasses import dataclass

import numpy as np

from .bounds import (
    BoundKind,
    build_set,
    select_bound_nonzero_mean,
    select_bound_zero_mean,
)
from .errors import BoundNotValidYet, ConfigError, ContractViolation
from .estimation import EstimationMode, MomentEstimate
from .model import ConfidenceConfig, ControlAffineModel, SafeControlOutcome, SafetySpec, Status
from .qp import solve_qp
from .tightening import tighten

log = logging.getLogger(__name__)

DELTA_CEILING = 1.0 - 1e-6


class FilterMode(str, enum.Enum):
    ZERO_MEAN = "ZeroMean"
    NONZERO_MEAN = "NonZeroMean"
    NOISY_LTI = "NoisyLTI"
    NON_GAUSSIAN_ZERO_MEAN = "NonGaussianZeroMean"
    NON_GAUSSIAN_NONZERO_MEAN = "NonGaussianNonZeroMean"

    @property
    def estimation_mode(self) -> EstimationMode:
        if self in (FilterMode.ZERO_MEAN, FilterMode.NON_GAUSSIAN_ZERO_MEAN):
            return EstimationMode.ZERO_MEAN
        if self is FilterMode.NOISY_LTI:
            return EstimationMode.NOISY_LTI
        return EstimationMode.NONZERO_MEAN


@dataclass(frozen=True)
class FilterConfig:
    """Filter settings.

    ``fixed_bound`` forces one bound kind instead of the automatic selection;
    below its minimum sample count the data-free prior set is used.
    """

    delta: float
    mode: FilterMode = FilterMode.ZERO_MEAN
    distance: str = "EuclideanSquared"
    bisection_tol: float = 1e-3
    bisection_max_iters: int = 40
    fixed_bound: BoundKind | None = None

    def __post_init__(self):
        object.__setattr__(self, "mode", FilterMode(self.mode))
        if self.fixed_bound is not None:
            object.__setattr__(self, "fixed_bound", BoundKind(self.fixed_bound))
        if not 0.0 < self.delta < 1.0:
            raise ConfigError(f"delta must lie in (0, 1), got {self.delta}")
        if not self.bisection_tol > 0:
            raise ConfigError("bisection_tol must be positive")
        if self.distance != "EuclideanSquared":
            raise ConfigError(f"unsupported distance {self.distance!r}")


def _prior_or_raise(kind: BoundKind, est: MomentEstimate, consts: ConfidenceConfig) -> BoundKind:
    needs_nu = est.mode is not EstimationMode.ZERO_MEAN
    if est.mode is EstimationMode.NOISY_LTI or consts.sigma is None or (needs_nu and consts.nu is None):
        raise BoundNotValidYet(kind.value, est.t, kind.min_samples(est.n))
    return BoundKind.PRIOR


def choose_bound(cfg: FilterConfig, est: MomentEstimate, delta: float, consts: ConfidenceConfig) -> BoundKind:
    """Bound kind used for the current sample count and risk level."""
    n, t = est.n, est.t
    sigma_ok = consts.sigma is not None
    if cfg.fixed_bound is not None:
        kind = cfg.fixed_bound
    elif cfg.mode is FilterMode.ZERO_MEAN:
        if t == 0:
            kind = BoundKind.ALL_T_ZERO_MEAN
        else:
            kind = select_bound_zero_mean(t, n, delta, sigma_ok)
    elif cfg.mode is FilterMode.NONZERO_MEAN:
        if t < 2:
            kind = BoundKind.ALL_T_NONZERO_MEAN
        else:
            kind = select_bound_nonzero_mean(t, n, delta, sigma_ok)
    elif cfg.mode is FilterMode.NOISY_LTI:
        kind = BoundKind.NOISY_LTI
    elif cfg.mode is FilterMode.NON_GAUSSIAN_ZERO_MEAN:
        kind = BoundKind.NON_GAUSSIAN_ZERO_MEAN
    else:
        kind = BoundKind.NON_GAUSSIAN_NONZERO_MEAN
    if t < kind.min_samples(n):
        kind = _prior_or_raise(kind, est, consts)
    return kind


def filter_control(
    model: ControlAffineModel,
    x,
    ubar,
    spec_next: SafetySpec | None,
    est: MomentEstimate,
    cfg: FilterConfig,
    consts: ConfidenceConfig,
) -> SafeControlOutcome:
    """Return the input closest to ``ubar`` whose successor is safe w.p. >= 1 - delta."""
    if est.mode is not cfg.mode.estimation_mode:
        raise ContractViolation(
            f"estimate mode {est.mode.value} does not match filter mode {cfg.mode.value}"
        )
    ubar = np.asarray(ubar, dtype=float)
    if spec_next is None:
        return SafeControlOutcome(ubar.copy(), Status.FEASIBLE, cfg.delta, np.zeros(0), None, ubar.copy())
    fx, gx = model.f(x), model.g(x)

    def attempt(delta):
        kind = choose_bound(cfg, est, delta, consts)
        uset = build_set(kind, est, delta, consts)
        tc = tighten(uset, spec_next, (fx, gx))
        return kind, tc, solve_qp(tc.A, tc.b, ubar)

    def outcome(status, delta, kind, tc, u):
        slack = tc.A @ u - tc.b
        active = tuple(int(i) for i in np.flatnonzero(slack >= -1e-7))
        return SafeControlOutcome(u, status, delta, tc.e, kind, ubar.copy(), active)

    kind, tc, res = attempt(cfg.delta)
    if res.feasible:
        return outcome(Status.FEASIBLE, cfg.delta, kind, tc, res.u)

    hi_kind, hi_tc, hi_res = attempt(DELTA_CEILING)
    if not hi_res.feasible:
        log.info("tightened problem infeasible for every delta < 1 (t=%d)", est.t)
        return SafeControlOutcome(ubar.copy(), Status.INFEASIBLE, 1.0, tc.e, kind, ubar.copy(), ())

    lo, hi = cfg.delta, DELTA_CEILING
    for _ in range(cfg.bisection_max_iters):
        if hi - lo <= cfg.bisection_tol:
            break
        mid = 0.5 * (lo + hi)
        m_kind, m_tc, m_res = attempt(mid)
        if m_res.feasible:
            hi, hi_kind, hi_tc, hi_res = mid, m_kind, m_tc, m_res
        else:
            lo = mid
    return outcome(Status.RELAXED, hi, hi_kind, hi_tc, hi_res.u)
