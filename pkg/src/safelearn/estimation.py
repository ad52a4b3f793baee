"""Online estimators of the process-noise mean and covariance.

Only accumulators are kept: a sample count, the mean and the packed upper
triangle of a symmetric matrix, i.e. ``n^2/2 + 3n/2 + 1`` scalars.
"""

from __future__ import annotations

import copy
import enum

import numpy as np

from .errors import ContractViolation, NotEnoughSamples
from .model import ControlAffineModel, _as_vector, clamp_psd, predict_nominal


class EstimationMode(str, enum.Enum):
    ZERO_MEAN = "ZeroMean"
    NONZERO_MEAN = "NonZeroMean"
    NOISY_LTI = "NoisyLTI"


def pack_upper(S: np.ndarray) -> np.ndarray:
    """Upper triangle of ``S`` (row-major), length n(n+1)/2."""
    return S[np.triu_indices(S.shape[0])].copy()


def unpack_upper(packed: np.ndarray, n: int) -> np.ndarray:
    S = np.zeros((n, n))
    iu = np.triu_indices(n)
    S[iu] = packed
    S.T[iu] = packed
    return S


class MomentEstimate:
    """Running sample statistics for one noise source.

    ``t`` counts residuals in the ZeroMean and NonZeroMean modes and raw time
    steps in the NoisyLTI mode (two per measurement pair).

    The packed matrix holds the covariance itself in ZeroMean and NoisyLTI
    modes and the centered scatter ``sum (w - mu)(w - mu)'`` in NonZeroMean
    mode, which is what Welford's recursion updates stably.
    """

    def __init__(self, n: int, mode: EstimationMode | str = EstimationMode.ZERO_MEAN):
        if n < 1:
            raise ContractViolation("dimension must be positive")
        self.n = int(n)
        self.mode = EstimationMode(mode)
        self.t = 0
        self._mean = np.zeros(self.n)
        self._packed = np.zeros(self.n * (self.n + 1) // 2)

    @classmethod
    def from_moments(cls, mode, t: int, mean, cov) -> "MomentEstimate":
        """Build an estimate with prescribed count and moments."""
        mean = np.asarray(mean, dtype=float)
        est = cls(mean.shape[0], mode)
        est.t = int(t)
        cov = clamp_psd(cov)
        if est.mode is EstimationMode.NONZERO_MEAN:
            est._mean = mean.copy()
            est._packed = pack_upper(cov * max(est.t - 1, 0))
        else:
            est._packed = pack_upper(cov)
        return est

    def copy(self) -> "MomentEstimate":
        return copy.deepcopy(self)

    @property
    def pairs(self) -> int:
        return self.t // 2

    @property
    def storage_size(self) -> int:
        """Number of stored scalars: count, mean and packed matrix."""
        return 1 + self._mean.size + self._packed.size

    @property
    def mean(self) -> np.ndarray:
        if self.mode is EstimationMode.NONZERO_MEAN and self.t < 1:
            raise NotEnoughSamples("mean needs at least one sample")
        return self._mean.copy()

    @property
    def cov(self) -> np.ndarray:
        if self.mode is EstimationMode.NONZERO_MEAN:
            if self.t < 2:
                raise NotEnoughSamples(f"covariance needs t >= 2, have t = {self.t}")
            S = unpack_upper(self._packed, self.n) / (self.t - 1)
        elif self.mode is EstimationMode.NOISY_LTI:
            if self.pairs < 1:
                raise NotEnoughSamples("covariance needs at least one measurement pair")
            S = unpack_upper(self._packed, self.n)
        else:
            if self.t < 1:
                raise NotEnoughSamples("covariance needs at least one sample")
            S = unpack_upper(self._packed, self.n)
        return clamp_psd(S)

    def __repr__(self) -> str:
        return f"MomentEstimate(n={self.n}, mode={self.mode.value}, t={self.t})"


def _check_mode(est: MomentEstimate, mode: EstimationMode) -> None:
    if est.mode is not mode:
        raise ContractViolation(f"estimate is in {est.mode.value} mode, expected {mode.value}")


def residual(model: ControlAffineModel, x_next, x, u) -> np.ndarray:
    """Recover the disturbance ``x_next - f(x) - g(x) u``."""
    x_next = _as_vector(x_next, model.state_dim, "x_next")
    return x_next - predict_nominal(model, x, u)


def update_zero_mean(est: MomentEstimate, w) -> MomentEstimate:
    """Add one residual to a zero-mean estimate, ``Sigma = (1/t) sum w w'``."""
    _check_mode(est, EstimationMode.ZERO_MEAN)
    w = _as_vector(w, est.n, "w")
    est.t += 1
    iu = np.triu_indices(est.n)
    outer = np.outer(w, w)[iu]
    est._packed += (outer - est._packed) / est.t
    return est


def update_nonzero_mean(est: MomentEstimate, w) -> MomentEstimate:
    """Welford update of mean and centered scatter (batch ``1/(t-1)`` covariance)."""
    _check_mode(est, EstimationMode.NONZERO_MEAN)
    w = _as_vector(w, est.n, "w")
    est.t += 1
    d = w - est._mean
    est._mean += d / est.t
    iu = np.triu_indices(est.n)
    est._packed += np.outer(d, w - est._mean)[iu]
    return est


def update_noisy_lti(est: MomentEstimate, A, B, y_pair, u_even, step: int | None = None) -> MomentEstimate:
    """Consume one measurement pair ``(y_2k, y_2k+1)`` of a noisy LTI system.

    The covariance is the average of ``r r'`` over pairs, where
    ``r = y_2k+1 - A y_2k - B u_2k``. Its expectation is
    ``Sigma_w + Sigma_v + A Sigma_v A'``. When ``step`` is given it must equal
    the raw index ``2k`` of the even measurement; anything else is rejected as
    an out-of-order pair.
    """
    _check_mode(est, EstimationMode.NOISY_LTI)
    A = np.atleast_2d(np.asarray(A, dtype=float))
    B = np.atleast_2d(np.asarray(B, dtype=float))
    if A.shape != (est.n, est.n) or B.shape[0] != est.n:
        raise ContractViolation("A must be n x n and B must have n rows")
    if len(y_pair) != 2:
        raise ContractViolation("y_pair must hold exactly two measurements")
    if step is not None and step != est.t:
        raise ContractViolation(f"out-of-order pair: expected even step {est.t}, got {step}")
    y0 = _as_vector(y_pair[0], est.n, "y_2k")
    y1 = _as_vector(y_pair[1], est.n, "y_2k+1")
    u = _as_vector(u_even, B.shape[1], "u_2k")
    r = y1 - A @ y0 - B @ u
    est.t += 2
    k = est.pairs
    iu = np.triu_indices(est.n)
    est._packed += (np.outer(r, r)[iu] - est._packed) / k
    return est
