"""System, constraint and result types shared by the rest of the package.

The dynamics are control affine, ``x+ = f(x) + g(x) u + w``, and safety is a
set of half-planes ``H x <= h`` imposed on the next state.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Any, Callable

import numpy as np

from .errors import ConfigError, ContractViolation

PSD_TOL = 1e-10


def _as_vector(v, size: int | None, name: str) -> np.ndarray:
    arr = np.asarray(v, dtype=float)
    if arr.ndim == 0:
        arr = arr.reshape(1)
    if arr.ndim != 1:
        raise ContractViolation(f"{name} must be a vector, got shape {arr.shape}")
    if size is not None and arr.shape[0] != size:
        raise ContractViolation(f"{name} must have length {size}, got {arr.shape[0]}")
    return arr


ROUNDING_FLOOR = 64 * np.finfo(float).eps


def clamp_psd(W, tol: float = PSD_TOL) -> np.ndarray:
    """Symmetrize ``W`` and clamp tiny negative eigenvalues to zero.

    Raises ContractViolation when ``W`` is asymmetric beyond ``tol`` (relative,
    Frobenius) or has an eigenvalue below ``-tol * ||W||_F``.
    """
    W = np.atleast_2d(np.asarray(W, dtype=float))
    if W.ndim != 2 or W.shape[0] != W.shape[1]:
        raise ContractViolation(f"expected a square matrix, got shape {W.shape}")
    scale = float(np.linalg.norm(W))
    if scale == 0.0:
        return np.zeros_like(W)
    if np.linalg.norm(W - W.T) > tol * scale:
        raise ContractViolation("matrix is not symmetric within tolerance")
    W = 0.5 * (W + W.T)
    vals, vecs = np.linalg.eigh(W)
    if vals[0] < -tol * scale:
        raise ContractViolation(f"matrix is not PSD (min eigenvalue {vals[0]:.3e})")
    # Negative eigenvalues at rounding level are left alone (square roots
    # clip them), which keeps construction idempotent.
    if vals[0] < -ROUNDING_FLOOR * W.shape[0] * scale:
        vals = np.clip(vals, 0.0, None)
        W = (vecs * vals) @ vecs.T
        W = 0.5 * (W + W.T)
    return W


@dataclass(frozen=True)
class ControlAffineModel:
    """Evaluators for the drift ``f`` and input gain ``g``."""

    state_dim: int
    control_dim: int
    drift: Callable[[np.ndarray], Any]
    input_gain: Callable[[np.ndarray], Any]

    def __post_init__(self):
        if self.state_dim < 1 or self.control_dim < 1:
            raise ContractViolation("state_dim and control_dim must be positive")

    def f(self, x) -> np.ndarray:
        x = _as_vector(x, self.state_dim, "x")
        return _as_vector(self.drift(x), self.state_dim, "f(x)")

    def g(self, x) -> np.ndarray:
        x = _as_vector(x, self.state_dim, "x")
        G = np.asarray(self.input_gain(x), dtype=float)
        if G.shape != (self.state_dim, self.control_dim):
            raise ContractViolation(
                f"g(x) must be {self.state_dim}x{self.control_dim}, got {G.shape}"
            )
        return G


def predict_nominal(model: ControlAffineModel, x, u) -> np.ndarray:
    """Return the noise-free successor ``f(x) + g(x) u``."""
    u = _as_vector(u, model.control_dim, "u")
    return model.f(x) + model.g(x) @ u


@dataclass(frozen=True)
class SafetySpec:
    """Half-plane constraints ``H x <= h`` for one time step."""

    H: np.ndarray
    h: np.ndarray

    def __post_init__(self):
        H = np.atleast_2d(np.asarray(self.H, dtype=float))
        h = _as_vector(self.h, None, "h")
        if H.ndim != 2 or H.shape[0] < 1:
            raise ContractViolation("SafetySpec needs at least one row")
        if H.shape[0] != h.shape[0]:
            raise ContractViolation("H and h disagree on the number of rows")
        if np.any(np.linalg.norm(H, axis=1) == 0.0):
            raise ContractViolation("SafetySpec rows must be nonzero")
        H.setflags(write=False)
        h.setflags(write=False)
        object.__setattr__(self, "H", H)
        object.__setattr__(self, "h", h)

    @property
    def p(self) -> int:
        return self.H.shape[0]

    @property
    def n(self) -> int:
        return self.H.shape[1]


@dataclass(frozen=True)
class UncertaintySet:
    """The set ``{c + W^(1/2) v + b : ||v||^2 <= d, ||b|| <= r}``.

    With ``r = 0`` it is an ellipsoid; with ``r > 0`` it is that ellipsoid
    inflated by a Euclidean ball (a Minkowski sum).
    """

    center: np.ndarray
    shape: np.ndarray
    radius: float
    ball: float = 0.0

    def __post_init__(self):
        W = clamp_psd(self.shape)
        c = _as_vector(self.center, W.shape[0], "center")
        if not np.isfinite(self.radius) or self.radius < 0:
            raise ContractViolation(f"radius must be nonnegative, got {self.radius}")
        if not np.isfinite(self.ball) or self.ball < 0:
            raise ContractViolation(f"ball inflation must be nonnegative, got {self.ball}")
        W.setflags(write=False)
        c.setflags(write=False)
        object.__setattr__(self, "shape", W)
        object.__setattr__(self, "center", c)
        object.__setattr__(self, "radius", float(self.radius))
        object.__setattr__(self, "ball", float(self.ball))

    @property
    def n(self) -> int:
        return self.center.shape[0]


class Status(str, enum.Enum):
    FEASIBLE = "Feasible"
    RELAXED = "FeasibleAtRelaxedDelta"
    INFEASIBLE = "InfeasibleAtDelta"


@dataclass(frozen=True)
class SafeControlOutcome:
    """Result of one safety-filter call."""

    u: np.ndarray
    status: Status
    achieved_delta: float
    e: np.ndarray
    bound_used: Any
    nominal: np.ndarray = field(default=None)
    active: tuple = ()


@dataclass(frozen=True)
class ConfidenceConfig:
    """Risk level and the a-priori constants the bounds may need.

    ``sigma`` bounds the covariance (``Sigma <= sigma I``), ``zeta`` the fourth
    moment ``E||w||^4``, ``nu`` the mean norm and ``kappa`` the third-moment
    vector ``||E[(w'w) w]||``.
    """

    delta: float
    sigma: float | None = None
    zeta: float | None = None
    nu: float | None = None
    kappa: float | None = None

    def __post_init__(self):
        if not 0.0 < self.delta < 1.0:
            raise ConfigError(f"delta must lie in (0, 1), got {self.delta}")
        for name in ("sigma", "zeta", "nu", "kappa"):
            val = getattr(self, name)
            if val is not None and not val > 0:
                raise ConfigError(f"{name} must be positive when given, got {val}")

    def require(self, name: str) -> float:
        val = getattr(self, name)
        if val is None:
            raise ConfigError(f"constant '{name}' is required by this bound but was not provided")
        return float(val)
