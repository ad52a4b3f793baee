"""Deterministic reformulation of robust half-plane constraints.

For a row ``a'w`` the support function of the uncertainty set is
``a'c + sqrt(d) ||W^(1/2) a|| + r ||a||``, so requiring the nominal successor
to sit ``e = sqrt(d) ||W^(1/2) a|| + r ||a||`` inside the half-plane is exact.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import SafetySpec, UncertaintySet, clamp_psd


def sqrt_psd(W) -> np.ndarray:
    """Symmetric square root of a PSD matrix (eigenvalues clamped at zero)."""
    W = clamp_psd(W)
    vals, vecs = np.linalg.eigh(W)
    S = (vecs * np.sqrt(np.clip(vals, 0.0, None))) @ vecs.T
    return 0.5 * (S + S.T)


@dataclass(frozen=True)
class TightenedConstraints:
    """Linear constraints ``A u <= b`` on the control, with margins ``e``."""

    A: np.ndarray
    b: np.ndarray
    e: np.ndarray


def tightening_vector(uset: UncertaintySet, H) -> np.ndarray:
    H = np.atleast_2d(np.asarray(H, dtype=float))
    quad = np.einsum("ij,jk,ik->i", H, uset.shape, H)
    e = np.sqrt(uset.radius) * np.sqrt(np.clip(quad, 0.0, None))
    if uset.ball > 0.0:
        e = e + uset.ball * np.linalg.norm(H, axis=1)
    return e


def tighten(uset: UncertaintySet, spec: SafetySpec, model_eval) -> TightenedConstraints:
    """Turn ``H (f + g u + w) <= h`` for all ``w`` in ``uset`` into ``A u <= b``.

    ``model_eval`` is the pair ``(f(x), g(x))`` evaluated at the current state.
    """
    fx, gx = model_eval
    fx = np.asarray(fx, dtype=float)
    gx = np.atleast_2d(np.asarray(gx, dtype=float))
    e = tightening_vector(uset, spec.H)
    A = spec.H @ gx
    b = spec.h - spec.H @ fx - spec.H @ uset.center - e
    return TightenedConstraints(A, b, e)


def worst_case_points(uset: UncertaintySet, H) -> np.ndarray:
    """Analytic maximizer of ``a'w`` over the set, one row per constraint row."""
    H = np.atleast_2d(np.asarray(H, dtype=float))
    S = sqrt_psd(uset.shape)
    pts = np.tile(uset.center, (H.shape[0], 1))
    for i, a in enumerate(H):
        Sa = S @ a
        nrm = np.linalg.norm(Sa)
        if nrm > 0.0:
            pts[i] += np.sqrt(uset.radius) * (S @ Sa) / nrm
        an = np.linalg.norm(a)
        if uset.ball > 0.0 and an > 0.0:
            pts[i] += uset.ball * a / an
    return pts


def robust_membership_check(
    uset: UncertaintySet,
    spec: SafetySpec,
    model_eval,
    u,
    sample_count: int = 256,
    rng: np.random.Generator | None = None,
) -> np.ndarray:
    """Per-row minimum of ``h - H(f + g u + w)`` over sampled boundary points.

    The sample always contains the analytic worst case of every row, so the
    result is exact up to rounding; the random points only add coverage.
    """
    if sample_count < 1:
        raise ValueError("sample_count must be at least 1")
    rng = np.random.default_rng(0) if rng is None else rng
    fx, gx = model_eval
    n = uset.n
    S = sqrt_psd(uset.shape)
    v = rng.standard_normal((sample_count, n))
    v /= np.linalg.norm(v, axis=1, keepdims=True)
    b = rng.standard_normal((sample_count, n))
    b /= np.linalg.norm(b, axis=1, keepdims=True)
    random_pts = uset.center + np.sqrt(uset.radius) * v @ S + uset.ball * b
    pts = np.vstack([worst_case_points(uset, spec.H), random_pts])
    nominal = np.asarray(fx, dtype=float) + np.atleast_2d(gx) @ np.asarray(u, dtype=float)
    margins = spec.h[None, :] - (nominal[None, :] + pts) @ spec.H.T
    return margins.min(axis=0)


def compare_tightening(first: UncertaintySet, second: UncertaintySet, H) -> np.ndarray:
    """Row-wise flag that ``first`` tightens strictly less than ``second``."""
    return tightening_vector(first, H) < tightening_vector(second, H)
