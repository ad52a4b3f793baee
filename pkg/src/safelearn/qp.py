"""Dense dual active-set solver for ``min ||u - ubar||^2  s.t.  A u <= b``.

The method starts from the unconstrained minimizer ``ubar`` and adds the most
violated constraint at each outer iteration (Goldfarb-Idnani with identity
Hessian). Active normals stay linearly independent, so every linear solve is
well posed. When a violated row is a nonpositive combination of the active
ones, no point satisfies all rows and the combination is a Farkas certificate.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .errors import SolverError

log = logging.getLogger(__name__)

FEAS_TOL = 1e-10
DEPENDENCE_TOL = 1e-9


@dataclass(frozen=True)
class QPResult:
    """Solution ``u`` with multipliers for ``0.5 ||u - ubar||^2`` and the original rows.

    ``certificate`` is set only when infeasible: ``lam >= 0``, ``lam' A = 0``
    and ``lam' b < 0``.
    """

    u: np.ndarray
    feasible: bool
    multipliers: np.ndarray
    certificate: np.ndarray | None
    iterations: int

    def __iter__(self):
        # Allows ``u, ok = solve_qp(...)``.
        yield self.u
        yield self.feasible


def _normalize(A: np.ndarray, b: np.ndarray):
    norms = np.linalg.norm(A, axis=1)
    scale = np.where(norms > 0.0, norms, 1.0)
    return A / scale[:, None], b / scale, norms, scale


def solve_qp(A, b, ubar, max_iter: int | None = None) -> QPResult:
    """Project ``ubar`` onto the polyhedron ``{u : A u <= b}``."""
    ubar = np.atleast_1d(np.asarray(ubar, dtype=float))
    m = ubar.shape[0]
    A = np.asarray(A, dtype=float).reshape(-1, m)
    b = np.atleast_1d(np.asarray(b, dtype=float))
    p = A.shape[0]
    if b.shape != (p,):
        raise ValueError(f"b must have {p} entries, got {b.shape}")
    if p == 0:
        return QPResult(ubar.copy(), True, np.zeros(0), None, 0)

    An, bn, norms, scale = _normalize(A, b)
    tol = FEAS_TOL * (1.0 + np.abs(bn))
    max_iter = max_iter or 10 * (p + m) + 50

    x = ubar.copy()
    active: list[int] = []
    lam = np.zeros(0)
    iters = 0

    while True:
        viol = An @ x - bn
        viol[active] = -np.inf
        k = int(np.argmax(viol))
        if viol[k] <= tol[k]:
            break
        lam_k = 0.0
        while True:
            iters += 1
            if iters > max_iter:
                raise SolverError(
                    "active-set iteration limit reached",
                    {"iterations": iters, "active": list(active), "violation": float(viol[k])},
                )
            a = An[k]
            if active:
                N = An[active].T
                r, *_ = np.linalg.lstsq(N, a, rcond=None)
                z = a - N @ r
            else:
                r = np.zeros(0)
                z = a
            zz = float(z @ z)
            pos = r > 1e-14
            t1 = np.inf
            j1 = -1
            if np.any(pos):
                ratios = np.full(r.shape, np.inf)
                ratios[pos] = lam[pos] / r[pos]
                j1 = int(np.argmin(ratios))
                t1 = float(ratios[j1])
            # Rows are unit length; a residual at rounding level relative to
            # the combination weights means the row is in the active span.
            if zz <= (DEPENDENCE_TOL * (1.0 + float(np.abs(r).sum()))) ** 2:
                if j1 < 0:
                    cert_n = np.zeros(p)
                    cert_n[k] = 1.0
                    for idx, rj in zip(active, r):
                        cert_n[idx] = max(-rj, 0.0)
                    cert = cert_n / scale
                    cert = cert / max(cert.max(), 1e-300)
                    log.debug("infeasible polyhedron, certificate %s", cert)
                    return QPResult(ubar.copy(), False, np.zeros(p), cert, iters)
                step, full = t1, False
            else:
                t2 = float(An[k] @ x - bn[k]) / zz
                full = t2 <= t1
                step = t2 if full else t1
            x = x - step * z
            lam = lam - step * r
            lam_k += step
            if full:
                active.append(k)
                lam = np.append(lam, lam_k)
                break
            active.pop(j1)
            lam = np.delete(lam, j1)

    mult = np.zeros(p)
    mult[active] = np.clip(lam, 0.0, None) / scale[active]
    return QPResult(x, True, mult, None, iters)
