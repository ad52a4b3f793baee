"""Independent reference implementations used as test oracles."""

import itertools
import math

import numpy as np
from scipy.optimize import minimize

from safelearn.model import ControlAffineModel


def brute_force_projection(A, b, ubar, tol=1e-9):
    """Minimize ``||u - ubar||`` over ``A u <= b`` by enumerating active sets."""
    p, m = A.shape
    best, best_val = None, np.inf
    for k in range(0, min(p, m) + 1):
        for S in itertools.combinations(range(p), k):
            if k == 0:
                u = ubar.copy()
            else:
                As, bs = A[list(S)], b[list(S)]
                if np.linalg.matrix_rank(As) < k:
                    continue
                # Projection of ubar onto the affine set As u = bs.
                u = ubar - As.T @ np.linalg.solve(As @ As.T, As @ ubar - bs)
            if np.all(A @ u <= b + tol):
                val = float(np.sum((u - ubar) ** 2))
                if val < best_val:
                    best, best_val = u, val
    return best


def random_feasible_qp(rng, m, p):
    A = rng.standard_normal((p, m))
    interior = rng.standard_normal(m)
    b = A @ interior + rng.uniform(0.0, 2.0, p)
    ubar = interior + 3.0 * rng.standard_normal(m)
    return A, b, ubar


def random_infeasible_qp(rng, m, p):
    A = rng.standard_normal((p - 1, m))
    b = rng.standard_normal(p - 1)
    k = rng.integers(1, p)
    rows = rng.choice(p - 1, size=k, replace=False)
    lam = rng.uniform(0.5, 2.0, k)
    a_last = -lam @ A[rows]
    b_last = -lam @ b[rows] - rng.uniform(0.1, 1.0)
    A = np.vstack([A, a_last])
    b = np.append(b, b_last)
    perm = rng.permutation(p)
    return A[perm], b[perm], rng.standard_normal(m)


def annulus_support(a, S, inner_sq, outer_sq, starts=4, seed=0):
    """Numerically maximize ``a' S v`` over ``inner_sq <= ||v||^2 <= outer_sq``.

    Each random start is paired with its antipode, which covers both halves of
    a one-dimensional annulus. A zero inner radius is dropped: the constraint
    is vacuous there and its gradient vanishes at the origin, where SLSQP stalls.
    """
    rng = np.random.default_rng(seed)
    c = S @ a
    n = c.size
    cons = [{"type": "ineq", "fun": lambda v: outer_sq - v @ v, "jac": lambda v: -2 * v}]
    if inner_sq > 0:
        cons.append({"type": "ineq", "fun": lambda v: v @ v - inner_sq, "jac": lambda v: 2 * v})
    best = -np.inf
    for _ in range(starts):
        v0 = rng.standard_normal(n)
        v0 *= np.sqrt(0.5 * (inner_sq + outer_sq)) / np.linalg.norm(v0)
        for start in (v0, -v0):
            res = minimize(lambda v: -(c @ v), start, jac=lambda v: -c, constraints=cons, method="SLSQP",
                           options={"ftol": 1e-12, "maxiter": 200})
            # Radial repair of the small constraint violations SLSQP leaves,
            # so every scored point is feasible.
            v, r = res.x, float(np.linalg.norm(res.x))
            if r > 0:
                v = v * min(max(r, math.sqrt(inner_sq)), math.sqrt(outer_sq)) / r
            if inner_sq <= v @ v * (1 + 1e-12):
                best = max(best, float(c @ v))
    return best


def random_control_affine(rng, n, m):
    A = np.eye(n) + 0.1 * rng.standard_normal((n, n))
    G0 = rng.standard_normal((n, m))
    return ControlAffineModel(n, m, lambda x: A @ np.tanh(x), lambda x: G0 * (1 + 0.1 * np.cos(x[0])))
