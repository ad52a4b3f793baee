import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from helpers import annulus_support, random_control_affine
from safelearn.bounds import chebyshev_ev_zero_mean, markov_radius_zero_mean
from safelearn.errors import ContractViolation
from safelearn.model import SafetySpec, UncertaintySet
from safelearn.qp import solve_qp
from safelearn.tightening import (
    compare_tightening,
    robust_membership_check,
    sqrt_psd,
    tighten,
    tightening_vector,
    worst_case_points,
)


def test_sqrt_psd_examples(rng):
    assert np.allclose(sqrt_psd(4 * np.eye(2)), 2 * np.eye(2))
    assert np.allclose(sqrt_psd(np.diag([9.0, 1.0])), np.diag([3.0, 1.0]))
    for _ in range(20):
        F = rng.standard_normal((4, 3))
        W = F @ F.T
        S = sqrt_psd(W)
        assert np.allclose(S, S.T)
        assert np.linalg.norm(S @ S - W) < 1e-8 * np.linalg.norm(W)
    with pytest.raises(ContractViolation):
        sqrt_psd(np.array([[1.0, 1.0], [0.0, 1.0]]))


def test_markov_tightening_value():
    d = markov_radius_zero_mean(10, 3, 0.3)
    e = tightening_vector(UncertaintySet(np.zeros(3), np.eye(3), d), [[1.0, 0.0, 0.0]])
    assert e[0] == pytest.approx(math.sqrt(50 / 3))
    assert e[0] == pytest.approx(4.082, abs=1e-3)


def test_zero_radius_reduces_to_nominal():
    spec = SafetySpec([[1.0, 2.0]], [3.0])
    tc = tighten(UncertaintySet(np.zeros(2), np.eye(2), 0.0), spec, (np.array([0.5, 0.0]), np.eye(2)))
    assert np.array_equal(tc.e, [0.0])
    assert tc.b == pytest.approx([3.0 - 0.5])
    assert np.array_equal(tc.A, [[1.0, 2.0]])


def test_hand_example_u_plus_w():
    # x_next = u + w with w in the disc of radius 2; u + w_1 <= 5 becomes u_1 <= 3.
    spec = SafetySpec([[1.0, 0.0]], [5.0])
    tc = tighten(UncertaintySet(np.zeros(2), np.eye(2), 4.0), spec, (np.zeros(2), np.eye(2)))
    assert tc.b == pytest.approx([3.0])


def test_ball_and_center_shift():
    spec = SafetySpec([[3.0, 4.0]], [10.0])
    s = UncertaintySet(np.array([1.0, 0.0]), np.zeros((2, 2)), 1.0, ball=0.5)
    tc = tighten(s, spec, (np.zeros(2), np.eye(2)))
    assert tc.e == pytest.approx([2.5])
    assert tc.b == pytest.approx([10.0 - 3.0 - 2.5])


def test_membership_check_examples():
    spec = SafetySpec([[1.0, 0.0], [0.0, 1.0]], [5.0, 5.0])
    s = UncertaintySet(np.zeros(2), np.diag([1.0, 4.0]), 4.0, ball=0.3)
    fg = (np.zeros(2), np.eye(2))
    tc = tighten(s, spec, fg)
    u = tc.b - 1e-3
    assert robust_membership_check(s, spec, fg, u).min() >= -1e-8
    eps = 0.25
    u_bad = tc.b + np.array([eps, 0.0])
    margins = robust_membership_check(s, spec, fg, u_bad)
    assert margins[0] <= -eps + 1e-8
    plain = UncertaintySet(np.zeros(2), np.eye(2), 0.0)
    assert robust_membership_check(plain, spec, fg, [1.0, 2.0]) == pytest.approx([4.0, 3.0])


def _random_instance(rng):
    n = int(rng.integers(1, 6))
    m = int(rng.integers(1, 4))
    p = int(rng.integers(1, 11))
    F = rng.standard_normal((n, int(rng.integers(1, n + 1))))
    W = F @ F.T
    s = UncertaintySet(rng.standard_normal(n), W, float(rng.uniform(0, 20)), float(rng.uniform(0, 1)) * (rng.random() < 0.5))
    model = random_control_affine(rng, n, m)
    x = rng.standard_normal(n)
    H = rng.standard_normal((p, n))
    h = rng.uniform(-1, 10, p)
    return s, SafetySpec(H, h), model, x


@settings(max_examples=200, deadline=None)
@given(st.integers(0, 2**31))
def test_tightening_is_exact(seed):
    rng = np.random.default_rng(seed)
    s, spec, model, x = _random_instance(rng)
    fg = (model.f(x), model.g(x))
    tc = tighten(s, spec, fg)
    u = rng.standard_normal(model.control_dim) * 3
    margins = robust_membership_check(s, spec, fg, u, sample_count=64, rng=rng)
    slack = tc.b - tc.A @ u
    # The sampled worst case equals the tightened slack row by row.
    assert np.allclose(margins, slack, atol=1e-8 * (1 + np.abs(slack).max()))
    res = solve_qp(tc.A, tc.b, u)
    if res.feasible:
        assert robust_membership_check(s, spec, fg, res.u, 64, rng).min() >= -1e-6


def test_worst_case_point_attains_support(rng):
    for _ in range(50):
        n = 4
        F = rng.standard_normal((n, n))
        s = UncertaintySet(rng.standard_normal(n), F @ F.T, 3.0, 0.2)
        H = rng.standard_normal((3, n))
        pts = worst_case_points(s, H)
        assert np.allclose(np.einsum("ij,ij->i", H, pts), H @ s.center + tightening_vector(s, H))


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31))
def test_outer_ellipsoid_matches_two_sided_condition(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(1, 5))
    t = n + 4 + int(rng.integers(0, 20))
    E, V = chebyshev_ev_zero_mean(t, n)
    delta = float(rng.uniform(0.05, 0.95))
    outer = E + math.sqrt(V / delta)
    inner = max(E - math.sqrt(V / delta), 0.0)
    F = rng.standard_normal((n, n))
    W = F @ F.T + 0.1 * np.eye(n)
    H = rng.standard_normal((3, n))
    e_outer = tightening_vector(UncertaintySet(np.zeros(n), W, outer), H)
    S = sqrt_psd(W)
    e_two = np.array([annulus_support(a, S, inner, outer, seed=seed) for a in H])
    assert np.allclose(e_outer, e_two, rtol=1e-6, atol=1e-8)


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**31), st.floats(0, 5), st.floats(0, 2))
def test_tightening_monotone(seed, dd, dr):
    rng = np.random.default_rng(seed)
    n = 3
    F = rng.standard_normal((n, n))
    W = F @ F.T
    G = rng.standard_normal((n, 2))
    H = rng.standard_normal((4, n))
    base = UncertaintySet(np.zeros(n), W, 2.0, 0.1)
    e0 = tightening_vector(base, H)
    assert np.all(tightening_vector(UncertaintySet(np.zeros(n), W, 2.0 + dd, 0.1), H) >= e0 - 1e-12)
    assert np.all(tightening_vector(UncertaintySet(np.zeros(n), W, 2.0, 0.1 + dr), H) >= e0 - 1e-12)
    assert np.all(tightening_vector(UncertaintySet(np.zeros(n), W + G @ G.T, 2.0, 0.1), H) >= e0 - 1e-12)
    assert np.all(e0 >= 0)


def test_compare_tightening_rowwise():
    H = np.eye(2)
    small = UncertaintySet(np.zeros(2), np.diag([1.0, 4.0]), 1.0)
    big = UncertaintySet(np.zeros(2), np.diag([2.0, 2.0]), 1.0)
    assert compare_tightening(small, big, H).tolist() == [True, False]
