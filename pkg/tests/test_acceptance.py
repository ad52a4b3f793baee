"""End-to-end acceptance criteria, one test and one PASS/FAIL line each."""

import io
import math
import time
from contextlib import redirect_stderr, redirect_stdout
from fractions import Fraction
from pathlib import Path

import numpy as np
import pytest

from conftest import report_criterion
from helpers import annulus_support, brute_force_projection, random_control_affine, random_feasible_qp, random_infeasible_qp
from safelearn.bounds import (
    BoundKind,
    chebyshev_beats_markov_zero_mean,
    chebyshev_ev_zero_mean,
    markov_radius_zero_mean,
)
from safelearn.cli import main, resolve_config
from safelearn.config import load_field, load_scenario
from safelearn.estimation import EstimationMode, MomentEstimate
from safelearn.field_demo import run_field_demo
from safelearn.filter import FilterConfig, FilterMode, filter_control
from safelearn.model import ConfidenceConfig, ControlAffineModel, SafetySpec, Status, UncertaintySet
from safelearn.oracles import (
    identical_field,
    two_level_field,
    verify_inverse_wishart_mean,
    verify_matrix_concentration,
    verify_mean_concentration,
    verify_quadratic_form_moments,
    verify_varying_distribution_bounds,
)
from safelearn.qp import solve_qp
from safelearn.scenario import ALGORITHM1, UNFILTERED, UniformBoxNoise, aggregate, run_montecarlo
from safelearn.tightening import robust_membership_check, sqrt_psd, tighten, tightening_vector

pytestmark = pytest.mark.slow

DELTA = 0.3
SLACK = 0.02


# ------------------------------------------------------------ criterion 1

N = 3
TRIALS = 10_000
MU = np.array([0.5, -0.3, 0.2])
HALF = np.full(N, math.sqrt(3.0))  # uniform box with identity covariance
LTI_A, LTI_SV = 0.5 * np.eye(N), 0.05 * np.eye(N)


def _gaussian(rng, size, mean):
    return mean + rng.standard_normal((*size, N))


def _uniform(rng, size, mean):
    return mean + rng.uniform(-HALF, HALF, (*size, N))


KINDS = {
    BoundKind.MARKOV_ZERO_MEAN: (FilterMode.ZERO_MEAN, _gaussian, np.zeros(N)),
    BoundKind.CHEBYSHEV_ZERO_MEAN: (FilterMode.ZERO_MEAN, _gaussian, np.zeros(N)),
    BoundKind.ALL_T_ZERO_MEAN: (FilterMode.ZERO_MEAN, _gaussian, np.zeros(N)),
    BoundKind.NOISY_LTI: (FilterMode.NOISY_LTI, _gaussian, np.zeros(N)),
    BoundKind.MARKOV_NONZERO_MEAN: (FilterMode.NONZERO_MEAN, _gaussian, MU),
    BoundKind.CHEBYSHEV_NONZERO_MEAN: (FilterMode.NONZERO_MEAN, _gaussian, MU),
    BoundKind.ALL_T_NONZERO_MEAN: (FilterMode.NONZERO_MEAN, _gaussian, MU),
    BoundKind.NON_GAUSSIAN_ZERO_MEAN: (FilterMode.NON_GAUSSIAN_ZERO_MEAN, _uniform, np.zeros(N)),
    BoundKind.NON_GAUSSIAN_NONZERO_MEAN: (FilterMode.NON_GAUSSIAN_NONZERO_MEAN, _uniform, MU),
    BoundKind.PRIOR: (FilterMode.ZERO_MEAN, _gaussian, np.zeros(N)),
}


def _constants(kind, mean):
    if kind in (BoundKind.NON_GAUSSIAN_ZERO_MEAN, BoundKind.NON_GAUSSIAN_NONZERO_MEAN):
        c = UniformBoxNoise(mean, HALF).constants()
        return ConfidenceConfig(DELTA, sigma=c["sigma"], zeta=c["zeta"], nu=c["nu"] or None, kappa=c["kappa"] or None)
    return ConfidenceConfig(DELTA, sigma=1.0, nu=float(np.linalg.norm(mean)) or None)


def _estimate(kind, mode, draw, mean, t, rng):
    est_mode = mode.estimation_mode
    if t == 0:
        return MomentEstimate(N, est_mode)
    if kind is BoundKind.NOISY_LTI:
        # Pair residuals w + v1 - A v0 of a noisy LTI system with identity process noise.
        k = t // 2
        r = draw(rng, (k,), 0.0) + rng.standard_normal((k, N)) @ sqrt_psd(LTI_SV) \
            - rng.standard_normal((k, N)) @ sqrt_psd(LTI_SV) @ LTI_A.T
        return MomentEstimate.from_moments(est_mode, 2 * k, np.zeros(N), r.T @ r / k)
    w = draw(rng, (t,), mean)
    if est_mode is EstimationMode.ZERO_MEAN:
        return MomentEstimate.from_moments(est_mode, t, np.zeros(N), w.T @ w / t)
    m = w.mean(axis=0)
    d = w - m
    return MomentEstimate.from_moments(est_mode, t, m, d.T @ d / (t - 1))


def _single_step(kind, t, seed):
    """Violation frequency of ``x+ = x + u + w`` against three half-planes, among feasible solves."""
    mode, draw, mean = KINDS[kind]
    rng = np.random.default_rng(seed)
    model = ControlAffineModel(N, N, lambda x: x, lambda x: np.eye(N))
    spec = SafetySpec(np.eye(N), 1.0 + mean)
    cfg = FilterConfig(DELTA, mode, fixed_bound=kind)
    consts = _constants(kind, mean)
    ubar = np.full(N, 5.0)
    feasible = violations = 0
    for _ in range(TRIALS):
        est = _estimate(kind, mode, draw, mean, t, rng)
        out = filter_control(model, np.zeros(N), ubar, spec, est, cfg, consts)
        if out.status is not Status.FEASIBLE:
            continue
        feasible += 1
        x_next = out.u + draw(rng, (), mean)
        violations += bool(np.any(spec.H @ x_next > spec.h))
    return violations / feasible if feasible else float("nan"), feasible


def test_criterion_1_single_step_safety():
    parts, ok, slowest = [], True, 0.0
    for i, kind in enumerate(KINDS):
        start = time.perf_counter()
        ts = (0,) if kind is BoundKind.PRIOR else (kind.min_samples(N), 50)
        for t in ts:
            rate, feasible = _single_step(kind, t, seed=1000 * i + t)
            good = feasible > 0 and rate <= DELTA + SLACK
            ok &= good
            parts.append(f"{kind.value}@t={t}: {rate:.4f} ({feasible} feasible)")
        slowest = max(slowest, time.perf_counter() - start)
    ok &= slowest <= 60.0
    report_criterion(1, "single-step safety", ok,
                     f"violation <= {DELTA + SLACK:.2f}; slowest kind {slowest:.1f}s; " + "; ".join(parts))
    assert ok


# ------------------------------------------------------------ criterion 2


def _instance(rng):
    n = int(rng.integers(1, 6))
    m = int(rng.integers(1, 4))
    p = int(rng.integers(1, 11))
    F = rng.standard_normal((n, int(rng.integers(1, n + 1))))
    s = UncertaintySet(rng.standard_normal(n), F @ F.T, float(rng.uniform(0, 20)),
                       float(rng.uniform(0, 1)) * (rng.random() < 0.5))
    model = random_control_affine(rng, n, m)
    x = rng.standard_normal(n)
    spec = SafetySpec(rng.standard_normal((p, n)), rng.uniform(-1, 10, p))
    return s, spec, model, x


def test_criterion_2_tightening_exactness():
    rng = np.random.default_rng(2)
    worst_margin, feasible, mismatches = np.inf, 0, 0
    for i in range(1000):
        s, spec, model, x = _instance(rng)
        fg = (model.f(x), model.g(x))
        tc = tighten(s, spec, fg)
        ubar = 3 * rng.standard_normal(model.control_dim)
        res = solve_qp(tc.A, tc.b, ubar)
        if res.feasible:
            feasible += 1
            worst_margin = min(worst_margin, robust_membership_check(s, spec, fg, res.u, 64, rng).min())
        # Two-sided (annulus) support versus the outer ellipsoid alone.
        n = s.n
        t = n + 4 + int(rng.integers(0, 20))
        E, V = chebyshev_ev_zero_mean(t, n)
        outer = E + math.sqrt(V / DELTA)
        inner = max(E - math.sqrt(V / DELTA), 0.0)
        W = s.shape + 0.1 * np.eye(n)
        e_outer = tightening_vector(UncertaintySet(np.zeros(n), W, outer), spec.H)
        S = sqrt_psd(W)
        e_two = np.array([annulus_support(a, S, inner, outer, seed=i) for a in spec.H])
        G = np.atleast_2d(fg[1])
        A = spec.H @ G
        b_nom = spec.h - spec.H @ fg[0]
        f_outer = solve_qp(A, b_nom - e_outer, ubar).feasible
        f_two = solve_qp(A, b_nom - e_two, ubar).feasible
        mismatches += f_outer != f_two
    ok = worst_margin >= -1e-6 and mismatches == 0
    report_criterion(2, "tightening exactness", ok,
                     f"1000 instances, {feasible} feasible, worst robust margin {worst_margin:.3e}, "
                     f"{mismatches} outer/two-sided feasibility mismatches")
    assert ok


# ------------------------------------------------------------ criterion 3


def test_criterion_3_closed_form_values():
    markov = markov_radius_zero_mean(10, 3, 0.3)
    markov_ok = abs(markov - 50 / 3) <= 1e-9
    E, V = chebyshev_ev_zero_mean(Fraction(10), Fraction(3))
    ev_ok = (E, V) == (5, 50)
    first_switch = next(t for t in range(3 + 4, 200) if chebyshev_beats_markov_zero_mean(t, 3, 0.3))
    switch_ok = first_switch == 11
    low, high = (9 - math.sqrt(72)) / 3, (4 - math.sqrt(7)) / 3
    thresholds_ok = (round(low, 3), round(high, 3)) == (0.172, 0.451)
    ok = markov_ok and ev_ok and switch_ok and thresholds_ok
    report_criterion(3, "closed-form spot values", ok,
                     f"markov(3,10,0.3)={markov:.12f} [{'ok' if markov_ok else 'bad'}]; "
                     f"chebyshev (E,V)(3,10)=({E},{V}) expected (5,50) [{'ok' if ev_ok else 'bad'}]; "
                     f"first t where Chebyshev beats Markov = {first_switch} expected 11 "
                     f"[{'ok' if switch_ok else 'bad'}]; thresholds {low:.3f}/{high:.3f} "
                     f"[{'ok' if thresholds_ok else 'bad'}]")
    assert ok


# ------------------------------------------------------------ criterion 4


def test_criterion_4_statistical_oracles():
    start = time.perf_counter()
    results = [
        verify_inverse_wishart_mean(3, 10, trials=100_000),
        verify_quadratic_form_moments(3, 10, trials=100_000)[1],
        *verify_matrix_concentration(3, 20, DELTA),
        verify_mean_concentration(3, 10, DELTA),
        *verify_varying_distribution_bounds(identical_field(3, 20), DELTA, label="identical"),
        *verify_varying_distribution_bounds(two_level_field(3, 20, 0.5), DELTA, label="two-level"),
    ]
    elapsed = time.perf_counter() - start
    ok = all(r.passed for r in results) and elapsed <= 120.0
    detail = "; ".join(f"{r.check}={r.estimate:.4g} vs {r.target:.4g} [{'ok' if r.passed else 'bad'}]" for r in results)
    report_criterion(4, "statistical oracles", ok, f"{elapsed:.1f}s; {detail}")
    assert ok


# ------------------------------------------------------------ criterion 5


def test_criterion_5_qp_correctness():
    rng = np.random.default_rng(5)
    worst = 0.0
    for _ in range(500):
        m, p = int(rng.integers(1, 5)), int(rng.integers(1, 21))
        A, b, ubar = random_feasible_qp(rng, m, p)
        res = solve_qp(A, b, ubar)
        ref = brute_force_projection(A, b, ubar)
        worst = max(worst, np.inf if not res.feasible else float(np.max(np.abs(res.u - ref))))
    bad_cert = 0
    for _ in range(100):
        m, p = int(rng.integers(1, 5)), int(rng.integers(2, 21))
        A, b, ubar = random_infeasible_qp(rng, m, p)
        res = solve_qp(A, b, ubar)
        lam = res.certificate
        valid = (not res.feasible and lam is not None and np.all(lam >= 0)
                 and np.allclose(lam @ A, 0, atol=1e-8 * (1 + np.abs(lam).sum())) and lam @ b < 0)
        bad_cert += not valid
    ok = worst <= 1e-6 and bad_cert == 0
    report_criterion(5, "QP correctness", ok,
                     f"500 feasible: max |u - brute force| {worst:.2e}; 100 infeasible: {bad_cert} invalid certificates")
    assert ok


# ------------------------------------------------------------ criterion 6


def test_criterion_6_end_to_end_unicycle():
    start = time.perf_counter()
    _, scenario = load_scenario(resolve_config("unicycle"))
    filtered = run_montecarlo(scenario, ALGORITHM1, 100, seed=0)
    unfiltered = run_montecarlo(scenario, UNFILTERED, 100, seed=0)
    elapsed = time.perf_counter() - start
    clean = sum(s["penetration_steps"] == 0 for s in filtered)
    reached = sum(bool(s["reached_goal"]) for s in filtered)
    agg_f, agg_u = aggregate(filtered), aggregate(unfiltered)
    ok = (clean >= 95 and reached >= 90 and agg_u["penetration_steps"] > agg_f["penetration_steps"]
          and elapsed <= 300.0)
    report_criterion(6, "end-to-end unicycle", ok,
                     f"{elapsed:.0f}s; filtered: {clean}/100 episodes without penetration, {reached}/100 reach goal, "
                     f"{agg_f['penetration_steps']} penetration steps; unfiltered: "
                     f"{agg_u['penetration_steps']} penetration steps, {agg_u['episodes_with_penetration']} episodes")
    assert ok


# ------------------------------------------------------------ criterion 7


def test_criterion_7_spatial_field():
    block = load_field(resolve_config("field_two_block"))
    counts = {"cell_mean": [0, 0], "cell_cov": [0, 0], "merged_mean": [0, 0], "merged_cov": [0, 0]}
    for seed in range(20):
        cov = run_field_demo(block, seed).coverage
        for c in cov["cells"]:
            if c["t"] >= cov["min_samples"]:
                counts["cell_mean"][0] += c["mean_covered"]
                counts["cell_cov"][0] += c["cov_covered"]
                counts["cell_mean"][1] += 1
                counts["cell_cov"][1] += 1
        for r in cov["regions"]:
            if r["merged"]:
                counts["merged_mean"][0] += r["mean_covered"]
                counts["merged_cov"][0] += r["cov_covered"]
                counts["merged_mean"][1] += 1
                counts["merged_cov"][1] += 1
    freq = {k: (h / n if n else float("nan")) for k, (h, n) in counts.items()}
    gap = load_field(resolve_config("field_gap"))
    crossings = sum(run_field_demo(gap, seed).coverage["cross_gap_merges"] for seed in range(100))
    level = 1 - DELTA - SLACK
    per_region_ok = freq["cell_mean"] >= level and freq["cell_cov"] >= level
    merged_ok = counts["merged_mean"][1] > 0 and freq["merged_mean"] >= level and freq["merged_cov"] >= level
    ok = per_region_ok and crossings == 0 and merged_ok
    report_criterion(7, "spatial field", ok,
                     f"per-region mean {freq['cell_mean']:.3f} / cov {freq['cell_cov']:.3f} over "
                     f"{counts['cell_mean'][1]} regions [{'ok' if per_region_ok else 'bad'}]; "
                     f"cross-gap merges in 100 seeds: {crossings}; merged mean {freq['merged_mean']:.3f} / "
                     f"cov {freq['merged_cov']:.3f} over {counts['merged_mean'][1]} merged regions "
                     f"[{'ok' if merged_ok else 'bad'}]")
    assert ok


# ------------------------------------------------------------ criterion 8

COMMANDS = [
    ["simulate", "unicycle", "--seed", "3", "--compare"],
    ["montecarlo", "unicycle", "--episodes", "3", "--workers", "2", "--compare"],
    ["verify", "wishart"],
    ["field-demo", "field_two_block", "--seed", "2"],
]


def _run(argv, out):
    stdout, stderr = io.StringIO(), io.StringIO()
    extra = ["--out", str(out / "report.json")] if argv[0] == "verify" else ["--out", str(out)]
    out.mkdir(parents=True, exist_ok=True)
    with redirect_stdout(stdout), redirect_stderr(stderr):
        code = main(argv + extra)
    files = {p.name: p.read_bytes() for p in sorted(out.iterdir())}
    return code, stdout.getvalue(), files


def test_criterion_8_cli_determinism(tmp_path):
    differing = []
    for k, argv in enumerate(COMMANDS):
        a = _run(argv, tmp_path / f"{k}a")
        b = _run(argv, tmp_path / f"{k}b")
        if a != b or not a[2]:
            differing.append(argv[0])
    ok = not differing
    report_criterion(8, "CLI determinism", ok,
                     f"{len(COMMANDS)} commands run twice; differing outputs: {differing or 'none'}")
    assert ok
