"""Synthetic observe/merge loop over a piecewise-constant noise field."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .config import FieldDoc
from .errors import ConfigError, NotEnoughSamples
from .spatial import RegionGrid, merge, merge_test, observe, region_bounds

log = logging.getLogger(__name__)

COVERAGE_MIN_SAMPLES = 5


@dataclass
class FieldDemoResult:
    before: dict
    after: dict
    region_counts: list
    merges: list
    coverage: dict
    warnings: list = field(default_factory=list)


class _TrueField:
    def __init__(self, doc: FieldDoc):
        self.lower = [np.asarray(b.lower_m, dtype=float) for b in doc.blocks]
        self.upper = [np.asarray(b.upper_m, dtype=float) for b in doc.blocks]
        self.means = [np.asarray(b.mean, dtype=float) for b in doc.blocks]
        self.covs = [np.asarray(b.covariance, dtype=float) for b in doc.blocks]
        n = self.means[0].size
        for k, (m, c) in enumerate(zip(self.means, self.covs)):
            if m.size != n or c.shape != (n, n):
                raise ConfigError(f"blocks[{k}]: mean/covariance dimensions disagree")
            if not np.allclose(c, c.T) or np.linalg.eigvalsh(c)[0] < -1e-12:
                raise ConfigError(f"blocks[{k}].covariance must be symmetric positive semidefinite")
        self.chol = [np.linalg.cholesky(c + 1e-15 * np.eye(n)) for c in self.covs]
        self.n = n

    def block(self, x) -> int:
        for k, (lo, hi) in enumerate(zip(self.lower, self.upper)):
            if np.all(x >= lo) and np.all(x < hi):
                return k
        raise ConfigError(f"location {list(map(float, x))} is not covered by any block")

    def overlapping(self, lo, hi) -> list[int]:
        return [
            k for k, (bl, bh) in enumerate(zip(self.lower, self.upper))
            if np.all(bl < hi) and np.all(bh > lo)
        ]


def _cell_box(grid: RegionGrid, c: int):
    idx = np.asarray(grid.cell_index(c), dtype=float)
    lo = grid.lower + idx * grid.cell_size
    return lo, np.minimum(lo + grid.cell_size, grid.upper)


def assumption_report(doc: FieldDoc, grid: RegionGrid, truth: _TrueField) -> tuple[dict, list]:
    """Cell reference moments and declared-vs-true constant checks."""
    consts = doc.constants
    ref_mean, ref_cov, warnings = {}, {}, []
    worst_within_mean = worst_within_cov = 0.0
    for c in range(grid.num_cells):
        lo, hi = _cell_box(grid, c)
        k0 = truth.block((lo + hi) / 2)
        ref_mean[c], ref_cov[c] = truth.means[k0], truth.covs[k0]
        for k in truth.overlapping(lo, hi):
            worst_within_mean = max(worst_within_mean, float(np.linalg.norm(truth.means[k] - ref_mean[c])))
            worst_within_cov = max(worst_within_cov, float(np.linalg.norm(truth.covs[k] - ref_cov[c])))
    worst_mean_gap = worst_cov_gap = 0.0
    for c in range(grid.num_cells):
        for j in grid.neighbors(c):
            worst_mean_gap = max(worst_mean_gap, float(np.linalg.norm(ref_mean[c] - ref_mean[j])))
            worst_cov_gap = max(worst_cov_gap, float(np.linalg.norm(ref_cov[c] - ref_cov[j])))
    true_sigma = max(float(np.linalg.eigvalsh(c)[-1]) for c in truth.covs)
    true_nu = max(float(np.linalg.norm(m)) for m in truth.means)
    checks = {
        "within_region_mean": {"declared": consts.varrho1, "true": worst_within_mean},
        "within_region_cov": {"declared": consts.varrho2, "true": worst_within_cov},
        "neighbor_mean_gap": {"declared": consts.rho1, "true": worst_mean_gap},
        "neighbor_cov_gap": {"declared": consts.rho2, "true": worst_cov_gap},
        "sigma": {"declared": consts.sigma, "true": true_sigma},
        "nu": {"declared": consts.nu, "true": true_nu},
    }
    for name, chk in checks.items():
        chk["honored"] = chk["true"] <= chk["declared"] + 1e-12
        if not chk["honored"]:
            msg = f"declared {name} constant {chk['declared']} is below the true value {chk['true']:.6g}"
            warnings.append(msg)
            log.warning(msg)
    return {"ref_mean": ref_mean, "ref_cov": ref_cov, "checks": checks}, warnings


def _merge_pass(grid: RegionGrid, delta: float, t: int, ref_mean: dict, rho1: float) -> list[dict]:
    events = []
    changed = True
    while changed:
        changed = False
        for r in grid.regions():
            for j in grid.neighbors(r):
                if j <= r:
                    continue
                try:
                    rep = merge_test(grid, r, j, delta)
                except NotEnoughSamples:
                    continue
                if not rep.passed:
                    continue
                cells = grid.members[r] + grid.members[j]
                gaps = [
                    float(np.linalg.norm(ref_mean[a] - ref_mean[b]))
                    for a in grid.members[r] for b in grid.members[j]
                ]
                merge(grid, r, j)
                events.append({
                    "t": t,
                    "regions": [r, j],
                    "cells": sorted(cells),
                    "min_margin": min(rep.margins.values()) if rep.margins else None,
                    "max_true_mean_gap": max(gaps),
                    "crosses_gap": max(gaps) > rho1,
                })
                changed = True
                break
            if changed:
                break
    return events


def _coverage(grid: RegionGrid, delta: float, counts: np.ndarray, ref_mean: dict, ref_cov: dict) -> dict:
    rows = []
    for r in grid.regions():
        est = grid.estimates[r]
        if est.t < COVERAGE_MIN_SAMPLES:
            continue
        cells = grid.members[r]
        wts = counts[cells].astype(float)
        wts = wts / wts.sum()
        mu = sum(w * ref_mean[c] for w, c in zip(wts, cells))
        cov = sum(w * ref_cov[c] for w, c in zip(wts, cells))
        b = region_bounds(grid, r, delta)
        err_sq = float(np.sum((est.mean - mu) ** 2))
        slack = float(np.linalg.eigvalsh(est.cov + b.cov_inflation * np.eye(grid.n) - cov)[0])
        rows.append({
            "region": r,
            "cells": cells,
            "merged": len(cells) > 1,
            "t": est.t,
            "mean_error_sq": err_sq,
            "mean_radius_sq": b.mean_radius_sq,
            "mean_covered": err_sq <= b.mean_radius_sq,
            "cov_min_slack": slack,
            "cov_covered": slack >= 0.0,
        })

    def frac(sel, key):
        chosen = [row[key] for row in rows if sel(row)]
        return (sum(chosen) / len(chosen)) if chosen else None

    return {
        "delta": delta,
        "min_samples": COVERAGE_MIN_SAMPLES,
        "regions": rows,
        "single_mean_coverage": frac(lambda r: not r["merged"], "mean_covered"),
        "single_cov_coverage": frac(lambda r: not r["merged"], "cov_covered"),
        "merged_mean_coverage": frac(lambda r: r["merged"], "mean_covered"),
        "merged_cov_coverage": frac(lambda r: r["merged"], "cov_covered"),
    }


def run_field_demo(doc: FieldDoc, seed: int | None = None) -> FieldDemoResult:
    """Observe ``doc.samples`` synthetic residuals, attempting merges periodically."""
    seed = doc.seed if seed is None else seed
    rng = np.random.default_rng(seed)
    truth = _TrueField(doc)
    c = doc.constants
    grid = RegionGrid(
        doc.lower_m, doc.upper_m, doc.cell_size_m, truth.n,
        rho1=c.rho1, rho2=c.rho2, varrho1=c.varrho1, varrho2=c.varrho2,
        nu=c.nu, sigma=c.sigma, reach=doc.reach_m,
    )
    refs, warnings = assumption_report(doc, grid, truth)
    lower, upper = grid.lower, grid.upper
    counts = np.zeros(grid.num_cells, dtype=int)
    region_counts = [(0, len(grid.regions()))]
    merges = []
    unmerged = RegionGrid(
        doc.lower_m, doc.upper_m, doc.cell_size_m, truth.n,
        rho1=c.rho1, rho2=c.rho2, varrho1=c.varrho1, varrho2=c.varrho2,
        nu=c.nu, sigma=c.sigma, reach=doc.reach_m,
    )
    for k in range(1, doc.samples + 1):
        x = lower + (upper - lower) * rng.random(lower.size)
        b = truth.block(x)
        w = truth.means[b] + truth.chol[b] @ rng.standard_normal(truth.n)
        observe(grid, x, w)
        observe(unmerged, x, w)
        counts[grid.cell_of(x)] += 1
        if k % doc.merge_every == 0 or k == doc.samples:
            merges += _merge_pass(grid, doc.delta, k, refs["ref_mean"], c.rho1)
            region_counts.append((k, len(grid.regions())))
    coverage = _coverage(grid, doc.delta, counts, refs["ref_mean"], refs["ref_cov"])
    cell_cov = _coverage(unmerged, doc.delta, counts, refs["ref_mean"], refs["ref_cov"])
    coverage["cell_mean_coverage"] = cell_cov["single_mean_coverage"]
    coverage["cell_cov_coverage"] = cell_cov["single_cov_coverage"]
    coverage["cells"] = cell_cov["regions"]
    coverage["assumptions"] = refs["checks"]
    coverage["merges"] = len(merges)
    coverage["cross_gap_merges"] = sum(m["crosses_gap"] for m in merges)
    coverage["seed"] = seed
    return FieldDemoResult(unmerged.to_dict(), grid.to_dict(), region_counts, merges, coverage, warnings)
