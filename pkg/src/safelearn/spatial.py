"""Spatially varying noise: a grid of regions with their own moment estimates.

Cells are half-open boxes ``[lo, hi)``. Merged regions are tracked with a
union-find over cell indices; the root index names the live region. Each live
region carries its own within-region constants ``varrho1, varrho2`` because
they grow when regions merge.
"""

from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ContractViolation, NotEnoughSamples, OutOfDomain
from .estimation import (
    EstimationMode,
    MomentEstimate,
    pack_upper,
    unpack_upper,
    update_nonzero_mean,
)
from .model import UncertaintySet

SCHEMA_VERSION = 1


class UnionFind:
    """Disjoint sets with union by rank and path compression."""

    def __init__(self, size: int):
        self.parent = list(range(size))
        self.rank = [0] * size

    def find(self, i: int) -> int:
        root = i
        while self.parent[root] != root:
            root = self.parent[root]
        while self.parent[i] != root:
            self.parent[i], i = root, self.parent[i]
        return root

    def union(self, a: int, b: int) -> int:
        ra, rb = self.find(a), self.find(b)
        if ra == rb:
            return ra
        if self.rank[ra] < self.rank[rb]:
            ra, rb = rb, ra
        self.parent[rb] = ra
        if self.rank[ra] == self.rank[rb]:
            self.rank[ra] += 1
        return ra


@dataclass
class RegionConstants:
    varrho1: float
    varrho2: float


class RegionGrid:
    """Partition of a box into cells, each with a NonZeroMean estimate.

    ``lower``/``upper``/``cell_size`` describe the location space, which may be
    a subset of the state (``location_dims`` selects the coordinates).
    ``noise_dim`` is the dimension ``n`` of the residuals. ``reach`` is the
    largest gap between two cell boxes for them to count as neighbours; the
    default 0 means cells sharing a face or a corner.
    """

    def __init__(
        self,
        lower,
        upper,
        cell_size,
        noise_dim: int,
        *,
        rho1: float,
        rho2: float,
        varrho1: float,
        varrho2: float,
        nu: float,
        sigma: float,
        location_dims=None,
        reach: float = 0.0,
    ):
        self.lower = np.atleast_1d(np.asarray(lower, dtype=float))
        self.upper = np.atleast_1d(np.asarray(upper, dtype=float))
        self.cell_size = np.broadcast_to(np.asarray(cell_size, dtype=float), self.lower.shape).copy()
        if np.any(self.upper <= self.lower) or np.any(self.cell_size <= 0):
            raise ContractViolation("grid box must be nonempty with positive cell sizes")
        self.shape = tuple(int(math.ceil((u - l) / c - 1e-12)) for l, u, c in zip(self.lower, self.upper, self.cell_size))
        self.n = int(noise_dim)
        self.rho1, self.rho2 = float(rho1), float(rho2)
        self.nu, self.sigma = float(nu), float(sigma)
        self.location_dims = None if location_dims is None else tuple(int(d) for d in location_dims)
        self.reach = float(reach)
        size = int(np.prod(self.shape))
        self.uf = UnionFind(size)
        self.members: dict[int, list[int]] = {i: [i] for i in range(size)}
        self.estimates: dict[int, MomentEstimate] = {
            i: MomentEstimate(self.n, EstimationMode.NONZERO_MEAN) for i in range(size)
        }
        self.constants: dict[int, RegionConstants] = {
            i: RegionConstants(float(varrho1), float(varrho2)) for i in range(size)
        }
        self._offsets = self._neighbor_offsets()

    # ------------------------------------------------------------ geometry

    @property
    def num_cells(self) -> int:
        return len(self.uf.parent)

    def _neighbor_offsets(self):
        span = [int(math.ceil(self.reach / c)) + 1 for c in self.cell_size]
        offsets = []
        for off in itertools.product(*(range(-s, s + 1) for s in span)):
            if not any(off):
                continue
            gaps = [max(abs(o) - 1, 0) * c for o, c in zip(off, self.cell_size)]
            if math.hypot(*gaps) <= self.reach + 1e-12:
                offsets.append(off)
        return offsets

    def cell_of(self, x) -> int:
        x = np.atleast_1d(np.asarray(x, dtype=float))
        if self.location_dims is not None:
            x = x[list(self.location_dims)]
        if x.shape != self.lower.shape:
            raise ContractViolation(f"location must have {self.lower.size} coordinates")
        if np.any(x < self.lower) or np.any(x >= self.upper):
            raise OutOfDomain(f"point {x.tolist()} lies outside the grid box")
        idx = np.floor((x - self.lower) / self.cell_size).astype(int)
        idx = np.minimum(idx, np.array(self.shape) - 1)
        return int(np.ravel_multi_index(tuple(idx), self.shape))

    def cell_index(self, flat: int) -> tuple:
        return tuple(int(i) for i in np.unravel_index(flat, self.shape))

    def root(self, i: int) -> int:
        return self.uf.find(int(i))

    def regions(self) -> list[int]:
        return sorted(self.members)

    def neighbors(self, i: int) -> list[int]:
        """Live regions adjacent to region ``i`` (excluding itself)."""
        r = self.root(i)
        out = set()
        for cell in self.members[r]:
            base = self.cell_index(cell)
            for off in self._offsets:
                nb = tuple(b + o for b, o in zip(base, off))
                if all(0 <= c < s for c, s in zip(nb, self.shape)):
                    out.add(self.root(int(np.ravel_multi_index(nb, self.shape))))
        out.discard(r)
        return sorted(out)

    def estimate(self, i: int) -> MomentEstimate:
        return self.estimates[self.root(i)]

    def total_observations(self) -> int:
        return sum(e.t for e in self.estimates.values())

    # ------------------------------------------------------- serialization

    def to_dict(self) -> dict:
        regions = {}
        for r in self.regions():
            est = self.estimates[r]
            cov = est.cov if est.t >= 2 else np.zeros((self.n, self.n))
            mean = est.mean if est.t >= 1 else np.zeros(self.n)
            regions[str(r)] = {
                "t": est.t,
                "mean": [float(v) for v in mean],
                "cov_upper": [float(v) for v in pack_upper(cov)],
                "varrho1": self.constants[r].varrho1,
                "varrho2": self.constants[r].varrho2,
                "cells": list(self.members[r]),
            }
        return {
            "schema_version": SCHEMA_VERSION,
            "lower": self.lower.tolist(),
            "upper": self.upper.tolist(),
            "cell_size": self.cell_size.tolist(),
            "shape": list(self.shape),
            "noise_dim": self.n,
            "rho1": self.rho1,
            "rho2": self.rho2,
            "nu": self.nu,
            "sigma": self.sigma,
            "reach": self.reach,
            "location_dims": None if self.location_dims is None else list(self.location_dims),
            "regions": regions,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_dict(cls, doc: dict) -> "RegionGrid":
        if doc.get("schema_version") != SCHEMA_VERSION:
            raise ContractViolation(f"unsupported grid schema version {doc.get('schema_version')}")
        grid = cls(
            doc["lower"], doc["upper"], doc["cell_size"], doc["noise_dim"],
            rho1=doc["rho1"], rho2=doc["rho2"], varrho1=0.0, varrho2=0.0,
            nu=doc["nu"], sigma=doc["sigma"], location_dims=doc.get("location_dims"),
            reach=doc.get("reach", 0.0),
        )
        n = grid.n
        for key, reg in doc["regions"].items():
            cells = [int(c) for c in reg["cells"]]
            root = cells[0]
            for c in cells[1:]:
                root = grid.uf.union(root, c)
            for c in cells:
                grid.members.pop(c, None)
                grid.estimates.pop(c, None)
                grid.constants.pop(c, None)
            cov = unpack_upper(np.asarray(reg["cov_upper"], dtype=float), n)
            grid.members[root] = sorted(cells)
            grid.estimates[root] = MomentEstimate.from_moments(
                EstimationMode.NONZERO_MEAN, reg["t"], reg["mean"], cov
            )
            grid.constants[root] = RegionConstants(reg["varrho1"], reg["varrho2"])
        return grid

    @classmethod
    def from_json(cls, text: str) -> "RegionGrid":
        return cls.from_dict(json.loads(text))


# ---------------------------------------------------------------- operations


def locate(grid: RegionGrid, x) -> int:
    """Live region (union-find root) containing ``x``."""
    return grid.root(grid.cell_of(x))


def observe(grid: RegionGrid, x, w) -> RegionGrid:
    """Feed residual ``w`` observed at location ``x`` to its region."""
    update_nonzero_mean(grid.estimates[locate(grid, x)], w)
    return grid


def _mean_term(t: int, varrho1: float, sigma: float, n: int, delta: float) -> float:
    """``(t^2 varrho1^2 + sigma n) / (t^2 delta)``."""
    return (t * t * varrho1**2 + sigma * n) / (t * t * delta)


def _cov_constant(n: int, varrho1: float, varrho2: float, nu: float) -> float:
    return n * varrho2 + 2 * nu * varrho1


@dataclass(frozen=True)
class RegionBounds:
    """Squared mean radius and Loewner covariance slack for one region."""

    mean_radius_sq: float
    cov_inflation: float | None


def region_bounds(grid: RegionGrid, i: int, delta: float) -> RegionBounds:
    """Within-region bounds from the region's own data.

    ``||mu - mu_hat||^2 <= varrho1^2/delta + sigma n/(t^2 delta)`` for ``t >= 1``
    and ``Sigma <= Sigma_hat + (n varrho2 + 2 nu varrho1)/delta I`` for ``t >= 2``.
    The covariance slack is ``None`` when ``t = 1``.
    """
    r = grid.root(i)
    est, const = grid.estimates[r], grid.constants[r]
    if est.t < 1:
        raise NotEnoughSamples(f"region {r} has no observations", (r,))
    mean_sq = _mean_term(est.t, const.varrho1, grid.sigma, grid.n, delta)
    infl = None
    if est.t >= 2:
        infl = _cov_constant(grid.n, const.varrho1, const.varrho2, grid.nu) / delta
    return RegionBounds(mean_sq, infl)


def region_uncertainty_set(grid: RegionGrid, i: int, delta: float) -> UncertaintySet:
    """Disturbance set for region ``i`` with the risk split evenly three ways."""
    b = region_bounds(grid, i, delta / 3)
    if b.cov_inflation is None:
        raise NotEnoughSamples(f"region {grid.root(i)} needs two observations", (grid.root(i),))
    est = grid.estimate(i)
    W = est.cov + b.cov_inflation * np.eye(grid.n)
    return UncertaintySet(est.mean, W, 3 * grid.n / delta, math.sqrt(b.mean_radius_sq))


@dataclass(frozen=True)
class NeighborBoundReport:
    """Joint mean/covariance bounds for a region and its neighbours.

    ``own_*`` come from the region's own data with the risk split over
    ``m + 1`` events; ``via_neighbor`` maps each neighbour ``j`` to the squared
    radius around ``mu_hat_j`` that covers the mean of region ``i``.
    ``unsplit`` is the own-data bound at the full risk level. ``chosen`` names the smallest
    radius; all candidates depend on sample counts only, so picking the
    minimum does not bias coverage.
    """

    region: int
    neighbors: tuple
    unsplit: RegionBounds
    own_mean_radius_sq: float
    own_cov_inflation: float
    via_neighbor: dict
    neighbor_cov_inflation: dict
    chosen: str
    chosen_center: np.ndarray = field(repr=False)
    chosen_radius_sq: float = 0.0


def neighbor_bounds(grid: RegionGrid, i: int, neighbors, delta: float) -> NeighborBoundReport:
    """Mean and covariance bounds that borrow strength from neighbouring regions."""
    r = grid.root(i)
    nbrs = tuple(sorted({grid.root(j) for j in neighbors} - {r}))
    est_i = grid.estimates[r]
    short = tuple(j for j in nbrs if grid.estimates[j].t < 2)
    if est_i.t < 2 or short:
        raise NotEnoughSamples(
            f"neighbour bounds need t >= 2 everywhere; short regions: {short or (r,)}",
            short or (r,),
        )
    m = len(nbrs)
    n, sigma, nu = grid.n, grid.sigma, grid.nu
    c_i = grid.constants[r]
    unsplit = region_bounds(grid, r, delta)
    own_sq = (m + 1) * _mean_term(est_i.t, c_i.varrho1, sigma, n, delta)
    own_cov = _cov_constant(n, c_i.varrho1, c_i.varrho2, nu) * (m + 1) / delta
    via, via_cov = {}, {}
    for j in nbrs:
        c_j = grid.constants[j]
        t_j = grid.estimates[j].t
        via[j] = (grid.rho1 + math.sqrt((m + 1) * _mean_term(t_j, c_j.varrho1, sigma, n, delta))) ** 2
        via_cov[j] = _cov_constant(n, c_j.varrho1, c_j.varrho2, nu) * (m + 1) / delta + grid.rho2
    candidates = [("unsplit", r, unsplit.mean_radius_sq), ("own", r, own_sq)]
    candidates += [(f"neighbor:{j}", j, via[j]) for j in nbrs]
    name, center_region, radius = min(candidates, key=lambda c: c[2])
    return NeighborBoundReport(
        r, nbrs, unsplit, own_sq, own_cov, via, via_cov, name,
        grid.estimates[center_region].mean, radius,
    )


@dataclass(frozen=True)
class MergeReport:
    passed: bool
    margins: dict
    failure_probability: float


def merge_test(grid: RegionGrid, i1: int, i2: int, delta: float) -> MergeReport:
    """Check the four inequality families that certify a merge at level 1 - 16 delta."""
    r1, r2 = grid.root(i1), grid.root(i2)
    if r1 == r2:
        raise ContractViolation("cannot test a region against itself")
    # The partner belongs to each neighbor set, which makes the j = partner
    # inequality a direct two-region check.
    n1 = sorted(set(grid.neighbors(r1)) | {r2})
    n2 = sorted(set(grid.neighbors(r2)) | {r1})
    involved = {r1, r2, *n1, *n2}
    short = tuple(sorted(j for j in involved if grid.estimates[j].t < 2))
    if short:
        raise NotEnoughSamples(f"merge test needs t >= 2 for regions {short}", short)

    n, sigma, nu = grid.n, grid.sigma, grid.nu
    mu = {j: grid.estimates[j].mean for j in involved}
    cov = {j: grid.estimates[j].cov for j in involved}

    def s(j):
        return math.sqrt(_mean_term(grid.estimates[j].t, grid.constants[j].varrho1, sigma, n, delta))

    def k(j):
        c = grid.constants[j]
        return 2 * n * _cov_constant(n, c.varrho1, c.varrho2, nu) / delta

    d_mu = float(np.linalg.norm(mu[r1] - mu[r2]))
    d_cov = float(np.linalg.norm(cov[r1] - cov[r2]))
    margins = {}
    for anchor, other, nbrs in ((r1, r2, n1), (r2, r1, n2)):
        for j in nbrs:
            lhs = d_mu + float(np.linalg.norm(mu[anchor] - mu[j]))
            rhs = grid.rho1 - 2 * s(anchor) - s(other) - s(j)
            margins[f"mean:{anchor}:{j}"] = rhs - lhs
            lhs = d_cov + float(np.linalg.norm(cov[anchor] - cov[j]))
            rhs = grid.rho2 - (2 * k(anchor) + k(other) + k(j))
            margins[f"cov:{anchor}:{j}"] = rhs - lhs
    passed = all(v >= 0 for v in margins.values())
    return MergeReport(passed, margins, min(1.0, 16 * delta))


def merge(grid: RegionGrid, i1: int, i2: int) -> RegionGrid:
    """Join two regions; estimates combine as time-weighted convex combinations."""
    r1, r2 = grid.root(i1), grid.root(i2)
    if r1 == r2:
        return grid
    e1, e2 = grid.estimates[r1], grid.estimates[r2]
    t = e1.t + e2.t
    if e1.t < 2 or e2.t < 2:
        raise NotEnoughSamples("merging requires t >= 2 in both regions", (r1, r2))
    a1, a2 = e1.t / t, e2.t / t
    mean = a1 * e1.mean + a2 * e2.mean
    cov = a1 * e1.cov + a2 * e2.cov
    c1, c2 = grid.constants[r1], grid.constants[r2]
    root = grid.uf.union(r1, r2)
    other = r2 if root == r1 else r1
    grid.members[root] = sorted(grid.members.pop(r1) + grid.members.pop(r2))
    grid.estimates.pop(other)
    grid.estimates[root] = MomentEstimate.from_moments(EstimationMode.NONZERO_MEAN, t, mean, cov)
    grid.constants.pop(other)
    grid.constants[root] = RegionConstants(
        max(c1.varrho1, c2.varrho1) + grid.rho1, max(c1.varrho2, c2.varrho2) + grid.rho2
    )
    return grid
