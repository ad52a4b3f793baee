"""Unicycle obstacle-avoidance scenario and episode runner.

The robot state is ``(x1, x2, yaw)`` and the input is ``(speed, yaw rate)``.
Each circular obstacle becomes one half-plane per step: the line
perpendicular to the robot-to-center segment, tangent to the obstacle disc
grown by the robot clearance ``r_o``.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .bounds import BoundKind
from .errors import BoundNotValidYet, ConfigError, SolverError
from .estimation import (
    EstimationMode,
    MomentEstimate,
    residual,
    update_nonzero_mean,
    update_zero_mean,
)
from .filter import FilterConfig, FilterMode, filter_control
from .model import ConfidenceConfig, ControlAffineModel, SafetySpec, Status

log = logging.getLogger(__name__)

DEFAULT_GAINS = (0.1, 0.03)


# ------------------------------------------------------------------ dynamics


def unicycle_model(dt: float) -> ControlAffineModel:
    """``x+ = x + dt [[cos yaw, 0], [sin yaw, 0], [0, 1]] u``."""
    if not dt > 0:
        raise ConfigError("time step must be positive")

    def gain(x):
        c, s = math.cos(x[2]), math.sin(x[2])
        return np.array([[dt * c, 0.0], [dt * s, 0.0], [0.0, dt]])

    return ControlAffineModel(3, 2, lambda x: x, gain)


def nominal_control(x, goal, gains: Sequence[float] = DEFAULT_GAINS) -> np.ndarray:
    """Proportional controller driving the position toward ``goal``."""
    ex, ey = goal[0] - x[0], goal[1] - x[1]
    dist = math.hypot(ex, ey)
    if dist == 0.0:
        return np.zeros(2)
    err = math.atan2(ey, ex) - x[2]
    return np.array([dist * gains[0] * math.cos(err), dist * gains[1] * math.sin(err)])


# ---------------------------------------------------------------- obstacles


@dataclass(frozen=True)
class Obstacle:
    center: tuple
    radius: float

    def __post_init__(self):
        if not self.radius > 0:
            raise ConfigError("obstacle radius must be positive")


def obstacle_constraints(x, obstacles: Sequence[Obstacle], r_o: float, sensing_radius: float | None = None):
    """Half-plane rows keeping the robot on its own side of each obstacle.

    Returns ``(spec, owners)`` where ``owners[k]`` is the obstacle index that
    produced row ``k``. ``spec`` is ``None`` when no obstacle is in range.
    """
    p = np.asarray(x[:2], dtype=float)
    rows, rhs, owners = [], [], []
    for k, ob in enumerate(obstacles):
        c = np.asarray(ob.center, dtype=float)
        a = c - p
        dist = float(np.linalg.norm(a))
        if sensing_radius is not None and dist - ob.radius > sensing_radius:
            continue
        if dist == 0.0:
            log.warning("robot at the center of obstacle %d; row skipped", k)
            continue
        a_hat = a / dist
        rows.append([a_hat[0], a_hat[1], 0.0])
        rhs.append(float(a_hat @ c) - (ob.radius + r_o))
        owners.append(k)
    if not rows:
        return None, []
    return SafetySpec(np.array(rows), np.array(rhs)), owners


def clearance(p, obstacles: Sequence[Obstacle], r_o: float) -> float:
    """Smallest distance from ``p`` to any grown obstacle disc (negative inside)."""
    if not obstacles:
        return math.inf
    return min(math.dist(p[:2], ob.center) - (ob.radius + r_o) for ob in obstacles)


def stall_escape(
    ubar,
    x,
    active: Obstacle | None,
    goal,
    r_o: float,
    gains: Sequence[float] = DEFAULT_GAINS,
    extra_offset: float = 1.0,
):
    """Retarget the nominal input to a point beside an active obstacle.

    The candidate points sit on the safety line, ``r + r_o + extra_offset``
    to either side of the robot's projection onto it. The one closer to the
    goal wins; a tie goes to the left (counter-clockwise) side.
    Returns ``(u, side_point)``; ``side_point`` is ``None`` without an active row.
    """
    if active is None:
        return np.asarray(ubar, dtype=float), None
    p = np.asarray(x[:2], dtype=float)
    c = np.asarray(active.center, dtype=float)
    a = c - p
    a_hat = a / np.linalg.norm(a)
    foot = c - (active.radius + r_o) * a_hat
    left = np.array([-a_hat[1], a_hat[0]])
    offset = active.radius + r_o + extra_offset
    pl, pr = foot + offset * left, foot - offset * left
    g = np.asarray(goal, dtype=float)
    side = pr if np.linalg.norm(pr - g) < np.linalg.norm(pl - g) else pl
    return nominal_control(x, side, gains), side


# -------------------------------------------------------------------- noise


@dataclass(frozen=True)
class GaussianNoise:
    mean: np.ndarray
    cov: np.ndarray

    def __post_init__(self):
        mean = np.asarray(self.mean, dtype=float)
        cov = np.atleast_2d(np.asarray(self.cov, dtype=float))
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "cov", cov)
        # Cholesky with a zero-covariance escape hatch (deterministic runs).
        vals, vecs = np.linalg.eigh(cov)
        object.__setattr__(self, "_factor", vecs * np.sqrt(np.clip(vals, 0.0, None)))

    def sample(self, rng: np.random.Generator, x) -> np.ndarray:
        return self.mean + self._factor @ rng.standard_normal(self.mean.shape[0])

    def constants(self) -> dict:
        n = len(self.mean)
        tr = float(np.trace(self.cov))
        mu2 = float(self.mean @ self.mean)
        zeta0 = tr**2 + 2 * float(np.trace(self.cov @ self.cov))
        zeta = mu2**2 + 4 * float(self.mean @ self.cov @ self.mean) + zeta0 + 2 * mu2 * tr
        third = self.mean * (mu2 + tr) + 2 * self.cov @ self.mean
        return {
            "sigma": float(np.linalg.eigvalsh(self.cov)[-1]),
            "zeta": zeta,
            "nu": math.sqrt(mu2),
            "kappa": float(np.linalg.norm(third)),
            "n": n,
        }


@dataclass(frozen=True)
class UniformBoxNoise:
    """``w = mean + u`` with ``u`` uniform on ``[-half_width, half_width]``."""

    mean: np.ndarray
    half_width: np.ndarray

    def sample(self, rng: np.random.Generator, x) -> np.ndarray:
        return self.mean + rng.uniform(-self.half_width, self.half_width)

    @property
    def cov(self) -> np.ndarray:
        return np.diag(self.half_width**2 / 3.0)

    def constants(self) -> dict:
        """Exact moment constants of the shifted uniform distribution."""
        a = self.half_width
        var = a**2 / 3.0
        m4 = a**4 / 5.0
        tr = float(var.sum())
        zeta0 = float(m4.sum() + tr**2 - (var**2).sum())
        mu = self.mean
        mu2 = float(mu @ mu)
        zeta = mu2**2 + 4 * float(mu @ (var * mu)) + zeta0 + 2 * mu2 * tr
        third = mu * (mu2 + tr) + 2 * var * mu
        return {
            "sigma": float(var.max()),
            "zeta": zeta,
            "nu": math.sqrt(mu2),
            "kappa": float(np.linalg.norm(third)),
            "n": len(mu),
        }


@dataclass(frozen=True)
class PiecewiseGaussianNoise:
    """Gaussian noise whose parameters depend on the position cell."""

    lower: np.ndarray
    cell_size: np.ndarray
    shape: tuple
    means: np.ndarray
    covs: np.ndarray

    def _cell(self, x):
        idx = np.floor((np.asarray(x[:2]) - self.lower) / self.cell_size).astype(int)
        idx = np.clip(idx, 0, np.array(self.shape) - 1)
        return tuple(idx)

    def sample(self, rng, x):
        k = self._cell(x)
        return rng.multivariate_normal(self.means[k], self.covs[k], method="cholesky")

    def constants(self) -> dict:
        flat_m = self.means.reshape(-1, self.means.shape[-1])
        flat_c = self.covs.reshape(-1, *self.covs.shape[-2:])
        return {
            "sigma": float(max(np.linalg.eigvalsh(c)[-1] for c in flat_c)),
            "nu": float(np.max(np.linalg.norm(flat_m, axis=1))),
            "n": flat_m.shape[1],
        }


# ------------------------------------------------------------------ episodes


@dataclass(frozen=True)
class Scenario:
    dt: float
    start: tuple
    goal: tuple
    obstacles: tuple
    r_o: float
    noise: object
    horizon: int
    delta: float
    sigma: float | None
    seed: int = 0
    goal_tolerance: float = 2.0
    stop_at_goal: bool = True
    sensing_radius: float | None = None
    gains: tuple = DEFAULT_GAINS
    escape_offset: float = 1.0
    zeta: float | None = None
    nu: float | None = None
    kappa: float | None = None
    infeasible_policy: str = "stop"

    def __post_init__(self):
        if not self.dt > 0:
            raise ConfigError("dt must be positive")
        if self.r_o < 0:
            raise ConfigError("robot clearance must be nonnegative")
        if self.horizon < 1:
            raise ConfigError("horizon must be at least one step")
        if self.infeasible_policy not in ("stop", "nominal"):
            raise ConfigError("infeasible_policy must be 'stop' or 'nominal'")


@dataclass(frozen=True)
class Algorithm:
    """``Algorithm1`` (zero mean), ``Algorithm2`` (unknown mean), a fixed bound or none."""

    name: str
    fixed: BoundKind | None = None

    @classmethod
    def parse(cls, text: str) -> "Algorithm":
        key = text.strip()
        low = key.lower()
        if low in ("algorithm1", "alg1"):
            return cls("Algorithm1")
        if low in ("algorithm2", "alg2"):
            return cls("Algorithm2")
        if low == "unfiltered":
            return cls("Unfiltered")
        if low.startswith("fixed:"):
            return cls("FixedBound", BoundKind(key.split(":", 1)[1]))
        raise ConfigError(f"unknown algorithm {text!r}")

    @property
    def label(self) -> str:
        return f"FixedBound:{self.fixed.value}" if self.fixed else self.name

    def filter_mode(self) -> FilterMode | None:
        if self.name == "Unfiltered":
            return None
        if self.name == "Algorithm1":
            return FilterMode.ZERO_MEAN
        if self.name == "Algorithm2":
            return FilterMode.NONZERO_MEAN
        return {
            BoundKind.NOISY_LTI: FilterMode.NOISY_LTI,
            BoundKind.NON_GAUSSIAN_ZERO_MEAN: FilterMode.NON_GAUSSIAN_ZERO_MEAN,
            BoundKind.NON_GAUSSIAN_NONZERO_MEAN: FilterMode.NON_GAUSSIAN_NONZERO_MEAN,
        }.get(self.fixed, FilterMode.ZERO_MEAN if self.fixed.zero_mean else FilterMode.NONZERO_MEAN)


ALGORITHM1 = Algorithm("Algorithm1")
ALGORITHM2 = Algorithm("Algorithm2")
UNFILTERED = Algorithm("Unfiltered")


@dataclass
class StepRecord:
    t: int
    x: np.ndarray
    ubar: np.ndarray
    u: np.ndarray
    status: str
    achieved_delta: float | None
    e: np.ndarray
    bound_used: str
    violated: bool
    min_clearance: float
    x_next: np.ndarray
    H: np.ndarray | None = None
    h: np.ndarray | None = None


@dataclass
class TrajectoryLog:
    algorithm: str
    seed: int
    episode: int
    start: np.ndarray
    records: list = field(default_factory=list)
    reached_goal: bool = False
    min_goal_distance: float = math.inf

    @property
    def steps(self) -> int:
        return len(self.records)

    @property
    def min_clearance(self) -> float:
        return min((r.min_clearance for r in self.records), default=math.inf)

    @property
    def penetration_steps(self) -> int:
        return sum(r.min_clearance < 0 for r in self.records)

    @property
    def violation_steps(self) -> int:
        return sum(r.violated for r in self.records)

    def count(self, status: str) -> int:
        return sum(r.status == status for r in self.records)

    def violation_rate(self) -> float:
        """Fraction of ``Feasible`` steps whose successor violated its constraint."""
        feas = [r for r in self.records if r.status == Status.FEASIBLE.value]
        if not feas:
            return 0.0
        return sum(r.violated for r in feas) / len(feas)

    def summary(self) -> dict:
        feas = [r for r in self.records if r.status == Status.FEASIBLE.value]
        return {
            "algorithm": self.algorithm,
            "seed": self.seed,
            "episode": self.episode,
            "steps": self.steps,
            "reached_goal": self.reached_goal,
            "min_goal_distance": self.min_goal_distance,
            "min_clearance": self.min_clearance,
            "penetration_steps": self.penetration_steps,
            "feasible_steps": len(feas),
            "feasible_violations": sum(r.violated for r in feas),
            "violation_steps": self.violation_steps,
            "relaxed_steps": self.count(Status.RELAXED.value),
            "infeasible_steps": self.count(Status.INFEASIBLE.value),
            "failed_steps": self.count("SolverFailure") + self.count("NoValidBound"),
            "violation_rate": self.violation_rate(),
        }


def episode_rng(seed: int, episode: int) -> np.random.Generator:
    """Independent stream for episode ``episode`` of a run seeded with ``seed``."""
    return np.random.default_rng(np.random.SeedSequence([int(seed), int(episode)]))


def run_episode(scenario: Scenario, algorithm: Algorithm | str = ALGORITHM1, episode: int = 0, seed: int | None = None) -> TrajectoryLog:
    """Simulate one episode; deterministic in ``(scenario, algorithm, seed, episode)``."""
    if isinstance(algorithm, str):
        algorithm = Algorithm.parse(algorithm)
    seed = scenario.seed if seed is None else seed
    rng = episode_rng(seed, episode)
    model = unicycle_model(scenario.dt)
    mode = algorithm.filter_mode()
    cfg = est = consts = None
    if mode is not None:
        if mode is FilterMode.NOISY_LTI:
            raise ConfigError("the unicycle scenario has no measurement-noise model")
        cfg = FilterConfig(scenario.delta, mode, fixed_bound=algorithm.fixed)
        consts = ConfidenceConfig(scenario.delta, scenario.sigma, scenario.zeta, scenario.nu, scenario.kappa)
        est = MomentEstimate(3, mode.estimation_mode)
    update = update_zero_mean if est is not None and est.mode is EstimationMode.ZERO_MEAN else update_nonzero_mean

    x = np.asarray(scenario.start, dtype=float).copy()
    goal = np.asarray(scenario.goal, dtype=float)
    obstacles = scenario.obstacles
    log_ = TrajectoryLog(algorithm.label, seed, episode, x.copy())
    log_.min_goal_distance = float(np.linalg.norm(x[:2] - goal))

    for k in range(scenario.horizon):
        spec, owners = obstacle_constraints(x, obstacles, scenario.r_o, scenario.sensing_radius)
        ubar = nominal_control(x, goal, scenario.gains)
        e = np.zeros(0)
        achieved = None
        bound = ""
        if mode is None:
            u, status = ubar, "Unfiltered"
        else:
            try:
                out = filter_control(model, x, ubar, spec, est, cfg, consts)
                if out.active and out.status is not Status.INFEASIBLE:
                    # Pick the active row whose obstacle is nearest and retarget.
                    nearest = min(out.active, key=lambda i: math.dist(x[:2], obstacles[owners[i]].center))
                    ubar2, _ = stall_escape(ubar, x, obstacles[owners[nearest]], goal, scenario.r_o,
                                            scenario.gains, scenario.escape_offset)
                    out2 = filter_control(model, x, ubar2, spec, est, cfg, consts)
                    if out2.status is not Status.INFEASIBLE:
                        ubar, out = ubar2, out2
                status = out.status.value
                achieved = out.achieved_delta
                e = out.e
                bound = out.bound_used.value if out.bound_used is not None else ""
                if out.status is Status.INFEASIBLE and scenario.infeasible_policy == "stop":
                    u = np.zeros(2)
                else:
                    u = out.u
            except (SolverError, BoundNotValidYet) as exc:
                log.warning("step %d: %s; applying the nominal input", k, exc)
                status = "SolverFailure" if isinstance(exc, SolverError) else "NoValidBound"
                u = ubar
        w = scenario.noise.sample(rng, x)
        x_next = model.f(x) + model.g(x) @ u + w
        violated = bool(spec is not None and np.any(spec.H @ x_next > spec.h))
        rec = StepRecord(
            k, x.copy(), np.asarray(ubar, dtype=float).copy(), np.asarray(u, dtype=float).copy(),
            status, achieved, np.asarray(e, dtype=float).copy(), bound, violated,
            clearance(x_next, obstacles, scenario.r_o), x_next.copy(),
            None if spec is None else spec.H, None if spec is None else spec.h,
        )
        log_.records.append(rec)
        if est is not None:
            update(est, residual(model, x_next, x, u))
        x = x_next
        dist = float(np.linalg.norm(x[:2] - goal))
        log_.min_goal_distance = min(log_.min_goal_distance, dist)
        if dist <= scenario.goal_tolerance:
            log_.reached_goal = True
            if scenario.stop_at_goal:
                break
    return log_


def _episode_summary(args):
    scenario, algorithm, episode, seed = args
    return run_episode(scenario, algorithm, episode, seed).summary()


def run_montecarlo(scenario: Scenario, algorithm: Algorithm | str, episodes: int, seed: int | None = None, workers: int = 1) -> list[dict]:
    """Per-episode summaries, ordered by episode index regardless of ``workers``."""
    if episodes < 1:
        raise ConfigError("episodes must be at least 1")
    seed = scenario.seed if seed is None else seed
    jobs = [(scenario, algorithm, i, seed) for i in range(episodes)]
    if workers <= 1:
        return [_episode_summary(j) for j in jobs]
    from concurrent.futures import ProcessPoolExecutor

    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(_episode_summary, jobs))


def aggregate(summaries: list[dict]) -> dict:
    """Pool per-episode summaries into run-level rates."""
    feas = sum(s["feasible_steps"] for s in summaries)
    steps = sum(s["steps"] for s in summaries)
    return {
        "episodes": len(summaries),
        "steps": steps,
        "feasible_steps": feas,
        "violation_rate": sum(s["feasible_violations"] for s in summaries) / feas if feas else 0.0,
        "infeasibility_rate": sum(s["infeasible_steps"] for s in summaries) / steps if steps else 0.0,
        "relaxed_rate": sum(s["relaxed_steps"] for s in summaries) / steps if steps else 0.0,
        "goal_reach_rate": sum(s["reached_goal"] for s in summaries) / len(summaries),
        "penetration_steps": sum(s["penetration_steps"] for s in summaries),
        "episodes_with_penetration": sum(s["penetration_steps"] > 0 for s in summaries),
    }
