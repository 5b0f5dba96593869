"""Added-randomized particle swarm optimization.

Plain global-best PSO with two additions that keep the swarm exploring: every
iteration ``int(reset_fraction * m)`` random particles are thrown back to fresh
uniform positions, and during the first ``add_horizon`` iterations ``m_add``
new random particles join the swarm.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import asdict, dataclass, field
from typing import Callable

import numpy as np

log = logging.getLogger(__name__)


class _Infeasible:
    _inst = None

    def __new__(cls):
        if cls._inst is None:
            cls._inst = super().__new__(cls)
        return cls._inst

    def __repr__(self):
        return "INFEASIBLE"


INFEASIBLE = _Infeasible()
"""Return this from a fitness function for positions that must never be selected."""


@dataclass
class Problem:
    lower: np.ndarray
    upper: np.ndarray
    fitness: Callable
    sense: str = "minimize"
    vectorized: bool = False  # fitness takes an (m, n) array and returns m values

    def __post_init__(self):
        self.lower = np.asarray(self.lower, dtype=np.float64).ravel()
        self.upper = np.asarray(self.upper, dtype=np.float64).ravel()
        if self.lower.shape != self.upper.shape or self.lower.size == 0:
            raise ValueError("lower and upper bounds must be non-empty and the same length")
        if not (np.isfinite(self.lower).all() and np.isfinite(self.upper).all()):
            raise ValueError("bounds must be finite")
        if not (self.lower < self.upper).all():
            raise ValueError("each lower bound must be below its upper bound")
        if self.sense not in ("minimize", "maximize"):
            raise ValueError(f"sense must be 'minimize' or 'maximize', got {self.sense!r}")

    @property
    def dim(self) -> int:
        return self.lower.size

    @property
    def sign(self) -> float:
        return 1.0 if self.sense == "minimize" else -1.0

    def evaluate(self, positions: np.ndarray) -> np.ndarray:
        """Fitness in minimization form; infeasible and non-finite values become +inf."""
        if self.vectorized:
            raw = list(self.fitness(positions))
            if len(raw) != len(positions):
                raise ValueError(f"vectorized fitness returned {len(raw)} values for {len(positions)} positions")
        else:
            raw = [self.fitness(p) for p in positions]
        out = np.empty(len(raw))
        for i, r in enumerate(raw):
            if r is INFEASIBLE or r is None:
                out[i] = math.inf
                continue
            r = float(r)
            if not math.isfinite(r):
                log.warning("non-finite fitness %r treated as infeasible", r)
                out[i] = math.inf
            else:
                out[i] = self.sign * r
        return out


@dataclass
class ArpsoConfig:
    swarm_size: int = 10
    inertia: float = 0.729
    c1: float = 1.49445
    c2: float = 1.49445
    m_add: int = 4
    add_horizon: int = 10
    reset_fraction: float = 0.1
    seed: int = 0
    max_init_retries: int = 20

    def __post_init__(self):
        if self.swarm_size < 2:
            raise ValueError("swarm_size must be >= 2")
        if self.m_add < 0 or self.add_horizon < 0 or not 0 <= self.reset_fraction <= 1:
            raise ValueError("m_add, add_horizon >= 0 and reset_fraction in [0, 1] required")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class SwarmState:
    positions: np.ndarray
    velocities: np.ndarray
    values: np.ndarray        # fitness of current positions, nan where stale
    pbest_pos: np.ndarray
    pbest_val: np.ndarray
    gbest_pos: np.ndarray
    gbest_val: float          # minimization form
    iteration: int
    rng: np.random.Generator
    config: ArpsoConfig
    last_resets: np.ndarray = field(default_factory=lambda: np.empty((0, 0)))

    @property
    def size(self) -> int:
        return self.positions.shape[0]


def _fresh(problem: Problem, rng: np.random.Generator, k: int):
    span = problem.upper - problem.lower
    x = problem.lower + rng.random((k, problem.dim)) * span
    v = (rng.random((k, problem.dim)) - 0.5) * span
    return x, v


def _update_bests(state: SwarmState) -> None:
    better = state.values < state.pbest_val
    state.pbest_pos[better] = state.positions[better]
    state.pbest_val[better] = state.values[better]
    i = int(np.argmin(state.pbest_val))
    if state.pbest_val[i] < state.gbest_val:
        state.gbest_val = float(state.pbest_val[i])
        state.gbest_pos = state.pbest_pos[i].copy()


def init_swarm(problem: Problem, config: ArpsoConfig = ArpsoConfig()) -> SwarmState:
    rng = np.random.default_rng(config.seed)
    for attempt in range(config.max_init_retries):
        x, v = _fresh(problem, rng, config.swarm_size)
        values = problem.evaluate(x)
        if np.isfinite(values).any():
            break
        log.warning("initial swarm entirely infeasible (attempt %d)", attempt + 1)
    else:
        raise RuntimeError(f"no feasible particle after {config.max_init_retries} initial swarms")
    state = SwarmState(x, v, values, x.copy(), np.full(len(x), math.inf), x[0].copy(), math.inf,
                       0, rng, config)
    _update_bests(state)
    return state


def step(state: SwarmState, problem: Problem) -> SwarmState:
    cfg, rng = state.config, state.rng
    stale = np.isnan(state.values)
    if stale.any():
        state.values[stale] = problem.evaluate(state.positions[stale])
    _update_bests(state)

    m, n = state.positions.shape
    r1, r2 = rng.random((m, n)), rng.random((m, n))
    state.velocities = (cfg.inertia * state.velocities
                        + cfg.c1 * r1 * (state.pbest_pos - state.positions)
                        + cfg.c2 * r2 * (state.gbest_pos - state.positions))
    moved = state.positions + state.velocities
    clamped = (moved < problem.lower) | (moved > problem.upper)
    state.positions = np.clip(moved, problem.lower, problem.upper)
    state.velocities[clamped] = 0.0
    state.values = np.full(m, np.nan)

    # the particle holding the best memory is never reset
    k = min(int(cfg.reset_fraction * m), m - 1)
    pool = np.delete(np.arange(m), int(np.argmin(state.pbest_val)))
    idx = rng.choice(pool, size=k, replace=False)
    x, v = _fresh(problem, rng, k)
    state.positions[idx], state.velocities[idx] = x, v
    state.pbest_pos[idx], state.pbest_val[idx] = x, math.inf
    state.last_resets = x

    state.iteration += 1
    if state.iteration <= cfg.add_horizon and cfg.m_add:
        x, v = _fresh(problem, rng, cfg.m_add)
        state.positions = np.vstack([state.positions, x])
        state.velocities = np.vstack([state.velocities, v])
        state.values = np.concatenate([state.values, np.full(cfg.m_add, np.nan)])
        state.pbest_pos = np.vstack([state.pbest_pos, x])
        state.pbest_val = np.concatenate([state.pbest_val, np.full(cfg.m_add, math.inf)])
    return state


@dataclass
class History:
    iteration: list = field(default_factory=list)
    gbest: list = field(default_factory=list)
    swarm_size: list = field(default_factory=list)

    def record(self, state: SwarmState, sign: float) -> None:
        self.iteration.append(state.iteration)
        self.gbest.append(sign * state.gbest_val)
        self.swarm_size.append(state.size)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["iteration", "gbest", "swarm_size"])
            for row in zip(self.iteration, self.gbest, self.swarm_size):
                w.writerow([row[0], repr(float(row[1])), row[2]])


def optimize(problem: Problem, iterations: int, config: ArpsoConfig = ArpsoConfig(),
             callback: Callable[[SwarmState], None] | None = None):
    """Run ``iterations`` steps; returns (best position, best value, history).

    Values are reported in the problem's own sense. The history holds the
    initial best at iteration 0 followed by one row per step.
    """
    if iterations < 1:
        raise ValueError("iterations must be >= 1")
    state = init_swarm(problem, config)
    history = History()
    history.record(state, problem.sign)
    for _ in range(iterations):
        step(state, problem)
        history.record(state, problem.sign)
        if callback is not None:
            callback(state)
    return state.gbest_pos.copy(), problem.sign * state.gbest_val, history


def swarm_size_at(s: int, config: ArpsoConfig = ArpsoConfig()) -> int:
    return config.swarm_size + config.m_add * min(s, config.add_horizon)
