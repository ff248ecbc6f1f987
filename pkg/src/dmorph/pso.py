"""Particle swarm search over initial-field parameters for extremal path-length ratio.

A particle is the 40-vector ``(a_1..a_20, phi_1..phi_20)`` of a
:class:`~dmorph.dynamics.FieldParametrization`.  Its objective is the R of a
full normalize-and-climb started from the synthesized field.

Velocity update (default, ``cognitive="printed"``)::

    v <- C0(g) v + C1 S1 (x_swarm - x_best_k) + C2 S2 (x_swarm - x_k)

with ``S1``, ``S2`` diagonal 0/1 masks redrawn per particle per generation and
``C0(g) = 0.9 - (g - 1)/150``.  ``cognitive="conventional"`` replaces the first
difference with ``x_best_k - x_k``.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from functools import partial
from typing import Callable, Optional

import numpy as np

from .dynamics import N_COMPONENTS, FieldParametrization, SystemSpec, TimeGrid, TransitionSpec, \
    synthesize_field
from .errors import DmorphError
from .flow import FlowConfig, climb, normalize_to_start
from .metrics import compute_r

log = logging.getLogger(__name__)

DIM = 2 * N_COMPONENTS
LOWER = np.zeros(DIM)
UPPER = np.concatenate([np.ones(N_COMPONENTS), np.full(N_COMPONENTS, 2 * np.pi)])


@dataclass(frozen=True)
class PsoConfig:
    particles: int = 50
    generations: int = 50
    c1: float = 0.5
    c2: float = 1.5
    sense: str = "min"
    seed: int = 0
    cognitive: str = "printed"

    def __post_init__(self):
        if self.particles < 1:
            raise ValueError("need at least one particle")
        if self.generations < 0:
            raise ValueError("generations must be nonnegative")
        if self.sense not in ("min", "max"):
            raise ValueError("sense must be 'min' or 'max'")
        if self.cognitive not in ("printed", "conventional"):
            raise ValueError("cognitive must be 'printed' or 'conventional'")
        if self.inertia(max(self.generations, 1)) <= 0:
            raise ValueError("inertia schedule turns nonpositive within the generation budget")

    @staticmethod
    def inertia(g: int) -> float:
        return 0.9 - (g - 1) / 150.0

    @property
    def worst(self) -> float:
        return math.inf if self.sense == "min" else -math.inf

    def better(self, a: float, b: float) -> bool:
        return a < b if self.sense == "min" else a > b


@dataclass(frozen=True)
class Evaluation:
    r: float
    ok: bool
    d_pl: float = math.nan
    d_el: float = math.nan
    s_max: float = math.nan
    steps: int = 0
    message: str = ""


def evaluate_particle(system: SystemSpec, trans: TransitionSpec, position,
                      flow_config: FlowConfig = FlowConfig(), grid: TimeGrid = TimeGrid()) -> Evaluation:
    """Synthesize, normalize to the start value, climb and measure R.

    Raises for invalid positions and for any failure along the way; the swarm
    catches these and scores the particle as worst.
    """
    params = FieldParametrization.from_vector(position)
    start = normalize_to_start(system, trans, synthesize_field(params, grid), flow_config)
    traj = climb(system, trans, start, flow_config)
    m = compute_r(traj)
    return Evaluation(r=m.r, ok=True, d_pl=m.d_pl, d_el=m.d_el, s_max=m.s_max, steps=traj.steps)


def _safe_evaluate(objective, position):
    try:
        return objective(position)
    except (DmorphError, ValueError) as exc:
        return Evaluation(r=math.nan, ok=False, message=f"{type(exc).__name__}: {exc}")


@dataclass
class Particle:
    position: np.ndarray
    velocity: np.ndarray
    best_position: np.ndarray
    best_value: float
    value: float
    rng: np.random.Generator = field(repr=False)
    restarted: bool = False


@dataclass(frozen=True)
class LogEntry:
    generation: int
    particle: int
    evaluation: Evaluation
    best_so_far: float


@dataclass
class SwarmState:
    config: PsoConfig
    particles: list
    generation: int = 0
    best_position: Optional[np.ndarray] = None
    best_value: float = math.nan
    log: list = field(default_factory=list)
    best_history: list = field(default_factory=list)
    diversity: list = field(default_factory=list)

    @property
    def best_params(self) -> FieldParametrization:
        return FieldParametrization.from_vector(self.best_position)


def velocity_update(particle: Particle, swarm_best: np.ndarray, g: int, config: PsoConfig,
                    rng: np.random.Generator) -> np.ndarray:
    s1 = rng.integers(0, 2, size=particle.position.size)
    s2 = rng.integers(0, 2, size=particle.position.size)
    if config.cognitive == "printed":
        cognitive = swarm_best - particle.best_position
    else:
        cognitive = particle.best_position - particle.position
    return (config.inertia(g) * particle.velocity + config.c1 * s1 * cognitive
            + config.c2 * s2 * (swarm_best - particle.position))


def clamp(position: np.ndarray) -> np.ndarray:
    return np.clip(position, LOWER, UPPER)


def _diversity(particles) -> float:
    x = np.array([p.position for p in particles])
    if len(x) < 2:
        return 0.0
    d = np.sqrt(((x[:, None, :] - x[None, :, :]) ** 2).sum(-1))
    return float(d[np.triu_indices(len(x), 1)].mean())


def run_swarm(system: SystemSpec, trans: TransitionSpec, config: PsoConfig = PsoConfig(),
              flow_config: FlowConfig = FlowConfig(), grid: TimeGrid = TimeGrid(),
              objective: Optional[Callable] = None, mapper=map,
              on_generation: Optional[Callable] = None) -> SwarmState:
    """Run generation 0 (random swarm) plus ``config.generations`` velocity updates.

    ``objective(position) -> Evaluation`` defaults to :func:`evaluate_particle`.
    ``mapper`` may be a pool's ``map``; each particle owns an RNG stream spawned
    from the master seed, so results do not depend on scheduling.
    """
    if objective is None:
        objective = partial(evaluate_particle, system, trans, flow_config=flow_config, grid=grid)

    streams = np.random.SeedSequence(config.seed).spawn(config.particles)
    particles = []
    for ss in streams:
        rng = np.random.default_rng(ss)
        x = rng.uniform(LOWER, UPPER)
        particles.append(Particle(x, np.zeros(DIM), x.copy(), config.worst, config.worst, rng))
    state = SwarmState(config=config, particles=particles)

    for g in range(config.generations + 1):
        if g > 0:
            for p in particles:
                if p.restarted:
                    p.restarted = False
                    continue
                p.velocity = velocity_update(p, state.best_position, g, config, p.rng)
                p.position = clamp(p.position + p.velocity)
        evals = list(mapper(partial(_safe_evaluate, objective), [p.position for p in particles]))
        if not any(e.ok for e in evals) and state.best_position is None:
            raise DmorphError("every particle failed in the first generation")
        for k, (p, ev) in enumerate(zip(particles, evals)):
            p.value = ev.r if ev.ok else config.worst
            if ev.ok and config.better(p.value, p.best_value):
                p.best_value = p.value
                p.best_position = p.position.copy()
            if ev.ok and (state.best_position is None or config.better(p.value, state.best_value)):
                state.best_value = p.value
                state.best_position = p.position.copy()
            state.log.append(LogEntry(g, k, ev, state.best_value))
            if not ev.ok:
                log.warning("generation %d particle %d failed: %s", g, k, ev.message)
        for p, ev in zip(particles, evals):
            if not ev.ok:
                # failed particles restart from a fresh random point
                p.position = p.rng.uniform(LOWER, UPPER)
                p.velocity = np.zeros(DIM)
                p.restarted = True
        state.generation = g
        state.best_history.append(state.best_value)
        state.diversity.append(_diversity(particles))
        log.info("generation %d best R=%.6f", g, state.best_value)
        if on_generation is not None:
            on_generation(state)
    return state
