"""D-MORPH gradient flow on the transition-probability landscape.

The flow ``dE/ds = dP/dE`` is integrated with explicit Euler steps whose size is
controlled by the observable itself: a step is kept only if P moves in the
requested direction (up to round-off) and by no more than ``max_dp``.  The step
that crosses the target is shortened with a bracketing root finder so that every
trajectory ends inside the same narrow window.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.optimize import brentq

from .dynamics import (
    ControlField,
    SystemSpec,
    TransitionSpec,
    probability_and_gradient,
    transition_probability,
    weighted_norm,
)
from .errors import FlowStall, StepBudgetExceeded

log = logging.getLogger(__name__)

MONOTONE_TOL = 1e-12
GROWTH = 1.25
GROW_AFTER = 3


@dataclass(frozen=True)
class FlowConfig:
    p_start: float = 0.01
    p_end: float = 0.99
    endpoint_tol: float = 1e-6
    grad_floor: float = 1e-10
    h0: float = 1.0
    max_dp: float = 5e-3
    max_steps: int = 20000
    stride: int = 1

    def __post_init__(self):
        if not 0 < self.p_start < self.p_end < 1:
            raise ValueError("need 0 < p_start < p_end < 1")
        if not 0 < self.endpoint_tol < self.p_end - self.p_start:
            raise ValueError("endpoint_tol must be positive and below p_end - p_start")
        if not (self.h0 > 0 and self.max_dp > 0 and self.grad_floor >= 0):
            raise ValueError("h0 and max_dp must be positive, grad_floor nonnegative")
        if self.max_steps < 1 or self.stride < 1:
            raise ValueError("max_steps and stride must be at least 1")


@dataclass(frozen=True)
class TrajectoryRecord:
    """Snapshots of one control trajectory.

    ``fields`` has one row per snapshot.  ``velocities`` holds ``dE/ds`` at the
    snapshots when the trajectory was constructed rather than integrated (for a
    gradient climb the velocity is the gradient and is recomputed on demand).
    """

    s: np.ndarray
    fields: np.ndarray
    probabilities: np.ndarray
    grad_norms: np.ndarray
    grid: object
    converged: bool = True
    steps: int = 0
    rejections: int = 0
    kind: str = "gradient"
    velocities: Optional[np.ndarray] = None
    provenance: dict = field(default_factory=dict)

    @property
    def s_max(self) -> float:
        return float(self.s[-1])

    @property
    def n_snapshots(self) -> int:
        return len(self.s)

    def field_at(self, k: int) -> ControlField:
        return ControlField(self.grid, self.fields[k])

    @property
    def start(self) -> ControlField:
        return self.field_at(0)

    @property
    def end(self) -> ControlField:
        return self.field_at(-1)


def _reached(p, target, direction, tol):
    return direction * (p - target) >= -tol


def _flow(system, trans, field, target, config, snapshots=False):
    """Shared Euler engine for climbs (direction +1) and descents (-1)."""
    grid = field.grid
    E = field.amplitudes.copy()
    p, g = probability_and_gradient(system, field, trans)
    direction = 1.0 if target > p else -1.0
    gnorm = weighted_norm(g, grid)

    rec_s, rec_E, rec_p, rec_g = [0.0], [E.copy()], [p], [gnorm]
    s = 0.0
    h = config.h0
    streak = steps = rejections = 0

    def prob_along(x):
        return transition_probability(system, ControlField(grid, E + direction * x * g), trans)

    if abs(p - target) <= config.endpoint_tol:
        return E, p, (rec_s, rec_E, rec_p, rec_g), steps, rejections

    while True:
        if gnorm < config.grad_floor:
            raise FlowStall(f"gradient norm {gnorm:.3e} below floor at P={p:.6g}", p, s)
        if steps >= config.max_steps:
            raise StepBudgetExceeded(f"no convergence after {steps} steps, P={p:.6g}", p, s)
        trial = E + direction * h * g
        pt, gt = probability_and_gradient(system, ControlField(grid, trial), trans)
        dp = direction * (pt - p)
        if dp < -MONOTONE_TOL or dp > config.max_dp:
            h *= 0.5
            streak = 0
            rejections += 1
            if h * gnorm < 1e-300:
                raise FlowStall(f"step size underflow at P={p:.6g}", p, s)
            continue
        if _reached(pt, target, direction, 0.0):
            x = h
            if abs(pt - target) > config.endpoint_tol:
                x = brentq(lambda x: prob_along(x) - target, 0.0, h, xtol=1e-14 * h, rtol=1e-15)
            E = E + direction * x * g
            p, g = probability_and_gradient(system, ControlField(grid, E), trans)
            s += x
            steps += 1
            gnorm = weighted_norm(g, grid)
            rec_s.append(s), rec_E.append(E.copy()), rec_p.append(p), rec_g.append(gnorm)
            break
        E, p, g = trial, pt, gt
        gnorm = weighted_norm(g, grid)
        s += h
        steps += 1
        streak += 1
        if streak >= GROW_AFTER:
            h *= GROWTH
            streak = 0
        if snapshots and steps % config.stride == 0:
            rec_s.append(s), rec_E.append(E.copy()), rec_p.append(p), rec_g.append(gnorm)
    if abs(p - target) > config.endpoint_tol:
        raise StepBudgetExceeded(f"endpoint P={p:.12g} misses target {target}", p, s)
    return E, p, (rec_s, rec_E, rec_p, rec_g), steps, rejections


def normalize_to_start(system: SystemSpec, trans: TransitionSpec, trial: ControlField,
                       config: FlowConfig = FlowConfig()) -> ControlField:
    """Flow ``trial`` up or down the landscape until P sits at ``config.p_start``."""
    p = transition_probability(system, trial, trans)
    if abs(p - config.p_start) <= config.endpoint_tol:
        return trial
    E, _, _, steps, _ = _flow(system, trans, trial, config.p_start, config)
    log.debug("normalized P=%.6g -> %.6g in %d steps", p, config.p_start, steps)
    return ControlField(trial.grid, E)


def climb(system: SystemSpec, trans: TransitionSpec, start: ControlField,
          config: FlowConfig = FlowConfig(), provenance: Optional[dict] = None) -> TrajectoryRecord:
    """Ascend from ``start`` to ``config.p_end`` and record the control trajectory.

    A start that already sits at (or above) the top window returns a single
    snapshot trajectory with ``s_max = 0``.
    """
    grid = start.grid
    p0 = transition_probability(system, start, trans)
    if p0 >= config.p_end - config.endpoint_tol:
        _, g = probability_and_gradient(system, start, trans)
        return TrajectoryRecord(
            s=np.zeros(1), fields=start.amplitudes[None, :].copy(), probabilities=np.array([p0]),
            grad_norms=np.array([weighted_norm(g, grid)]), grid=grid, converged=True,
            provenance=dict(provenance or {}),
        )
    _, _, (rs, rE, rp, rg), steps, rejections = _flow(
        system, trans, start, config.p_end, config, snapshots=True
    )
    return TrajectoryRecord(
        s=np.array(rs), fields=np.array(rE), probabilities=np.array(rp), grad_norms=np.array(rg),
        grid=grid, converged=True, steps=steps, rejections=rejections,
        provenance=dict(provenance or {}),
    )


def straight_flow_synthetic(E0: ControlField, dE: ControlField, alpha, s=None,
                            system: Optional[SystemSpec] = None,
                            trans: Optional[TransitionSpec] = None) -> TrajectoryRecord:
    """Trajectory ``E(s) = E0 + Gamma(s) * dE`` with ``Gamma`` the normalized integral of ``alpha``.

    ``alpha`` is sampled on ``s`` (default: a uniform unit grid).  Probabilities
    are filled in only when a system and transition are supplied.
    """
    alpha = np.asarray(alpha, dtype=float)
    if alpha.ndim != 1 or alpha.size < 2:
        raise ValueError("alpha needs at least two samples")
    if np.any(alpha < 0):
        raise ValueError("alpha must be nonnegative")
    s = np.linspace(0.0, 1.0, alpha.size) if s is None else np.asarray(s, dtype=float)
    if s.shape != alpha.shape or np.any(np.diff(s) <= 0):
        raise ValueError("s must be strictly increasing and match alpha")
    cumulative = np.concatenate([[0.0], np.cumsum(0.5 * (alpha[1:] + alpha[:-1]) * np.diff(s))])
    total = cumulative[-1]
    if not total > 0:
        raise ValueError("alpha integrates to zero")
    gamma = cumulative / total
    gamma[-1] = 1.0
    fields = E0.amplitudes[None, :] + gamma[:, None] * dE.amplitudes[None, :]
    velocities = (alpha / total)[:, None] * dE.amplitudes[None, :]
    grid = E0.grid
    if system is not None and trans is not None:
        probs = np.array([transition_probability(system, ControlField(grid, f), trans) for f in fields])
    else:
        probs = np.full(alpha.size, np.nan)
    return TrajectoryRecord(
        s=s.copy(), fields=fields, probabilities=probs,
        grad_norms=np.array([weighted_norm(v, grid) for v in velocities]), grid=grid,
        converged=True, steps=alpha.size - 1, kind="synthetic", velocities=velocities,
    )
