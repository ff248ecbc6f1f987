"""Measurements on control trajectories and collections of fields.

All distances use the time-averaged norm ``||x||_T = [(1/T) int x^2 dt]^(1/2)``.
The 1/T factor cancels in the path-length ratio.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from scipy.spatial.distance import cdist, pdist, squareform

from .dynamics import ControlField, SystemSpec, TimeGrid, TransitionSpec, probability_and_gradient, \
    transition_probability, weighted_norm
from .errors import DegenerateTrajectory, DmorphError
from .flow import TrajectoryRecord

MIN_EUCLIDEAN = 1e-12


@dataclass(frozen=True)
class BoundCheck:
    d_pl: float
    bound: float
    applicable: bool
    satisfied: Optional[bool]

    @property
    def slack(self) -> float:
        return self.bound - self.d_pl


@dataclass(frozen=True)
class RMetrics:
    d_pl: float
    d_el: float
    r: float
    s_max: float
    bound: Optional[float] = None
    bound_satisfied: Optional[bool] = None


def _scaled(fields, grid: TimeGrid) -> np.ndarray:
    # rows scaled so that plain Euclidean distance equals the weighted norm
    return np.asarray(fields, dtype=float) * np.sqrt(grid.weights / grid.T)[None, :]


def path_length(traj: TrajectoryRecord) -> float:
    if traj.n_snapshots < 2:
        return 0.0
    steps = np.diff(_scaled(traj.fields, traj.grid), axis=0)
    return float(np.sum(np.sqrt(np.sum(steps * steps, axis=1))))


def check_pl_bound(traj: TrajectoryRecord, system: SystemSpec) -> BoundCheck:
    """Compare the path length with ``(2/hbar) * s_max * ||mu||`` (spectral norm).

    The bound only holds for gradient flows; for other trajectories it is
    reported with ``applicable=False`` and ``satisfied=None``.
    """
    d_pl = path_length(traj)
    bound = 2.0 / system.hbar * traj.s_max * system.dipole_norm
    if traj.kind != "gradient":
        return BoundCheck(d_pl, bound, False, None)
    # round-off allowance for the zero-length case and long sums
    return BoundCheck(d_pl, bound, True, bool(d_pl <= bound * (1 + 1e-12) + 1e-15))


def compute_r(traj: TrajectoryRecord, system: Optional[SystemSpec] = None) -> RMetrics:
    if traj.n_snapshots < 2:
        raise DegenerateTrajectory("path-length ratio needs at least two snapshots")
    d_pl = path_length(traj)
    d_el = weighted_norm(traj.fields[-1] - traj.fields[0], traj.grid)
    if d_el < MIN_EUCLIDEAN:
        raise DegenerateTrajectory(f"endpoint distance {d_el:.3e} is degenerate")
    bound = satisfied = None
    if system is not None:
        chk = check_pl_bound(traj, system)
        bound, satisfied = chk.bound, chk.satisfied
    return RMetrics(d_pl=d_pl, d_el=d_el, r=d_pl / d_el, s_max=traj.s_max, bound=bound,
                    bound_satisfied=satisfied)


def _common_grid(fields: Sequence[ControlField]) -> TimeGrid:
    grid = fields[0].grid
    for f in fields[1:]:
        if f.grid != grid:
            raise ValueError("fields live on different time grids")
    return grid


def pairwise_distances(fields: Sequence[ControlField]) -> np.ndarray:
    """Symmetric matrix of weighted distances between every pair of fields."""
    if len(fields) < 2:
        raise ValueError("need at least two fields")
    grid = _common_grid(fields)
    return squareform(pdist(_scaled([f.amplitudes for f in fields], grid)))


def cross_distances(a: Sequence[ControlField], b: Sequence[ControlField]) -> np.ndarray:
    grid = _common_grid(list(a) + list(b))
    return cdist(_scaled([f.amplitudes for f in a], grid), _scaled([f.amplitudes for f in b], grid))


def upper_values(dist: np.ndarray) -> np.ndarray:
    return dist[np.triu_indices_from(dist, k=1)]


@dataclass(frozen=True)
class DistanceSummary:
    count: int
    mean: float
    variance: float
    edges: np.ndarray
    counts: np.ndarray


def summarize_distances(values, edges=None) -> DistanceSummary:
    values = np.asarray(values, dtype=float)
    if edges is None:
        edges = np.linspace(0.0, 2.0, 81)
    counts, _ = np.histogram(values, bins=edges)
    var = float(np.var(values)) if values.size else float("nan")
    mean = float(np.mean(values)) if values.size else float("nan")
    return DistanceSummary(int(values.size), mean, var, np.asarray(edges), counts)


@dataclass(frozen=True)
class SeparabilityReport:
    G: np.ndarray
    singular_values: np.ndarray
    index: float
    min_cosine: float
    beta: np.ndarray
    alpha: np.ndarray


def separability_index(traj: TrajectoryRecord, system: Optional[SystemSpec] = None,
                       trans: Optional[TransitionSpec] = None) -> SeparabilityReport:
    """How close the flow velocity ``dE/ds`` over (s, t) is to a rank-one product.

    The index is ``sigma_2 / sigma_1`` of the weighted snapshot matrix; it is 0
    for an exactly separable ``alpha(s) * beta(t)``.
    """
    if traj.n_snapshots < 3:
        raise ValueError("separability needs at least three snapshots")
    if traj.velocities is not None:
        G = np.asarray(traj.velocities, dtype=float)
    else:
        if system is None or trans is None:
            raise ValueError("system and transition are needed to recompute gradients")
        G = np.array([probability_and_gradient(system, traj.field_at(k), trans)[1]
                      for k in range(traj.n_snapshots)])
    Gs = _scaled(G, traj.grid)
    U, sv, Vt = np.linalg.svd(Gs, full_matrices=False)
    index = float(sv[1] / sv[0]) if sv[0] > 0 else 0.0
    norms = np.linalg.norm(Gs, axis=1)
    unit = Gs[norms > 0] / norms[norms > 0, None]
    cos = unit @ unit.T
    beta = Vt[0] / np.sqrt(traj.grid.weights / traj.grid.T)
    alpha = U[:, 0] * sv[0]
    if np.sum(alpha) < 0:
        alpha, beta = -alpha, -beta
    return SeparabilityReport(G=G, singular_values=sv, index=index, min_cosine=float(np.min(cos)),
                              beta=beta, alpha=alpha)


@dataclass(frozen=True)
class StraightShotResult:
    u: np.ndarray
    probabilities: np.ndarray
    u_star: float
    p_star: float


def _parabola_vertex(x, y):
    (x0, x1, x2), (y0, y1, y2) = x, y
    denom = (x0 - x1) * (x0 - x2) * (x1 - x2)
    a = (x2 * (y1 - y0) + x1 * (y0 - y2) + x0 * (y2 - y1)) / denom
    b = (x2 * x2 * (y0 - y1) + x1 * x1 * (y2 - y0) + x0 * x0 * (y1 - y2)) / denom
    if a >= 0:
        return x1
    return min(max(-b / (2 * a), x0), x2)


def straight_shot(system: SystemSpec, trans: TransitionSpec, start: ControlField,
                  distance_scale: float = 0.6, fraction: float = 1 / 200,
                  max_distance: float = 20.0, grad_floor: float = 1e-10) -> StraightShotResult:
    """March along the initial gradient and report the first local maximum of P.

    The u-step is chosen so each step moves the field by ``fraction *
    distance_scale`` in the weighted norm; the march gives up after the field
    has moved ``max_distance * distance_scale``.
    """
    p0, g0 = probability_and_gradient(system, start, trans)
    gnorm = weighted_norm(g0, start.grid)
    if not gnorm > grad_floor:
        raise DmorphError("initial gradient vanishes; no direction to march in")
    du = fraction * distance_scale / gnorm
    n_max = int(np.ceil(max_distance / fraction))
    base = start.amplitudes

    def prob(u):
        return transition_probability(system, ControlField(start.grid, base + u * g0), trans)

    us, ps = [0.0], [p0]
    for k in range(1, n_max + 1):
        us.append(k * du)
        ps.append(prob(k * du))
        if len(ps) >= 3 and ps[-3] < ps[-2] > ps[-1]:
            u_star = _parabola_vertex(us[-3:], ps[-3:])
            p_star = prob(u_star)
            if p_star < ps[-2]:
                u_star, p_star = us[-2], ps[-2]
            return StraightShotResult(np.array(us), np.array(ps), float(u_star), float(p_star))
    raise DmorphError("no local maximum of P within the march budget")
