"""Closed-system dynamics under a dipole-coupled control field.

The field is sampled on a uniform grid of ``M + 1`` points and held constant on
each interval at the midpoint value ``(E_j + E_{j+1}) / 2``.  Each interval is
propagated exactly through the eigendecomposition of its (real symmetric)
Hamiltonian, so every cumulative propagator is unitary to round-off.

State indices in :class:`TransitionSpec` are 1-based, matching the usual
``P_{1->5}`` notation; everything internal is 0-based.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import _kernels
from .errors import DegenerateFieldError, PropagationError

N_COMPONENTS = 20
ENVELOPE_WIDTH = 0.3
STANDARD_H0 = (-10.0, -7.0, -3.0, 2.0, 8.0)
DIPOLE_SCENARIOS = ("standard", "free", "restricted")

_PROB_OVERSHOOT = 1e-12


def _frozen(a, dtype=float):
    a = np.array(a, dtype=dtype, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class SystemSpec:
    """Field-free energies ``h0`` (diagonal of H0) and dipole matrix ``mu``."""

    h0: np.ndarray
    mu: np.ndarray
    hbar: float = 1.0
    label: str = ""

    def __post_init__(self):
        h0 = _frozen(self.h0)
        mu = _frozen(self.mu)
        if h0.ndim != 1 or h0.size < 2:
            raise ValueError("h0 must be a vector with at least two levels")
        if mu.shape != (h0.size, h0.size):
            raise ValueError(f"mu has shape {mu.shape}, expected {(h0.size, h0.size)}")
        if not np.allclose(mu, mu.T, rtol=0, atol=0):
            raise ValueError("mu must be symmetric")
        if np.any(np.diag(mu) != 0):
            raise ValueError("mu must have a zero diagonal")
        if not (np.all(np.isfinite(h0)) and np.all(np.isfinite(mu))):
            raise ValueError("system matrices must be finite")
        if not self.hbar > 0:
            raise ValueError("hbar must be positive")
        object.__setattr__(self, "h0", h0)
        object.__setattr__(self, "mu", mu)

    @property
    def dim(self) -> int:
        return self.h0.size

    @property
    def dipole_norm(self) -> float:
        """Spectral norm of ``mu``."""
        return float(np.linalg.norm(self.mu, 2))


@dataclass(frozen=True)
class TimeGrid:
    T: float = 10.0
    M: int = 1000

    def __post_init__(self):
        if not (self.T > 0 and np.isfinite(self.T)):
            raise ValueError("T must be positive and finite")
        if int(self.M) != self.M or self.M < 1:
            raise ValueError("M must be a positive integer")
        object.__setattr__(self, "M", int(self.M))

    @property
    def dt(self) -> float:
        return self.T / self.M

    @property
    def size(self) -> int:
        return self.M + 1

    @property
    def times(self) -> np.ndarray:
        return np.arange(self.M + 1) * self.dt

    @property
    def weights(self) -> np.ndarray:
        """Trapezoid quadrature weights; ``sum(w * x * y)`` approximates the time integral."""
        w = np.full(self.M + 1, self.dt)
        w[0] = w[-1] = 0.5 * self.dt
        return w


@dataclass(frozen=True)
class ControlField:
    grid: TimeGrid
    amplitudes: np.ndarray

    def __post_init__(self):
        a = _frozen(self.amplitudes)
        if a.shape != (self.grid.size,):
            raise ValueError(f"field has {a.shape} samples, grid expects ({self.grid.size},)")
        if not np.all(np.isfinite(a)):
            raise PropagationError("field contains non-finite values")
        object.__setattr__(self, "amplitudes", a)

    @classmethod
    def zeros(cls, grid: TimeGrid) -> "ControlField":
        return cls(grid, np.zeros(grid.size))

    def midpoints(self) -> np.ndarray:
        a = self.amplitudes
        return 0.5 * (a[1:] + a[:-1])

    def norm(self) -> float:
        return weighted_norm(self.amplitudes, self.grid)

    def fluence(self) -> float:
        return float(np.sum(self.grid.weights * self.amplitudes**2))


def weighted_norm(x, grid: TimeGrid) -> float:
    """``[(1/T) * integral x(t)^2 dt] ** 0.5`` on the grid."""
    x = np.asarray(x, dtype=float)
    return float(np.sqrt(np.sum(grid.weights * x * x) / grid.T))


@dataclass(frozen=True)
class FieldParametrization:
    """Twenty sine components under a Gaussian envelope, normalized to unit peak."""

    amplitudes: np.ndarray
    phases: np.ndarray
    envelope_width: float = ENVELOPE_WIDTH

    def __post_init__(self):
        a = _frozen(self.amplitudes)
        p = _frozen(self.phases)
        if a.shape != (N_COMPONENTS,) or p.shape != (N_COMPONENTS,):
            raise ValueError(f"need exactly {N_COMPONENTS} amplitudes and phases")
        if np.any(a < 0) or np.any(a > 1):
            raise ValueError("amplitudes must lie in [0, 1]")
        if np.any(p < 0) or np.any(p > 2 * np.pi):
            raise ValueError("phases must lie in [0, 2*pi]")
        object.__setattr__(self, "amplitudes", a)
        object.__setattr__(self, "phases", p)

    @classmethod
    def random(cls, rng: np.random.Generator) -> "FieldParametrization":
        a = rng.uniform(0.0, 1.0, N_COMPONENTS)
        p = rng.uniform(0.0, 2 * np.pi, N_COMPONENTS)
        return cls(a, p)

    @classmethod
    def from_vector(cls, x) -> "FieldParametrization":
        x = np.asarray(x, dtype=float)
        return cls(x[:N_COMPONENTS], x[N_COMPONENTS:])

    def to_vector(self) -> np.ndarray:
        return np.concatenate([self.amplitudes, self.phases])


@dataclass(frozen=True)
class TransitionSpec:
    initial: int = 1
    final: int = 5

    def __post_init__(self):
        if self.initial == self.final:
            raise ValueError("initial and final states must differ")
        if self.initial < 1 or self.final < 1:
            raise ValueError("state indices are 1-based")

    def check(self, system: SystemSpec) -> tuple[int, int]:
        if self.initial > system.dim or self.final > system.dim:
            raise ValueError(f"transition {self.initial}->{self.final} outside a {system.dim}-level system")
        return self.initial - 1, self.final - 1


@dataclass(frozen=True)
class PropagationResult:
    final: np.ndarray
    history: Optional[np.ndarray] = None
    probability: Optional[float] = None


def _eigensystem(system: SystemSpec, field: ControlField):
    if not isinstance(field, ControlField):
        raise TypeError("field must be a ControlField")
    h0 = np.ascontiguousarray(system.h0 / system.hbar)
    mu = np.ascontiguousarray(system.mu / system.hbar)
    return _kernels.eigensystem(h0, mu, np.ascontiguousarray(field.midpoints()))


def _checked_probability(amp) -> float:
    p = abs(amp) ** 2
    if not np.isfinite(p) or p < -_PROB_OVERSHOOT or p > 1 + _PROB_OVERSHOOT:
        raise PropagationError(f"transition probability {p!r} outside [0, 1]; propagator is broken")
    return min(max(p, 0.0), 1.0)


def propagate(system: SystemSpec, field: ControlField, keep_history: bool = False,
              trans: Optional[TransitionSpec] = None) -> PropagationResult:
    lam, vecs = _eigensystem(system, field)
    U = _kernels.propagators(lam, vecs, field.grid.dt)
    prob = None
    if trans is not None:
        i, f = trans.check(system)
        prob = _checked_probability(U[-1, f, i])
    final = U[-1].copy()
    return PropagationResult(final=final, history=U if keep_history else None, probability=prob)


def transition_probability(system: SystemSpec, field: ControlField, trans: TransitionSpec) -> float:
    i, f = trans.check(system)
    lam, vecs = _eigensystem(system, field)
    psi0 = np.zeros(system.dim, dtype=complex)
    psi0[i] = 1.0
    psi = _kernels.final_state(lam, vecs, field.grid.dt, psi0)
    return _checked_probability(psi[f])


def probability_and_gradient(system: SystemSpec, field: ControlField,
                             trans: TransitionSpec) -> tuple[float, np.ndarray]:
    """Transition probability and its functional derivative at every grid point.

    The derivative is exact for the discretized dynamics: ``sum(w * g * dE)``
    equals the first-order change of P for a perturbation ``dE`` of the grid
    values, with ``w`` the trapezoid weights of the grid.
    """
    i, f = trans.check(system)
    lam, vecs = _eigensystem(system, field)
    mu = np.ascontiguousarray(system.mu / system.hbar)
    grid = field.grid
    amp, d_interval = _kernels.interval_gradient(lam, vecs, mu, grid.dt, i, f)
    d_grid = np.zeros(grid.size)
    d_grid[:-1] += 0.5 * d_interval
    d_grid[1:] += 0.5 * d_interval
    return _checked_probability(amp), d_grid / grid.weights


def gradient(system: SystemSpec, field: ControlField, trans: TransitionSpec) -> np.ndarray:
    return probability_and_gradient(system, field, trans)[1]


def sampled_gradient(system: SystemSpec, field: ControlField, trans: TransitionSpec) -> np.ndarray:
    """Continuum gradient formula evaluated with the grid-point propagators.

    ``-(2/hbar) Im{<i|U^+(T)|f><f|U(T) U^+(t) mu U(t)|i>}``.  Agrees with
    :func:`gradient` to O(dt^2); kept for cross-checking.
    """
    i, f = trans.check(system)
    U = propagate(system, field, keep_history=True).history
    UT = U[-1]
    bra = UT[f] @ np.conj(np.transpose(U, (0, 2, 1)))
    ket = U[:, :, i]
    inner = np.einsum("ka,ab,kb->k", bra, system.mu, ket)
    return -(2.0 / system.hbar) * np.imag(np.conj(UT[f, i]) * inner)


def population_dynamics(system: SystemSpec, field: ControlField, initial: int) -> np.ndarray:
    """Populations ``P_{initial->k}(t_j)`` as an ``(M+1, N)`` array (1-based ``initial``)."""
    if not 1 <= initial <= system.dim:
        raise ValueError(f"initial state {initial} outside 1..{system.dim}")
    lam, vecs = _eigensystem(system, field)
    psi0 = np.zeros(system.dim, dtype=complex)
    psi0[initial - 1] = 1.0
    psi = _kernels.states(lam, vecs, field.grid.dt, psi0)
    return np.abs(psi) ** 2


def synthesize_field(params: FieldParametrization, grid: TimeGrid) -> ControlField:
    t = grid.times
    omega = np.arange(1, N_COMPONENTS + 1, dtype=float)
    carrier = params.amplitudes @ np.sin(np.outer(omega, t) + params.phases[:, None])
    raw = np.exp(-params.envelope_width * (t - grid.T / 2) ** 2) * carrier
    peak = np.max(np.abs(raw))
    if not peak > 0:
        raise DegenerateFieldError("field parametrization has zero amplitude everywhere")
    return ControlField(grid, raw / peak)


def _dipole_magnitudes(scenario: str, n: int) -> np.ndarray:
    j, k = np.indices((n, n))
    gap = np.abs(j - k)
    if scenario == "standard":
        mag = np.where(gap > 0, 0.5 ** np.maximum(gap - 1, 0), 0.0)
    elif scenario == "free":
        mag = (gap > 0).astype(float)
    elif scenario == "restricted":
        mag = (gap == 1).astype(float)
    else:
        raise ValueError(f"unknown dipole scenario {scenario!r}; expected one of {DIPOLE_SCENARIOS}")
    return mag


def random_dipole(scenario: str = "standard", seed: int = 0, n: int = 5) -> np.ndarray:
    """Dipole matrix of a named coupling pattern with seeded random signs.

    ``standard`` has ``|mu_jk| = 0.5**(|j-k|-1)``, ``free`` couples all pairs with
    unit strength and ``restricted`` only nearest neighbours.
    """
    mag = _dipole_magnitudes(scenario, n)
    rng = np.random.default_rng(seed)
    signs = rng.choice([-1.0, 1.0], size=(n, n))
    upper = np.triu(signs * mag, 1)
    return upper + upper.T


def standard_system(scenario: str = "standard", dipole_seed: int = 0) -> SystemSpec:
    """The five-level system used throughout the experiments."""
    mu = random_dipole(scenario, dipole_seed, len(STANDARD_H0))
    return SystemSpec(np.array(STANDARD_H0), mu, label=f"{scenario}/seed={dipole_seed}")
