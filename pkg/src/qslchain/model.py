"""Chain geometry, control pulses and the reduced single-excitation Hamiltonian.

The chain lives in the N-dimensional sector spanned by the states with a
single up-spin. In that sector the Hamiltonian is a real symmetric
tridiagonal matrix: a static hopping part plus a diagonal control term
produced by a parabolic field ``C(t) * (x_n - d(t))**2``.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "InvalidConfigError",
    "ChainConfig",
    "ControlPulse",
    "make_chain",
    "control_field",
    "static_hamiltonian",
    "static_bands",
    "control_hamiltonian",
    "basis_state",
    "linear_ramp",
]

_GRID_RTOL = 1e-9


class InvalidConfigError(ValueError):
    """Raised for chain or pulse parameters that cannot describe a run."""


@dataclass(frozen=True)
class ChainConfig:
    """Static description of the chain and its time grid.

    Attributes
    ----------
    n_sites : int
        Number of spins N.
    coupling_J : float
        Uniform nearest-neighbour coupling.
    positions : np.ndarray
        Site coordinates x_n, strictly increasing.
    dt : float
        Integration step in units of 1/J.
    total_time : float
        Transfer time T, an integer multiple of ``dt``.
    """

    n_sites: int
    coupling_J: float
    positions: np.ndarray = field(repr=False)
    dt: float
    total_time: float

    def __post_init__(self):
        if self.n_sites < 2:
            raise InvalidConfigError(f"n_sites must be >= 2, got {self.n_sites}")
        if not (self.coupling_J > 0 and np.isfinite(self.coupling_J)):
            raise InvalidConfigError(f"coupling_J must be positive, got {self.coupling_J}")
        if not (self.dt > 0 and np.isfinite(self.dt)):
            raise InvalidConfigError(f"dt must be positive, got {self.dt}")
        if self.total_time < 0:
            raise InvalidConfigError(f"total_time must be >= 0, got {self.total_time}")
        pos = np.array(self.positions, dtype=float)
        if pos.shape != (self.n_sites,):
            raise InvalidConfigError("positions must have length n_sites")
        if np.any(np.diff(pos) <= 0):
            raise InvalidConfigError("positions must be strictly increasing")
        steps = self.total_time / self.dt
        if abs(steps - round(steps)) > _GRID_RTOL * max(1.0, steps):
            raise InvalidConfigError("total_time must be an integer multiple of dt")
        pos.setflags(write=False)
        object.__setattr__(self, "positions", pos)

    @property
    def n_steps(self) -> int:
        return int(round(self.total_time / self.dt))

    @property
    def times(self) -> np.ndarray:
        return np.arange(self.n_steps + 1) * self.dt

    def with_time(self, total_time: float) -> "ChainConfig":
        """Same chain, new transfer time (rounded onto the dt grid)."""
        return make_chain(self.n_sites, self.coupling_J, self.dt, total_time,
                          positions=self.positions)


def make_chain(n_sites, coupling_J=1.0, dt=0.01, total_time=1.0, positions=None):
    """Build a :class:`ChainConfig`, rounding ``total_time`` onto the dt grid.

    Sites default to unit spacing starting at x = 0.
    """
    if int(n_sites) != n_sites or n_sites < 2:
        raise InvalidConfigError(f"n_sites must be an integer >= 2, got {n_sites}")
    if not coupling_J > 0:
        raise InvalidConfigError(f"coupling_J must be positive, got {coupling_J}")
    if not dt > 0:
        raise InvalidConfigError(f"dt must be positive, got {dt}")
    if total_time < 0:
        raise InvalidConfigError(f"total_time must be >= 0, got {total_time}")
    n_sites = int(n_sites)
    if positions is None:
        positions = np.arange(n_sites, dtype=float)
    steps = int(round(total_time / dt))
    return ChainConfig(n_sites, float(coupling_J), np.asarray(positions, dtype=float),
                       float(dt), steps * float(dt))


@dataclass(frozen=True)
class ControlPulse:
    """Field-minimum position ``d`` and strength ``C`` sampled on the time grid."""

    d_samples: np.ndarray
    c_samples: np.ndarray
    dt: float

    def __post_init__(self):
        d = np.array(self.d_samples, dtype=float)
        c = np.array(self.c_samples, dtype=float)
        if d.ndim != 1 or d.shape != c.shape or d.size < 1:
            raise InvalidConfigError("d and C samples must be 1-D arrays of equal length")
        if not (self.dt > 0):
            raise InvalidConfigError("pulse dt must be positive")
        if np.any(c < 0):
            raise InvalidConfigError("C samples must be non-negative")
        if not (np.all(np.isfinite(d)) and np.all(np.isfinite(c))):
            raise InvalidConfigError("pulse samples must be finite")
        d.setflags(write=False)
        c.setflags(write=False)
        object.__setattr__(self, "d_samples", d)
        object.__setattr__(self, "c_samples", c)
        object.__setattr__(self, "dt", float(self.dt))

    @property
    def n_steps(self) -> int:
        return self.d_samples.size - 1

    @property
    def times(self) -> np.ndarray:
        return np.arange(self.d_samples.size) * self.dt

    def midpoints(self) -> tuple[np.ndarray, np.ndarray]:
        """Controls at the step midpoints (linear interpolation)."""
        d, c = self.d_samples, self.c_samples
        return 0.5 * (d[1:] + d[:-1]), 0.5 * (c[1:] + c[:-1])

    def matches(self, cfg: ChainConfig) -> bool:
        return (self.n_steps == cfg.n_steps
                and abs(self.dt - cfg.dt) <= _GRID_RTOL * cfg.dt)


def linear_ramp(cfg: ChainConfig, speed=None, strength=1.0) -> ControlPulse:
    """Baseline pulse d(t) = s*t, C(t) = k.

    ``speed`` defaults to (x_N - x_1)/T so the minimum reaches the last site
    exactly at the final time.
    """
    t = cfg.times
    if speed is None:
        span = cfg.positions[-1] - cfg.positions[0]
        speed = span / cfg.total_time if cfg.total_time > 0 else 0.0
    d = cfg.positions[0] + speed * t
    return ControlPulse(d, np.full_like(t, float(strength)), cfg.dt)


def control_field(strength, minimum, position):
    """Parabolic field value ``strength * (position - minimum)**2``."""
    return strength * (position - minimum) ** 2


def static_bands(cfg: ChainConfig) -> tuple[np.ndarray, np.ndarray]:
    """Diagonal and off-diagonal of the static Hamiltonian."""
    J = cfg.coupling_J
    diag = np.full(cfg.n_sites, -2.0 * J)
    diag[0] += J
    diag[-1] += J
    return diag, np.full(cfg.n_sites - 1, J)


def static_hamiltonian(cfg: ChainConfig) -> np.ndarray:
    """Dense static part: hopping J, on-site -2J with +J at both ends."""
    diag, off = static_bands(cfg)
    return np.diag(diag) + np.diag(off, 1) + np.diag(off, -1)


def control_hamiltonian(cfg: ChainConfig, strength, minimum) -> np.ndarray:
    """Diagonal of the control term at one instant."""
    if strength < 0:
        raise InvalidConfigError(f"field strength must be >= 0, got {strength}")
    return control_field(strength, minimum, cfg.positions)


def basis_state(cfg: ChainConfig, site: int) -> np.ndarray:
    """Excitation localised on ``site`` (1-based, as in |phi_1> ... |phi_N>)."""
    if not 1 <= site <= cfg.n_sites:
        raise IndexError(f"site {site} outside 1..{cfg.n_sites}")
    psi = np.zeros(cfg.n_sites, dtype=complex)
    psi[site - 1] = 1.0
    return psi
