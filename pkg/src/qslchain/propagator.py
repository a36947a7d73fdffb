"""Crank-Nicolson evolution in the single-excitation sector and observables."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import _kernels
from .model import ChainConfig, ControlPulse, control_hamiltonian, static_bands

__all__ = [
    "SolverError",
    "RecordingOptions",
    "Trajectory",
    "cn_step",
    "propagate",
    "final_state",
    "all_states",
    "fidelity",
    "infidelity",
    "position_expectation",
    "energy_moments",
    "hamiltonian_bands",
]


class SolverError(RuntimeError):
    """The Crank-Nicolson linear system could not be solved."""


@dataclass(frozen=True)
class RecordingOptions:
    """What :func:`propagate` stores.

    ``stride`` is in integration steps; ``None`` picks ceil(n_steps/100) so
    about a hundred snapshots are kept. The final grid point is always
    recorded.
    """

    stride: Optional[int] = None
    states: bool = False
    probabilities: bool = True
    observables: bool = True


@dataclass
class Trajectory:
    times: np.ndarray
    position_expectation: Optional[np.ndarray] = None
    energy_mean: Optional[np.ndarray] = None
    energy_spread: Optional[np.ndarray] = None
    site_probabilities: Optional[np.ndarray] = None
    states: Optional[np.ndarray] = None
    final_state: Optional[np.ndarray] = None
    total_time: float = 0.0


def _check_grid(cfg: ChainConfig, pulse: ControlPulse):
    if not pulse.matches(cfg):
        raise ValueError(
            f"pulse grid ({pulse.n_steps} steps, dt={pulse.dt}) does not match "
            f"config ({cfg.n_steps} steps, dt={cfg.dt})")


def hamiltonian_bands(cfg: ChainConfig, strength, minimum):
    """(diagonal, off-diagonal) of the full reduced Hamiltonian at one instant."""
    diag, off = static_bands(cfg)
    return diag + control_hamiltonian(cfg, strength, minimum), off


def _apply_tridiag(diag, off, psi):
    out = diag * psi
    out[:-1] += off * psi[1:]
    out[1:] += off * psi[:-1]
    return out


def cn_step(cfg: ChainConfig, pulse_at_midpoint, state, dt=None):
    """Advance ``state`` by one Crank-Nicolson step.

    ``pulse_at_midpoint`` is the (strength, minimum) pair evaluated at the
    middle of the step. A negative ``dt`` steps backwards in time.
    """
    strength, minimum = pulse_at_midpoint
    dt = cfg.dt if dt is None else dt
    diag, off = hamiltonian_bands(cfg, strength, minimum)
    psi = np.ascontiguousarray(state, dtype=np.complex128)
    out = np.empty_like(psi)
    cp = np.empty_like(psi)
    rhs = np.empty_like(psi)
    if not _kernels.cn_step_inplace(diag, off, psi, float(dt), out, cp, rhs):
        raise SolverError("zero pivot in Crank-Nicolson solve")
    return out


def _run(cfg, pulse, initial, backward, keep_all):
    diag0, off = static_bands(cfg)
    psi0 = np.ascontiguousarray(initial, dtype=np.complex128)
    if psi0.shape != (cfg.n_sites,):
        raise ValueError(f"state has length {psi0.size}, chain has {cfg.n_sites} sites")
    fn = _kernels.propagate_all if keep_all else _kernels.propagate_final
    try:
        return fn(diag0, off, cfg.positions, pulse.d_samples, pulse.c_samples,
                  psi0, cfg.dt, backward)
    except ZeroDivisionError as exc:
        raise SolverError(str(exc)) from exc


def final_state(cfg: ChainConfig, pulse: ControlPulse, initial, direction="forward"):
    """End state of a propagation without recording anything."""
    _check_grid(cfg, pulse)
    return _run(cfg, pulse, initial, direction == "backward", keep_all=False)


def all_states(cfg: ChainConfig, pulse: ControlPulse, initial, direction="forward"):
    """Every grid-point state, shape (n_steps + 1, n_sites), in time order."""
    _check_grid(cfg, pulse)
    return _run(cfg, pulse, initial, direction == "backward", keep_all=True)


def propagate(cfg: ChainConfig, pulse: ControlPulse, initial,
              direction: str = "forward",
              record: Optional[RecordingOptions] = None) -> Trajectory:
    """Integrate the reduced Schrodinger equation across the pulse grid.

    ``direction="backward"`` treats ``initial`` as the state at T and steps
    down to t = 0 under the same Hamiltonian; recorded series are still in
    increasing time order and ``final_state`` is the state at t = 0.
    """
    if direction not in ("forward", "backward"):
        raise ValueError(f"direction must be 'forward' or 'backward', got {direction!r}")
    _check_grid(cfg, pulse)
    record = record or RecordingOptions()
    backward = direction == "backward"
    steps = cfg.n_steps
    stride = record.stride or max(1, math.ceil(steps / 100))
    idx = np.arange(0, steps + 1, stride)
    if idx[-1] != steps:
        idx = np.append(idx, steps)

    states = _run(cfg, pulse, initial, backward, keep_all=True)
    snaps = states[idx]
    traj = Trajectory(times=idx * cfg.dt, total_time=cfg.total_time,
                      final_state=states[0 if backward else steps].copy())
    if record.states:
        traj.states = snaps.copy()
    probs = np.abs(snaps) ** 2
    if record.probabilities:
        traj.site_probabilities = probs
    if record.observables:
        traj.position_expectation = probs @ cfg.positions / probs.sum(axis=1)
        diag0, off = static_bands(cfg)
        d = pulse.d_samples[idx]
        c = pulse.c_samples[idx]
        mean = np.empty(idx.size)
        spread = np.empty(idx.size)
        for j in range(idx.size):
            diag = diag0 + c[j] * (cfg.positions - d[j]) ** 2
            mean[j], spread[j] = energy_moments(snaps[j], (diag, off))
        traj.energy_mean = mean
        traj.energy_spread = spread
    return traj


def fidelity(state, target) -> float:
    """|<state|target>|**2."""
    state = np.asarray(state)
    target = np.asarray(target)
    if state.shape != target.shape:
        raise ValueError(f"length mismatch: {state.shape} vs {target.shape}")
    return float(np.minimum(abs(np.vdot(state, target)) ** 2, 1.0))


def infidelity(state, target) -> float:
    return 1.0 - fidelity(state, target)


def position_expectation(state, cfg: ChainConfig) -> float:
    p = np.abs(np.asarray(state)) ** 2
    return float(p @ cfg.positions)


def energy_moments(state, hamiltonian_at_t):
    """Mean energy and energy spread of ``state``.

    ``hamiltonian_at_t`` is either a dense Hermitian matrix or a
    (diagonal, off-diagonal) pair for a symmetric tridiagonal one.
    """
    psi = np.asarray(state, dtype=complex)
    if isinstance(hamiltonian_at_t, tuple):
        hpsi = _apply_tridiag(np.asarray(hamiltonian_at_t[0]),
                              np.asarray(hamiltonian_at_t[1]), psi)
    else:
        hpsi = np.asarray(hamiltonian_at_t) @ psi
    mean = float(np.vdot(psi, hpsi).real)
    var = float(np.vdot(hpsi, hpsi).real) - mean ** 2
    return mean, math.sqrt(var) if var > 0 else 0.0
