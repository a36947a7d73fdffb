"""Krotov optimisation of the field minimum d(t) and strength C(t).

Each iteration propagates the terminal co-state backwards under the current
pulse, then sweeps forward updating both controls sample by sample with
``u <- u + step_weight * Im<chi|dH/du|psi>`` before advancing the state.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from . import _kernels
from .model import ChainConfig, ControlPulse, static_bands
from .propagator import SolverError, _check_grid, all_states, final_state, fidelity

__all__ = [
    "DivergenceError",
    "KrotovSettings",
    "OptimizationResult",
    "terminal_costate",
    "control_gradients",
    "costate_trajectory",
    "krotov_sweep",
    "fidelity_gradient",
    "optimize",
]

log = logging.getLogger(__name__)


class DivergenceError(RuntimeError):
    """The optimisation produced a non-finite fidelity."""

    def __init__(self, iteration: int, message: str = ""):
        self.iteration = iteration
        super().__init__(message or f"non-finite fidelity at iteration {iteration}")


@dataclass(frozen=True)
class KrotovSettings:
    """Knobs of the optimisation loop.

    step_weight is the update gain 1/lambda, shared by both controls unless
    ``strength_scale`` rescales the C(t) gain. With ``adaptive_backoff`` a
    sweep that raises the infidelity is discarded and the gain halved;
    accepted sweeps grow the gain by ``growth`` up to ``max_step_weight``.
    The field minimum is confined to ``d_margin`` beyond either chain end
    (default: one chain length); C(t) is kept non-negative.

    With ``two_sided`` the matrix element driving sample k is the mean of
    the step-averaged elements of the two steps that share that sample,
    which is what the discrete Crank-Nicolson fidelity actually depends on.
    Otherwise the element at the grid time itself is used.
    """

    step_weight: float = 1.0
    max_iterations: int = 1000
    infidelity_threshold: float = 1e-3
    adaptive_backoff: bool = True
    strength_scale: float = 0.3
    growth: float = 1.05
    max_step_weight: float = 3.0
    min_step_weight: float = 1e-12
    d_margin: Optional[float] = None
    two_sided: bool = True

    def __post_init__(self):
        if not (math.isfinite(self.step_weight) and self.step_weight >= 0):
            raise ValueError(f"step_weight must be finite and >= 0, got {self.step_weight}")
        if not 0 < self.infidelity_threshold < 1:
            raise ValueError("infidelity_threshold must lie in (0, 1)")
        if self.max_iterations < 0:
            raise ValueError("max_iterations must be >= 0")
        if self.growth < 1:
            raise ValueError("growth must be >= 1")


@dataclass
class OptimizationResult:
    final_pulse: ControlPulse
    infidelity_history: np.ndarray
    iterations_run: int
    converged: bool
    final_fidelity: float
    step_weight: float = 0.0
    rejected_sweeps: int = 0
    clamp_events: int = 0
    initial_infidelity: float = field(default=math.nan)

    @property
    def final_infidelity(self) -> float:
        return 1.0 - self.final_fidelity


def terminal_costate(final_state, target):
    """Projection of the final state on the goal: |target><target|final_state>."""
    target = np.asarray(target, dtype=complex)
    return target * np.vdot(target, final_state)


def control_gradients(costate, state, cfg: ChainConfig, strength, minimum):
    """(Im<chi|dH/dd|psi>, Im<chi|dH/dC|psi>) at one instant."""
    chi = np.asarray(costate, dtype=complex)
    psi = np.asarray(state, dtype=complex)
    if chi.shape != psi.shape:
        raise ValueError("co-state and state must have the same length")
    r = cfg.positions - minimum
    z = (np.conj(chi) * psi).imag
    return float(np.sum(-2.0 * strength * r * z)), float(np.sum(r * r * z))


def costate_trajectory(cfg: ChainConfig, pulse: ControlPulse, final, target):
    """Backward-propagated co-state at every grid point, time ordered."""
    return all_states(cfg, pulse, terminal_costate(final, target), direction="backward")


def fidelity_gradient(cfg: ChainConfig, pulse: ControlPulse, initial, target):
    """Exact derivative of the final fidelity w.r.t. every d and C sample."""
    _check_grid(cfg, pulse)
    states = all_states(cfg, pulse, initial)
    chis = costate_trajectory(cfg, pulse, states[-1], target)
    diag0, off = static_bands(cfg)
    return _kernels.exact_gradient(diag0, off, cfg.positions, pulse.d_samples,
                                   pulse.c_samples, states, chis, cfg.dt)


def krotov_sweep(cfg: ChainConfig, pulse: ControlPulse, initial, target,
                 stored_costates, settings: KrotovSettings, step_weight=None):
    """One forward sweep with immediate feedback.

    Returns ``(new_pulse, final_state, clamp_events)``. ``final_state`` is
    the state at T under ``new_pulse``; ``new_pulse`` is None if the update
    blew up to non-finite values.
    """
    _check_grid(cfg, pulse)
    chis = np.ascontiguousarray(stored_costates, dtype=np.complex128)
    if chis.shape != (cfg.n_steps + 1, cfg.n_sites):
        raise ValueError("co-state trajectory is not on the pulse grid")
    w = settings.step_weight if step_weight is None else step_weight
    x = cfg.positions
    margin = x[-1] - x[0] if settings.d_margin is None else settings.d_margin
    d = pulse.d_samples.copy()
    c = pulse.c_samples.copy()
    diag0, off = static_bands(cfg)
    psi0 = np.ascontiguousarray(initial, dtype=np.complex128)
    try:
        psi_t, clamps = _kernels.krotov_sweep(diag0, off, cfg.positions, d, c, psi0,
                                              chis, cfg.dt, w, w * settings.strength_scale,
                                              x[0] - margin, x[-1] + margin,
                                              1 if settings.two_sided else 0)
    except ZeroDivisionError as exc:
        raise SolverError(str(exc)) from exc
    if not (np.all(np.isfinite(d)) and np.all(np.isfinite(c)) and np.all(np.isfinite(psi_t))):
        return None, psi_t, clamps
    return ControlPulse(d, c, cfg.dt), psi_t, clamps


def optimize(cfg: ChainConfig, initial_pulse: ControlPulse, initial_state, target,
             settings: KrotovSettings = KrotovSettings(),
             callback: Optional[Callable[[int, float], None]] = None) -> OptimizationResult:
    """Run Krotov iterations until the infidelity drops below the threshold.

    ``infidelity_history[0]`` is the infidelity of ``initial_pulse``; entry
    i is the value after i accepted or attempted iterations. Rejected sweeps
    (backoff) repeat the previous value.
    """
    _check_grid(cfg, initial_pulse)
    pulse = initial_pulse
    psi_t = final_state(cfg, pulse, initial_state)
    f = fidelity(psi_t, target)
    if not math.isfinite(f):
        raise DivergenceError(0)
    history = [1.0 - f]
    w = settings.step_weight
    rejected = 0
    clamps_total = 0
    it = 0
    while it < settings.max_iterations and history[-1] >= settings.infidelity_threshold:
        it += 1
        chis = costate_trajectory(cfg, pulse, psi_t, target)
        new_pulse, new_psi, clamps = krotov_sweep(cfg, pulse, initial_state, target,
                                                  chis, settings, step_weight=w)
        f_new = fidelity(new_psi, target) if new_pulse is not None else math.nan
        if not math.isfinite(f_new) and not settings.adaptive_backoff:
            raise DivergenceError(it)
        if settings.adaptive_backoff and not 1.0 - f_new <= history[-1]:
            rejected += 1
            w *= 0.5
            history.append(history[-1])
            log.debug("iteration %d rejected, step weight -> %g", it, w)
            if w < settings.min_step_weight:
                log.info("step weight underflow at iteration %d", it)
                break
        else:
            if clamps:
                clamps_total += clamps
                log.debug("iteration %d: %d control samples clamped", it, clamps)
            pulse, psi_t, f = new_pulse, new_psi, f_new
            history.append(1.0 - f)
            w = min(w * settings.growth, settings.max_step_weight)
        if callback is not None:
            callback(it, history[-1])

    if clamps_total:
        log.info("%d control samples clamped during optimisation", clamps_total)
    hist = np.clip(np.array(history), 0.0, 1.0)
    return OptimizationResult(
        final_pulse=pulse,
        infidelity_history=hist,
        iterations_run=it,
        converged=bool(hist[-1] < settings.infidelity_threshold),
        final_fidelity=f,
        step_weight=w,
        rejected_sweeps=rejected,
        clamp_events=clamps_total,
        initial_infidelity=float(hist[0]),
    )
