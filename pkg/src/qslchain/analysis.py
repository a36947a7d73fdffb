"""Wave velocity, pulse filtering and speed-limit estimates."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Optional

import numpy as np

from .model import ControlPulse
from .propagator import Trajectory

__all__ = [
    "QslEstimate",
    "ScanRecord",
    "QslFit",
    "nominal_velocity",
    "average_velocity",
    "lowpass_series",
    "filter_controls",
    "lowpass_filter",
    "pulse_spectrum",
    "tau_qsl",
    "qsl_time",
    "find_tqsl_star",
    "fit_line",
    "fit_qsl",
]


@dataclass(frozen=True)
class QslEstimate:
    tau_per_site: float
    mean_energy_spread: float
    dominant_branch: str  # "coupling" or "spread"


@dataclass(frozen=True)
class ScanRecord:
    n_sites: int
    total_time: float
    final_infidelity: float
    iterations_run: int

    def __post_init__(self):
        if not 0.0 <= self.final_infidelity <= 1.0:
            raise ValueError(f"final_infidelity {self.final_infidelity} outside [0, 1]")


@dataclass
class QslFit:
    slope_a: float
    intercept_b: float
    gamma: float
    per_n_tqsl_star: dict = field(default_factory=dict)
    r_squared: float = math.nan
    missing: list = field(default_factory=list)


def nominal_velocity(n_sites, total_time):
    """Rate (N - 1)/T needed to cross the chain in the allotted time."""
    if total_time <= 0:
        raise ValueError("total_time must be positive")
    return (n_sites - 1) / total_time


def _trapezoid(y, x):
    return float(np.sum(0.5 * (y[1:] + y[:-1]) * np.diff(x)))


def average_velocity(trajectory: Trajectory) -> float:
    """(4/T**2) times the integral of <x> over [T/4, 3T/4].

    The window ends are linearly interpolated onto the recorded grid and the
    integral is done with the trapezoidal rule.
    """
    xs = trajectory.position_expectation
    if xs is None:
        raise ValueError("trajectory has no <x> series")
    t = np.asarray(trajectory.times, dtype=float)
    T = float(t[-1])
    if T <= 0:
        raise ValueError("trajectory must span a positive time")
    lo, hi = 0.25 * T, 0.75 * T
    inside = (t > lo) & (t < hi)
    tw = np.concatenate(([lo], t[inside], [hi]))
    xw = np.interp(tw, t, np.asarray(xs, dtype=float))
    return 4.0 / T ** 2 * _trapezoid(xw, tw)


def lowpass_series(u, dt, nu_max):
    """Zero every rfft component of ``u`` above ``nu_max`` cycles per unit time."""
    spec = np.fft.rfft(u)
    freqs = np.fft.rfftfreq(u.size, d=dt)
    spec[freqs > nu_max] = 0.0
    return np.fft.irfft(spec, n=u.size)


def filter_controls(pulse: ControlPulse, nu_max: float,
                    reference: Optional[ControlPulse] = None):
    """Hard frequency cutoff on both controls, returned as raw (d, C) arrays.

    Components with ordinary frequency (cycles per unit time, i.e. units of
    J) above ``nu_max`` are removed. If ``reference`` is given only the
    deviation ``pulse - reference`` is filtered, e.g. to keep a linear ramp
    of d(t) out of the transform. This is an exact projection, so it is
    idempotent and keeps the mean of each series, but C may dip below 0.
    """
    if nu_max < 0:
        raise ValueError("nu_max must be >= 0")
    d = pulse.d_samples
    c = pulse.c_samples
    d_ref = np.zeros_like(d) if reference is None else reference.d_samples
    c_ref = np.zeros_like(c) if reference is None else reference.c_samples
    if d_ref.shape != d.shape:
        raise ValueError("reference pulse is on a different grid")
    return (d_ref + lowpass_series(d - d_ref, pulse.dt, nu_max),
            c_ref + lowpass_series(c - c_ref, pulse.dt, nu_max))


def lowpass_filter(pulse: ControlPulse, nu_max: float,
                   reference: Optional[ControlPulse] = None) -> ControlPulse:
    """:func:`filter_controls` with negative C clipped to 0 to stay a valid pulse."""
    d, c = filter_controls(pulse, nu_max, reference)
    return ControlPulse(d, np.maximum(c, 0.0), pulse.dt)


def pulse_spectrum(pulse: ControlPulse, reference: Optional[ControlPulse] = None):
    """(frequencies, |D(nu)|, |C(nu)|) of the (reference-subtracted) controls."""
    d = pulse.d_samples
    c = pulse.c_samples
    if reference is not None:
        d = d - reference.d_samples
        c = c - reference.c_samples
    freqs = np.fft.rfftfreq(d.size, d=pulse.dt)
    return freqs, np.abs(np.fft.rfft(d)), np.abs(np.fft.rfft(c))


def tau_qsl(trajectory: Trajectory, coupling_J: float) -> QslEstimate:
    """Time-per-site bound max(pi/2J, pi/(2 * time-averaged energy spread))."""
    spread = trajectory.energy_spread
    t = np.asarray(trajectory.times, dtype=float)
    if spread is None or t.size < 2 or t[-1] <= t[0]:
        raise ValueError("trajectory needs an energy-spread series over a positive time span")
    mean_spread = _trapezoid(np.asarray(spread, dtype=float), t) / (t[-1] - t[0])
    coupling_term = math.pi / (2.0 * coupling_J)
    spread_term = math.pi / (2.0 * mean_spread) if mean_spread > 0 else math.inf
    if spread_term > coupling_term:
        return QslEstimate(spread_term, mean_spread, "spread")
    return QslEstimate(coupling_term, mean_spread, "coupling")


def qsl_time(n_sites, gamma, tau_per_site):
    """gamma * (N - 1) * tau: chain crossing time as a cascade of swaps."""
    return gamma * (n_sites - 1) * tau_per_site


def find_tqsl_star(records: Iterable[ScanRecord], threshold: float):
    """Smallest scanned T per N whose final infidelity is below ``threshold``.

    Returns ``(tqsl_star, missing)``: a dict N -> T* and the sorted list of
    chain lengths for which no scanned time qualified.
    """
    records = list(records)
    if not records:
        raise ValueError("no scan records")
    best: dict[int, float] = {}
    seen = set()
    for r in records:
        seen.add(r.n_sites)
        if r.final_infidelity < threshold:
            if r.n_sites not in best or r.total_time < best[r.n_sites]:
                best[r.n_sites] = r.total_time
    return dict(sorted(best.items())), sorted(seen - best.keys())


def fit_line(points: dict, coupling_J: float = 1.0):
    """Least-squares T* = a (N - 1) + b.

    Returns ``(slope_a, intercept_b, gamma, r_squared)`` with
    gamma = a / (pi / 2J).
    """
    if len(points) < 2:
        raise ValueError("need at least two chain lengths to fit a line")
    n = np.array(sorted(points), dtype=float)
    y = np.array([points[k] for k in sorted(points)], dtype=float)
    a, b = np.polyfit(n - 1.0, y, 1)
    resid = y - (a * (n - 1.0) + b)
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 - float(resid @ resid) / ss_tot if ss_tot > 0 else 1.0
    gamma = a / (math.pi / (2.0 * coupling_J))
    return float(a), float(b), float(gamma), r2


def fit_qsl(records: Iterable[ScanRecord], threshold: float, coupling_J: float = 1.0) -> QslFit:
    """T* extraction followed by the linear fit."""
    tstar, missing = find_tqsl_star(records, threshold)
    a, b, gamma, r2 = fit_line(tstar, coupling_J)
    return QslFit(a, b, gamma, tstar, r2, missing)
