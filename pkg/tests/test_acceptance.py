"""End-to-end acceptance checks, one test per criterion.

Each test appends a PASS/FAIL line to ``RESULTS``; the lines are printed in
the pytest terminal summary and by ``python tests/test_acceptance.py``.
The scans behind criteria 6, 8, 9 and 10 take tens of minutes on one core.
Set QSLCHAIN_ACCEPTANCE_DIR to keep their cells between runs (scans resume).
"""
import math
import os
import sys
import time
from pathlib import Path

import numpy as np
import pytest

from qslchain.analysis import (average_velocity, filter_controls, lowpass_filter,
                               lowpass_series, tau_qsl)
from qslchain.harness import config_from_dict, io
from qslchain.harness.runs import cmd_optimize, cmd_scan, nominal_reference
from qslchain.krotov import fidelity_gradient
from qslchain.model import ControlPulse, basis_state, linear_ramp, make_chain
from qslchain.oracle import embed, full_propagate, project
from qslchain.propagator import RecordingOptions, fidelity, final_state, propagate

RESULTS = []


def record(number, name, ok, detail):
    line = f"criterion {number:2d} {'PASS' if ok else 'FAIL'}  {name}: {detail}"
    RESULTS.append(line)
    print(line)
    return ok


@pytest.fixture(scope="session")
def workdir(tmp_path_factory):
    env = os.environ.get("QSLCHAIN_ACCEPTANCE_DIR")
    if env:
        path = Path(env)
        path.mkdir(parents=True, exist_ok=True)
        return path
    return tmp_path_factory.mktemp("acceptance")


def _ramp(cfg, speed, strength):
    return linear_ramp(cfg, speed=speed, strength=strength)


# ---------------------------------------------------------------- 1
def test_c01_two_site_swap():
    t0 = time.perf_counter()
    errs = []
    for T, expected in ((math.pi / 2, 1.0), (math.pi / 4, math.sin(math.pi / 4) ** 2)):
        # the step closest to 0.001 that tiles T exactly
        cfg = make_chain(2, 1.0, T / round(T / 0.001), T)
        pulse = ControlPulse(np.zeros(cfg.n_steps + 1), np.zeros(cfg.n_steps + 1), cfg.dt)
        p = abs(final_state(cfg, pulse, basis_state(cfg, 1))[1]) ** 2
        # exact diagonalisation of [[-1, 1], [1, -1]]
        w, v = np.linalg.eigh(np.array([[-1.0, 1.0], [1.0, -1.0]]))
        exact = abs((v @ (np.exp(-1j * w * cfg.total_time) * v[0]))[1]) ** 2
        errs += [abs(p - expected), abs(p - exact)]
    dt = time.perf_counter() - t0
    ok = max(errs) < 1e-6 and dt < 1.0
    assert record(1, "two-site swap", ok, f"max error {max(errs):.2e}, {dt:.2f} s")


# ---------------------------------------------------------------- 2
def test_c02_oracle_equivalence():
    t0 = time.perf_counter()
    rng = np.random.default_rng(7)
    worst_amp = worst_leak = 0.0
    for n in (2, 4, 6, 8):
        cfg = make_chain(n, 1.0, 0.01, 3.0)
        t = cfg.times / cfg.total_time
        d = (n - 1) * t + sum(rng.normal() * np.sin(np.pi * k * t) / k for k in (1, 2, 3))
        c = np.abs(0.5 + sum(0.2 * rng.normal() * np.cos(np.pi * k * t) for k in (1, 2)))
        pulse = ControlPulse(d, c, cfg.dt)
        psi0 = basis_state(cfg, 1)
        reduced = final_state(cfg, pulse, psi0)
        sub, leaked = project(full_propagate(cfg, pulse, embed(psi0, cfg)), cfg)
        k = np.argmax(np.abs(reduced))
        phase = sub[k] / reduced[k]
        phase /= abs(phase)
        worst_amp = max(worst_amp, np.abs(sub - phase * reduced).max())
        worst_leak = max(worst_leak, leaked)
    dt = time.perf_counter() - t0
    ok = worst_amp < 1e-8 and worst_leak < 1e-12 and dt < 30
    assert record(2, "oracle equivalence", ok,
                  f"amplitude {worst_amp:.1e}, leakage {worst_leak:.1e}, {dt:.1f} s")


# ---------------------------------------------------------------- 3
def test_c03_unitarity():
    t0 = time.perf_counter()
    cfg = make_chain(101, 1.0, 0.002, 200.0)
    assert cfg.n_steps == 100_000
    psi = final_state(cfg, _ramp(cfg, 0.5, 1.0), basis_state(cfg, 1))
    drift = abs(np.linalg.norm(psi) - 1.0)
    dt = time.perf_counter() - t0
    assert record(3, "unitarity", drift < 1e-9 and dt < 10,
                  f"norm drift {drift:.1e} over 1e5 steps, {dt:.1f} s")


# ---------------------------------------------------------------- 4
@pytest.mark.parametrize("strength,centre,width", [(1.0, 0.15, 0.05), (0.1, 0.05, 0.03)])
def test_c04_baselines(strength, centre, width):
    t0 = time.perf_counter()
    cfg = make_chain(101, 1.0, 0.01, 200.0)
    F = fidelity(final_state(cfg, _ramp(cfg, 0.5, strength), basis_state(cfg, 1)),
                 basis_state(cfg, 101))
    dt = time.perf_counter() - t0
    ok = abs(F - centre) <= width and dt < 30
    assert record(4, f"baseline C={strength:g}", ok,
                  f"fidelity {F:.4f} (target {centre} +- {width}), {dt:.1f} s")


# ---------------------------------------------------------------- 5, 11
@pytest.fixture(scope="session")
def n101_run(workdir):
    run = config_from_dict({"chain": {"n_sites": 101, "total_time": 200.0},
                            "baseline": {"ramp_speed": 0.5, "constant_strength": 1.0},
                            "krotov": {"max_iterations": 1000,
                                       "infidelity_threshold": 1e-3}})
    t0 = time.perf_counter()
    bundle = cmd_optimize(run, workdir / "n101_T200")
    return bundle.summary["result"], time.perf_counter() - t0, run


def test_c05_optimized_transfer(n101_run):
    res, dt, _ = n101_run
    ok = res.final_infidelity < 1e-3 and res.iterations_run <= 1000
    assert record(5, "optimized N=101 T=200", ok,
                  f"infidelity {res.final_infidelity:.2e} after {res.iterations_run} "
                  f"iterations, {dt:.0f} s")


def test_c11_qsl_branch(n101_run):
    res, _, run = n101_run
    cfg = run.chain_config()
    traj = propagate(cfg, res.final_pulse, basis_state(cfg, 1),
                     record=RecordingOptions(probabilities=False))
    est = tau_qsl(traj, cfg.coupling_J)
    ok = est.mean_energy_spread > cfg.coupling_J and est.dominant_branch == "coupling"
    assert record(11, "QSL branch", ok,
                  f"mean energy spread {est.mean_energy_spread:.3f} J, tau "
                  f"{est.tau_per_site:.4f} ({est.dominant_branch})")


# ---------------------------------------------------------------- 6
def test_c06_monotonicity(n101_run, desk_scan):
    res, _, _ = n101_run
    worst = float(np.max(np.diff(res.infidelity_history)))
    cells = sorted((desk_scan["dir"] / "cells").glob("N021_*/history.csv"))
    for h in cells:
        worst = max(worst, float(np.max(np.diff(io.read_history(h)), initial=-1.0)))
    ok = worst < 1e-10 and len(cells) > 0
    assert record(6, "Krotov monotonicity", ok,
                  f"largest increase {worst:.1e} over N=101 run and {len(cells)} N=21 runs")


# ---------------------------------------------------------------- 7
def test_c07_gradient_check():
    t0 = time.perf_counter()
    rng = np.random.default_rng(11)
    cfg = make_chain(11, 1.0, 0.01, 8.0)
    a, b = basis_state(cfg, 1), basis_state(cfg, 11)
    worst = 0.0
    for _ in range(3):
        t = cfg.times / cfg.total_time
        d = 10 * t + sum(rng.normal() * np.sin(np.pi * k * t) for k in (1, 2, 3))
        c = np.abs(0.6 + 0.3 * rng.normal(size=3) @ np.cos(np.pi * np.outer((1, 2, 3), t)))
        pulse = ControlPulse(d, c, cfg.dt)
        gd, gc = fidelity_gradient(cfg, pulse, a, b)
        for k in rng.choice(cfg.n_steps + 1, size=6, replace=False):
            for g, which in ((gd, 0), (gc, 1)):
                h = 1e-5
                vals = []
                for s in (1, -1):
                    u = [pulse.d_samples.copy(), pulse.c_samples.copy()]
                    u[which][k] += s * h
                    vals.append(fidelity(final_state(cfg, ControlPulse(*u, cfg.dt), a), b))
                fd = (vals[0] - vals[1]) / (2 * h)
                worst = max(worst, abs(fd - g[k]) / abs(fd))
    dt = time.perf_counter() - t0
    assert record(7, "gradient check", worst < 1e-5 and dt < 10,
                  f"max relative error {worst:.1e}, {dt:.1f} s")


# ---------------------------------------------------------------- 8
@pytest.fixture(scope="session")
def desk_scan(workdir):
    run = config_from_dict({"scan": {"n_list": [11, 21, 31], "iterations": 5000,
                                     "threshold": 1e-3}})
    t0 = time.perf_counter()
    bundle = cmd_scan(run, workdir / "scan_desk")
    return {**bundle.summary, "dir": bundle.out_dir, "seconds": time.perf_counter() - t0}


def test_c08_desk_scan(desk_scan):
    s = desk_scan
    if "gamma" not in s:
        record(8, "desk QSL scan", False, f"no fit, missing {s['missing']}")
        pytest.fail("scan produced fewer than two T* values")
    ok = 0.28 <= s["gamma"] <= 0.42 and 1.0 <= s["intercept_b"] <= 7.0
    stars = ", ".join(f"N={n}: {t:.2f}" for n, t in s["tqsl_star"].items())
    assert record(8, "desk QSL scan", ok,
                  f"gamma {s['gamma']:.3f}, a {s['slope_a']:.3f}, b {s['intercept_b']:.2f}, "
                  f"r2 {s['r_squared']:.3f} [{stars}], {s['seconds'] / 60:.1f} min")


# ---------------------------------------------------------------- 9, 10
@pytest.fixture(scope="session")
def n41(workdir):
    run = config_from_dict({"scan": {"n_list": [41], "iterations": 5000, "threshold": 1e-3}})
    bundle = cmd_scan(run, workdir / "scan_n41")
    tstar = bundle.summary["tqsl_star"].get(41)
    if tstar is None:
        return {"tstar": None}
    below = sorted(r.total_time for r in bundle.summary["records"] if r.total_time < tstar)

    def v_d(T):
        cell = bundle.out_dir / "cells" / f"N041_T{T:.6f}" / "trajectory.csv"
        return average_velocity(io.read_trajectory(cell))

    long_run = config_from_dict({"chain": {"n_sites": 41, "total_time": 1.3 * tstar}})
    long = cmd_optimize(long_run, workdir / "n41_long")
    long_cfg = long_run.chain_config()
    traj = propagate(long_cfg, long.summary["result"].final_pulse, basis_state(long_cfg, 1),
                     record=RecordingOptions(probabilities=False))
    return {"tstar": tstar, "v_star": v_d(tstar), "v_below": {T: v_d(T) for T in below},
            "v_long": average_velocity(traj),
            "long": long.summary["result"], "long_cfg": long_cfg}


def test_c09_velocity_saturation(n41):
    if n41["tstar"] is None or not n41["v_below"]:
        record(9, "velocity saturation", False, "N=41 scan gave no bracketing T*")
        pytest.fail("no bracketing T*")
    v_star = n41["v_star"]
    change = max(abs(v - v_star) / v_star for v in n41["v_below"].values())
    ok = v_star > n41["v_long"] and change < 0.05
    below = ", ".join(f"{T:.2f}: {v:.3f}" for T, v in n41["v_below"].items())
    assert record(9, "velocity saturation", ok,
                  f"v_d at T*={n41['tstar']:.2f} {v_star:.3f}, at 1.3 T* {n41['v_long']:.3f}; "
                  f"below T* [{below}], max change {100 * change:.1f}%")


def test_c10_filter_robustness(n41):
    if n41["tstar"] is None:
        record(10, "filter robustness", False, "no optimized N=41 pulse")
        pytest.fail("no optimized N=41 pulse")
    cfg = n41["long_cfg"]
    pulse = n41["long"].final_pulse
    ref = nominal_reference(cfg)
    filtered = lowpass_filter(pulse, 4.0, reference=ref)
    err = 1.0 - fidelity(final_state(cfg, filtered, basis_state(cfg, 1)), basis_state(cfg, 41))
    # the filter proper is the projection; clipping C >= 0 afterwards is not part of it
    d1, c1 = filter_controls(pulse, 4.0, reference=ref)
    idem = 0.0
    for u, u_ref in ((d1, ref.d_samples), (c1, ref.c_samples)):
        dev = u - u_ref
        idem = max(idem, np.abs(lowpass_series(dev, cfg.dt, 4.0) - dev).max())
    dc = max(abs(d1.mean() - pulse.d_samples.mean()), abs(c1.mean() - pulse.c_samples.mean()))
    clipped = float(np.maximum(-c1, 0.0).max())
    ok = err < 1e-2 and idem < 1e-10 and dc < 1e-10
    assert record(10, "filter robustness", ok,
                  f"T={cfg.total_time:.2f}, infidelity {n41['long'].final_infidelity:.1e} -> "
                  f"{err:.2e} at 4J; idempotence {idem:.1e}, DC {dc:.1e} "
                  f"(before clipping C >= 0, which removed up to {clipped:.2e})")


if __name__ == "__main__":
    code = pytest.main([__file__, "-q", "-p", "no:cacheprovider"])
    print("\n".join(RESULTS))
    sys.exit(code)
