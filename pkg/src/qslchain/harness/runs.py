"""The five harness commands as plain functions returning what they wrote."""
from __future__ import annotations

import hashlib
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from ..analysis import (ScanRecord, average_velocity, filter_controls, find_tqsl_star,
                        fit_line, lowpass_filter, nominal_velocity, pulse_spectrum,
                        qsl_time, tau_qsl)
from ..krotov import DivergenceError, optimize
from ..model import ChainConfig, ControlPulse, basis_state, linear_ramp
from ..propagator import RecordingOptions, fidelity, final_state, propagate
from . import io
from .config import RunConfig, config_from_dict

log = logging.getLogger(__name__)


class MissingInputError(FileNotFoundError):
    pass


@dataclass
class ResultBundle:
    run_id: str
    out_dir: Path
    config_text: str
    files: list = field(default_factory=list)
    summary: dict = field(default_factory=dict)


def run_id(command: str, run: RunConfig) -> str:
    return hashlib.sha256((command + "\n" + run.dump()).encode()).hexdigest()[:12]


def _prepare(out_dir) -> Path:
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
        probe = out / ".write_probe"
        probe.write_text("")
        probe.unlink()
    except OSError as exc:
        raise OSError(f"output directory {out} is not writable: {exc}") from exc
    return out


def _finish(command, run, out, files, summary) -> ResultBundle:
    text = run.dump()
    cfg_path = out / "config.yaml"
    cfg_path.write_text(text)
    files = list(files) + [cfg_path]
    rid = run_id(command, run)
    files.append(io.write_manifest(out, rid, command, text, files))
    return ResultBundle(rid, out, text, files, summary)


def baseline_pulse(run: RunConfig, cfg: ChainConfig) -> ControlPulse:
    """Seed pulse: explicit file, or ramp d = s t, C = k (s defaults to (N-1)/T, k to 1)."""
    b = run.baseline
    if b.pulse_file is not None:
        pulse = io.read_pulse(b.pulse_file)
        if not pulse.matches(cfg):
            raise ValueError(f"pulse file {b.pulse_file} does not match the chain time grid")
        return pulse
    k = 1.0 if b.constant_strength is None else b.constant_strength
    return linear_ramp(cfg, speed=b.ramp_speed, strength=k)


def snapshot_times(run: RunConfig, cfg: ChainConfig):
    if run.outputs.snapshot_times is not None:
        return [float(t) for t in run.outputs.snapshot_times]
    T = cfg.total_time
    return [0.0, T / 4, T / 2, 3 * T / 4, T]


def _write_snapshots(path, cfg, pulse, run):
    psi0 = basis_state(cfg, 1)
    traj = propagate(cfg, pulse, psi0, record=RecordingOptions(stride=1, observables=False))
    rows = []
    for t in snapshot_times(run, cfg):
        j = int(round(t / cfg.dt))
        if not 0 <= j <= cfg.n_steps:
            raise ValueError(f"snapshot time {t} outside [0, {cfg.total_time}]")
        rows.append([j * cfg.dt, *traj.site_probabilities[j]])
    return io.write_csv(path, ["t"] + [f"p_{i + 1}" for i in range(cfg.n_sites)], rows)


def _trajectory_outputs(out, cfg, pulse, run, prefix=""):
    psi0, goal = basis_state(cfg, 1), basis_state(cfg, cfg.n_sites)
    traj = propagate(cfg, pulse, psi0, record=RecordingOptions(stride=run.outputs.snapshot_stride))
    files = [io.write_trajectory(out / f"{prefix}trajectory.csv", traj),
             _write_snapshots(out / f"{prefix}snapshots.csv", cfg, pulse, run)]
    return traj, fidelity(traj.final_state, goal), files


def _summary_rows(cfg, F, extra=()):
    return [("n_sites", cfg.n_sites), ("total_time", cfg.total_time),
            ("coupling_J", cfg.coupling_J), ("dt", cfg.dt),
            ("final_fidelity", F), ("final_infidelity", 1.0 - F), *extra]


def cmd_simulate(run: RunConfig, out_dir=None) -> ResultBundle:
    out = _prepare(out_dir or run.outputs.directory)
    cfg = run.chain_config()
    pulse = baseline_pulse(run, cfg)
    traj, F, files = _trajectory_outputs(out, cfg, pulse, run)
    files.append(io.write_pulse(out / "pulse.csv", pulse))
    files.append(io.write_quantities(out / "summary.csv", _summary_rows(cfg, F)))
    return _finish("simulate", run, out, files, {"final_fidelity": F})


def cmd_optimize(run: RunConfig, out_dir=None, seed_pulse: Optional[ControlPulse] = None,
                 callback=None) -> ResultBundle:
    out = _prepare(out_dir or run.outputs.directory)
    cfg = run.chain_config()
    pulse = seed_pulse if seed_pulse is not None else baseline_pulse(run, cfg)
    result = optimize(cfg, pulse, basis_state(cfg, 1), basis_state(cfg, cfg.n_sites),
                      run.krotov_settings(), callback=callback)
    files = [io.write_pulse(out / "pulse.csv", result.final_pulse),
             io.write_history(out / "history.csv", result.infidelity_history)]
    _, F, tfiles = _trajectory_outputs(out, cfg, result.final_pulse, run)
    files += tfiles
    extra = [("iterations_run", result.iterations_run), ("converged", result.converged),
             ("rejected_sweeps", result.rejected_sweeps),
             ("clamp_events", result.clamp_events),
             ("initial_infidelity", result.initial_infidelity)]
    files.append(io.write_quantities(out / "summary.csv", _summary_rows(cfg, F, extra)))
    bundle = _finish("optimize", run, out, files,
                     {"final_fidelity": F, "iterations_run": result.iterations_run,
                      "converged": result.converged})
    bundle.summary["result"] = result
    return bundle


# --- scan -----------------------------------------------------------------

def _cell_dir(root: Path, n_sites: int, total_time: float) -> Path:
    return root / "cells" / f"N{n_sites:03d}_T{total_time:.6f}"


def run_cell(config: dict, n_sites: int, total_time: float, root: str) -> ScanRecord:
    """Optimise one (N, T) cell, or reload it if its record already exists."""
    run = config_from_dict(config)
    cfg = run.chain_config(n_sites=n_sites, total_time=total_time)
    cell = _cell_dir(Path(root), n_sites, cfg.total_time)
    rec_path = cell / "record.csv"
    if rec_path.exists():
        q = io.read_quantities(rec_path)
        return ScanRecord(int(q["N"]), float(q["T"]), float(q["final_infidelity"]),
                          int(q["iterations"]))
    settings = run.krotov_settings(max_iterations=run.scan.iterations,
                                   infidelity_threshold=run.scan.threshold)
    seed = linear_ramp(cfg, strength=1.0 if run.baseline.constant_strength is None
                       else run.baseline.constant_strength)
    try:
        result = optimize(cfg, seed, basis_state(cfg, 1), basis_state(cfg, n_sites), settings)
    except DivergenceError as exc:
        log.warning("cell N=%d T=%g diverged at iteration %d", n_sites, cfg.total_time,
                    exc.iteration)
        rec = ScanRecord(n_sites, cfg.total_time, 1.0, exc.iteration)
        _write_record(rec_path, rec, diverged=True)
        return rec
    io.write_pulse(cell / "pulse.csv", result.final_pulse)
    io.write_history(cell / "history.csv", result.infidelity_history)
    traj = propagate(cfg, result.final_pulse, basis_state(cfg, 1),
                     record=RecordingOptions(probabilities=False))
    io.write_trajectory(cell / "trajectory.csv", traj)
    F = result.final_fidelity
    io.write_quantities(cell / "summary.csv", _summary_rows(
        cfg, F, [("iterations_run", result.iterations_run), ("converged", result.converged)]))
    rec = ScanRecord(n_sites, cfg.total_time, float(np.clip(1.0 - F, 0.0, 1.0)),
                     result.iterations_run)
    _write_record(rec_path, rec)
    return rec


def _write_record(path, rec, diverged=False):
    # written last: its presence marks the cell as complete
    io.write_quantities(path, [("N", rec.n_sites), ("T", rec.total_time),
                               ("final_infidelity", rec.final_infidelity),
                               ("iterations", rec.iterations_run), ("diverged", diverged)])


def _on_grid(t, dt):
    return round(t / dt) * dt


def scan_chain_length(config: dict, n_sites: int, root: str) -> list:
    """Coarse downward sweep in T until a cell fails, then bisection."""
    run = config_from_dict(config)
    s = run.scan
    dt = run.chain.dt
    ok = lambda r: r.final_infidelity < s.threshold  # noqa: E731
    records = []
    T = _on_grid(s.start_per_site * (n_sites - 1) + s.start_offset, dt)
    good = bad = None
    while T > dt:
        rec = run_cell(config, n_sites, T, root)
        records.append(rec)
        if ok(rec):
            good = T
            T = _on_grid(T - s.coarse_step, dt)
        else:
            bad = T
            break
    if good is None or bad is None:
        return records
    while good - bad > s.resolution + 1e-9:
        mid = _on_grid(0.5 * (good + bad), dt)
        if mid in (good, bad):
            break
        rec = run_cell(config, n_sites, mid, root)
        records.append(rec)
        if ok(rec):
            good = mid
        else:
            bad = mid
    return records


def _map(workers, fn, arglist):
    if workers > 1 and len(arglist) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            futures = [pool.submit(fn, *args) for args in arglist]
            return [f.result() for f in futures]
    return [fn(*args) for args in arglist]


def cmd_scan(run: RunConfig, out_dir=None, workers: int = 1) -> ResultBundle:
    out = _prepare(out_dir or run.outputs.directory)
    config = run.to_dict()
    n_list = [int(n) for n in run.scan.n_list]
    if not n_list:
        raise ValueError("scan.n_list is empty")
    records = []
    if run.scan.times is not None:
        # explicit grid: every cell is independent
        dt = run.chain.dt
        cells = [(n, _on_grid(T, dt)) for n in n_list
                 for T in run.scan.times.get(n, run.scan.times.get(str(n), []))]
        if not cells:
            raise ValueError("scan grid is empty")
        records = _map(workers, run_cell, [(config, n, T, str(out)) for n, T in cells])
    else:
        # adaptive grid: cells of one N depend on each other, so N is the unit of work
        for recs in _map(workers, scan_chain_length, [(config, n, str(out)) for n in n_list]):
            records += recs
    records.sort(key=lambda r: (r.n_sites, r.total_time))
    files = [io.write_csv(out / "scan_table.csv", ["N", "T", "final_infidelity", "iterations"],
                          [(r.n_sites, r.total_time, r.final_infidelity, r.iterations_run)
                           for r in records])]
    tstar, missing = find_tqsl_star(records, run.scan.threshold)
    rows = [("threshold", run.scan.threshold), ("iterations_budget", run.scan.iterations)]
    grid = ("explicit" if run.scan.times is not None else
            f"coarse_bisect(start={run.scan.start_per_site}*(N-1)+{run.scan.start_offset},"
            f"step={run.scan.coarse_step},resolution={run.scan.resolution})")
    rows.append(("t_grid", grid))
    summary = {"tqsl_star": tstar, "missing": missing, "records": records}
    if len(tstar) >= 2:
        a, b, gamma, r2 = fit_line(tstar, run.chain.coupling_J)
        rows += [("slope_a", a), ("intercept_b", b), ("gamma", gamma), ("r_squared", r2)]
        summary.update(slope_a=a, intercept_b=b, gamma=gamma, r_squared=r2)
    rows += [(f"tqsl_star_N{n}", t) for n, t in tstar.items()]
    rows += [(f"missing_N{n}", "no T below threshold") for n in missing]
    files.append(io.write_quantities(out / "fit_report.csv", rows))
    cell_files = sorted(p for p in (out / "cells").rglob("*") if p.is_file())
    return _finish("scan", run, out, files + cell_files, summary)


# --- filter ---------------------------------------------------------------

def nominal_reference(cfg: ChainConfig) -> ControlPulse:
    """d0(t) = x_1 + (x_N - x_1) t / T, C0 = 0: the part kept out of the transform."""
    ramp = linear_ramp(cfg, strength=0.0)
    return ControlPulse(ramp.d_samples, np.zeros_like(ramp.c_samples), cfg.dt)


def cmd_filter(run: RunConfig, pulse_path, nu_max, out_dir=None) -> ResultBundle:
    """Low-pass a pulse at one or several cutoffs and re-simulate each."""
    out = _prepare(out_dir or run.outputs.directory)
    cfg = run.chain_config()
    pulse = io.read_pulse(pulse_path)
    if not pulse.matches(cfg):
        raise ValueError(f"pulse {pulse_path} does not match the configured time grid")
    nus = [float(nu_max)] if np.isscalar(nu_max) else [float(v) for v in nu_max]
    ref = nominal_reference(cfg)
    psi0, goal = basis_state(cfg, 1), basis_state(cfg, cfg.n_sites)
    before = 1.0 - fidelity(final_state(cfg, pulse, psi0), goal)
    rows = []
    files = []
    for nu in nus:
        filtered = lowpass_filter(pulse, nu, reference=ref)
        after = 1.0 - fidelity(final_state(cfg, filtered, psi0), goal)
        clipped = float(np.maximum(-filter_controls(pulse, nu, reference=ref)[1], 0.0).max())
        rows.append((nu, after, clipped))
        if nu == nus[-1]:
            files.append(io.write_pulse(out / "filtered_pulse.csv", filtered))
    freqs, dmag, cmag = pulse_spectrum(pulse, reference=ref)
    files.append(io.write_csv(out / "spectrum.csv", ["nu", "abs_d", "abs_C"],
                              zip(freqs, dmag, cmag)))
    files.append(io.write_csv(out / "filter_sweep.csv",
                              ["nu_max", "infidelity", "c_clipped_max"], rows))
    files.append(io.write_quantities(out / "filter_report.csv", [
        ("nu_max", nus[-1]), ("infidelity_unfiltered", before),
        ("infidelity_filtered", rows[-1][1]), ("c_clipped_max", rows[-1][2])]))
    return _finish("filter", run, out, files,
                   {"infidelity_unfiltered": before, "sweep": [r[:2] for r in rows]})


# --- report ---------------------------------------------------------------

REPORT_HEADER = ["run", "N", "T", "final_infidelity", "v_a", "v_d", "mean_dE",
                 "tau_qsl", "branch", "T_model", "T_orthogonal_swap"]


def _fit_params(root: Path):
    found = sorted(root.rglob("fit_report.csv"), key=lambda p: (len(p.parts), str(p)))
    if not found:
        return None
    q = io.read_quantities(found[0])
    if "gamma" not in q:
        return None
    return float(q["gamma"]), float(q["intercept_b"])


def cmd_report(result_dir, out_path=None) -> Path:
    """Consolidate every run below ``result_dir`` into report.csv."""
    root = Path(result_dir)
    if not root.is_dir():
        raise MissingInputError(f"{root} is not a directory")
    summaries = sorted(root.rglob("summary.csv"))
    if not summaries:
        raise MissingInputError(f"{root}: no summary.csv found (expected optimize, simulate "
                                "or scan outputs)")
    fit = _fit_params(root)
    rows = []
    absent = []
    for s in summaries:
        traj_path = s.parent / "trajectory.csv"
        if not traj_path.exists():
            absent.append(str(traj_path))
            continue
        q = io.read_quantities(s)
        n, T, J = int(q["n_sites"]), float(q["total_time"]), float(q["coupling_J"])
        traj = io.read_trajectory(traj_path)
        if T > 0:
            v_a, v_d = nominal_velocity(n, T), average_velocity(traj)
            est = tau_qsl(traj, J)
            tau, spread, branch = est.tau_per_site, est.mean_energy_spread, est.dominant_branch
        else:
            v_a = v_d = tau = spread = math.nan
            branch = ""
        t_model = (qsl_time(n, fit[0], math.pi / (2 * J)) + fit[1]) if fit else math.nan
        rows.append([str(s.parent.relative_to(root)) or ".", n, T,
                     float(q["final_infidelity"]), v_a, v_d, spread, tau, branch, t_model,
                     qsl_time(n, 1.0, math.pi / (2 * J))])
    if absent:
        raise MissingInputError("missing trajectory files: " + ", ".join(absent))
    out_path = Path(out_path) if out_path else root / "report.csv"
    return io.write_csv(out_path, REPORT_HEADER, rows)
