"""CSV tables and the run manifest.

All floats are written with 17 significant digits so identical runs give
byte-identical files.
"""
from __future__ import annotations

import csv
import hashlib
import json
from pathlib import Path

import numpy as np

from ..model import ControlPulse
from ..propagator import Trajectory

FLOAT_FMT = "{:.17g}"


def _fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return FLOAT_FMT.format(float(v))
    return str(v)


def write_csv(path, header, rows):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])
    return path


def read_csv(path):
    """(header, rows-as-string-lists)."""
    with open(path, newline="") as fh:
        r = csv.reader(fh)
        header = next(r)
        return header, [row for row in r if row]


def write_pulse(path, pulse: ControlPulse):
    return write_csv(path, ["t", "d", "C"],
                     zip(pulse.times, pulse.d_samples, pulse.c_samples))


def read_pulse(path) -> ControlPulse:
    header, rows = read_csv(path)
    if header != ["t", "d", "C"]:
        raise ValueError(f"{path}: expected header t,d,C, got {','.join(header)}")
    a = np.array(rows, dtype=float)
    t = a[:, 0]
    dt = float(t[1] - t[0]) if t.size > 1 else 1.0
    if t.size > 1 and not np.allclose(np.diff(t), dt, rtol=1e-9, atol=1e-12):
        raise ValueError(f"{path}: time column is not uniform")
    return ControlPulse(a[:, 1], a[:, 2], dt)


def write_trajectory(path, traj: Trajectory):
    n = traj.site_probabilities.shape[1] if traj.site_probabilities is not None else 0
    header = ["t", "x_expect", "E", "dE"] + [f"p_{i + 1}" for i in range(n)]
    rows = []
    for j, t in enumerate(traj.times):
        row = [t, traj.position_expectation[j], traj.energy_mean[j], traj.energy_spread[j]]
        if n:
            row.extend(traj.site_probabilities[j])
        rows.append(row)
    return write_csv(path, header, rows)


def read_trajectory(path) -> Trajectory:
    header, rows = read_csv(path)
    if header[:4] != ["t", "x_expect", "E", "dE"]:
        raise ValueError(f"{path}: not a trajectory file")
    a = np.array(rows, dtype=float)
    probs = a[:, 4:] if a.shape[1] > 4 else None
    return Trajectory(times=a[:, 0], position_expectation=a[:, 1], energy_mean=a[:, 2],
                      energy_spread=a[:, 3], site_probabilities=probs,
                      total_time=float(a[-1, 0]))


def write_history(path, history):
    return write_csv(path, ["iteration", "infidelity"], enumerate(history))


def read_history(path):
    _, rows = read_csv(path)
    return np.array([float(r[1]) for r in rows])


def write_quantities(path, items):
    return write_csv(path, ["quantity", "value"], items)


def read_quantities(path) -> dict:
    _, rows = read_csv(path)
    return {k: v for k, v in rows}


def sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def write_manifest(out_dir, run_id, command, config_text, files):
    """manifest.json listing every emitted file with its checksum."""
    out_dir = Path(out_dir)
    entries = []
    for f in sorted(set(Path(p) for p in files)):
        entries.append({"path": str(f.relative_to(out_dir)), "sha256": sha256(f)})
    manifest = {"run_id": run_id, "command": command, "config": config_text, "files": entries}
    path = out_dir / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return path
