"""Brute-force check of the single-excitation reduction in the full 2**N space.

Basis states are bit strings read left to right as sites 1..N with 1 = up,
so the excitation on site n is the integer ``1 << (N - n)``.

The full Hamiltonian is

    H = s * (J/2) * sum_n sigma_n . sigma_{n+1} + sum_n (B_n / 2) sigma^z_n

with ``B_n = C * (x_n - d)**2``. ``exchange_sign`` s defaults to +1 and the
field enters with a factor 1/2; with the energy measured from the all-down
configuration this restricts, in the one-up-spin sector, to exactly the
reduced tridiagonal Hamiltonian used by :mod:`qslchain.propagator`.
"""
from __future__ import annotations

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .model import ChainConfig, ControlPulse, control_field

__all__ = [
    "MAX_SITES",
    "ResourceLimitError",
    "DegenerateProjectionError",
    "full_hamiltonian",
    "full_hamiltonian_apply",
    "vacuum_energy",
    "embed",
    "project",
    "excitation_number",
    "full_propagate",
]

MAX_SITES = 10


class ResourceLimitError(ValueError):
    pass


class DegenerateProjectionError(ValueError):
    pass


def _guard(cfg: ChainConfig):
    if cfg.n_sites > MAX_SITES:
        raise ResourceLimitError(f"oracle limited to {MAX_SITES} sites, got {cfg.n_sites}")


def _spins(n_sites):
    """(2**N, N) array of sigma^z eigenvalues, column m is site m+1."""
    idx = np.arange(2 ** n_sites)
    bits = (idx[:, None] >> (n_sites - 1 - np.arange(n_sites))[None, :]) & 1
    return 2 * bits - 1


def _exchange(cfg: ChainConfig, exchange_sign):
    """Sparse Heisenberg part s*(J/2) sum sigma.sigma."""
    n = cfg.n_sites
    dim = 2 ** n
    s = _spins(n)
    pref = exchange_sign * 0.5 * cfg.coupling_J
    diag = pref * np.sum(s[:, :-1] * s[:, 1:], axis=1).astype(float)
    rows, cols = [np.arange(dim)], [np.arange(dim)]
    vals = [diag]
    idx = np.arange(dim)
    for m in range(n - 1):
        # sigma^x sigma^x + sigma^y sigma^y flips an antiparallel pair with amplitude 2
        mask = (1 << (n - 1 - m)) | (1 << (n - 2 - m))
        anti = s[:, m] != s[:, m + 1]
        rows.append(idx[anti] ^ mask)
        cols.append(idx[anti])
        vals.append(np.full(anti.sum(), 2.0 * pref))
    return sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                         shape=(dim, dim))


def _field_diag(cfg: ChainConfig, strength, minimum):
    b = control_field(strength, minimum, cfg.positions)
    return _spins(cfg.n_sites) @ (0.5 * b)


def full_hamiltonian(cfg: ChainConfig, strength, minimum, exchange_sign=1.0):
    """Sparse 2**N Hamiltonian at one instant."""
    _guard(cfg)
    return (_exchange(cfg, exchange_sign)
            + sp.diags(_field_diag(cfg, strength, minimum))).tocsr()


def vacuum_energy(cfg: ChainConfig, strength, minimum, exchange_sign=1.0):
    """Energy of the all-down configuration."""
    b = control_field(strength, minimum, cfg.positions)
    return exchange_sign * 0.5 * cfg.coupling_J * (cfg.n_sites - 1) - 0.5 * b.sum()


def full_hamiltonian_apply(cfg: ChainConfig, strength, minimum, state, exchange_sign=1.0):
    """H|state> evaluated directly on bit strings, without building a matrix."""
    _guard(cfg)
    n = cfg.n_sites
    psi = np.asarray(state, dtype=complex)
    if psi.shape != (2 ** n,):
        raise ValueError(f"full state must have length {2 ** n}")
    s = _spins(n)
    pref = exchange_sign * 0.5 * cfg.coupling_J
    out = (pref * np.sum(s[:, :-1] * s[:, 1:], axis=1) + _field_diag(cfg, strength, minimum)) * psi
    idx = np.arange(2 ** n)
    for m in range(n - 1):
        mask = (1 << (n - 1 - m)) | (1 << (n - 2 - m))
        anti = s[:, m] != s[:, m + 1]
        np.add.at(out, idx[anti] ^ mask, 2.0 * pref * psi[anti])
    return out


def _sector_index(n_sites):
    return np.array([1 << (n_sites - k) for k in range(1, n_sites + 1)])


def embed(subspace_state, cfg: ChainConfig):
    """Place amplitude n on the bit string with a single up-spin at site n."""
    _guard(cfg)
    psi = np.asarray(subspace_state, dtype=complex)
    if psi.shape != (cfg.n_sites,):
        raise ValueError("subspace state length must equal n_sites")
    full = np.zeros(2 ** cfg.n_sites, dtype=complex)
    full[_sector_index(cfg.n_sites)] = psi
    return full


def project(full_state, cfg: ChainConfig):
    """Single-excitation components and the weight found outside that sector."""
    full = np.asarray(full_state, dtype=complex)
    sub = full[_sector_index(cfg.n_sites)].copy()
    inside = float(np.vdot(sub, sub).real)
    if inside == 0.0:
        raise DegenerateProjectionError("state has no single-excitation weight")
    leaked = max(0.0, float(np.vdot(full, full).real) - inside)
    return sub, leaked


def excitation_number(full_state, n_sites):
    """Expectation of the number of up-spins."""
    p = np.abs(np.asarray(full_state)) ** 2
    ups = (_spins(n_sites) + 1) // 2
    return float(p @ ups.sum(axis=1))


def full_propagate(cfg: ChainConfig, pulse: ControlPulse, initial, exchange_sign=1.0,
                   subtract_vacuum=True):
    """Crank-Nicolson evolution of a 2**N state with a sparse LU solve per step.

    Controls are evaluated at step midpoints. With ``subtract_vacuum`` the
    all-down energy is removed from H at every step, which only changes the
    global phase.
    """
    _guard(cfg)
    if not pulse.matches(cfg):
        raise ValueError("pulse grid does not match config")
    dim = 2 ** cfg.n_sites
    psi = np.asarray(initial, dtype=complex).copy()
    if psi.shape != (dim,):
        raise ValueError(f"full state must have length {dim}")
    h_ex = _exchange(cfg, exchange_sign)
    spins = _spins(cfg.n_sites)
    eye = sp.identity(dim, dtype=complex, format="csc")
    d_mid, c_mid = pulse.midpoints()
    h = 0.5j * cfg.dt
    for dm, cm in zip(d_mid, c_mid):
        b = control_field(cm, dm, cfg.positions)
        diag = spins @ (0.5 * b)
        if subtract_vacuum:
            diag = diag - vacuum_energy(cfg, cm, dm, exchange_sign)
        H = (h_ex + sp.diags(diag)).tocsc()
        lu = spla.splu((eye + h * H).tocsc())
        psi = lu.solve(psi - h * (H @ psi))
        if not np.all(np.isfinite(psi)):
            raise RuntimeError("oracle Crank-Nicolson solve failed")
    return psi
