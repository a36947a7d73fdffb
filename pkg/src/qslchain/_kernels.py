"""Compiled inner loops.

Everything here works on raw arrays: ``diag0``/``off`` are the static bands,
``x`` the site positions, ``d``/``c`` the control samples on the time grid.
The Hamiltonian of step k uses the controls averaged over the step ends.
"""
import numpy as np
from numba import njit


@njit(cache=True)
def cn_step_inplace(diag, off, psi, dt, out, cp, rhs):
    """One Crank-Nicolson step ``(1 + iH dt/2) out = (1 - iH dt/2) psi``.

    ``diag`` is the full diagonal of H for this step; ``cp`` and ``rhs``
    are complex work arrays of length n. Returns False on a zero pivot.
    """
    n = psi.size
    h = 0.5j * dt
    # right-hand side
    for i in range(n):
        v = (1.0 - h * diag[i]) * psi[i]
        if i > 0:
            v -= h * off[i - 1] * psi[i - 1]
        if i < n - 1:
            v -= h * off[i] * psi[i + 1]
        rhs[i] = v
    # Thomas elimination; sub- and super-diagonals are both h*off
    b = 1.0 + h * diag[0]
    if b == 0:
        return False
    cp[0] = h * off[0] / b if n > 1 else 0.0
    out[0] = rhs[0] / b
    for i in range(1, n):
        a = h * off[i - 1]
        b = 1.0 + h * diag[i] - a * cp[i - 1]
        if b == 0:
            return False
        if i < n - 1:
            cp[i] = h * off[i] / b
        out[i] = (rhs[i] - a * out[i - 1]) / b
    for i in range(n - 2, -1, -1):
        out[i] -= cp[i] * out[i + 1]
    return True


@njit(cache=True)
def _step_diag(diag0, x, dmid, cmid, dg):
    for i in range(x.size):
        r = x[i] - dmid
        dg[i] = diag0[i] + cmid * r * r


@njit(cache=True)
def propagate_all(diag0, off, x, d, c, psi0, dt, backward):
    """Propagate over the whole grid and return every grid-point state.

    Forward: row k holds psi(t_k) starting from ``psi0`` at t_0.
    Backward: ``psi0`` is taken as the state at t_n and stepped down to t_0.
    """
    n = x.size
    steps = d.size - 1
    states = np.empty((steps + 1, n), dtype=np.complex128)
    dg = np.empty(n)
    cp = np.empty(n, dtype=np.complex128)
    rhs = np.empty(n, dtype=np.complex128)
    out = np.empty(n, dtype=np.complex128)
    if not backward:
        states[0] = psi0
        for k in range(steps):
            _step_diag(diag0, x, 0.5 * (d[k] + d[k + 1]), 0.5 * (c[k] + c[k + 1]), dg)
            if not cn_step_inplace(dg, off, states[k], dt, out, cp, rhs):
                raise ZeroDivisionError("singular Crank-Nicolson system")
            states[k + 1] = out
    else:
        states[steps] = psi0
        for k in range(steps - 1, -1, -1):
            _step_diag(diag0, x, 0.5 * (d[k] + d[k + 1]), 0.5 * (c[k] + c[k + 1]), dg)
            if not cn_step_inplace(dg, off, states[k + 1], -dt, out, cp, rhs):
                raise ZeroDivisionError("singular Crank-Nicolson system")
            states[k] = out
    return states


@njit(cache=True)
def propagate_final(diag0, off, x, d, c, psi0, dt, backward):
    """Like :func:`propagate_all` but keeps only the end state."""
    n = x.size
    steps = d.size - 1
    dg = np.empty(n)
    cp = np.empty(n, dtype=np.complex128)
    rhs = np.empty(n, dtype=np.complex128)
    a = psi0.copy()
    b = np.empty(n, dtype=np.complex128)
    for j in range(steps):
        k = steps - 1 - j if backward else j
        _step_diag(diag0, x, 0.5 * (d[k] + d[k + 1]), 0.5 * (c[k] + c[k + 1]), dg)
        if not cn_step_inplace(dg, off, a, -dt if backward else dt, b, cp, rhs):
            raise ZeroDivisionError("singular Crank-Nicolson system")
        a, b = b, a
    return a


@njit(cache=True)
def im_matrix_elements(chi, psi, x, dval, cval):
    """Im<chi|dH/dd|psi> and Im<chi|dH/dC|psi> for the parabolic field."""
    gd = 0.0
    gc = 0.0
    for i in range(x.size):
        r = x[i] - dval
        z = (chi[i].conjugate() * psi[i]).imag
        gd += -2.0 * cval * r * z
        gc += r * r * z
    return gd, gc


@njit(cache=True)
def _clip(u, lo, hi):
    if u < lo:
        return lo, 1
    if u > hi:
        return hi, 1
    return u, 0


@njit(cache=True)
def _step_g(psi, nxt, chi0, chi1, x, dm, cm, pbar, cbar):
    for i in range(x.size):
        pbar[i] = 0.5 * (psi[i] + nxt[i])
        cbar[i] = 0.5 * (chi0[i] + chi1[i])
    return im_matrix_elements(cbar, pbar, x, dm, cm)


@njit(cache=True)
def krotov_sweep(diag0, off, x, d, c, psi0, costates, dt, weight_d, weight_c, d_lo, d_hi,
                 mode):
    """Forward sweep with immediate control updates.

    ``d`` and ``c`` are updated in place, sample by sample in time order;
    the state is advanced under each updated sample before the next one is
    touched. ``mode`` picks the matrix element driving the update of u_k:

    0: Im<chi(t_k)|dH/du|psi(t_k)> at the grid time, psi(t_k) from a trial
       step under the not-yet-updated sample.
    1: half the sum of the step-averaged elements of the two steps sharing
       u_k (two trial steps); this is the exact discrete gradient direction
       of the midpoint scheme in the small-gain limit.

    C is kept >= 0 and d inside [d_lo, d_hi]. Returns the final state and
    the number of clamp events.
    """
    n = x.size
    steps = d.size - 1
    dg = np.empty(n)
    cp = np.empty(n, dtype=np.complex128)
    rhs = np.empty(n, dtype=np.complex128)
    psi = psi0.copy()
    trial = np.empty(n, dtype=np.complex128)
    trial2 = np.empty(n, dtype=np.complex128)
    pbar = np.empty(n, dtype=np.complex128)
    cbar = np.empty(n, dtype=np.complex128)
    clamps = 0

    # first sample: only the step (t_0, t_1) depends on it
    if mode == 0:
        gd, gc = im_matrix_elements(costates[0], psi, x, d[0], c[0])
    else:
        _step_diag(diag0, x, 0.5 * (d[0] + d[1]), 0.5 * (c[0] + c[1]), dg)
        if not cn_step_inplace(dg, off, psi, dt, trial, cp, rhs):
            raise ZeroDivisionError("singular Crank-Nicolson system")
        gd, gc = _step_g(psi, trial, costates[0], costates[1], x,
                         0.5 * (d[0] + d[1]), 0.5 * (c[0] + c[1]), pbar, cbar)
        gd *= 0.5
        gc *= 0.5
    d[0], hit = _clip(d[0] + weight_d * gd, d_lo, d_hi)
    clamps += hit
    c[0], hit = _clip(c[0] + weight_c * gc, 0.0, np.inf)
    clamps += hit

    for k in range(steps):
        _step_diag(diag0, x, 0.5 * (d[k] + d[k + 1]), 0.5 * (c[k] + c[k + 1]), dg)
        if not cn_step_inplace(dg, off, psi, dt, trial, cp, rhs):
            raise ZeroDivisionError("singular Crank-Nicolson system")
        if mode == 0:
            gd, gc = im_matrix_elements(costates[k + 1], trial, x, d[k + 1], c[k + 1])
        else:
            gd, gc = _step_g(psi, trial, costates[k], costates[k + 1], x,
                             0.5 * (d[k] + d[k + 1]), 0.5 * (c[k] + c[k + 1]), pbar, cbar)
            if k + 1 < steps:
                dm = 0.5 * (d[k + 1] + d[k + 2])
                cm = 0.5 * (c[k + 1] + c[k + 2])
                _step_diag(diag0, x, dm, cm, dg)
                if not cn_step_inplace(dg, off, trial, dt, trial2, cp, rhs):
                    raise ZeroDivisionError("singular Crank-Nicolson system")
                gd2, gc2 = _step_g(trial, trial2, costates[k + 1], costates[k + 2], x,
                                   dm, cm, pbar, cbar)
                gd += gd2
                gc += gc2
            gd *= 0.5
            gc *= 0.5
        d[k + 1], hit = _clip(d[k + 1] + weight_d * gd, d_lo, d_hi)
        clamps += hit
        c[k + 1], hit = _clip(c[k + 1] + weight_c * gc, 0.0, np.inf)
        clamps += hit
        _step_diag(diag0, x, 0.5 * (d[k] + d[k + 1]), 0.5 * (c[k] + c[k + 1]), dg)
        if not cn_step_inplace(dg, off, psi, dt, trial, cp, rhs):
            raise ZeroDivisionError("singular Crank-Nicolson system")
        psi, trial = trial, psi
    return psi, clamps


@njit(cache=True)
def exact_gradient(diag0, off, x, d, c, states, costates, dt):
    """Exact derivative of the fidelity w.r.t. each grid sample.

    ``states`` and ``costates`` are the forward trajectory and the backward
    propagated terminal co-state |target><target|psi(T)> under the same pulse. For the midpoint-
    averaged Crank-Nicolson step the derivative w.r.t. the step control is
    2*dt*Im<chibar|dH|psibar> with bars denoting step-end averages; each grid
    sample carries half of the two adjacent steps.
    """
    n = x.size
    steps = d.size - 1
    grad_d = np.zeros(steps + 1)
    grad_c = np.zeros(steps + 1)
    pb = np.empty(n, dtype=np.complex128)
    cb = np.empty(n, dtype=np.complex128)
    for k in range(steps):
        for i in range(n):
            pb[i] = 0.5 * (states[k, i] + states[k + 1, i])
            cb[i] = 0.5 * (costates[k, i] + costates[k + 1, i])
        gd, gc = im_matrix_elements(cb, pb, x, 0.5 * (d[k] + d[k + 1]),
                                    0.5 * (c[k] + c[k + 1]))
        grad_d[k] += dt * gd
        grad_d[k + 1] += dt * gd
        grad_c[k] += dt * gc
        grad_c[k + 1] += dt * gc
    return grad_d, grad_c
