import math

import numpy as np
import pytest

from conftest import smooth_pulse
from qslchain.krotov import (DivergenceError, KrotovSettings, control_gradients,
                             costate_trajectory, fidelity_gradient, krotov_sweep, optimize,
                             terminal_costate)
from qslchain.model import ControlPulse, basis_state, linear_ramp, make_chain
from qslchain.propagator import fidelity, final_state


def test_terminal_costate():
    cfg = make_chain(5)
    a, b = basis_state(cfg, 1), basis_state(cfg, 5)
    np.testing.assert_allclose(terminal_costate(b, b), b)
    np.testing.assert_allclose(terminal_costate(a, b), 0.0)
    np.testing.assert_allclose(terminal_costate((a + b) / math.sqrt(2), b), b / math.sqrt(2))


def test_control_gradients_examples(rng):
    cfg = make_chain(6)
    psi = rng.normal(size=6) + 1j * rng.normal(size=6)
    assert control_gradients(psi, psi, cfg, 0.8, 2.0) == pytest.approx((0.0, 0.0), abs=1e-14)
    chi = rng.normal(size=6) + 1j * rng.normal(size=6)
    assert control_gradients(chi, psi, cfg, 0.0, 2.0)[0] == 0.0
    two = make_chain(2)
    assert control_gradients(np.array([0, 1]), np.array([1, 0]), two, 1.0, 0.3) == (0.0, 0.0)
    with pytest.raises(ValueError):
        control_gradients(np.ones(3), np.ones(4), cfg, 1.0, 0.0)


def _fd_check(cfg, pulse, rng, n_samples=8, h=1e-5):
    a, b = basis_state(cfg, 1), basis_state(cfg, cfg.n_sites)
    gd, gc = fidelity_gradient(cfg, pulse, a, b)
    F = lambda p: fidelity(final_state(cfg, p, a), b)  # noqa: E731
    worst = 0.0
    for k in rng.choice(cfg.n_steps + 1, size=n_samples, replace=False):
        for which, g in (("d", gd), ("c", gc)):
            vals = []
            for s in (1, -1):
                d = pulse.d_samples.copy()
                c = pulse.c_samples.copy()
                (d if which == "d" else c)[k] += s * h
                vals.append(F(ControlPulse(d, c, cfg.dt)))
            fd = (vals[0] - vals[1]) / (2 * h)
            worst = max(worst, abs(fd - g[k]) / max(abs(fd), 1e-3 * np.abs(g).max()))
    return worst


def test_gradient_matches_finite_differences(rng):
    cfg = make_chain(11, 1.0, 0.01, 6.0)
    for _ in range(3):
        assert _fd_check(cfg, smooth_pulse(cfg, rng), rng) < 1e-5


def test_costate_trajectory_ends_on_terminal_condition(rng):
    cfg = make_chain(5, total_time=1.0)
    pulse = smooth_pulse(cfg, rng)
    a, b = basis_state(cfg, 1), basis_state(cfg, 5)
    end = final_state(cfg, pulse, a)
    chis = costate_trajectory(cfg, pulse, end, b)
    np.testing.assert_allclose(chis[-1], terminal_costate(end, b))


def test_zero_step_weight_is_null_update(rng):
    cfg = make_chain(7, total_time=3.0)
    pulse = smooth_pulse(cfg, rng)
    a, b = basis_state(cfg, 1), basis_state(cfg, 7)
    end = final_state(cfg, pulse, a)
    chis = costate_trajectory(cfg, pulse, end, b)
    new, psi_t, _ = krotov_sweep(cfg, pulse, a, b, chis, KrotovSettings(step_weight=0.0))
    np.testing.assert_array_equal(new.d_samples, pulse.d_samples)
    np.testing.assert_array_equal(new.c_samples, pulse.c_samples)
    np.testing.assert_allclose(psi_t, end, atol=1e-13)


@pytest.mark.parametrize("two_sided", [True, False])
def test_perfect_transfer_is_fixed_point(rng, two_sided):
    # goal = the state the pulse already produces, so F = 1
    cfg = make_chain(7, total_time=3.0)
    pulse = smooth_pulse(cfg, rng)
    a = basis_state(cfg, 1)
    goal = final_state(cfg, pulse, a)
    chis = costate_trajectory(cfg, pulse, goal, goal)
    new, _, _ = krotov_sweep(cfg, pulse, a, goal, chis,
                             KrotovSettings(step_weight=1.0, two_sided=two_sided))
    assert np.abs(new.d_samples - pulse.d_samples).max() < 1e-8
    assert np.abs(new.c_samples - pulse.c_samples).max() < 1e-8
    res = optimize(cfg, pulse, a, goal, KrotovSettings())
    assert res.iterations_run <= 1
    assert np.abs(res.final_pulse.d_samples - pulse.d_samples).max() < 1e-8


def test_sweep_rejects_foreign_grid(rng):
    cfg = make_chain(5, total_time=1.0)
    pulse = smooth_pulse(cfg, rng)
    a = basis_state(cfg, 1)
    with pytest.raises(ValueError):
        krotov_sweep(cfg, pulse, a, a, np.zeros((3, 5)), KrotovSettings())


def test_settings_validation():
    with pytest.raises(ValueError):
        KrotovSettings(step_weight=math.inf)
    with pytest.raises(ValueError):
        KrotovSettings(infidelity_threshold=1.0)
    with pytest.raises(ValueError):
        KrotovSettings(growth=0.5)


@pytest.mark.parametrize("two_sided", [True, False])
def test_optimize_monotone_and_converges(two_sided):
    cfg = make_chain(11, 1.0, 0.01, 12.0)
    res = optimize(cfg, linear_ramp(cfg), basis_state(cfg, 1), basis_state(cfg, 11),
                   KrotovSettings(max_iterations=400, two_sided=two_sided))
    h = res.infidelity_history
    assert h.size == res.iterations_run + 1
    assert h[0] == pytest.approx(res.initial_infidelity)
    assert np.all(np.diff(h) <= 1e-10)
    assert np.all((h >= 0) & (h <= 1))
    assert res.converged == (h[-1] < 1e-3)
    assert res.converged
    assert res.final_infidelity == pytest.approx(h[-1], abs=1e-12)
    assert np.all(res.final_pulse.c_samples >= 0)


def test_first_sweep_improves(rng):
    cfg = make_chain(21, 1.0, 0.01, 20.0)
    res = optimize(cfg, linear_ramp(cfg), basis_state(cfg, 1), basis_state(cfg, 21),
                   KrotovSettings(max_iterations=1))
    assert res.infidelity_history[1] < res.infidelity_history[0]


def test_callback_sees_every_iteration():
    cfg = make_chain(5, total_time=3.0)
    seen = []
    optimize(cfg, linear_ramp(cfg), basis_state(cfg, 1), basis_state(cfg, 5),
             KrotovSettings(max_iterations=5, infidelity_threshold=1e-12),
             callback=lambda i, v: seen.append(i))
    assert seen == [1, 2, 3, 4, 5]


def test_divergence_without_backoff():
    cfg = make_chain(9, 1.0, 0.05, 4.0)
    with pytest.raises(DivergenceError) as info:
        optimize(cfg, linear_ramp(cfg), basis_state(cfg, 1), basis_state(cfg, 9),
                 KrotovSettings(step_weight=1e300, growth=1.0, adaptive_backoff=False,
                                max_iterations=50, d_margin=1e300))
    assert info.value.iteration >= 1


def test_backoff_survives_huge_gain():
    cfg = make_chain(9, 1.0, 0.05, 4.0)
    res = optimize(cfg, linear_ramp(cfg), basis_state(cfg, 1), basis_state(cfg, 9),
                   KrotovSettings(step_weight=1e300, max_iterations=30, d_margin=1e300))
    assert res.rejected_sweeps > 0
    assert np.all(np.diff(res.infidelity_history) <= 1e-10)
