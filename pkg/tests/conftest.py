import numpy as np
import pytest
from hypothesis import settings

from qslchain.model import ControlPulse, make_chain

settings.register_profile("qslchain", deadline=None, max_examples=25)
settings.load_profile("qslchain")


def smooth_pulse(cfg, rng, c_scale=1.0, d_scale=1.0):
    """Random few-mode pulse on the chain grid, C kept positive."""
    t = cfg.times / max(cfg.total_time, cfg.dt)
    span = cfg.positions[-1] - cfg.positions[0]
    d = cfg.positions[0] + span * t
    c = np.full_like(t, 0.5 * c_scale)
    for k in range(1, 4):
        d += d_scale * rng.normal() * np.sin(np.pi * k * t) / k
        c += 0.3 * c_scale * rng.normal() * np.cos(np.pi * k * t) / k
    return ControlPulse(d, np.abs(c), cfg.dt)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture
def small_chain():
    return make_chain(7, 1.0, 0.01, 4.0)


def pytest_terminal_summary(terminalreporter):
    mod = __import__("sys").modules.get("test_acceptance")
    lines = getattr(mod, "RESULTS", [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split()[1])):
            terminalreporter.write_line(line)
