"""Run configuration: a YAML document with sections chain/baseline/krotov/scan/outputs."""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import yaml

from ..krotov import KrotovSettings
from ..model import ChainConfig, make_chain


class ConfigError(ValueError):
    pass


@dataclass
class ChainSection:
    n_sites: int = 101
    coupling_J: float = 1.0
    dt: float = 0.01
    total_time: float = 200.0
    positions: Optional[list] = None


@dataclass
class BaselineSection:
    ramp_speed: Optional[float] = None
    constant_strength: Optional[float] = None
    pulse_file: Optional[str] = None


@dataclass
class KrotovSection:
    step_weight: float = 1.0
    max_iterations: int = 1000
    infidelity_threshold: float = 1e-3
    adaptive_backoff: bool = True
    strength_scale: float = 0.3
    growth: float = 1.05
    max_step_weight: float = 3.0
    d_margin: Optional[float] = None
    two_sided: bool = True


@dataclass
class ScanSection:
    n_list: list = field(default_factory=lambda: [11, 21, 31])
    threshold: float = 1e-3
    iterations: int = 5000
    # coarse sweep starts at start_per_site*(N-1) + start_offset and steps down
    # by coarse_step until a cell fails, then bisects to `resolution`.
    start_per_site: float = 0.8
    start_offset: float = 4.0
    coarse_step: float = 1.0
    resolution: float = 0.1
    times: Optional[dict] = None  # explicit {N: [T, ...]} grid instead


@dataclass
class OutputsSection:
    directory: str = "results"
    snapshot_stride: Optional[int] = None
    snapshot_times: Optional[list] = None


_SECTIONS = {
    "chain": ChainSection,
    "baseline": BaselineSection,
    "krotov": KrotovSection,
    "scan": ScanSection,
    "outputs": OutputsSection,
}


@dataclass
class RunConfig:
    chain: ChainSection = field(default_factory=ChainSection)
    baseline: BaselineSection = field(default_factory=BaselineSection)
    krotov: KrotovSection = field(default_factory=KrotovSection)
    scan: ScanSection = field(default_factory=ScanSection)
    outputs: OutputsSection = field(default_factory=OutputsSection)

    def __post_init__(self):
        b = self.baseline
        has_params = b.ramp_speed is not None or b.constant_strength is not None
        if has_params and b.pulse_file is not None:
            raise ConfigError("baseline: give either ramp parameters or pulse_file, not both")
        try:
            self.chain_config()
            self.krotov_settings()
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc

    def chain_config(self, n_sites=None, total_time=None) -> ChainConfig:
        c = self.chain
        return make_chain(n_sites or c.n_sites, c.coupling_J, c.dt,
                          c.total_time if total_time is None else total_time,
                          positions=None if n_sites else c.positions)

    def krotov_settings(self, **overrides) -> KrotovSettings:
        kw = dataclasses.asdict(self.krotov)
        kw.update(overrides)
        return KrotovSettings(**kw)

    def to_dict(self) -> dict:
        return {name: dataclasses.asdict(getattr(self, name)) for name in _SECTIONS}

    def dump(self) -> str:
        return yaml.safe_dump(self.to_dict(), sort_keys=True)


def config_from_dict(data: Optional[dict]) -> RunConfig:
    data = data or {}
    if not isinstance(data, dict):
        raise ConfigError("config root must be a mapping")
    unknown = set(data) - set(_SECTIONS)
    if unknown:
        raise ConfigError(f"unknown config sections: {sorted(unknown)}")
    kwargs = {}
    for name, cls in _SECTIONS.items():
        section = data.get(name) or {}
        if not isinstance(section, dict):
            raise ConfigError(f"section {name!r} must be a mapping")
        allowed = {f.name for f in dataclasses.fields(cls)}
        bad = set(section) - allowed
        if bad:
            raise ConfigError(f"unknown keys in {name!r}: {sorted(bad)}")
        kwargs[name] = cls(**section)
    return RunConfig(**kwargs)


def load_config(path) -> RunConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"invalid YAML in {path}: {exc}") from exc
    return config_from_dict(data)
