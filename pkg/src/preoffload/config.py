"""TOML scenario/experiment configuration.

Every section is optional; missing keys take the defaults below. Relative
paths are resolved against the config file's directory.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from .policies import AgentConfig
from .predictor import PredictorConfig

ALGORITHMS = ("tppd", "ddqn_rt", "dqn_rt", "exhaustive_rt", "random", "all_local", "all_offload")
DEFAULT_PSI = {
    "tppd": 0.0,
    "ddqn_rt": 0.5,
    "dqn_rt": 0.5,
    "exhaustive_rt": 0.5,
    "random": 0.0,
    "all_local": 0.0,
    "all_offload": 0.0,
}


class ConfigError(ValueError):
    pass


@dataclass
class ScenarioConfig:
    n_vehicles: int = 4
    n_servers: int = 6
    slot_length_s: float = 1.0
    center: tuple[float, float] = (39.9042, 116.4074)
    station_spacing_m: float = 1200.0
    stations_csv: str | None = None
    trajectories: list[str] = field(default_factory=list)
    track_points_per_loop: int = 600
    track_loops: int = 5
    track_noise_m: float = 2.0
    local_capacity_hz: tuple[float, float] = (0.5e9, 1.5e9)
    tx_power_w: float = 0.5
    comm_range_m: float = 800.0
    server_capacity_hz: tuple[float, float] = (5e9, 15e9)
    service_range_m: float = 1000.0
    max_speed_mps: float = 50.0
    penalty_miss: float | None = None
    # channel
    bandwidth_hz: float = 20e6
    subchannels: int = 0  # 0: one per vehicle
    noise_w: float = 1e-13
    ref_gain: float = 1e-4
    ref_distance_m: float = 100.0
    path_loss_exponent: float = 2.0
    # task sampling ranges
    data_bits: tuple[float, float] = (0.2e6, 2e6)
    cycles: tuple[float, float] = (0.2e9, 1e9)
    deadline_s: tuple[float, float] = (0.5, 3.0)
    priority: tuple[float, float] = (1.0, 5.0)
    importance: tuple[float, float] = (1.0, 10.0)
    resources: tuple[float, float] = (0.0, 1.0)
    # priority weights
    alpha: float = 0.5
    beta: float = 0.3
    lam: float = 0.2


@dataclass
class ExperimentConfig:
    algorithms: tuple[str, ...] = ALGORITHMS
    episodes: int = 2
    slots_per_episode: int = 100
    seeds: tuple[int, ...] = (0, 1, 2, 3, 4)
    psi: dict[str, float] = field(default_factory=lambda: dict(DEFAULT_PSI))
    # per-algorithm fixed decision time per slot; absent => wall clock
    decision_time_s: dict[str, float] = field(default_factory=dict)
    station_power_w: float = 10.0
    output_dir: str = "out"
    workers: int = 1
    train_fraction: float = 0.8
    ddqn_checkpoint: str | None = None
    dqn_checkpoint: str | None = None
    predictor_checkpoints: list[str] = field(default_factory=list)

    def __post_init__(self) -> None:
        unknown = [a for a in self.algorithms if a not in ALGORITHMS]
        if unknown:
            raise ConfigError(f"unknown algorithm(s) {unknown}; choose from {list(ALGORITHMS)}")
        if not self.seeds:
            raise ConfigError("experiment.seeds must be non-empty")
        psi = dict(DEFAULT_PSI)
        psi.update(self.psi)
        for name, v in psi.items():
            if name not in ALGORITHMS:
                raise ConfigError(f"psi given for unknown algorithm {name!r}")
            if not 0.0 <= v <= 1.0:
                raise ConfigError(f"psi[{name}]={v} outside [0, 1]")
        self.psi = psi
        for name, v in self.decision_time_s.items():
            if name not in ALGORITHMS or v < 0:
                raise ConfigError(f"bad synthetic decision time {name}={v}")
        if self.episodes < 1 or self.slots_per_episode < 1:
            raise ConfigError("episodes and slots_per_episode must be >= 1")
        self.algorithms = tuple(self.algorithms)
        self.seeds = tuple(int(s) for s in self.seeds)


@dataclass
class Config:
    scenario: ScenarioConfig = field(default_factory=ScenarioConfig)
    predictor: PredictorConfig = field(default_factory=PredictorConfig)
    agent: AgentConfig = field(default_factory=AgentConfig)
    experiment: ExperimentConfig = field(default_factory=ExperimentConfig)
    base_dir: Path = field(default_factory=Path.cwd)

    def resolve(self, p: str | None) -> Path | None:
        if not p:
            return None
        path = Path(p)
        return path if path.is_absolute() else self.base_dir / path


def _build(cls, table: dict[str, Any], section: str):
    names = {f.name: f for f in dataclasses.fields(cls)}
    unknown = set(table) - set(names)
    if unknown:
        raise ConfigError(f"[{section}] unknown key(s): {sorted(unknown)}")
    kwargs = {}
    for k, v in table.items():
        if isinstance(v, list) and k not in ("trajectories", "predictor_checkpoints", "algorithms", "seeds"):
            v = tuple(v)
        kwargs[k] = v
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"[{section}] {exc}") from None


def parse_config(text: str, base_dir: Path | None = None) -> Config:
    try:
        raw = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"invalid TOML: {exc}") from None
    sections = {"scenario", "predictor", "agent", "experiment"}
    unknown = set(raw) - sections
    if unknown:
        raise ConfigError(f"unknown section(s): {sorted(unknown)}")
    return Config(
        scenario=_build(ScenarioConfig, raw.get("scenario", {}), "scenario"),
        predictor=_build(PredictorConfig, raw.get("predictor", {}), "predictor"),
        agent=_build(AgentConfig, raw.get("agent", {}), "agent"),
        experiment=_build(ExperimentConfig, raw.get("experiment", {}), "experiment"),
        base_dir=base_dir or Path.cwd(),
    )


def load_config(path: str | Path | None) -> Config:
    if path is None:
        return Config()
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    return parse_config(text, path.parent)
