"""Assemble a runnable scenario (entities, tracks, predictors) from config."""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .config import Config, ConfigError
from .data import Trajectory, build_windows, clean, parse_plt, parse_stations, split
from .predictor import EvalReport, TrainedPredictor, evaluate, load_predictor, train
from .seeding import substream, substream_seed
from .simenv import ChannelParams, MecServer, PriorityWeights, Scenario, TaskDistribution, Vehicle
from .synthetic import loop_track, station_grid, stations_csv


@dataclass
class World:
    scenario: Scenario
    trajectories: list[Trajectory]

    @property
    def tracks(self) -> list[np.ndarray]:
        return [t.coords for t in self.trajectories]


def _uniform(rng: np.random.Generator, lo_hi, n: int) -> list[float]:
    lo, hi = lo_hi
    return [float(v) for v in rng.uniform(lo, hi, n)] if hi > lo else [float(lo)] * n


def build_world(cfg: Config, root_seed: int) -> World:
    sc = cfg.scenario
    rng = substream(root_seed, "scenario")
    caps_server = _uniform(rng, sc.server_capacity_hz, sc.n_servers)
    caps_local = _uniform(rng, sc.local_capacity_hz, sc.n_vehicles)

    csv_path = cfg.resolve(sc.stations_csv)
    if csv_path is not None:
        text = csv_path.read_text()
    else:
        text = stations_csv(station_grid(tuple(sc.center), sc.n_servers, sc.station_spacing_m))
    snapshot = parse_stations(text, caps_server, sc.service_range_m)
    if len(snapshot) != sc.n_servers:
        raise ConfigError(f"station file has {len(snapshot)} stations, scenario.n_servers={sc.n_servers}")
    servers = tuple(MecServer(s.id, s.position, s.capacity_hz, s.range_m) for s in snapshot.stations)

    trajectories = []
    if sc.trajectories:
        if len(sc.trajectories) != sc.n_vehicles:
            raise ConfigError(f"{len(sc.trajectories)} trajectory files for {sc.n_vehicles} vehicles")
        for i, p in enumerate(sc.trajectories):
            raw = parse_plt(cfg.resolve(p).read_text(), vehicle_id=f"v{i}")  # type: ignore[union-attr]
            trajectories.append(clean(raw, sc.max_speed_mps))
    else:
        for i in range(sc.n_vehicles):
            east, north = rng.uniform(-300.0, 300.0, 2)
            lat0 = sc.center[0] + math.degrees(north / 6_371_000.0)
            lon0 = sc.center[1] + math.degrees(east / (6_371_000.0 * math.cos(math.radians(sc.center[0]))))
            trajectories.append(
                loop_track(
                    (lat0, lon0),
                    semi_major_m=float(rng.uniform(1400.0, 2000.0)),
                    semi_minor_m=float(rng.uniform(600.0, 1000.0)),
                    rotation=float(rng.uniform(0.0, math.pi)),
                    points_per_loop=sc.track_points_per_loop,
                    loops=sc.track_loops,
                    noise_m=sc.track_noise_m,
                    phase=float(rng.uniform(0.0, 2.0 * math.pi)),
                    seed=substream_seed(root_seed, "track", i),
                    interval_s=sc.slot_length_s,
                    vehicle_id=f"v{i}",
                )
            )

    vehicles = tuple(
        Vehicle(t.vehicle_id, caps_local[i], sc.tx_power_w, sc.comm_range_m) for i, t in enumerate(trajectories)
    )
    scenario = Scenario(
        vehicles=vehicles,
        servers=servers,
        channel=ChannelParams(
            bandwidth_hz=sc.bandwidth_hz,
            subchannels=sc.subchannels or sc.n_vehicles,
            noise_w=sc.noise_w,
            ref_gain=sc.ref_gain,
            ref_distance_m=sc.ref_distance_m,
            path_loss_exponent=sc.path_loss_exponent,
        ),
        tasks=TaskDistribution(
            data_bits=tuple(sc.data_bits),
            cycles=tuple(sc.cycles),
            deadline_s=tuple(sc.deadline_s),
            features=(tuple(sc.priority), tuple(sc.importance), tuple(sc.resources)),
        ),
        weights=PriorityWeights(sc.alpha, sc.beta, sc.lam),
        slot_length_s=sc.slot_length_s,
        penalty_miss=sc.penalty_miss,
    )
    return World(scenario, trajectories)


def train_vehicle_predictor(traj: Trajectory, cfg: Config, seed: int) -> tuple[TrainedPredictor, EvalReport]:
    """Train on the chronological head of a track and report on its tail."""
    windows = build_windows(traj, cfg.predictor.seq_len)
    train_set, test_set = split(windows, cfg.experiment.train_fraction)
    predictor = train(train_set, replace(cfg.predictor, seed=seed))
    return predictor, evaluate(predictor, test_set)


def train_predictors(world: World, cfg: Config, root_seed: int) -> tuple[list[TrainedPredictor], list[EvalReport]]:
    paths = cfg.experiment.predictor_checkpoints
    if paths:
        if len(paths) != world.scenario.n_vehicles:
            raise ConfigError(f"{len(paths)} predictor checkpoints for {world.scenario.n_vehicles} vehicles")
        predictors = [load_predictor(cfg.resolve(p)) for p in paths]
        reports = []
        for p, traj in zip(predictors, world.trajectories):
            _, test_set = split(build_windows(traj, p.config.seq_len), cfg.experiment.train_fraction)
            reports.append(evaluate(p, test_set))
        return predictors, reports
    out = [
        train_vehicle_predictor(traj, cfg, substream_seed(root_seed, "predictor", i))
        for i, traj in enumerate(world.trajectories)
    ]
    return [p for p, _ in out], [r for _, r in out]


def predicted_track(predictor: TrainedPredictor, coords: np.ndarray) -> np.ndarray:
    """Prediction for every row of a cyclic track from the rows before it."""
    n = len(coords)
    L = predictor.config.seq_len
    idx = (np.arange(n)[:, None] - L + np.arange(L)[None, :]) % n
    return predictor.predict_coords(coords[idx])
