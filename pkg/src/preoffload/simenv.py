"""Slot-stepped vehicular edge-computing environment.

Delays follow the usual local/offload split: local execution costs
``c / F_local``; offloading costs upload time over an OFDM subchannel plus
edge compute time on the share of the server granted to the task. Server
shares stay committed until the slot in which the task finishes.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .geo import GeoPoint, haversine_distance, haversine_m

LOCAL = 0
# Below this the server counts as fully committed.
SHARE_EPS = 1e-9
INFEASIBLE = math.inf


class ActionError(ValueError):
    pass


@dataclass(frozen=True)
class Task:
    """One vehicle's task for a slot.

    ``features`` are the raw priority / importance / required-resource
    scores; ``priority`` is their weighted standardized combination.
    """

    data_bits: float
    cycles: float
    deadline_s: float
    features: tuple[float, float, float] = (0.0, 0.0, 0.0)
    priority: float = 0.5

    def __post_init__(self) -> None:
        if self.data_bits < 0 or self.cycles <= 0 or self.deadline_s <= 0:
            raise ValueError(f"invalid task {self}")
        if not 0.0 <= self.priority <= 1.0:
            raise ValueError(f"priority {self.priority} outside [0, 1]")


@dataclass(frozen=True)
class Vehicle:
    id: str
    local_capacity_hz: float
    tx_power_w: float = 0.5
    comm_range_m: float = 800.0

    def __post_init__(self) -> None:
        if self.local_capacity_hz <= 0 or self.tx_power_w < 0 or self.comm_range_m <= 0:
            raise ValueError(f"invalid vehicle {self}")


@dataclass(frozen=True)
class MecServer:
    id: str
    position: GeoPoint
    capacity_hz: float
    service_range_m: float = 1000.0

    def __post_init__(self) -> None:
        if self.capacity_hz <= 0 or self.service_range_m <= 0:
            raise ValueError(f"invalid server {self}")


@dataclass(frozen=True)
class ChannelParams:
    bandwidth_hz: float = 20e6
    subchannels: int = 4
    noise_w: float = 1e-13
    ref_gain: float = 1e-4
    ref_distance_m: float = 100.0
    path_loss_exponent: float = 2.0

    def __post_init__(self) -> None:
        vals = (self.bandwidth_hz, self.subchannels, self.noise_w, self.ref_gain,
                self.ref_distance_m, self.path_loss_exponent)
        if min(vals) <= 0:
            raise ValueError(f"channel parameters must be positive: {self}")

    @property
    def min_distance_m(self) -> float:
        return self.ref_distance_m / 100.0


@dataclass(frozen=True)
class PriorityWeights:
    alpha: float = 0.5
    beta: float = 0.3
    lam: float = 0.2

    def __post_init__(self) -> None:
        if min(self.alpha, self.beta, self.lam) < 0:
            raise ValueError("priority weights must be non-negative")
        if not math.isclose(self.alpha + self.beta + self.lam, 1.0, abs_tol=1e-12):
            raise ValueError("priority weights must sum to 1")


@dataclass(frozen=True)
class TaskDistribution:
    """Uniform ranges ``(lo, hi)`` for task sampling."""

    data_bits: tuple[float, float] = (0.2e6, 2e6)
    cycles: tuple[float, float] = (0.2e9, 1e9)
    deadline_s: tuple[float, float] = (0.5, 3.0)
    features: tuple[tuple[float, float], ...] = ((1.0, 5.0), (1.0, 10.0), (0.0, 1.0))

    def __post_init__(self) -> None:
        ranges = [self.data_bits, self.cycles, self.deadline_s, *self.features]
        if len(self.features) != 3:
            raise ValueError("exactly three priority features are required")
        for lo, hi in ranges:
            if not (math.isfinite(lo) and math.isfinite(hi)) or hi < lo:
                raise ValueError(f"invalid range ({lo}, {hi})")
        if self.data_bits[0] < 0 or self.cycles[0] <= 0 or self.deadline_s[0] <= 0:
            raise ValueError("task ranges must be positive (data size may be zero)")


@dataclass(frozen=True)
class Scenario:
    vehicles: tuple[Vehicle, ...]
    servers: tuple[MecServer, ...]
    channel: ChannelParams = field(default_factory=ChannelParams)
    tasks: TaskDistribution = field(default_factory=TaskDistribution)
    weights: PriorityWeights = field(default_factory=PriorityWeights)
    slot_length_s: float = 1.0
    penalty_miss: float | None = None

    def __post_init__(self) -> None:
        if self.channel.subchannels < len(self.vehicles):
            raise ValueError("need at least one subchannel per vehicle")
        if self.slot_length_s <= 0:
            raise ValueError("slot length must be positive")

    @property
    def n_vehicles(self) -> int:
        return len(self.vehicles)

    @property
    def n_servers(self) -> int:
        return len(self.servers)

    @property
    def miss_penalty(self) -> float:
        if self.penalty_miss is not None:
            return self.penalty_miss
        return 2.0 * self.tasks.deadline_s[1]


# -- per-link formulas -----------------------------------------------------


def local_delay(task: Task, v: Vehicle) -> float:
    return task.cycles / v.local_capacity_hz


def channel_gain(d: float, ch: ChannelParams) -> float:
    """Distance path loss ``h0 * (d0 / d)^r``; distances below d0/100 are clamped."""
    d = max(d, ch.min_distance_m)
    return ch.ref_gain * (ch.ref_distance_m / d) ** ch.path_loss_exponent


def transmission_rate(v: Vehicle, s: MecServer | None, d: float, ch: ChannelParams) -> float:
    """Shannon rate on one of ``subchannels`` equal slices of the band (bits/s)."""
    snr = v.tx_power_w * channel_gain(d, ch) / ch.noise_w
    return ch.bandwidth_hz / ch.subchannels * math.log2(1.0 + snr)


def offload_delay(task: Task, rate: float, share: float, s: MecServer) -> float:
    """Upload plus edge compute time; :data:`INFEASIBLE` if rate or share is zero."""
    if rate <= 0 or share <= 0:
        return INFEASIBLE
    return task.data_bits / rate + task.cycles / (share * s.capacity_hz)


def link_range(v: Vehicle, s: MecServer) -> float:
    return min(s.service_range_m, v.comm_range_m)


def filter_servers(position: GeoPoint, v: Vehicle, servers: Sequence[MecServer]) -> list[MecServer]:
    """Servers within both the vehicle's and the server's range (inclusive)."""
    return [s for s in servers if haversine_distance(position, s.position) <= link_range(v, s)]


def distance_matrix(positions: Sequence[GeoPoint], servers: Sequence[MecServer]) -> np.ndarray:
    lat = np.array([p.lat_deg for p in positions])[:, None]
    lon = np.array([p.lon_deg for p in positions])[:, None]
    slat = np.array([s.position.lat_deg for s in servers])[None, :]
    slon = np.array([s.position.lon_deg for s in servers])[None, :]
    return np.asarray(haversine_m(lat, lon, slat, slon), dtype=float).reshape(len(positions), len(servers))


def availability(positions: Sequence[GeoPoint], scenario: Scenario) -> tuple[np.ndarray, np.ndarray]:
    """(N, M) boolean availability and distances for the given positions."""
    d = distance_matrix(positions, scenario.servers)
    limits = np.array([[link_range(v, s) for s in scenario.servers] for v in scenario.vehicles])
    return d <= limits, d


# -- priority and allocation -----------------------------------------------


def priority_score(features: Sequence[float], mins: Sequence[float], maxes: Sequence[float],
                   w: PriorityWeights) -> float:
    """Weighted sum of min-max standardized features (a feature with a
    degenerate range standardizes to 0.5)."""
    std = []
    for z, lo, hi in zip(features, mins, maxes):
        std.append(0.5 if hi <= lo else (z - lo) / (hi - lo))
    return w.alpha * std[0] + w.beta * std[1] + w.lam * std[2]


def allocate(choices: Sequence[int], tasks: Sequence[Task], free_shares: Sequence[float]):
    """Split each server's uncommitted share among its claimants by priority.

    ``choices[i]`` is :data:`LOCAL` or ``k + 1`` for server ``k``. Returns
    ``(shares, executed)``: per-vehicle share (0 for local) and the choice
    actually executed, which is LOCAL for claimants of a fully committed
    server.
    """
    shares = [0.0] * len(choices)
    executed = list(choices)
    claimants: dict[int, list[int]] = {}
    for i, ch in enumerate(choices):
        if ch != LOCAL:
            claimants.setdefault(ch - 1, []).append(i)
    for k, group in claimants.items():
        free = free_shares[k]
        if free <= SHARE_EPS:
            for i in group:
                executed[i] = LOCAL
            continue
        total = sum(tasks[i].priority for i in group)
        for i in group:
            w = tasks[i].priority / total if total > 0 else 1.0 / len(group)
            shares[i] = w * free
    return shares, executed


# -- slot state and transition -----------------------------------------------


@dataclass(frozen=True)
class SlotState:
    """Everything known at the start of ``slot``.

    ``observed_positions`` is what a decider sees (predicted positions when
    pre-deciding, true ones otherwise); outcomes always use
    ``true_positions``. ``commitments[k]`` holds ``(share, release_slot)``
    pairs still held on server k.
    """

    slot: int
    tasks: tuple[Task, ...]
    true_positions: tuple[GeoPoint, ...]
    observed_positions: tuple[GeoPoint, ...]
    commitments: tuple[tuple[tuple[float, int], ...], ...]

    def free_shares(self) -> list[float]:
        return [max(0.0, 1.0 - sum(s for s, _ in c)) for c in self.commitments]

    def as_known(self) -> SlotState:
        """Copy whose true positions are replaced by the observed ones."""
        return SlotState(self.slot, self.tasks, self.observed_positions, self.observed_positions, self.commitments)


@dataclass(frozen=True)
class SlotOutcome:
    choices: tuple[int, ...]
    executed: tuple[int, ...]
    delays: tuple[float, ...]
    deadline_met: tuple[bool, ...]
    shares: tuple[float, ...]
    rates: tuple[float, ...]
    total_delay: float
    fallbacks: int
    commitments_after: tuple[tuple[tuple[float, int], ...], ...]

    @property
    def misses(self) -> int:
        return sum(not m for m in self.deadline_met)


def check_action(choices: Sequence[int], scenario: Scenario) -> tuple[int, ...]:
    if len(choices) != scenario.n_vehicles:
        raise ActionError(f"expected {scenario.n_vehicles} choices, got {len(choices)}")
    out = []
    for c in choices:
        if isinstance(c, (bool, np.bool_)) or int(c) != c or not 0 <= int(c) <= scenario.n_servers:
            raise ActionError(f"choice {c!r} outside 0..{scenario.n_servers}")
        out.append(int(c))
    return tuple(out)


def step(scenario: Scenario, state: SlotState, actions: Sequence[int], links=None) -> SlotOutcome:
    """Execute one joint action against ``state`` (pure; state is not mutated).

    An offload to a server that is out of range at the vehicle's true
    position, or fully committed, falls back to local execution and is
    counted in ``fallbacks``. ``links`` may carry a precomputed
    ``availability(state.true_positions, scenario)`` result.
    """
    choices = check_action(actions, scenario)
    avail, dist = availability(state.true_positions, scenario) if links is None else links
    reachable = list(choices)
    fallbacks = 0
    for i, ch in enumerate(choices):
        if ch != LOCAL and not avail[i, ch - 1]:
            reachable[i] = LOCAL
            fallbacks += 1
    shares, executed = allocate(reachable, state.tasks, state.free_shares())
    fallbacks += sum(1 for a, b in zip(reachable, executed) if a != b)

    ch = scenario.channel
    delays, met, rates = [], [], []
    new_commit = [list(c) for c in state.commitments]
    for i, (task, v) in enumerate(zip(state.tasks, scenario.vehicles)):
        rate, delay = 0.0, INFEASIBLE
        if executed[i] != LOCAL:
            k = executed[i] - 1
            server = scenario.servers[k]
            rate = transmission_rate(v, server, float(dist[i, k]), ch)
            delay = offload_delay(task, rate, shares[i], server)
            if math.isfinite(delay):
                release = state.slot + max(1, math.ceil(delay / scenario.slot_length_s))
                new_commit[k].append((shares[i], release))
            else:
                # zero rate (e.g. silent transmitter): no way to upload
                executed[i], shares[i], rate = LOCAL, 0.0, 0.0
                fallbacks += 1
        if executed[i] == LOCAL:
            delay = local_delay(task, v)
        delays.append(delay)
        rates.append(rate)
        met.append(delay <= task.deadline_s)
    nxt = state.slot + 1
    after = tuple(tuple(e for e in c if e[1] > nxt) for c in new_commit)
    return SlotOutcome(
        choices=choices,
        executed=tuple(executed),
        delays=tuple(delays),
        deadline_met=tuple(met),
        shares=tuple(shares),
        rates=tuple(rates),
        total_delay=float(sum(delays)),
        fallbacks=fallbacks,
        commitments_after=after,
    )


def reward(outcome: SlotOutcome, penalty_miss: float) -> float:
    return -(outcome.total_delay + penalty_miss * outcome.misses)


# -- task generation ---------------------------------------------------------


def spawn_tasks(slot: int, seed: int, scenario: Scenario) -> tuple[Task, ...]:
    """Sample one task per vehicle; a pure function of (seed, slot, vehicle)."""
    dist = scenario.tasks
    mins = [lo for lo, _ in dist.features]
    maxes = [hi for _, hi in dist.features]
    out = []
    for i in range(scenario.n_vehicles):
        rng = np.random.default_rng([seed, slot, i])
        u = rng.random(6)
        l = dist.data_bits[0] + u[0] * (dist.data_bits[1] - dist.data_bits[0])
        c = dist.cycles[0] + u[1] * (dist.cycles[1] - dist.cycles[0])
        nu = dist.deadline_s[0] + u[2] * (dist.deadline_s[1] - dist.deadline_s[0])
        feats = tuple(lo + uu * (hi - lo) for (lo, hi), uu in zip(dist.features, u[3:]))
        z = priority_score(feats, mins, maxes, scenario.weights)
        out.append(Task(l, c, nu, feats, min(1.0, max(0.0, z))))  # type: ignore[arg-type]
    return tuple(out)


# -- trajectory-driven environment --------------------------------------------


class VehicularEnv:
    """Replays vehicle tracks slot by slot, one track row per slot.

    Tracks are indexed cyclically, so episodes of any length can be drawn.
    ``observe="predicted"`` exposes precomputed predicted positions to the
    decider instead of the true ones.
    """

    def __init__(self, scenario: Scenario, tracks: Sequence[np.ndarray],
                 predicted: Sequence[np.ndarray] | None = None, observe: str = "true",
                 task_seed: int = 0):
        if len(tracks) != scenario.n_vehicles:
            raise ValueError(f"{len(tracks)} tracks for {scenario.n_vehicles} vehicles")
        if observe not in ("true", "predicted"):
            raise ValueError(f"unknown observation mode {observe!r}")
        if observe == "predicted" and predicted is None:
            raise ValueError("predicted observation mode needs predicted tracks")
        self.scenario = scenario
        self.tracks = [np.asarray(t, dtype=float) for t in tracks]
        self.predicted = None if predicted is None else [np.asarray(p, dtype=float) for p in predicted]
        self.observe = observe
        self.task_seed = task_seed
        self.offset = 0
        self.state: SlotState | None = None

    def positions(self, slot: int, predicted: bool = False) -> tuple[GeoPoint, ...]:
        src = self.predicted if predicted else self.tracks
        out = []
        for t in src:  # type: ignore[union-attr]
            lat, lon = t[(self.offset + slot) % len(t)]
            out.append(GeoPoint(float(lat), float(lon)))
        return tuple(out)

    def make_state(self, slot: int, commitments) -> SlotState:
        true = self.positions(slot)
        observed = self.positions(slot, predicted=True) if self.observe == "predicted" else true
        return SlotState(slot, spawn_tasks(slot, self.task_seed, self.scenario), true, observed, commitments)

    def reset(self, start_slot: int = 0, offset: int = 0) -> SlotState:
        self.offset = offset
        empty = tuple(() for _ in self.scenario.servers)
        self.state = self.make_state(start_slot, empty)
        return self.state

    def step(self, actions: Sequence[int]) -> tuple[SlotOutcome, SlotState]:
        if self.state is None:
            raise RuntimeError("call reset() first")
        outcome = step(self.scenario, self.state, actions)
        self.state = self.make_state(self.state.slot + 1, outcome.commitments_after)
        return outcome, self.state
