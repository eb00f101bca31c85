"""Algorithm comparison runs and CSV output."""

from __future__ import annotations

import csv
import hashlib
import logging
import math
import statistics
import struct
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .config import ALGORITHMS, Config, ConfigError
from .policies import (
    AgentConfig,
    CurvePoint,
    ExhaustivePolicy,
    Policy,
    QPolicy,
    load_agent,
    static_policy,
    train_agent,
)
from .seeding import substream, substream_seed
from .simenv import LOCAL, SlotOutcome, SlotState, VehicularEnv
from .world import World, build_world, predicted_track, train_predictors

log = logging.getLogger(__name__)

COMPARISON_HEADER = ["algorithm", "seed", "completion_s", "decision_s", "psi", "penalized_s", "power", "misses"]
SUMMARY_HEADER = [
    "algorithm", "runs",
    "completion_mean", "completion_std",
    "decision_mean", "decision_std",
    "penalized_mean", "penalized_std",
    "power_mean", "power_std",
    "misses_mean", "misses_std",
]
TRACE_HEADER = ["slot", "vehicle", "action", "server", "omega", "rate", "delay", "deadline_met"]
CURVE_HEADER = ["step", "episode_reward", "loss", "epsilon"]

# which trained network and which positions each algorithm decides on
LEARNED = {"tppd": "ddqn", "ddqn_rt": "ddqn", "dqn_rt": "dqn"}


class MissingPolicyError(RuntimeError):
    pass


@dataclass
class RunResult:
    algorithm: str
    seed: int
    completion_s: float
    decision_s: float
    psi: float
    penalized_s: float
    power: float
    misses: int
    fallbacks: int = 0
    stream_digest: str = ""
    action_digest: str = ""

    @classmethod
    def build(cls, algorithm: str, seed: int, completion: float, decision: float, psi: float,
              power_w: float, misses: int, **extra) -> RunResult:
        completion, decision, psi, power_w = float(completion), float(decision), float(psi), float(power_w)
        penalized = completion + decision * psi
        return cls(algorithm, int(seed), completion, decision, psi, penalized, penalized * power_w, int(misses), **extra)

    def row(self) -> list[str]:
        return [self.algorithm, str(self.seed), repr(self.completion_s), repr(self.decision_s),
                repr(self.psi), repr(self.penalized_s), repr(self.power), str(self.misses)]


@dataclass
class SlotRecord:
    state: SlotState
    outcome: SlotOutcome
    decision_s: float


def _stream_hash(h, state: SlotState) -> None:
    for t in state.tasks:
        h.update(struct.pack("<4d", t.data_bits, t.cycles, t.deadline_s, t.priority))
    for p in state.true_positions:
        h.update(struct.pack("<2d", p.lat_deg, p.lon_deg))


def run_policy(world: World, policy: Policy, *, task_seed: int, offsets: Sequence[int], slots_per_episode: int,
               predicted: list[np.ndarray] | None = None, observe: str = "true",
               fixed_decision_s: float | None = None,
               on_slot: Callable[[SlotRecord], None] | None = None) -> dict:
    """Roll ``policy`` over one episode per entry of ``offsets``.

    Returns totals plus digests of the exogenous stream (tasks and true
    positions) and of the chosen actions.
    """
    env = VehicularEnv(world.scenario, world.tracks, predicted, observe, task_seed)
    stream, actions = hashlib.sha256(), hashlib.sha256()
    completion, decision, misses, fallbacks = 0.0, 0.0, 0, 0
    for ep, offset in enumerate(offsets):
        state = env.reset(start_slot=ep * slots_per_episode, offset=int(offset))
        for _ in range(slots_per_episode):
            t0 = time.perf_counter()
            choice = policy(state)
            elapsed = time.perf_counter() - t0
            dt = elapsed if fixed_decision_s is None else fixed_decision_s
            _stream_hash(stream, state)
            actions.update(bytes(choice))
            outcome, nxt = env.step(choice)
            if on_slot is not None:
                on_slot(SlotRecord(state, outcome, dt))
            completion += outcome.total_delay
            decision += dt
            misses += outcome.misses
            fallbacks += outcome.fallbacks
            state = nxt
    return {
        "completion": completion,
        "decision": decision,
        "misses": misses,
        "fallbacks": fallbacks,
        "stream_digest": stream.hexdigest(),
        "action_digest": actions.hexdigest(),
    }


def eval_offsets(world: World, root_seed: int, seed: int, episodes: int) -> list[int]:
    track_len = min(len(t) for t in world.tracks)
    rng = substream(root_seed, "offsets", seed)
    return [int(v) for v in rng.integers(track_len, size=episodes)]


@dataclass
class Prepared:
    """Trained artefacts a comparison needs."""

    world: World
    predicted: list[np.ndarray] | None = None
    agents: dict[str, QPolicy] = field(default_factory=dict)
    curves: dict[str, list[CurvePoint]] = field(default_factory=dict)


def train_variant(world: World, agent_cfg: AgentConfig, root_seed: int, variant: str):
    env = VehicularEnv(world.scenario, world.tracks, task_seed=substream_seed(root_seed, "agent-tasks"))
    cfg = AgentConfig(**{**agent_cfg.__dict__, "seed": substream_seed(root_seed, "agent", variant == "dqn")})
    return train_agent(env, cfg, variant)


def prepare(cfg: Config, root_seed: int, world: World | None = None, train_missing: bool = True,
            agents: dict[str, QPolicy] | None = None) -> Prepared:
    world = world or build_world(cfg, root_seed)
    prep = Prepared(world, agents=dict(agents or {}))
    algos = cfg.experiment.algorithms
    if "tppd" in algos:
        predictors, reports = train_predictors(world, cfg, root_seed)
        for i, r in enumerate(reports):
            log.info("vehicle %d predictor: rmse=%.5f accuracy=%.5f", i, r.rmse, r.accuracy)
        prep.predicted = [predicted_track(p, c) for p, c in zip(predictors, world.tracks)]
    ckpts = {"ddqn": cfg.experiment.ddqn_checkpoint, "dqn": cfg.experiment.dqn_checkpoint}
    for algo in algos:
        variant = LEARNED.get(algo)
        if variant is None or variant in prep.agents:
            continue
        path = cfg.resolve(ckpts[variant])
        if path is not None:
            if not path.exists():
                raise MissingPolicyError(f"{algo}: checkpoint {path} not found")
            prep.agents[variant] = load_agent(path, world.scenario)
        elif train_missing:
            log.info("training %s agent for %s", variant, algo)
            res = train_variant(world, cfg.agent, root_seed, variant)
            prep.agents[variant] = res.policy
            prep.curves[variant] = res.curve
        else:
            raise MissingPolicyError(f"{algo}: no trained {variant} policy available")
    return prep


def make_policy(algo: str, prep: Prepared, root_seed: int, seed: int) -> tuple[Policy, str]:
    """Policy object and observation mode for one algorithm run."""
    scenario = prep.world.scenario
    if algo in LEARNED:
        variant = LEARNED[algo]
        if variant not in prep.agents:
            raise MissingPolicyError(f"{algo}: no trained {variant} policy available")
        return prep.agents[variant], ("predicted" if algo == "tppd" else "true")
    if algo == "exhaustive_rt":
        return ExhaustivePolicy(scenario), "true"
    if algo == "random":
        return static_policy("random", scenario, substream_seed(root_seed, "policy", seed)), "true"
    if algo in ("all_local", "all_offload"):
        return static_policy(algo, scenario), "true"
    raise ConfigError(f"unknown algorithm {algo!r}")


def run_one(algo: str, seed: int, cfg: Config, prep: Prepared, root_seed: int,
            on_slot: Callable[[SlotRecord], None] | None = None) -> RunResult:
    exp = cfg.experiment
    policy, observe = make_policy(algo, prep, root_seed, seed)
    totals = run_policy(
        prep.world,
        policy,
        task_seed=substream_seed(root_seed, "tasks", seed),
        offsets=eval_offsets(prep.world, root_seed, seed, exp.episodes),
        slots_per_episode=exp.slots_per_episode,
        predicted=prep.predicted,
        observe=observe,
        fixed_decision_s=exp.decision_time_s.get(algo),
        on_slot=on_slot,
    )
    return RunResult.build(
        algo, seed, totals["completion"], totals["decision"], exp.psi[algo], exp.station_power_w,
        totals["misses"], fallbacks=totals["fallbacks"], stream_digest=totals["stream_digest"],
        action_digest=totals["action_digest"],
    )


def run_comparison(cfg: Config, root_seed: int, prep: Prepared | None = None,
                   train_missing: bool = True) -> list[RunResult]:
    """Every configured algorithm x evaluation seed on common random numbers."""
    prep = prep or prepare(cfg, root_seed, train_missing=train_missing)
    jobs = [(a, s) for a in cfg.experiment.algorithms for s in cfg.experiment.seeds]
    if cfg.experiment.workers > 1:
        with ThreadPoolExecutor(cfg.experiment.workers) as pool:
            results = list(pool.map(lambda job: run_one(job[0], job[1], cfg, prep, root_seed), jobs))
    else:
        results = [run_one(a, s, cfg, prep, root_seed) for a, s in jobs]
    order = {a: i for i, a in enumerate(ALGORITHMS)}
    return sorted(results, key=lambda r: (order[r.algorithm], r.seed))


# -- CSV output --------------------------------------------------------------------


def _mean_std(values: list[float]) -> tuple[float, float]:
    mean = statistics.fmean(values)
    std = statistics.stdev(values) if len(values) > 1 else 0.0
    return mean, std


def summarize(results: Sequence[RunResult]) -> list[list[str]]:
    rows = []
    for algo in dict.fromkeys(r.algorithm for r in results):
        group = [r for r in results if r.algorithm == algo]
        row = [algo, str(len(group))]
        for attr in ("completion_s", "decision_s", "penalized_s", "power", "misses"):
            m, s = _mean_std([float(getattr(r, attr)) for r in group])
            row += [repr(m), repr(s)]
        rows.append(row)
    return rows


def emit_csv(results: Sequence[RunResult], out_dir) -> tuple[Path, Path]:
    if not results:
        raise ValueError("no results to write")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    comp, summ = out / "comparison.csv", out / "summary.csv"
    with comp.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(COMPARISON_HEADER)
        w.writerows(r.row() for r in results)
    with summ.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SUMMARY_HEADER)
        w.writerows(summarize(results))
    return comp, summ


def read_comparison(path) -> list[RunResult]:
    with Path(path).open() as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != COMPARISON_HEADER:
            raise ValueError(f"unexpected header {reader.fieldnames}")
        return [
            RunResult(r["algorithm"], int(r["seed"]), float(r["completion_s"]), float(r["decision_s"]),
                      float(r["psi"]), float(r["penalized_s"]), float(r["power"]), int(r["misses"]))
            for r in reader
        ]


class TraceWriter:
    """Per-slot, per-vehicle CSV trace."""

    def __init__(self, fh, scenario):
        self.scenario = scenario
        self.writer = csv.writer(fh, lineterminator="\n")
        self.writer.writerow(TRACE_HEADER)

    def __call__(self, rec: SlotRecord) -> None:
        o = rec.outcome
        for i in range(len(o.delays)):
            req = o.choices[i]
            action = "local" if req == LOCAL else f"offload:{self.scenario.servers[req - 1].id}"
            ex = o.executed[i]
            server = "" if ex == LOCAL else self.scenario.servers[ex - 1].id
            self.writer.writerow([rec.state.slot, self.scenario.vehicles[i].id, action, server,
                                  repr(float(o.shares[i])), repr(float(o.rates[i])), repr(float(o.delays[i])),
                                  str(o.deadline_met[i]).lower()])


def write_curve(curve: Sequence[CurvePoint], path) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CURVE_HEADER)
        for p in curve:
            loss = "" if math.isnan(p.loss) else repr(float(p.loss))
            w.writerow([p.step, repr(float(p.episode_reward)), loss, repr(float(p.epsilon))])
