"""Offloading deciders: DDQN/DQN agents and reference baselines."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Callable, Sequence

import numpy as np

from .nn import AdamState, Mlp, adam_step, clip_by_global_norm, load_checkpoint, save_checkpoint
from .nn.loss import mse_loss
from .simenv import LOCAL, Scenario, SlotState, VehicularEnv, availability, link_range, reward, step, transmission_rate

# exhaustive search refuses joint spaces above 2**20 actions
MAX_EXHAUSTIVE_BITS = 20

Policy = Callable[[SlotState], tuple[int, ...]]


class TrainingError(RuntimeError):
    pass


class ActionSpaceTooLarge(ValueError):
    pass


# -- joint action codec --------------------------------------------------------


class ActionCodec:
    """Bijection between per-vehicle choices and a flat joint index.

    Vehicle 0 is the most significant base-(K+1) digit; digit 0 is local
    execution, digit k is server k-1.
    """

    def __init__(self, n_vehicles: int, n_servers: int):
        self.n_vehicles = n_vehicles
        self.arity = n_servers + 1
        self.size = self.arity**n_vehicles
        self._digits: np.ndarray | None = None

    @property
    def digits(self) -> np.ndarray:
        """(size, N) table of per-vehicle choices for every joint index."""
        if self._digits is None:
            idx = np.arange(self.size)
            powers = self.arity ** np.arange(self.n_vehicles - 1, -1, -1)
            self._digits = (idx[:, None] // powers[None, :]) % self.arity
        return self._digits

    def encode(self, choices: Sequence[int]) -> int:
        if len(choices) != self.n_vehicles:
            raise ValueError(f"expected {self.n_vehicles} choices")
        index = 0
        for c in choices:
            if not 0 <= c < self.arity:
                raise ValueError(f"choice {c} outside 0..{self.arity - 1}")
            index = index * self.arity + int(c)
        return index

    def decode(self, index: int) -> tuple[int, ...]:
        if not 0 <= index < self.size:
            raise ValueError(f"joint index {index} outside 0..{self.size - 1}")
        out = []
        for _ in range(self.n_vehicles):
            index, r = divmod(index, self.arity)
            out.append(r)
        return tuple(reversed(out))

    def mask(self, avail: np.ndarray) -> np.ndarray:
        """Joint actions whose every offload target is available."""
        ext = np.column_stack([np.ones(len(avail), dtype=bool), np.asarray(avail, dtype=bool)])
        ok = np.ones(self.size, dtype=bool)
        for i in range(self.n_vehicles):
            ok &= ext[i, self.digits[:, i]]
        return ok


# -- state encoding --------------------------------------------------------------


def state_dim(scenario: Scenario) -> int:
    n, m = scenario.n_vehicles, scenario.n_servers
    return 4 * n + 2 * n * m + m


def encode_state(state: SlotState, scenario: Scenario) -> np.ndarray:
    """Fixed-length feature vector in [0, 1].

    Layout: per vehicle (data size, cycles, deadline, priority) scaled by
    the distribution maxima; then per vehicle x server an availability bit
    and distance / link range (1.0 when unavailable); then each server's
    uncommitted share. Uses the *observed* positions.
    """
    dist = scenario.tasks
    task_part = np.array(
        [
            [t.data_bits / dist.data_bits[1] if dist.data_bits[1] > 0 else 0.0,
             t.cycles / dist.cycles[1],
             t.deadline_s / dist.deadline_s[1],
             t.priority]
            for t in state.tasks
        ]
    )
    avail, d = availability(state.observed_positions, scenario)
    limits = np.array([[link_range(v, s) for s in scenario.servers] for v in scenario.vehicles])
    dnorm = np.where(avail, np.clip(d / limits, 0.0, 1.0), 1.0)
    link_part = np.stack([avail.astype(float), dnorm], axis=-1)
    free = np.asarray(state.free_shares())
    return np.concatenate([task_part.ravel(), link_part.ravel(), free])


def observed_mask(state: SlotState, scenario: Scenario, codec: ActionCodec) -> np.ndarray:
    avail, _ = availability(state.observed_positions, scenario)
    return codec.mask(avail)


# -- epsilon-greedy ------------------------------------------------------------


def select_action(q_values: np.ndarray, mask: np.ndarray, epsilon: float, rng: np.random.Generator) -> int:
    """Epsilon-greedy over valid actions; greedy ties go to the lowest index."""
    valid = np.flatnonzero(mask)
    if valid.size == 0:
        raise ValueError("no valid action (the all-local action must always be valid)")
    if rng.random() < epsilon:
        return int(valid[rng.integers(valid.size)])
    return int(np.argmax(np.where(mask, q_values, -np.inf)))


def epsilon_at(step_idx: int, start: float, end: float, decay_steps: int) -> float:
    if step_idx >= decay_steps:
        return end
    return start + (step_idx / decay_steps) * (end - start)


# -- replay memory ---------------------------------------------------------------


@dataclass
class Transition:
    state: np.ndarray
    action: int
    reward: float
    next_state: np.ndarray
    next_mask: np.ndarray
    done: bool = False


@dataclass
class Batch:
    states: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    next_states: np.ndarray
    next_masks: np.ndarray
    dones: np.ndarray

    @classmethod
    def of(cls, transitions: Sequence[Transition]) -> Batch:
        return cls(
            np.stack([t.state for t in transitions]),
            np.array([t.action for t in transitions]),
            np.array([t.reward for t in transitions], dtype=float),
            np.stack([t.next_state for t in transitions]),
            np.stack([t.next_mask for t in transitions]),
            np.array([t.done for t in transitions], dtype=bool),
        )

    def __len__(self) -> int:
        return len(self.actions)


class ReplayBuffer:
    """Fixed-capacity FIFO ring of transitions."""

    def __init__(self, capacity: int, state_size: int, n_actions: int):
        if capacity < 1:
            raise ValueError("capacity must be >= 1")
        self.capacity = capacity
        self._s = np.zeros((capacity, state_size))
        self._a = np.zeros(capacity, dtype=np.int64)
        self._r = np.zeros(capacity)
        self._s2 = np.zeros((capacity, state_size))
        self._m2 = np.zeros((capacity, n_actions), dtype=bool)
        self._d = np.zeros(capacity, dtype=bool)
        self._next = 0
        self._size = 0

    def __len__(self) -> int:
        return self._size

    @property
    def full(self) -> bool:
        return self._size == self.capacity

    def add(self, t: Transition) -> None:
        i = self._next
        self._s[i], self._a[i], self._r[i] = t.state, t.action, t.reward
        self._s2[i], self._m2[i], self._d[i] = t.next_state, t.next_mask, t.done
        self._next = (i + 1) % self.capacity
        self._size = min(self._size + 1, self.capacity)

    def _order(self) -> np.ndarray:
        start = self._next if self.full else 0
        return (start + np.arange(self._size)) % self.capacity

    def transitions(self) -> list[Transition]:
        """Stored transitions, oldest first."""
        return [
            Transition(self._s[i].copy(), int(self._a[i]), float(self._r[i]), self._s2[i].copy(),
                       self._m2[i].copy(), bool(self._d[i]))
            for i in self._order()
        ]

    def sample(self, batch_size: int, rng: np.random.Generator) -> Batch:
        if self._size == 0:
            raise ValueError("cannot sample from an empty buffer")
        idx = rng.integers(self._size, size=batch_size)
        idx = self._order()[idx]
        return Batch(self._s[idx], self._a[idx], self._r[idx], self._s2[idx], self._m2[idx], self._d[idx])


# -- Bellman targets -------------------------------------------------------------


def ddqn_targets(batch: Batch, online: Mlp, target: Mlp, gamma: float) -> np.ndarray:
    """Double estimator: the online net picks the next action, the target net values it."""
    if len(batch) == 0:
        raise ValueError("empty batch")
    q_online = online.predict(batch.next_states)
    q_target = target.predict(batch.next_states)
    if q_online.shape != batch.next_masks.shape or q_target.shape != q_online.shape:
        raise ValueError("Q-value and mask shapes differ")
    best = np.argmax(np.where(batch.next_masks, q_online, -np.inf), axis=1)
    boot = q_target[np.arange(len(batch)), best]
    return batch.rewards + gamma * np.where(batch.dones, 0.0, boot)


def dqn_targets(batch: Batch, target: Mlp, gamma: float) -> np.ndarray:
    """Vanilla target: max over valid actions of the target net."""
    if len(batch) == 0:
        raise ValueError("empty batch")
    q_target = target.predict(batch.next_states)
    if q_target.shape != batch.next_masks.shape:
        raise ValueError("Q-value and mask shapes differ")
    boot = np.max(np.where(batch.next_masks, q_target, -np.inf), axis=1)
    return batch.rewards + gamma * np.where(batch.dones, 0.0, boot)


# -- agent ---------------------------------------------------------------------


@dataclass(frozen=True)
class AgentConfig:
    gamma: float = 0.95
    eps_start: float = 1.0
    eps_end: float = 0.05
    eps_decay_steps: int = 5000
    batch_size: int = 64
    target_sync: int = 200
    learning_rate: float = 1e-3
    buffer_capacity: int = 10_000
    learning_starts: int | None = None  # None: wait until the buffer is full
    training_steps: int = 20_000
    slots_per_episode: int = 100
    hidden: tuple[int, ...] = (128, 128)
    clip_norm: float | None = 5.0
    seed: int = 0

    def __post_init__(self) -> None:
        if not 0.0 <= self.gamma < 1.0:
            raise ValueError("gamma must lie in [0, 1)")
        for e in (self.eps_start, self.eps_end):
            if not 0.0 <= e <= 1.0:
                raise ValueError("epsilon must lie in [0, 1]")
        if min(self.batch_size, self.target_sync, self.buffer_capacity, self.slots_per_episode) < 1:
            raise ValueError("batch size, sync period, buffer capacity and episode length must be >= 1")
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))

    @property
    def warmup(self) -> int:
        return self.buffer_capacity if self.learning_starts is None else self.learning_starts


class QPolicy:
    """Greedy decider over a Q-network."""

    def __init__(self, net: Mlp, scenario: Scenario, variant: str = "ddqn"):
        self.net = net
        self.scenario = scenario
        self.variant = variant
        self.codec = ActionCodec(scenario.n_vehicles, scenario.n_servers)
        if net.sizes[0] != state_dim(scenario) or net.sizes[-1] != self.codec.size:
            raise ValueError(
                f"network {net.sizes[0]}->{net.sizes[-1]} does not fit scenario "
                f"({state_dim(scenario)} features, {self.codec.size} actions)"
            )

    def q_values(self, state: SlotState) -> np.ndarray:
        return self.net.predict(encode_state(state, self.scenario)[None])[0]

    def __call__(self, state: SlotState) -> tuple[int, ...]:
        mask = observed_mask(state, self.scenario, self.codec)
        q = self.q_values(state)
        return self.codec.decode(int(np.argmax(np.where(mask, q, -np.inf))))


@dataclass
class CurvePoint:
    step: int
    episode_reward: float
    loss: float
    epsilon: float


@dataclass
class TrainResult:
    policy: QPolicy
    curve: list[CurvePoint] = field(default_factory=list)
    target: Mlp | None = None


def sync_target(online: Mlp, target: Mlp) -> None:
    for name, arr in target.params().items():
        arr[...] = online.params()[name]


def train_agent(env: VehicularEnv, cfg: AgentConfig, variant: str = "ddqn") -> TrainResult:
    """Fill the replay memory, then interleave acting and learning.

    Episodes are ``cfg.slots_per_episode`` slots long and start at a random
    track offset; each slot index is used once so task streams never repeat.
    Episode ends are time limits, so bootstrapping continues across them.
    """
    if variant not in ("ddqn", "dqn"):
        raise ValueError(f"unknown variant {variant!r}")
    scenario = env.scenario
    codec = ActionCodec(scenario.n_vehicles, scenario.n_servers)
    rng = np.random.default_rng(cfg.seed)
    sizes = [state_dim(scenario), *cfg.hidden, codec.size]
    online = Mlp.init(sizes, rng)
    target = online.clone()
    adam = AdamState(lr=cfg.learning_rate)
    params = online.params()
    buffer = ReplayBuffer(cfg.buffer_capacity, sizes[0], codec.size)
    track_len = min(len(t) for t in env.tracks)
    penalty = scenario.miss_penalty

    curve: list[CurvePoint] = []
    learn_steps = 0
    slot = 0
    total = 0
    while total < cfg.training_steps:
        state = env.reset(start_slot=slot, offset=int(rng.integers(track_len)))
        s_vec = encode_state(state, scenario)
        mask = observed_mask(state, scenario, codec)
        ep_reward, losses = 0.0, []
        for _ in range(cfg.slots_per_episode):
            if total >= cfg.training_steps:
                break
            eps = epsilon_at(total, cfg.eps_start, cfg.eps_end, cfg.eps_decay_steps)
            q = online.predict(s_vec[None])[0]
            a = select_action(q, mask, eps, rng)
            outcome, nxt = env.step(codec.decode(a))
            r = reward(outcome, penalty)
            s2 = encode_state(nxt, scenario)
            m2 = observed_mask(nxt, scenario, codec)
            buffer.add(Transition(s_vec, a, r, s2, m2, False))
            ep_reward += r
            total += 1
            slot += 1
            s_vec, mask = s2, m2

            if len(buffer) >= max(cfg.warmup, 1) and len(buffer) >= min(cfg.batch_size, buffer.capacity):
                batch = buffer.sample(cfg.batch_size, rng)
                if variant == "ddqn":
                    y = ddqn_targets(batch, online, target, cfg.gamma)
                else:
                    y = dqn_targets(batch, target, cfg.gamma)
                out, cache = online.forward(batch.states)
                rows = np.arange(len(batch))
                loss, dq = mse_loss(out[rows, batch.actions], y)
                if not math.isfinite(loss):
                    raise TrainingError(f"non-finite loss at step {total}")
                dout = np.zeros_like(out)
                dout[rows, batch.actions] = dq
                grads = online.backward(dout, cache)
                clip_by_global_norm(grads, cfg.clip_norm)
                adam_step(params, grads, adam)
                losses.append(loss)
                learn_steps += 1
                if learn_steps % cfg.target_sync == 0:
                    sync_target(online, target)
        curve.append(CurvePoint(total, ep_reward, float(np.mean(losses)) if losses else math.nan,
                                epsilon_at(total, cfg.eps_start, cfg.eps_end, cfg.eps_decay_steps)))
    return TrainResult(QPolicy(online, scenario, variant), curve, target)


def save_agent(path, policy: QPolicy, cfg: AgentConfig | None = None) -> None:
    meta = {
        "variant": policy.variant,
        "sizes": policy.net.sizes,
        "n_vehicles": policy.scenario.n_vehicles,
        "n_servers": policy.scenario.n_servers,
        "agent_config": asdict(cfg) if cfg is not None else None,
    }
    save_checkpoint(path, policy.net.params(), "q-network", meta)


def load_agent(path, scenario: Scenario) -> QPolicy:
    kind, meta, arrays = load_checkpoint(path)
    if kind != "q-network":
        raise ValueError(f"{path} holds a {kind!r} checkpoint, not a Q-network")
    net = Mlp.init(meta["sizes"], np.random.default_rng(0))
    net.load_params(arrays)
    return QPolicy(net, scenario, meta["variant"])


# -- baselines -------------------------------------------------------------------


class ExhaustivePolicy:
    """Evaluates every valid joint action on the decider's view of the slot
    and keeps the one with the smallest total delay (lowest index on ties)."""

    def __init__(self, scenario: Scenario):
        bits = scenario.n_vehicles * math.log2(scenario.n_servers + 1)
        if bits > MAX_EXHAUSTIVE_BITS:
            raise ActionSpaceTooLarge(
                f"{(scenario.n_servers + 1)}^{scenario.n_vehicles} joint actions is too many to enumerate; "
                "reduce vehicles or servers"
            )
        self.scenario = scenario
        self.codec = ActionCodec(scenario.n_vehicles, scenario.n_servers)

    def __call__(self, state: SlotState) -> tuple[int, ...]:
        known = state.as_known()
        links = availability(known.true_positions, self.scenario)
        mask = self.codec.mask(links[0])
        best, best_delay = 0, math.inf
        for idx in np.flatnonzero(mask):
            delay = step(self.scenario, known, self.codec.decode(int(idx)), links).total_delay
            if delay < best_delay:
                best, best_delay = int(idx), delay
        return self.codec.decode(best)


class AllLocalPolicy:
    def __init__(self, scenario: Scenario):
        self.scenario = scenario

    def __call__(self, state: SlotState) -> tuple[int, ...]:
        return (LOCAL,) * self.scenario.n_vehicles


class AllOffloadPolicy:
    """Each vehicle picks its available server with the best link rate."""

    def __init__(self, scenario: Scenario):
        self.scenario = scenario

    def __call__(self, state: SlotState) -> tuple[int, ...]:
        avail, d = availability(state.observed_positions, self.scenario)
        out = []
        for i, v in enumerate(self.scenario.vehicles):
            best, best_rate = LOCAL, -1.0
            for k, s in enumerate(self.scenario.servers):
                if avail[i, k]:
                    rate = transmission_rate(v, s, float(d[i, k]), self.scenario.channel)
                    if rate > best_rate:
                        best, best_rate = k + 1, rate
            out.append(best)
        return tuple(out)


class RandomPolicy:
    """Uniform over valid joint actions.

    The valid set is a product of per-vehicle sets, so sampling each
    vehicle independently is uniform over the joint set.
    """

    def __init__(self, scenario: Scenario, seed: int = 0):
        self.scenario = scenario
        self.rng = np.random.default_rng(seed)

    def __call__(self, state: SlotState) -> tuple[int, ...]:
        avail, _ = availability(state.observed_positions, self.scenario)
        out = []
        for row in avail:
            options = [LOCAL] + [k + 1 for k in np.flatnonzero(row)]
            out.append(options[int(self.rng.integers(len(options)))])
        return tuple(out)


def static_policy(kind: str, scenario: Scenario, seed: int = 0) -> Policy:
    if kind == "all_local":
        return AllLocalPolicy(scenario)
    if kind == "all_offload":
        return AllOffloadPolicy(scenario)
    if kind == "random":
        return RandomPolicy(scenario, seed)
    raise ValueError(f"unknown static policy {kind!r}")
