import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import line_scenario, make_task, point_at, straight_track
from preoffload.nn import DenseParams, Mlp
from preoffload.policies import (
    ActionCodec,
    ActionSpaceTooLarge,
    AgentConfig,
    AllLocalPolicy,
    AllOffloadPolicy,
    Batch,
    ExhaustivePolicy,
    QPolicy,
    RandomPolicy,
    ReplayBuffer,
    Transition,
    ddqn_targets,
    dqn_targets,
    encode_state,
    epsilon_at,
    load_agent,
    save_agent,
    select_action,
    state_dim,
    static_policy,
    train_agent,
)
from preoffload.simenv import LOCAL, SlotState, VehicularEnv, availability, step

# -- codec -------------------------------------------------------------------------


def test_codec_round_trip_exhaustive_4x6():
    codec = ActionCodec(4, 6)
    assert codec.size == 2401
    seen = set()
    for idx in range(codec.size):
        choices = codec.decode(idx)
        assert codec.encode(choices) == idx
        seen.add(choices)
    assert len(seen) == 2401
    np.testing.assert_array_equal(codec.digits[1234], codec.decode(1234))


def test_codec_digit_order():
    codec = ActionCodec(3, 2)
    assert codec.encode((1, 0, 0)) == 9  # vehicle 0 is most significant
    assert codec.encode((0, 0, 2)) == 2
    assert codec.decode(26) == (2, 2, 2)
    with pytest.raises(ValueError):
        codec.decode(27)
    with pytest.raises(ValueError):
        codec.encode((3, 0, 0))


def test_mask_products_per_vehicle_availability():
    codec = ActionCodec(2, 2)
    mask = codec.mask(np.array([[True, False], [False, False]]))
    valid = {codec.decode(i) for i in np.flatnonzero(mask)}
    assert valid == {(0, 0), (1, 0)}


@settings(max_examples=100, deadline=None)
@given(st.lists(st.lists(st.booleans(), min_size=3, max_size=3), min_size=1, max_size=3))
def test_mask_matches_definition(avail):
    avail = np.array(avail)
    codec = ActionCodec(len(avail), 3)
    mask = codec.mask(avail)
    for idx in range(codec.size):
        ch = codec.decode(idx)
        assert mask[idx] == all(c == 0 or avail[i, c - 1] for i, c in enumerate(ch))
    assert mask[0]  # all-local is always valid


# -- action selection ---------------------------------------------------------------


def test_greedy_respects_mask_and_ties():
    q = np.array([5.0, 9.0, 9.0, 9.0])
    mask = np.array([True, False, True, True])
    rng = np.random.default_rng(0)
    assert select_action(q, mask, 0.0, rng) == 2


def test_exploration_is_uniform_over_valid():
    rng = np.random.default_rng(1)
    mask = np.array([True, False, True, True, False])
    counts = np.bincount([select_action(np.zeros(5), mask, 1.0, rng) for _ in range(6000)], minlength=5)
    assert counts[1] == counts[4] == 0
    assert all(abs(c - 2000) < 150 for c in counts[[0, 2, 3]])


def test_select_action_without_valid_actions():
    with pytest.raises(ValueError):
        select_action(np.zeros(3), np.zeros(3, dtype=bool), 0.0, np.random.default_rng(0))


def test_epsilon_schedule():
    assert epsilon_at(0, 1.0, 0.1, 100) == 1.0
    assert epsilon_at(50, 1.0, 0.1, 100) == pytest.approx(0.55)
    assert epsilon_at(100, 1.0, 0.1, 100) == 0.1
    assert epsilon_at(10**6, 1.0, 0.1, 100) == 0.1
    assert epsilon_at(5, 1.0, 0.1, 0) == 0.1


# -- replay memory -------------------------------------------------------------------


def _tr(k, n_actions=3):
    return Transition(np.full(2, float(k)), k % n_actions, float(k), np.full(2, k + 0.5), np.ones(n_actions, bool))


def test_replay_fifo_eviction():
    buf = ReplayBuffer(5, 2, 3)
    for k in range(12):
        buf.add(_tr(k))
        assert len(buf) == min(k + 1, 5)
        assert [t.reward for t in buf.transitions()] == [float(j) for j in range(max(0, k - 4), k + 1)]
    assert buf.full


def test_replay_sample_draws_stored_rows():
    buf = ReplayBuffer(4, 2, 3)
    for k in range(9):
        buf.add(_tr(k))
    b = buf.sample(200, np.random.default_rng(0))
    assert set(b.rewards) == {5.0, 6.0, 7.0, 8.0}
    np.testing.assert_array_equal(b.states[:, 0], b.rewards)
    np.testing.assert_array_equal(b.next_states[:, 0], b.rewards + 0.5)
    with pytest.raises(ValueError):
        ReplayBuffer(3, 2, 3).sample(1, np.random.default_rng(0))


# -- Bellman targets ------------------------------------------------------------------


def _linear(weights):
    w = np.asarray(weights, dtype=float)
    return Mlp([DenseParams(w, np.zeros(len(w)))])


def test_ddqn_and_dqn_target_oracle():
    # next-state features are the identity, so Q(s', a) is the weight diagonal
    online = _linear([[1.0, 0.0, 0.0], [0.0, 3.0, 0.0], [0.0, 0.0, 2.0]])
    target = _linear([[10.0, 0.0, 0.0], [0.0, 4.0, 0.0], [0.0, 0.0, 7.0]])
    batch = Batch.of([
        Transition(np.zeros(3), 0, -1.0, np.eye(3)[1], np.array([True, True, True])),
        Transition(np.zeros(3), 0, -2.0, np.eye(3)[2], np.array([True, False, True])),
        Transition(np.zeros(3), 0, -3.0, np.eye(3)[0], np.array([True, True, True]), done=True),
    ])
    # row 1: online picks a=1 (3.0) -> target value 4.0
    # row 2: online picks a=2 (2.0) -> target 7.0
    np.testing.assert_allclose(ddqn_targets(batch, online, target, 0.5), [-1 + 2.0, -2 + 3.5, -3.0])
    # dqn maxes the target net over the valid actions
    np.testing.assert_allclose(dqn_targets(batch, target, 0.5), [-1 + 2.0, -2 + 3.5, -3.0])
    batch.next_states[0] = [1.0, 1.0, 0.0]
    # online argmax is a=1 (3.0 vs 1.0) but target max is a=0 (10.0)
    assert ddqn_targets(batch, online, target, 0.5)[0] == pytest.approx(-1 + 0.5 * 4.0)
    assert dqn_targets(batch, target, 0.5)[0] == pytest.approx(-1 + 0.5 * 10.0)


def test_targets_mask_invalid_actions():
    online = _linear([[0.0, 0.0], [0.0, 100.0]])
    target = _linear([[1.0, 0.0], [0.0, 50.0]])
    batch = Batch.of([Transition(np.zeros(2), 0, 0.0, np.array([1.0, 1.0]), np.array([True, False]))])
    assert ddqn_targets(batch, online, target, 1.0)[0] == 1.0
    assert dqn_targets(batch, target, 1.0)[0] == 1.0


# -- state encoding ---------------------------------------------------------------------


def test_state_vector_layout(scenario):
    s = SlotState(0, (make_task(), make_task()), (point_at(400), point_at(1400)), (point_at(400), point_at(1400)),
                  (((0.25, 3),), ()))
    x = encode_state(s, scenario)
    assert x.shape == (state_dim(scenario),) == (4 * 2 + 2 * 2 * 2 + 2,)
    assert np.all((0 <= x) & (x <= 1))
    link = x[8:16].reshape(2, 2, 2)
    assert link[0, 0, 0] == 1.0 and link[0, 0, 1] == pytest.approx(0.5, rel=1e-6)
    assert link[0, 1].tolist() == [0.0, 1.0]
    np.testing.assert_allclose(x[-2:], [0.75, 1.0])


# -- baselines ----------------------------------------------------------------------------


def _brute_force(scenario, state):
    codec = ActionCodec(scenario.n_vehicles, scenario.n_servers)
    avail, _ = availability(state.observed_positions, scenario)
    best = min(
        (step(scenario, state, codec.decode(i)).total_delay, i)
        for i in np.flatnonzero(codec.mask(avail))
    )
    return codec.decode(best[1])


def test_exhaustive_matches_brute_force():
    sc = line_scenario(n_vehicles=3, server_east=(0.0, 700.0), server_hz=4e9)
    rng = np.random.default_rng(4)
    pol = ExhaustivePolicy(sc)
    for k in range(30):
        east = rng.uniform(-300, 1000, 3)
        pos = tuple(point_at(e) for e in east)
        tasks = tuple(make_task(bits=rng.uniform(2e5, 2e6), cycles=rng.uniform(2e8, 1e9), priority=rng.uniform()) for _ in range(3))
        s = SlotState(k, tasks, pos, pos, (((0.5, k + 2),), ()))
        assert pol(s) == _brute_force(sc, s)


def test_exhaustive_picks_local_when_servers_are_busy():
    # a nearly fully committed server loses to the on-board CPU
    sc = line_scenario(n_vehicles=1, server_east=(0.0,), local_hz=1.5e9, server_hz=5e9)
    pos = (point_at(50),)
    s = SlotState(0, (make_task(cycles=9e8),), pos, pos, (((0.95, 5),),))
    assert ExhaustivePolicy(sc)(s) == (LOCAL,)
    free = SlotState(0, (make_task(cycles=9e8),), pos, pos, ((),))
    assert ExhaustivePolicy(sc)(free) == (1,)


def test_exhaustive_refuses_huge_spaces():
    sc = line_scenario(n_vehicles=8, server_east=tuple(float(k) for k in range(6)))
    with pytest.raises(ActionSpaceTooLarge):
        ExhaustivePolicy(sc)


def test_static_baselines(scenario):
    pos = (point_at(100), point_at(5000))
    s = SlotState(0, (make_task(), make_task()), pos, pos, ((), ()))
    assert AllLocalPolicy(scenario)(s) == (0, 0)
    assert AllOffloadPolicy(scenario)(s) == (1, 0)
    r = RandomPolicy(scenario, seed=3)
    draws = {r(s) for _ in range(50)}
    assert draws == {(0, 0), (1, 0)}
    assert static_policy("random", scenario, 3)(s) == RandomPolicy(scenario, 3)(s)
    with pytest.raises(ValueError):
        static_policy("greedy", scenario)


def test_all_offload_prefers_nearer_server():
    sc = line_scenario(n_vehicles=1, server_east=(0.0, 600.0))
    pos = (point_at(400),)
    s = SlotState(0, (make_task(),), pos, pos, ((), ()))
    assert AllOffloadPolicy(sc)(s) == (2,)


# -- agent training ------------------------------------------------------------------------


@pytest.fixture(scope="module")
def tiny_env():
    sc = line_scenario(n_vehicles=2, server_east=(0.0, 900.0), server_hz=8e9)
    tracks = [straight_track(300, -400, 6), straight_track(300, 1300, -5)]
    return VehicularEnv(sc, tracks, task_seed=5)


TINY = AgentConfig(training_steps=600, buffer_capacity=200, batch_size=16, target_sync=50,
                   eps_decay_steps=300, slots_per_episode=50, hidden=(16,), seed=2)


@pytest.fixture(scope="module")
def tiny_agent(tiny_env):
    return train_agent(tiny_env, TINY, "ddqn")


def test_training_curve_and_determinism(tiny_env, tiny_agent):
    curve = tiny_agent.curve
    assert [p.step for p in curve] == list(range(50, 601, 50))
    assert math.isnan(curve[0].loss)  # still filling the 200-transition buffer
    assert all(math.isfinite(p.loss) for p in curve[4:])
    assert curve[-1].epsilon == TINY.eps_end
    again = train_agent(tiny_env, TINY, "ddqn")
    for name, arr in tiny_agent.policy.net.params().items():
        assert again.policy.net.params()[name].tobytes() == arr.tobytes()


def test_greedy_policy_only_picks_valid_actions(tiny_env, tiny_agent):
    pol = tiny_agent.policy
    state = tiny_env.reset(offset=17)
    for _ in range(100):
        a = pol(state)
        avail, _ = availability(state.observed_positions, tiny_env.scenario)
        assert all(c == 0 or avail[i, c - 1] for i, c in enumerate(a))
        _, state = tiny_env.step(a)


def test_agent_checkpoint_round_trip(tmp_path, tiny_env, tiny_agent):
    path = tmp_path / "agent.ckpt"
    save_agent(path, tiny_agent.policy, TINY)
    back = load_agent(path, tiny_env.scenario)
    s = tiny_env.reset(offset=3)
    np.testing.assert_array_equal(back.q_values(s), tiny_agent.policy.q_values(s))
    assert back.variant == "ddqn"
    wrong = line_scenario(n_vehicles=3)
    with pytest.raises(ValueError, match="does not fit"):
        load_agent(path, wrong)


def test_dqn_variant_and_bad_variant(tiny_env):
    cfg = AgentConfig(**{**TINY.__dict__, "training_steps": 100, "buffer_capacity": 50})
    assert train_agent(tiny_env, cfg, "dqn").policy.variant == "dqn"
    with pytest.raises(ValueError):
        train_agent(tiny_env, cfg, "sarsa")


def test_agent_config_validation():
    with pytest.raises(ValueError):
        AgentConfig(gamma=1.0)
    with pytest.raises(ValueError):
        AgentConfig(eps_end=1.5)
    assert AgentConfig(buffer_capacity=300).warmup == 300
    assert AgentConfig(buffer_capacity=300, learning_starts=10).warmup == 10


def test_qpolicy_shape_check(scenario):
    with pytest.raises(ValueError):
        QPolicy(Mlp.init([3, 4], np.random.default_rng(0)), scenario)
