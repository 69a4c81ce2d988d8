import math

import numpy as np
import pytest

from environment import (
    Action,
    ActionSpec,
    Environment,
    EpisodeFinishedError,
    decode_action,
    decode_association,
    encode_association,
    run_episode,
)
from objective import DecisionVector, Direct, Relay
from scenario import ScenarioConfig


def _zero_action(spec: ActionSpec) -> Action:
    return Action(categorical=(0,) * (2 * spec.num_gus), continuous=(0.0,) * spec.continuous_dims)


def test_default_shapes():
    spec = ActionSpec.from_config(ScenarioConfig())
    assert spec.observation_size == 46
    assert spec.association_size == 8
    assert spec.key_size == 8
    assert spec.continuous_dims == 6
    assert spec.categorical_sizes == (8,) * 10 + (8,) * 10
    assert spec.head_sizes() == {
        "association": 8,
        "key_length": 8,
        "categorical_heads": 20,
        "continuous": 6,
        "observation": 46,
    }


def test_rich_observation_appends_radio_units():
    config = ScenarioConfig(rich_observation=True)
    env = Environment(config)
    obs = env.reset(seed=1)
    assert env.spec.observation_size == 52
    assert obs.shape == (52,)


def test_box_mode_has_only_continuous_heads():
    spec = ActionSpec.from_config(ScenarioConfig(action_mode="box"))
    assert spec.categorical_sizes == ()
    assert spec.continuous_dims == 2 * 10 + 2 * 3
    assert spec.displacement_scale == 30.0


def test_reset_observation_is_normalised():
    env = Environment(ScenarioConfig())
    obs = env.reset(seed=4)
    assert obs.shape == (46,)
    assert np.all(obs >= 0.0) and np.all(obs <= 1.0)
    # battery fraction of every GU starts full
    assert np.all(obs[2:40:4] == 1.0)


def test_same_seed_same_trajectory():
    config = ScenarioConfig()
    rng = np.random.default_rng(9)
    actions = [
        Action(
            categorical=tuple(rng.integers(0, 8, size=20)),
            continuous=tuple(rng.uniform(-1.0, 1.0, size=6)),
        )
        for _ in range(config.horizon)
    ]
    runs = []
    for _ in range(2):
        env = Environment(config)
        env.reset(seed=5, episode=2)
        runs.append([env.step(action) for action in actions])
    for first, second in zip(*runs):
        assert first.reward == second.reward
        np.testing.assert_array_equal(first.next_observation, second.next_observation)


def test_instances_do_not_share_streams():
    config = ScenarioConfig()
    first = Environment(config, instance_index=0).reset(seed=5, episode=0)
    second = Environment(config, instance_index=1).reset(seed=5, episode=0)
    assert not np.array_equal(first, second)


def test_episode_ends_at_horizon():
    config = ScenarioConfig(horizon=4)
    env = Environment(config)
    env.reset(seed=0)
    for t in range(4):
        assert not env.done
        transition = env.step(_zero_action(env.spec))
        assert transition.done == (t == 3)
    with pytest.raises(EpisodeFinishedError):
        env.step(_zero_action(env.spec))


def test_stepping_before_reset_is_an_error():
    env = Environment(ScenarioConfig())
    with pytest.raises(EpisodeFinishedError):
        env.step(_zero_action(env.spec))


def test_zero_displacement_hovers():
    env = Environment(ScenarioConfig())
    env.reset(seed=3)
    transition = env.step(_zero_action(env.spec))
    assert all(energy == pytest.approx(157.5) for energy in transition.outcome.uav_energy)


def test_all_direct_never_overflows_uav_blocks():
    env = Environment(ScenarioConfig())
    env.reset(seed=3)
    transition = env.step(_zero_action(env.spec))
    assert transition.outcome.constraints.uav_overflow == (0, 0, 0)


def test_time_advances_and_users_move():
    env = Environment(ScenarioConfig())
    env.reset(seed=3)
    before = [gu.position for gu in env.state.gus]
    env.step(_zero_action(env.spec))
    assert env.state.t == 1
    assert [gu.position for gu in env.state.gus] != before


def test_topology_fixed_unless_resampled():
    config = ScenarioConfig()
    env = Environment(config)
    env.reset(seed=2, episode=0)
    first = list(env.state.orus)
    env.reset(seed=2, episode=1)
    assert env.state.orus == first
    resampling = Environment(config.replace(resample_topology=True))
    resampling.reset(seed=2, episode=0)
    other = list(resampling.state.orus)
    resampling.reset(seed=2, episode=1)
    assert resampling.state.orus != other


def test_association_codes():
    assert decode_association(0, 2) == Direct(0)
    assert decode_association(1, 2) == Direct(1)
    assert decode_association(2, 2) == Relay(0, 0)
    assert decode_association(3, 2) == Relay(0, 1)
    assert decode_association(7, 2) == Relay(2, 1)
    for index in range(8):
        assert encode_association(decode_association(index, 2), 2) == index


def test_factored_displacement_never_exceeds_d_max():
    spec = ActionSpec.from_config(ScenarioConfig())
    action = Action(categorical=(0,) * 20, continuous=(1.0, 1.0, -1.0, 1.0, 5.0, -5.0))
    decision = decode_action(action, spec)
    for dx, dy in decision.displacement:
        assert math.hypot(dx, dy) == pytest.approx(30.0)


def test_box_diagonal_move_is_penalised():
    config = ScenarioConfig(action_mode="box", num_gus=2, num_uavs=1, uav_init="center")
    env = Environment(config)
    env.reset(seed=0)
    action = Action(continuous=(-1.0, -1.0, -1.0, -1.0, 1.0, 1.0))
    decision = decode_action(action, env.spec)
    assert decision.association == (Direct(0), Direct(0))
    assert decision.key_length == (64, 64)
    assert decision.displacement == ((30.0, 30.0),)
    transition = env.step(action)
    assert transition.outcome.constraints.displacement == (True,)


def test_box_bins_cover_the_whole_range():
    config = ScenarioConfig(action_mode="box", num_gus=1, num_uavs=1)
    spec = ActionSpec.from_config(config)
    top = decode_action(Action(continuous=(1.0, 1.0, 0.0, 0.0)), spec)
    assert top.association == (Relay(0, 1),)
    assert top.key_length == (4096,)


def test_malformed_actions_are_rejected():
    spec = ActionSpec.from_config(ScenarioConfig())
    with pytest.raises(ValueError):
        decode_action(Action(categorical=(0,) * 19, continuous=(0.0,) * 6), spec)
    with pytest.raises(ValueError):
        decode_action(Action(categorical=(8,) + (0,) * 19, continuous=(0.0,) * 6), spec)
    with pytest.raises(ValueError):
        decode_action(Action(categorical=(0,) * 20, continuous=(0.0,) * 5), spec)


def test_run_episode_sums_rewards():
    env = Environment(ScenarioConfig())
    transitions, summary = run_episode(env, lambda e: _zero_action(e.spec), "zero", seed=1, episode=0)
    assert len(transitions) == 10
    assert summary.steps == 10
    assert summary.episode_return == pytest.approx(sum(t.reward for t in transitions))
    assert summary.cumulative_penalty == pytest.approx(sum(t.outcome.penalty for t in transitions))
    satisfaction = summary.satisfaction()
    assert set(satisfaction) == {
        "security", "resource_blocks", "compute", "battery", "ber", "collision", "displacement",
    }
    assert all(0.0 <= value <= 1.0 for value in satisfaction.values())


def test_run_episode_accepts_decisions():
    config = ScenarioConfig(num_gus=2, num_uavs=1)
    decision = DecisionVector((Direct(0), Direct(1)), (4096, 4096), ((0.0, 0.0),))
    _, summary = run_episode(Environment(config), lambda e: decision, "fixed", seed=1)
    assert summary.violations["security"] == 0
    assert summary.mean_security_norm == pytest.approx(1.0)
