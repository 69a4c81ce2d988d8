import math

import numpy as np
import pytest

from baselines import (
    HeuristicPolicy,
    PolicyKind,
    greedy_association,
    nearest_policy_act,
    no_uav_policy_act,
    policy_config,
    random_displacement,
    random_policy_act,
)
from channel import distance_gu_oru, distance_gu_uav
from conftest import make_gu, make_oru, make_state, make_uav
from energy import GuEnergyLedger
from environment import Environment, run_episode
from objective import Direct, Relay, evaluate_constraints
from scenario import ScenarioConfig, episode_rng, generate_scenario


def _ledgers(state):
    return [GuEnergyLedger.full(gu.battery_remaining) for gu in state.gus]


def test_user_next_to_radio_unit_goes_direct():
    state = make_state(
        [make_gu(0, (10.0, 10.0))],
        [make_oru(0, (10.0, 10.0)), make_oru(1, (90.0, 90.0))],
        [make_uav(0, (50.0, 50.0))],
    )
    decision = nearest_policy_act(state, ScenarioConfig())
    assert decision.association == (Direct(0),)
    assert decision.displacement == ((0.0, 0.0),)


def test_weakest_sufficient_key_is_chosen():
    state = make_state([make_gu(0, (10.0, 10.0))], [make_oru(0, (10.0, 10.0), requirement=6)])
    assert nearest_policy_act(state, ScenarioConfig()).key_length == (64,)
    state = make_state([make_gu(0, (10.0, 10.0))], [make_oru(0, (10.0, 10.0), requirement=9)])
    assert nearest_policy_act(state, ScenarioConfig()).key_length == (1024,)


def test_fourth_user_overflows_to_nearest_radio_unit():
    config = ScenarioConfig(grid_width=1000.0, grid_height=1000.0)
    gus = [make_gu(u, (500.0 + u, 500.0)) for u in range(4)]
    orus = [make_oru(0, (0.0, 0.0)), make_oru(1, (1000.0, 1000.0))]
    state = make_state(gus, orus, [make_uav(0, (500.0, 500.0))])
    decision = nearest_policy_act(state, config)
    assert decision.association[:3] == (Relay(0, 0),) * 3
    assert decision.association[3] == Direct(1)
    report = evaluate_constraints(decision, state, _ledgers(state), config)
    assert report.uav_overflow == (0,)


def test_saturated_targets_still_get_an_association():
    gus = [make_gu(0, (10.0, 10.0)), make_gu(1, (12.0, 10.0))]
    state = make_state(gus, [make_oru(0, (10.0, 10.0), resource_blocks=1)])
    decision = no_uav_policy_act(state, ScenarioConfig())
    assert decision.association == (Direct(0), Direct(0))
    report = evaluate_constraints(decision, state, _ledgers(state), ScenarioConfig())
    assert report.oru_overflow == (1,)


def test_shuffled_order_is_seeded():
    config = ScenarioConfig(num_gus=12, oru_resource_blocks=1, uav_resource_blocks=1)
    state = generate_scenario(config)
    first = nearest_policy_act(state, config, np.random.default_rng(4), shuffle=True)
    second = nearest_policy_act(state, config, np.random.default_rng(4), shuffle=True)
    assert first == second
    with pytest.raises(ValueError):
        nearest_policy_act(state, config, None, shuffle=True)


def test_relay_only_when_no_closer_radio_unit():
    config = ScenarioConfig(num_gus=20, oru_resource_blocks=100, uav_resource_blocks=100)
    for episode in range(5):
        state = generate_scenario(config, episode_rng(1, 0, episode))
        positions = [uav.position for uav in state.uavs]
        routes = greedy_association(state, positions, True, list(range(len(state.gus))))
        for gu, route in zip(state.gus, routes):
            if isinstance(route, Relay):
                uav = state.uavs[route.uav]
                relay_distance = distance_gu_uav(gu.position, uav.position, uav.altitude)
                for oru in state.orus:
                    assert distance_gu_oru(gu.position, oru.position, oru.height) >= relay_distance


def test_heuristic_keys_always_meet_security():
    config = ScenarioConfig()
    for kind in PolicyKind:
        policy = HeuristicPolicy.create(kind.value, seed=0)
        state = generate_scenario(policy_config(kind, config))
        decision = policy.act(state, policy_config(kind, config))
        if kind is PolicyKind.RANDOM:
            continue
        report = evaluate_constraints(decision, state, _ledgers(state), config)
        assert not any(report.security)


def test_no_uav_policy_runs_without_uavs():
    config = policy_config(PolicyKind.NO_UAV, ScenarioConfig())
    assert config.num_uavs == 0
    env = Environment(config)
    policy = HeuristicPolicy.create("no_uav", seed=0)
    transitions, summary = run_episode(env, policy.chooser(), "no_uav", seed=0)
    assert summary.steps == 10
    for transition in transitions:
        assert all(isinstance(route, Direct) for route in transition.action.association)
        assert transition.outcome.uav_energy == ()


def test_nearest_policy_moves_uavs_within_d_max():
    config = ScenarioConfig()
    env = Environment(config)
    policy = HeuristicPolicy.create("nearest", seed=3)
    transitions, _ = run_episode(env, policy.chooser(), "nearest", seed=0)
    for transition in transitions:
        for dx, dy in transition.action.displacement:
            assert math.hypot(dx, dy) <= config.d_max + 1e-9
        assert not any(transition.outcome.constraints.displacement)


def test_random_displacement_stays_in_disc():
    rng = np.random.default_rng(0)
    for _ in range(200):
        dx, dy = random_displacement(rng, 30.0)
        assert math.hypot(dx, dy) <= 30.0 + 1e-9


def test_random_policy_covers_the_action_space():
    config = ScenarioConfig()
    state = generate_scenario(config)
    rng = np.random.default_rng(0)
    seen_relay = seen_direct = False
    for _ in range(20):
        decision = random_policy_act(state, config, rng)
        seen_relay |= any(isinstance(r, Relay) for r in decision.association)
        seen_direct |= any(isinstance(r, Direct) for r in decision.association)
    assert seen_relay and seen_direct


def test_without_uavs_wide_areas_disconnect_users():
    base = ScenarioConfig(num_gus=100)
    orus = generate_scenario(base).orus
    small = base
    wide = base.replace(grid_width=400.0, grid_height=400.0)
    disconnected = {}
    for name, config in (("small", small), ("wide", wide)):
        state = generate_scenario(policy_config(PolicyKind.NO_UAV, config), orus=orus)
        decision = no_uav_policy_act(state, config)
        report = evaluate_constraints(decision, state, _ledgers(state), config)
        disconnected[name] = report.disconnected
    assert disconnected["small"] == 0
    assert disconnected["wide"] > 0
