"""
Comparison policies that do not learn.

nearest   Every GU, in ascending id order (or a seeded shuffle), takes the
          nearest target with a free resource block, measured by 3-D link
          distance: an O-RU directly, or a UAV that relays to the O-RU nearest
          to it (preferring O-RUs with free direct capacity). UAVs first move a
          random distance of at most d_max in a random direction, and nearness
          is judged from where they end up. When every target is saturated the
          GU goes to its nearest O-RU anyway and the overflow is penalised.
no_uav    The same greedy rule with direct links only. UAVs stay where they are.
random    Uniform association, key length and displacement.

The key length is always the weakest one whose security level meets the chosen
O-RU's requirement.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from enum import Enum
from typing import Callable, List, Optional, Tuple

import numpy as np

from channel import distance_gu_oru, distance_gu_uav, distance_uav_oru
from crypto_latency import KEY_LENGTHS, weakest_sufficient_key
from environment import Environment
from objective import Association, DecisionVector, Direct, Relay
from scenario import Point, ScenarioConfig, WorldState, clamp_point

logger = logging.getLogger("uav_relay_sim.baselines")

HEURISTIC_STREAM = 5


class PolicyKind(str, Enum):
    NEAREST = "nearest"
    NO_UAV = "no_uav"
    RANDOM = "random"


def random_displacement(rng: np.random.Generator, d_max: float) -> Point:
    """Uniform point in the disc of radius d_max."""
    angle = float(rng.uniform(0.0, 2.0 * math.pi))
    radius = d_max * math.sqrt(float(rng.uniform(0.0, 1.0)))
    return (radius * math.cos(angle), radius * math.sin(angle))


def _gu_order(state: WorldState, rng: Optional[np.random.Generator], shuffle: bool) -> List[int]:
    order = list(range(len(state.gus)))
    if shuffle:
        if rng is None:
            raise ValueError("Shuffled contention order needs an rng")
        order = [int(i) for i in rng.permutation(len(order))]
    return order


def _relay_oru(uav_position: Point, altitude: float, state: WorldState, oru_free: List[int]) -> int:
    def distance(g: int) -> float:
        oru = state.orus[g]
        return distance_uav_oru(uav_position, oru.position, altitude, oru.height)

    ranked = sorted(range(len(state.orus)), key=lambda g: (distance(g), g))
    for g in ranked:
        if oru_free[g] > 0:
            return g
    return ranked[0]


def greedy_association(
    state: WorldState,
    uav_positions: List[Point],
    allow_relay: bool,
    order: List[int],
) -> List[Association]:
    oru_free = [oru.resource_blocks for oru in state.orus]
    uav_free = [uav.resource_blocks for uav in state.uavs]
    routes: List[Optional[Association]] = [None] * len(state.gus)
    for u in order:
        gu = state.gus[u]
        candidates: List[Tuple[float, int, int]] = []
        for g, oru in enumerate(state.orus):
            candidates.append((distance_gu_oru(gu.position, oru.position, oru.height), 0, g))
        if allow_relay:
            for a, uav in enumerate(state.uavs):
                candidates.append((distance_gu_uav(gu.position, uav_positions[a], uav.altitude), 1, a))
        candidates.sort()
        chosen: Optional[Association] = None
        for _, kind, index in candidates:
            if kind == 0 and oru_free[index] > 0:
                oru_free[index] -= 1
                chosen = Direct(index)
                break
            if kind == 1 and uav_free[index] > 0:
                uav_free[index] -= 1
                chosen = Relay(index, _relay_oru(uav_positions[index], state.uavs[index].altitude, state, oru_free))
                break
        if chosen is None:
            nearest = min(
                range(len(state.orus)),
                key=lambda g: (distance_gu_oru(gu.position, state.orus[g].position, state.orus[g].height), g),
            )
            logger.debug("GU %d: every target saturated, overflowing onto O-RU %d", u, nearest)
            oru_free[nearest] -= 1
            chosen = Direct(nearest)
        routes[u] = chosen
    return [route for route in routes if route is not None]


def _keys_for(routes: List[Association], state: WorldState) -> Tuple[int, ...]:
    return tuple(weakest_sufficient_key(state.orus[route.oru].security_requirement) for route in routes)


def nearest_policy_act(
    state: WorldState,
    config: ScenarioConfig,
    rng: Optional[np.random.Generator] = None,
    shuffle: bool = False,
) -> DecisionVector:
    """Without an rng the UAVs hold their positions."""
    if rng is None:
        displacement = [(0.0, 0.0)] * len(state.uavs)
    else:
        displacement = [random_displacement(rng, config.d_max) for _ in state.uavs]
    positions = [
        clamp_point((uav.position[0] + dx, uav.position[1] + dy), config.grid_width, config.grid_height)
        for uav, (dx, dy) in zip(state.uavs, displacement)
    ]
    routes = greedy_association(state, positions, True, _gu_order(state, rng, shuffle))
    return DecisionVector(tuple(routes), _keys_for(routes, state), tuple(displacement))


def no_uav_policy_act(
    state: WorldState,
    config: ScenarioConfig,
    rng: Optional[np.random.Generator] = None,
    shuffle: bool = False,
) -> DecisionVector:
    positions = [uav.position for uav in state.uavs]
    routes = greedy_association(state, positions, False, _gu_order(state, rng, shuffle))
    return DecisionVector(tuple(routes), _keys_for(routes, state), tuple((0.0, 0.0) for _ in state.uavs))


def random_policy_act(state: WorldState, config: ScenarioConfig, rng: np.random.Generator) -> DecisionVector:
    options = len(state.orus) * (1 + len(state.uavs))
    routes: List[Association] = []
    for _ in state.gus:
        index = int(rng.integers(options))
        if index < len(state.orus):
            routes.append(Direct(index))
        else:
            uav, oru = divmod(index - len(state.orus), len(state.orus))
            routes.append(Relay(uav, oru))
    keys = tuple(KEY_LENGTHS[int(rng.integers(len(KEY_LENGTHS)))] for _ in state.gus)
    displacement = tuple(random_displacement(rng, config.d_max) for _ in state.uavs)
    return DecisionVector(tuple(routes), keys, displacement)


@dataclass
class HeuristicPolicy:
    kind: PolicyKind
    rng: np.random.Generator
    shuffle: bool = False

    @classmethod
    def create(cls, kind: str, seed: int, shuffle: bool = False) -> "HeuristicPolicy":
        return cls(PolicyKind(kind), np.random.default_rng([seed, HEURISTIC_STREAM]), shuffle)

    def act(self, state: WorldState, config: ScenarioConfig) -> DecisionVector:
        if self.kind is PolicyKind.NEAREST:
            return nearest_policy_act(state, config, self.rng, self.shuffle)
        if self.kind is PolicyKind.NO_UAV:
            return no_uav_policy_act(state, config, self.rng, self.shuffle)
        return random_policy_act(state, config, self.rng)

    def chooser(self) -> Callable[[Environment], DecisionVector]:
        def choose(env: Environment) -> DecisionVector:
            assert env.state is not None
            return self.act(env.state, env.config)

        return choose


def policy_config(kind: PolicyKind, config: ScenarioConfig) -> ScenarioConfig:
    """The No-UAV comparison runs without any UAV in the air."""
    if kind is PolicyKind.NO_UAV:
        return config.replace(num_uavs=0)
    return config
