"""
Episodic MDP around the simulator.

Observation (all entries in [0, 1]), length 4U + 2A:

    per GU   x / grid_width, y / grid_height, battery_remaining / Z_u, D / D_max
    per UAV  x / grid_width, y / grid_height   (position the next move starts from)

With rich_observation the O-RU positions and (W_g - 6) / 6 are appended, 3 per
O-RU.

Actions come in two layouts, both described by ActionSpec:

    factored  U association heads of size G + A*G (first G direct, then the
              (a, g) pairs a-major), U key heads of size 8 indexing KEY_LENGTHS,
              and 2A continuous values in [-1, 1] scaled by d_max / sqrt(2) per
              axis, so a UAV can never move further than d_max.
    box       one continuous vector in [-1, 1]^(2U + 2A): U association bins,
              U key bins, then 2A displacements scaled by d_max per axis. Here
              a diagonal move can exceed d_max and is penalised.

A step decodes the action, moves the UAVs (clamped to the grid), scores the slot,
debits the batteries, moves the GUs, redraws the payloads and advances t. The
episode is done at t = horizon; stepping past it raises EpisodeFinishedError.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from crypto_latency import KEY_LENGTHS
from energy import GuEnergyLedger
from objective import (
    ConstraintFamily,
    DecisionVector,
    Direct,
    NormalizationBounds,
    Relay,
    StepOutcome,
    evaluate_step,
    normalization_bounds,
)
from scenario import (
    RadioUnit,
    ScenarioConfig,
    WorldState,
    draw_radio_units,
    episode_rng,
    generate_scenario,
    redraw_data_sizes,
    step_mobility,
    topology_rng,
)

logger = logging.getLogger("uav_relay_sim.environment")


class EpisodeFinishedError(RuntimeError):
    pass


@dataclass(frozen=True)
class ActionSpec:
    num_gus: int
    num_orus: int
    num_uavs: int
    mode: str
    displacement_scale: float
    observation_size: int

    @classmethod
    def from_config(cls, config: ScenarioConfig) -> "ActionSpec":
        if config.action_mode == "box":
            scale = config.d_max
        else:
            scale = config.d_max / math.sqrt(2.0)
        observation_size = 4 * config.num_gus + 2 * config.num_uavs
        if config.rich_observation:
            observation_size += 3 * config.num_orus
        return cls(
            num_gus=config.num_gus,
            num_orus=config.num_orus,
            num_uavs=config.num_uavs,
            mode=config.action_mode,
            displacement_scale=scale,
            observation_size=observation_size,
        )

    @property
    def association_size(self) -> int:
        return self.num_orus + self.num_uavs * self.num_orus

    @property
    def key_size(self) -> int:
        return len(KEY_LENGTHS)

    @property
    def categorical_sizes(self) -> Tuple[int, ...]:
        if self.mode == "box":
            return ()
        return (self.association_size,) * self.num_gus + (self.key_size,) * self.num_gus

    @property
    def continuous_dims(self) -> int:
        if self.mode == "box":
            return 2 * self.num_gus + 2 * self.num_uavs
        return 2 * self.num_uavs

    def head_sizes(self) -> Dict[str, int]:
        """Shapes a checkpoint must agree on, keyed by head name."""
        return {
            "association": self.association_size if self.mode != "box" else 0,
            "key_length": self.key_size if self.mode != "box" else 0,
            "categorical_heads": len(self.categorical_sizes),
            "continuous": self.continuous_dims,
            "observation": self.observation_size,
        }


@dataclass(frozen=True)
class Action:
    categorical: Tuple[int, ...] = ()
    continuous: Tuple[float, ...] = ()

    def __post_init__(self) -> None:
        object.__setattr__(self, "categorical", tuple(int(x) for x in self.categorical))
        object.__setattr__(self, "continuous", tuple(float(x) for x in self.continuous))


@dataclass(frozen=True)
class Transition:
    observation: np.ndarray
    action: Union[Action, DecisionVector]
    reward: float
    next_observation: np.ndarray
    done: bool
    outcome: StepOutcome


def decode_association(index: int, num_orus: int) -> Union[Direct, Relay]:
    if index < num_orus:
        return Direct(index)
    uav, oru = divmod(index - num_orus, num_orus)
    return Relay(uav, oru)


def encode_association(route: Union[Direct, Relay], num_orus: int) -> int:
    if isinstance(route, Relay):
        return num_orus + route.uav * num_orus + route.oru
    return route.oru


def _bin(value: float, bins: int) -> int:
    position = (min(max(value, -1.0), 1.0) + 1.0) / 2.0
    return min(int(position * bins), bins - 1)


def decode_action(action: Action, spec: ActionSpec) -> DecisionVector:
    u, a = spec.num_gus, spec.num_uavs
    if spec.mode == "box":
        values = action.continuous
        if len(values) != spec.continuous_dims:
            raise ValueError(f"Box action needs {spec.continuous_dims} values, got {len(values)}")
        association_index = [_bin(x, spec.association_size) for x in values[:u]]
        key_index = [_bin(x, spec.key_size) for x in values[u: 2 * u]]
        moves = values[2 * u:]
    else:
        if len(action.categorical) != 2 * u:
            raise ValueError(f"Factored action needs {2 * u} categorical choices, got {len(action.categorical)}")
        if len(action.continuous) != 2 * a:
            raise ValueError(f"Factored action needs {2 * a} displacement values, got {len(action.continuous)}")
        association_index = list(action.categorical[:u])
        key_index = list(action.categorical[u:])
        moves = action.continuous
        for index in association_index:
            if not 0 <= index < spec.association_size:
                raise ValueError(f"Association choice {index} outside [0, {spec.association_size})")
        for index in key_index:
            if not 0 <= index < spec.key_size:
                raise ValueError(f"Key choice {index} outside [0, {spec.key_size})")
    scale = spec.displacement_scale
    displacement = tuple(
        (min(max(moves[2 * i], -1.0), 1.0) * scale, min(max(moves[2 * i + 1], -1.0), 1.0) * scale)
        for i in range(a)
    )
    return DecisionVector(
        association=tuple(decode_association(i, spec.num_orus) for i in association_index),
        key_length=tuple(KEY_LENGTHS[i] for i in key_index),
        displacement=displacement,
    )


def build_observation(state: WorldState, config: ScenarioConfig) -> np.ndarray:
    values: List[float] = []
    for gu in state.gus:
        values.extend(
            (
                gu.position[0] / config.grid_width,
                gu.position[1] / config.grid_height,
                gu.battery_remaining / gu.battery_capacity,
                gu.data_size / config.data_max_bits,
            )
        )
    for uav in state.uavs:
        values.extend((uav.position[0] / config.grid_width, uav.position[1] / config.grid_height))
    if config.rich_observation:
        for oru in state.orus:
            values.extend(
                (
                    oru.position[0] / config.grid_width,
                    oru.position[1] / config.grid_height,
                    (oru.security_requirement - 6) / 6.0,
                )
            )
    return np.clip(np.asarray(values, dtype=np.float64), 0.0, 1.0)


class Environment:
    """One environment instance; instances never share RNG streams or state."""

    def __init__(
        self,
        config: ScenarioConfig,
        instance_index: int = 0,
        fixed_orus: Optional[Sequence[RadioUnit]] = None,
    ) -> None:
        self.config = config
        self.instance_index = instance_index
        self.spec = ActionSpec.from_config(config)
        self.bounds: NormalizationBounds = normalization_bounds(config)
        self._fixed_orus = list(fixed_orus) if fixed_orus is not None else None
        self._seed = config.rng_seed
        self._next_episode = 0
        self.episode = -1
        self.state: Optional[WorldState] = None
        self.ledgers: List[GuEnergyLedger] = []
        self._rng: Optional[np.random.Generator] = None

    @property
    def done(self) -> bool:
        return self.state is None or self.state.t >= self.config.horizon

    def _orus_for_episode(self, rng: np.random.Generator) -> List[RadioUnit]:
        if self._fixed_orus is not None:
            return self._fixed_orus
        if self.config.resample_topology:
            return draw_radio_units(self.config, rng)
        return draw_radio_units(self.config, topology_rng(self._seed))

    def reset(self, seed: Optional[int] = None, episode: Optional[int] = None) -> np.ndarray:
        """
        Start an episode. The world depends on (seed, instance, episode) only;
        a seed without an episode index means episode 0.
        """
        if seed is not None:
            self._seed = seed
            if episode is None:
                episode = 0
        if episode is None:
            episode = self._next_episode
        self.episode = episode
        self._next_episode = episode + 1
        self._rng = episode_rng(self._seed, self.instance_index, episode)
        orus = self._orus_for_episode(self._rng)
        self.state = generate_scenario(self.config, self._rng, orus=orus)
        self.ledgers = [GuEnergyLedger.full(gu.battery_capacity) for gu in self.state.gus]
        logger.debug("Reset instance %d episode %d seed %d", self.instance_index, episode, self._seed)
        return self.observation()

    def observation(self) -> np.ndarray:
        if self.state is None:
            raise EpisodeFinishedError("Environment has not been reset")
        return build_observation(self.state, self.config)

    def step(self, action: Action) -> Transition:
        return self._advance(decode_action(action, self.spec), action)

    def step_decision(self, decision: DecisionVector) -> Transition:
        return self._advance(decision, decision)

    def _advance(self, decision: DecisionVector, action: Union[Action, DecisionVector]) -> Transition:
        if self.done:
            raise EpisodeFinishedError(
                f"Episode finished at t={self.config.horizon}; call reset() before stepping"
            )
        assert self.state is not None and self._rng is not None
        observation = self.observation()
        outcome, state, self.ledgers = evaluate_step(
            decision, self.state, self.ledgers, self.config, self.bounds
        )
        state = step_mobility(state, self._rng, self.config)
        state = redraw_data_sizes(state, self._rng, self.config)
        state.t += 1
        self.state = state
        return Transition(
            observation=observation,
            action=action,
            reward=outcome.final_reward,
            next_observation=self.observation(),
            done=self.done,
            outcome=outcome,
        )


@dataclass
class EpisodeSummary:
    episode: int
    policy: str
    episode_return: float = 0.0
    cumulative_penalty: float = 0.0
    steps: int = 0
    objective: float = 0.0
    mean_latency_norm: float = 0.0
    mean_security_norm: float = 0.0
    mean_energy_norm: float = 0.0
    violations: Dict[str, int] = field(default_factory=dict)
    violating: Dict[str, int] = field(default_factory=dict)
    opportunities: Dict[str, int] = field(default_factory=dict)
    disconnected: int = 0

    def satisfaction(self) -> Dict[str, float]:
        return {
            family: 1.0 - self.violating[family] / total if total else 1.0
            for family, total in self.opportunities.items()
        }

    def as_dict(self) -> Dict[str, object]:
        return {
            "episode": self.episode,
            "policy": self.policy,
            "return": self.episode_return,
            "cumulative_penalty": self.cumulative_penalty,
            "steps": self.steps,
            "objective": self.objective,
            "mean_latency_norm": self.mean_latency_norm,
            "mean_security_norm": self.mean_security_norm,
            "mean_energy_norm": self.mean_energy_norm,
            "violations": dict(self.violations),
            "satisfaction": self.satisfaction(),
            "disconnected": self.disconnected,
        }


def summarize_episode(episode: int, policy: str, outcomes: Sequence[StepOutcome]) -> EpisodeSummary:
    """Disconnected counts GUs whose first hop exceeded BER_max at least once."""
    summary = EpisodeSummary(episode=episode, policy=policy)
    summary.violations = {family.value: 0 for family in ConstraintFamily}
    summary.violating = {family.value: 0 for family in ConstraintFamily}
    summary.opportunities = {family.value: 0 for family in ConstraintFamily}
    disconnected = set()
    latency, security, energy = [], [], []
    for outcome in outcomes:
        report = outcome.constraints
        summary.episode_return += outcome.final_reward
        summary.cumulative_penalty += outcome.penalty
        summary.steps += 1
        summary.objective += outcome.objective
        for family, count in report.violation_counts().items():
            summary.violations[family.value] += count
        for family, count in report.violating_entities().items():
            summary.violating[family.value] += count
        for family, count in report.opportunities().items():
            summary.opportunities[family.value] += count
        disconnected.update(u for u, hit in enumerate(report.ber) if hit)
        latency.append(outcome.mean_latency_norm)
        security.append(outcome.mean_security_norm)
        energy.append(outcome.mean_energy_norm)
    if outcomes:
        summary.mean_latency_norm = float(np.mean(latency))
        summary.mean_security_norm = float(np.mean(security))
        summary.mean_energy_norm = float(np.mean(energy))
    summary.disconnected = len(disconnected)
    return summary


Chooser = Callable[[Environment], Union[Action, DecisionVector]]


def run_episode(
    env: Environment,
    choose: Chooser,
    policy: str,
    seed: Optional[int] = None,
    episode: Optional[int] = None,
) -> Tuple[List[Transition], EpisodeSummary]:
    env.reset(seed=seed, episode=episode)
    transitions: List[Transition] = []
    while not env.done:
        choice = choose(env)
        if isinstance(choice, DecisionVector):
            transitions.append(env.step_decision(choice))
        else:
            transitions.append(env.step(choice))
    summary = summarize_episode(env.episode, policy, [t.outcome for t in transitions])
    return transitions, summary
