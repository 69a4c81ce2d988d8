"""
Exhaustive search for tiny single-slot instances, and a direct GAE reference.

brute_force_snapshot places the UAV (at most one) on each point of a lattice
(5 x 5 cell centres by default), then searches every association and key length
for every GU (at most 3 GUs and 2 O-RUs). The UAV is placed, not flown there, so
it hovers for the slot and the displacement is zero.

Two search methods give the same answer:

    exhaustive  evaluate_step on every full decision
    factored    per-GU tables of cost and feasibility for each (route, key),
                combined over route combinations that fit the resource blocks;
                per-GU constraints do not interact, so the best key of each GU
                can be picked independently once routes are fixed

The minimiser is the feasible decision with the smallest single-slot objective.
Ties go to the lexicographically smallest (lattice index, route indices, key
indices). "infeasible" is reported when no decision satisfies every constraint.

Run as a script it is the same as "harness.py oracle".
"""
from __future__ import annotations

import dataclasses
import hashlib
import logging
import math
from dataclasses import dataclass, field
from itertools import product
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from baselines import nearest_policy_act, no_uav_policy_act
from crypto_latency import KEY_LENGTHS, security_level
from energy import GuEnergyLedger, debit_battery, gu_step_energy
from environment import decode_association
from objective import (
    DecisionVector,
    NormalizationBounds,
    Relay,
    StepOutcome,
    compute_load,
    evaluate_step,
    first_hop_ber,
    normalization_bounds,
    objective_value,
    total_latency,
)
from persistence import canonical_json
from ppo_agent import compute_gae
from scenario import Point, ScenarioConfig, WorldState, episode_rng, generate_scenario

logger = logging.getLogger("uav_relay_sim.oracle")

MAX_GUS = 3
MAX_UAVS = 1
MAX_ORUS = 2
MAX_LATTICE = 25
DEFAULT_LATTICE_SIDE = 5
VALUE_TOLERANCE = 1e-9
GAE_TOLERANCE = 1e-12

Evaluator = Callable[..., Tuple[StepOutcome, WorldState, List[GuEnergyLedger]]]


class OracleSizeError(ValueError):
    pass


@dataclass(frozen=True)
class OracleResult:
    status: str
    decision: Optional[DecisionVector]
    value: float
    feasible_count: int
    lattice_index: Optional[int]
    uav_position: Optional[Point]
    instance_hash: str

    @property
    def feasible(self) -> bool:
        return self.status == "optimal"

    def as_dict(self) -> Dict[str, object]:
        decision = None
        if self.decision is not None:
            decision = {
                "association": [
                    {"relay": route.uav, "oru": route.oru} if isinstance(route, Relay) else {"oru": route.oru}
                    for route in self.decision.association
                ],
                "key_length": list(self.decision.key_length),
                "uav_position": list(self.uav_position) if self.uav_position else None,
            }
        return {
            "instance_hash": self.instance_hash,
            "status": self.status,
            "best_decision": decision,
            "best_value": self.value if self.feasible else None,
            "feasible_count": self.feasible_count,
        }


def default_lattice(config: ScenarioConfig, side: int = DEFAULT_LATTICE_SIDE) -> List[Point]:
    xs = [(i + 0.5) * config.grid_width / side for i in range(side)]
    ys = [(j + 0.5) * config.grid_height / side for j in range(side)]
    return [(x, y) for x in xs for y in ys]


def instance_hash(state: WorldState) -> str:
    snapshot = {
        "gus": [dataclasses.asdict(gu) for gu in state.gus],
        "orus": [dataclasses.asdict(oru) for oru in state.orus],
        "uavs": [dataclasses.asdict(uav) for uav in state.uavs],
    }
    return hashlib.sha256(canonical_json(snapshot).encode("utf-8")).hexdigest()


def place_uavs(state: WorldState, position: Optional[Point]) -> WorldState:
    if position is None:
        return state
    uavs = [dataclasses.replace(uav, position=position, prev_position=position) for uav in state.uavs]
    return dataclasses.replace(state, uavs=uavs)


def check_size(state: WorldState, lattice: Sequence[Point]) -> None:
    if len(state.gus) > MAX_GUS:
        raise OracleSizeError(f"{len(state.gus)} GUs exceed the oracle cap of {MAX_GUS}")
    if len(state.uavs) > MAX_UAVS:
        raise OracleSizeError(f"{len(state.uavs)} UAVs exceed the oracle cap of {MAX_UAVS}")
    if len(state.orus) > MAX_ORUS:
        raise OracleSizeError(f"{len(state.orus)} O-RUs exceed the oracle cap of {MAX_ORUS}")
    if len(lattice) > MAX_LATTICE:
        raise OracleSizeError(f"{len(lattice)} lattice points exceed the oracle cap of {MAX_LATTICE}")
    if state.uavs and not lattice:
        raise OracleSizeError("A UAV needs at least one lattice point")


def _full_ledgers(state: WorldState) -> List[GuEnergyLedger]:
    return [GuEnergyLedger.full(gu.battery_remaining) for gu in state.gus]


def _decision(routes: Sequence[int], keys: Sequence[int], state: WorldState) -> DecisionVector:
    return DecisionVector(
        association=tuple(decode_association(j, len(state.orus)) for j in routes),
        key_length=tuple(KEY_LENGTHS[k] for k in keys),
        displacement=tuple((0.0, 0.0) for _ in state.uavs),
    )


@dataclass
class _Best:
    value: float = math.inf
    encoding: Optional[Tuple[int, ...]] = None
    feasible: int = 0

    def offer(self, value: float, encoding: Tuple[int, ...]) -> None:
        if value < self.value or (value == self.value and self.encoding is not None and encoding < self.encoding):
            self.value = value
            self.encoding = encoding


def _route_options(state: WorldState) -> int:
    return len(state.orus) * (1 + len(state.uavs))


def _uav_term(outcome: StepOutcome) -> float:
    return math.fsum(outcome.energy_norm)


def _search_exhaustive(
    placed: WorldState, config: ScenarioConfig, bounds: NormalizationBounds, lattice_index: int, best: _Best
) -> None:
    u = len(placed.gus)
    ledgers = _full_ledgers(placed)
    for routes in product(range(_route_options(placed)), repeat=u):
        for keys in product(range(len(KEY_LENGTHS)), repeat=u):
            outcome, _, _ = evaluate_step(_decision(routes, keys, placed), placed, ledgers, config, bounds)
            if outcome.constraints.clear:
                best.feasible += 1
                best.offer(objective_value([outcome]), (lattice_index, *routes, *keys))


def _search_factored(
    placed: WorldState, config: ScenarioConfig, bounds: NormalizationBounds, lattice_index: int, best: _Best
) -> None:
    u_count = len(placed.gus)
    options = _route_options(placed)
    ledgers = _full_ledgers(placed)
    # cost[u][j][k] is None when (route j, key k) breaks a per-GU constraint
    cost: List[List[List[Optional[float]]]] = []
    for u in range(u_count):
        gu = placed.gus[u]
        per_route = []
        for j in range(options):
            per_key: List[Optional[float]] = []
            for k, key_length in enumerate(KEY_LENGTHS):
                trial = _decision([j] * u_count, [k] * u_count, placed)
                route = trial.association[u]
                latency, parts = total_latency(u, trial, placed, config)
                cp, cm = gu_step_energy(parts.enc, parts.comm, config)
                feasible = (
                    security_level(key_length) >= placed.orus[route.oru].security_requirement
                    and compute_load(key_length, gu.data_size, config) <= gu.compute_budget
                    and not debit_battery(ledgers[u], cp, cm).overdrawn
                    and first_hop_ber(u, trial, placed, config) <= config.ber_max
                )
                if feasible:
                    per_key.append(bounds.latency(latency) + (1.0 - bounds.security(security_level(key_length))))
                else:
                    per_key.append(None)
            per_route.append(per_key)
        cost.append(per_route)

    hover = evaluate_step(_decision([0] * u_count, [0] * u_count, placed), placed, ledgers, config, bounds)[0]
    if hover.constraints.collision or any(hover.constraints.displacement):
        return
    uav_term = _uav_term(hover)

    for routes in product(range(options), repeat=u_count):
        uav_load = [0] * len(placed.uavs)
        oru_load = [0] * len(placed.orus)
        for j in routes:
            route = decode_association(j, len(placed.orus))
            if isinstance(route, Relay):
                uav_load[route.uav] += 1
            else:
                oru_load[route.oru] += 1
        if any(load > uav.resource_blocks for load, uav in zip(uav_load, placed.uavs)):
            continue
        if any(load > oru.resource_blocks for load, oru in zip(oru_load, placed.orus)):
            continue
        count = 1
        keys: List[int] = []
        terms: List[float] = []
        for u, j in enumerate(routes):
            feasible = [(c, k) for k, c in enumerate(cost[u][j]) if c is not None]
            count *= len(feasible)
            if not feasible:
                break
            value, key = min(feasible)
            keys.append(key)
            terms.append(value)
        if count == 0:
            continue
        best.feasible += count
        best.offer(uav_term + math.fsum(terms), (lattice_index, *routes, *keys))


def brute_force_snapshot(
    state: WorldState,
    config: ScenarioConfig,
    uav_lattice: Optional[Sequence[Point]] = None,
    method: str = "factored",
) -> OracleResult:
    """Best feasible single-slot decision of a tiny instance."""
    lattice = list(uav_lattice) if uav_lattice is not None else default_lattice(config)
    check_size(state, lattice)
    if method not in ("factored", "exhaustive"):
        raise ValueError(f"Unknown search method {method!r}")
    bounds = normalization_bounds(config)
    best = _Best()
    candidates: List[Optional[Point]] = list(lattice) if state.uavs else [None]
    search = _search_factored if method == "factored" else _search_exhaustive
    for index, position in enumerate(candidates):
        search(place_uavs(state, position), config, bounds, index, best)
    digest = instance_hash(state)
    if best.encoding is None:
        return OracleResult("infeasible", None, math.inf, 0, None, None, digest)
    index, codes = best.encoding[0], best.encoding[1:]
    u = len(state.gus)
    position = candidates[index]
    placed = place_uavs(state, position)
    decision = _decision(codes[:u], codes[u:], placed)
    return OracleResult("optimal", decision, best.value, best.feasible, index, position, digest)


def brute_force_gae(
    rewards: Sequence[float],
    values: Sequence[float],
    gamma: float,
    lam: float,
    last_value: float = 0.0,
) -> np.ndarray:
    """Direct double sum over one episode; last_value is V after the final step."""
    n = len(rewards)
    next_values = list(values[1:]) + [last_value]
    deltas = [rewards[t] + gamma * next_values[t] - values[t] for t in range(n)]
    advantages = np.zeros(n)
    for t in range(n):
        total = 0.0
        for l in range(n - t):
            total += (gamma * lam) ** l * deltas[t + l]
        advantages[t] = total
    return advantages


# Cross-checks


@dataclass
class InvariantResult:
    name: str
    checked: int = 0
    failures: List[str] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return not self.failures

    def as_dict(self) -> Dict[str, object]:
        return {"name": self.name, "checked": self.checked, "passed": self.passed, "failures": self.failures}


@dataclass
class CrossCheckReport:
    invariants: List[InvariantResult]
    instances: List[Dict[str, object]]

    @property
    def passed(self) -> bool:
        return all(result.passed for result in self.invariants)

    def as_dict(self) -> Dict[str, object]:
        return {
            "passed": self.passed,
            "invariants": [result.as_dict() for result in self.invariants],
            "instances": self.instances,
        }


def tiny_config(config: ScenarioConfig, rng: np.random.Generator) -> ScenarioConfig:
    return config.replace(
        num_gus=int(rng.integers(1, MAX_GUS + 1)),
        num_uavs=int(rng.integers(0, MAX_UAVS + 1)),
        num_orus=MAX_ORUS,
        horizon=1,
        rng_seed=int(rng.integers(2**31)),
    )


def evaluate_at_optimum(
    result: OracleResult, state: WorldState, config: ScenarioConfig, evaluator: Evaluator = evaluate_step
) -> float:
    placed = place_uavs(state, result.uav_position)
    outcome, _, _ = evaluator(result.decision, placed, _full_ledgers(placed), config, normalization_bounds(config))
    return objective_value([outcome])


def cross_check(
    config: ScenarioConfig,
    seed: int,
    instances: int = 50,
    gae_episodes: int = 100,
    evaluator: Evaluator = evaluate_step,
) -> CrossCheckReport:
    """
    Compare the objective evaluator against the oracle on random tiny instances,
    confirm no heuristic decision beats the oracle, and compare compute_gae with
    the direct sum on random episodes.
    """
    rng = np.random.default_rng([seed, 6])
    agree = InvariantResult("evaluator_matches_oracle")
    dominance = InvariantResult("heuristics_never_beat_oracle")
    gae = InvariantResult("gae_matches_direct_sum")
    reports: List[Dict[str, object]] = []
    for index in range(instances):
        tiny = tiny_config(config, rng)
        state = generate_scenario(tiny, episode_rng(tiny.rng_seed, 0, index))
        lattice = default_lattice(tiny)
        if state.uavs:
            state = place_uavs(state, lattice[int(rng.integers(len(lattice)))])
        result = brute_force_snapshot(state, tiny, lattice)
        reports.append(result.as_dict())
        if not result.feasible:
            continue
        agree.checked += 1
        value = evaluate_at_optimum(result, state, tiny, evaluator)
        if abs(value - result.value) > VALUE_TOLERANCE:
            agree.failures.append(f"instance {index}: evaluator {value!r} vs oracle {result.value!r}")
        ledgers = _full_ledgers(state)
        bounds = normalization_bounds(tiny)
        for name, decision in (
            ("nearest", nearest_policy_act(state, tiny)),
            ("no_uav", no_uav_policy_act(state, tiny)),
        ):
            outcome, _, _ = evaluator(decision, state, ledgers, tiny, bounds)
            if not outcome.constraints.clear:
                continue
            dominance.checked += 1
            heuristic_value = objective_value([outcome])
            if heuristic_value < result.value - VALUE_TOLERANCE:
                dominance.failures.append(
                    f"instance {index}: {name} {heuristic_value!r} below oracle {result.value!r}"
                )
    for episode in range(gae_episodes):
        length = int(rng.integers(1, 33))
        rewards = rng.normal(size=length)
        values = rng.normal(size=length)
        gamma = float(rng.uniform(0.0, 1.0))
        lam = float(rng.uniform(0.0, 1.0))
        next_values = np.append(values[1:], 0.0)
        dones = np.zeros(length, dtype=bool)
        dones[-1] = True
        fast, _ = compute_gae(rewards, values, next_values, dones, gamma, lam)
        slow = brute_force_gae(rewards, values, gamma, lam)
        gae.checked += 1
        error = float(np.max(np.abs(fast - slow)))
        if error > GAE_TOLERANCE:
            gae.failures.append(f"episode {episode}: max abs error {error:.3e}")
    for result in (agree, dominance, gae):
        logger.info("%s: %d checked, %d failures", result.name, result.checked, len(result.failures))
    return CrossCheckReport([agree, dominance, gae], reports)


if __name__ == "__main__":
    import sys

    from harness import main

    sys.exit(main(["oracle", *sys.argv[1:]]))
