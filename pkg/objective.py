"""
Per-timestep evaluation of one joint decision: latency, security, energy,
constraint checks, penalty and reward.

A decision assigns every GU exactly one route, Direct(g) or Relay(a, g), and one
key length, and gives every UAV a planar displacement. One association per GU
and valid key lengths are built into DecisionVector, so "exactly one O-RU",
"key length domain" and "binary association" always hold. The seven remaining
constraint families are checked and penalised:

    security         log2(N) >= W_g of the chosen O-RU            per GU
    resource_blocks  relayed GUs per UAV <= M_a, direct GUs per O-RU <= M_g
                     (counted as overflow, so 4 GUs on M_a = 3 is one violation)
    compute          N * C <= Gamma_u, C = block count (or cycles per block)
    battery          cumulative GU energy <= Z_u                  per GU
    ber              first-hop BER <= BER_max                     per GU
    collision        UAV pair separation >= d_min                 per pair
    displacement     UAV move per slot <= d_max                   per UAV

Normalisation: latency / L_max and energy / E_max capped at 1, security mapped
from [6, 12] onto [0, 1]. L_max covers the slowest cipher at the largest payload
and slowest clocks plus the slowest route across the grid diagonal; E_max is the
slot energy at d_max / dt.

The episode objective sums normalised UAV energy, normalised GU latency and the
security deficit over all entities and slots. The RL reward uses per-slot means
instead: r = w1 (1 - latency) + w2 (1 - energy) + w3 security, final reward
r - penalty.
"""
from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass
from enum import Enum
from itertools import combinations
from typing import Dict, Iterable, Iterator, List, Optional, Sequence, Tuple, Union

from channel import (
    access_link,
    backhaul_link,
    direct_link,
    distance_gu_oru,
    distance_gu_uav,
    distance_uav_oru,
    hop_latency,
    link_budget,
)
from crypto_latency import (
    KEY_LENGTHS,
    SECURITY_MAX,
    SECURITY_MIN,
    CycleCosts,
    Direction,
    InvalidKeyLengthError,
    block_count,
    complexity,
    decryption_latency,
    encryption_latency,
    security_level,
    suite_from_key_length,
)
from energy import GuEnergyLedger, UavEnergyParams, debit_battery, gu_step_energy, uav_slot_energy, uav_velocity
from scenario import Point, ScenarioConfig, WorldState, clamp_point

DISPLACEMENT_TOLERANCE = 1e-9


@dataclass(frozen=True)
class Direct:
    oru: int


@dataclass(frozen=True)
class Relay:
    uav: int
    oru: int


Association = Union[Direct, Relay]


@dataclass(frozen=True)
class DecisionVector:
    association: Tuple[Association, ...]
    key_length: Tuple[int, ...]
    displacement: Tuple[Point, ...] = ()

    def __post_init__(self) -> None:
        object.__setattr__(self, "association", tuple(self.association))
        object.__setattr__(self, "key_length", tuple(int(n) for n in self.key_length))
        object.__setattr__(
            self, "displacement", tuple((float(dx), float(dy)) for dx, dy in self.displacement)
        )
        if len(self.association) != len(self.key_length):
            raise ValueError("Every GU needs exactly one association and one key length")
        for route in self.association:
            if not isinstance(route, (Direct, Relay)):
                raise TypeError(f"Unsupported association {route!r}")
        for key_length in self.key_length:
            if key_length not in KEY_LENGTHS:
                raise InvalidKeyLengthError(key_length)


class ConstraintFamily(str, Enum):
    SECURITY = "security"
    RESOURCE_BLOCKS = "resource_blocks"
    COMPUTE = "compute"
    BATTERY = "battery"
    BER = "ber"
    COLLISION = "collision"
    DISPLACEMENT = "displacement"


PENALTY_WEIGHT_FIELDS: Dict[ConstraintFamily, str] = {
    ConstraintFamily.SECURITY: "penalty_security",
    ConstraintFamily.RESOURCE_BLOCKS: "penalty_resource_blocks",
    ConstraintFamily.COMPUTE: "penalty_compute",
    ConstraintFamily.BATTERY: "penalty_battery",
    ConstraintFamily.BER: "penalty_ber",
    ConstraintFamily.COLLISION: "penalty_collision",
    ConstraintFamily.DISPLACEMENT: "penalty_displacement",
}


@dataclass(frozen=True)
class ConstraintReport:
    security: Tuple[bool, ...]
    uav_overflow: Tuple[int, ...]
    oru_overflow: Tuple[int, ...]
    compute: Tuple[bool, ...]
    battery: Tuple[bool, ...]
    ber: Tuple[bool, ...]
    collision: Tuple[Tuple[int, int], ...]
    displacement: Tuple[bool, ...]
    uav_pairs: int

    def violation_counts(self) -> Dict[ConstraintFamily, int]:
        """Violation mass per family; resource blocks count every GU over capacity."""
        return {
            ConstraintFamily.SECURITY: sum(self.security),
            ConstraintFamily.RESOURCE_BLOCKS: sum(self.uav_overflow) + sum(self.oru_overflow),
            ConstraintFamily.COMPUTE: sum(self.compute),
            ConstraintFamily.BATTERY: sum(self.battery),
            ConstraintFamily.BER: sum(self.ber),
            ConstraintFamily.COLLISION: len(self.collision),
            ConstraintFamily.DISPLACEMENT: sum(self.displacement),
        }

    def violating_entities(self) -> Dict[ConstraintFamily, int]:
        counts = self.violation_counts()
        counts[ConstraintFamily.RESOURCE_BLOCKS] = sum(1 for x in self.uav_overflow if x) + sum(
            1 for x in self.oru_overflow if x
        )
        return counts

    def opportunities(self) -> Dict[ConstraintFamily, int]:
        gus = len(self.security)
        return {
            ConstraintFamily.SECURITY: gus,
            ConstraintFamily.RESOURCE_BLOCKS: len(self.uav_overflow) + len(self.oru_overflow),
            ConstraintFamily.COMPUTE: gus,
            ConstraintFamily.BATTERY: gus,
            ConstraintFamily.BER: gus,
            ConstraintFamily.COLLISION: self.uav_pairs,
            ConstraintFamily.DISPLACEMENT: len(self.displacement),
        }

    @property
    def clear(self) -> bool:
        return not any(self.violation_counts().values())

    @property
    def disconnected(self) -> int:
        return sum(self.ber)


@dataclass(frozen=True)
class LatencyParts:
    enc: float
    comm: float
    dec: float
    first_hop: float
    backhaul: float = 0.0


@dataclass(frozen=True)
class NormalizationBounds:
    latency_max: float
    energy_max: float
    security_min: float = SECURITY_MIN
    security_max: float = SECURITY_MAX

    def __post_init__(self) -> None:
        if not (self.latency_max > 0 and self.energy_max > 0 and self.security_max > self.security_min > 0):
            raise ValueError("Normalization bounds must be positive with security_max > security_min")

    def latency(self, value: float) -> float:
        return min(value / self.latency_max, 1.0)

    def energy(self, value: float) -> float:
        return min(value / self.energy_max, 1.0)

    def security(self, value: float) -> float:
        return (value - self.security_min) / (self.security_max - self.security_min)


@dataclass(frozen=True)
class StepOutcome:
    t: int
    latency: Tuple[float, ...]
    security: Tuple[float, ...]
    ber: Tuple[float, ...]
    tau_enc: Tuple[float, ...]
    tau_comm: Tuple[float, ...]
    tau_dec: Tuple[float, ...]
    gu_energy_cp: Tuple[float, ...]
    gu_energy_cm: Tuple[float, ...]
    uav_energy: Tuple[float, ...]
    uav_velocity: Tuple[float, ...]
    latency_norm: Tuple[float, ...]
    security_norm: Tuple[float, ...]
    energy_norm: Tuple[float, ...]
    constraints: ConstraintReport
    penalty: float
    reward: float
    final_reward: float

    @property
    def objective(self) -> float:
        return objective_value([self])

    @property
    def mean_latency_norm(self) -> float:
        return _mean(self.latency_norm)

    @property
    def mean_security_norm(self) -> float:
        return _mean(self.security_norm)

    @property
    def mean_energy_norm(self) -> float:
        return _mean(self.energy_norm)


def _mean(values: Sequence[float]) -> float:
    return math.fsum(values) / len(values) if values else 0.0


def cycle_costs(config: ScenarioConfig) -> CycleCosts:
    return CycleCosts(config.n_and, config.n_or, config.n_shift, config.n_xor)


def check_structure(decision: DecisionVector, state: WorldState) -> None:
    """Association and key domains are part of the type; only indices need checking."""
    if len(decision.association) != len(state.gus):
        raise ValueError(f"Decision covers {len(decision.association)} GUs, state has {len(state.gus)}")
    if len(decision.displacement) != len(state.uavs):
        raise ValueError(
            f"Decision moves {len(decision.displacement)} UAVs, state has {len(state.uavs)}"
        )
    for u, route in enumerate(decision.association):
        if not 0 <= route.oru < len(state.orus):
            raise ValueError(f"GU {u} routed to unknown O-RU {route.oru}")
        if isinstance(route, Relay) and not 0 <= route.uav < len(state.uavs):
            raise ValueError(f"GU {u} relayed through unknown UAV {route.uav}")


def total_latency(
    u: int, decision: DecisionVector, state: WorldState, config: ScenarioConfig
) -> Tuple[float, LatencyParts]:
    gu = state.gus[u]
    route = decision.association[u]
    oru = state.orus[route.oru]
    suite = suite_from_key_length(decision.key_length[u], cycle_costs(config))
    tau_enc = encryption_latency(suite, gu.data_size, gu.clock)
    tau_dec = decryption_latency(suite, gu.data_size, oru.clock)
    if isinstance(route, Relay):
        uav = state.uavs[route.uav]
        first_hop = hop_latency(gu.data_size, access_link(gu, uav, config))
        backhaul = hop_latency(gu.data_size, backhaul_link(uav, oru, config))
        parts = LatencyParts(tau_enc, first_hop + backhaul, tau_dec, first_hop, backhaul)
    else:
        first_hop = hop_latency(gu.data_size, direct_link(gu, oru, config))
        parts = LatencyParts(tau_enc, first_hop, tau_dec, first_hop)
    return parts.enc + parts.comm + parts.dec, parts


def first_hop_ber(u: int, decision: DecisionVector, state: WorldState, config: ScenarioConfig) -> float:
    gu = state.gus[u]
    route = decision.association[u]
    if isinstance(route, Relay):
        return access_link(gu, state.uavs[route.uav], config).ber
    return direct_link(gu, state.orus[route.oru], config).ber


def compute_load(key_length: int, data_size: float, config: ScenarioConfig) -> float:
    suite = suite_from_key_length(key_length, cycle_costs(config))
    if config.compute_budget_reading == "cycles_per_block":
        return key_length * complexity(suite, Direction.ENCRYPT)
    return key_length * block_count(suite, data_size)


def evaluate_constraints(
    decision: DecisionVector,
    state: WorldState,
    ledgers: Sequence[GuEnergyLedger],
    config: ScenarioConfig,
) -> ConstraintReport:
    """
    Check a decision against a state whose UAVs already sit at their new
    positions (prev_position holding where they came from) and against ledgers
    already debited for this slot.
    """
    check_structure(decision, state)
    security: List[bool] = []
    compute: List[bool] = []
    ber: List[bool] = []
    uav_load = [0] * len(state.uavs)
    oru_load = [0] * len(state.orus)
    for u, gu in enumerate(state.gus):
        route = decision.association[u]
        key_length = decision.key_length[u]
        requirement = state.orus[route.oru].security_requirement
        security.append(security_level(key_length) < requirement)
        compute.append(compute_load(key_length, gu.data_size, config) > gu.compute_budget)
        ber.append(first_hop_ber(u, decision, state, config) > config.ber_max)
        if isinstance(route, Relay):
            uav_load[route.uav] += 1
        else:
            oru_load[route.oru] += 1
    collision = tuple(
        (i, j)
        for i, j in combinations(range(len(state.uavs)), 2)
        if math.dist(state.uavs[i].position, state.uavs[j].position) < config.d_min
    )
    displacement = tuple(
        math.dist(uav.prev_position, uav.position) > config.d_max * (1.0 + DISPLACEMENT_TOLERANCE)
        for uav in state.uavs
    )
    return ConstraintReport(
        security=tuple(security),
        uav_overflow=tuple(max(0, load - uav.resource_blocks) for load, uav in zip(uav_load, state.uavs)),
        oru_overflow=tuple(max(0, load - oru.resource_blocks) for load, oru in zip(oru_load, state.orus)),
        compute=tuple(compute),
        battery=tuple(ledger.overdrawn for ledger in ledgers),
        ber=tuple(ber),
        collision=collision,
        displacement=displacement,
        uav_pairs=len(state.uavs) * (len(state.uavs) - 1) // 2,
    )


def penalty(report: ConstraintReport, config: ScenarioConfig) -> float:
    return math.fsum(
        count * getattr(config, PENALTY_WEIGHT_FIELDS[family])
        for family, count in report.violation_counts().items()
    )


def step_reward(latency_norm: float, energy_norm: float, security_norm: float, config: ScenarioConfig) -> float:
    return config.w1 * (1.0 - latency_norm) + config.w2 * (1.0 - energy_norm) + config.w3 * security_norm


def reward(outcome: StepOutcome, config: ScenarioConfig) -> float:
    """Final reward of a slot: mean-normalised reward minus the penalty."""
    r = step_reward(outcome.mean_latency_norm, outcome.mean_energy_norm, outcome.mean_security_norm, config)
    return r - outcome.penalty


def objective_value(outcomes: Iterable[StepOutcome]) -> float:
    terms: List[float] = []
    for outcome in outcomes:
        terms.extend(outcome.energy_norm)
        terms.extend(outcome.latency_norm)
        terms.extend(1.0 - s for s in outcome.security_norm)
    return math.fsum(terms)


def normalization_bounds(config: ScenarioConfig) -> NormalizationBounds:
    costs = cycle_costs(config)
    crypto_max = max(
        encryption_latency(suite, config.data_max_bits, config.gu_clock_min)
        + decryption_latency(suite, config.data_max_bits, config.oru_clock_min)
        for suite in (suite_from_key_length(n, costs) for n in KEY_LENGTHS)
    )
    far = ((0.0, 0.0), (config.grid_width, config.grid_height))
    direct = link_budget(distance_gu_oru(far[0], far[1], config.oru_height), config.p_ug, config.bw_ug, config)
    access = link_budget(distance_gu_uav(far[0], far[1], config.uav_altitude), config.p_ua, config.bw_ua, config)
    backhaul = link_budget(
        distance_uav_oru(far[0], far[1], config.uav_altitude, config.oru_height),
        config.p_ag,
        config.bw_ag,
        config,
    )
    comm_max = max(
        hop_latency(config.data_max_bits, direct),
        hop_latency(config.data_max_bits, access) + hop_latency(config.data_max_bits, backhaul),
    )
    params = UavEnergyParams.from_config(config)
    energy_max = uav_slot_energy(config.d_max / config.slot_duration, params)
    if not math.isfinite(comm_max):
        raise ValueError("Latency bound is not finite; check transmit powers")
    return NormalizationBounds(latency_max=crypto_max + comm_max, energy_max=energy_max)


def move_uavs(state: WorldState, decision: DecisionVector, config: ScenarioConfig) -> WorldState:
    uavs = []
    for uav, (dx, dy) in zip(state.uavs, decision.displacement):
        target = clamp_point((uav.position[0] + dx, uav.position[1] + dy), config.grid_width, config.grid_height)
        uavs.append(dataclasses.replace(uav, prev_position=uav.position, position=target))
    return dataclasses.replace(state, uavs=uavs)


def evaluate_step(
    decision: DecisionVector,
    state: WorldState,
    ledgers: Sequence[GuEnergyLedger],
    config: ScenarioConfig,
    bounds: Optional[NormalizationBounds] = None,
) -> Tuple[StepOutcome, WorldState, List[GuEnergyLedger]]:
    """
    Apply one decision to a state: move the UAVs, price every GU's transmission,
    debit the batteries, check constraints and score the slot. Returns the
    outcome, the state with UAVs moved and batteries updated, and the new ledgers.
    GU mobility is left to the caller.
    """
    check_structure(decision, state)
    bounds = bounds or normalization_bounds(config)
    moved = move_uavs(state, decision, config)

    latency: List[float] = []
    parts: List[LatencyParts] = []
    security: List[float] = []
    ber: List[float] = []
    energy_cp: List[float] = []
    energy_cm: List[float] = []
    new_ledgers: List[GuEnergyLedger] = []
    for u in range(len(moved.gus)):
        total, detail = total_latency(u, decision, moved, config)
        latency.append(total)
        parts.append(detail)
        security.append(security_level(decision.key_length[u]))
        ber.append(first_hop_ber(u, decision, moved, config))
        cp, cm = gu_step_energy(detail.enc, detail.comm, config)
        energy_cp.append(cp)
        energy_cm.append(cm)
        new_ledgers.append(debit_battery(ledgers[u], cp, cm))

    params = UavEnergyParams.from_config(config)
    velocity = [uav_velocity(uav.prev_position, uav.position, config.slot_duration) for uav in moved.uavs]
    uav_energy = [uav_slot_energy(v, params) for v in velocity]

    gus = [
        dataclasses.replace(gu, battery_remaining=ledger.battery_remaining)
        for gu, ledger in zip(moved.gus, new_ledgers)
    ]
    moved = dataclasses.replace(moved, gus=gus)
    report = evaluate_constraints(decision, moved, new_ledgers, config)

    latency_norm = tuple(bounds.latency(x) for x in latency)
    security_norm = tuple(bounds.security(x) for x in security)
    energy_norm = tuple(bounds.energy(x) for x in uav_energy)
    p = penalty(report, config)
    r = step_reward(_mean(latency_norm), _mean(energy_norm), _mean(security_norm), config)
    outcome = StepOutcome(
        t=state.t,
        latency=tuple(latency),
        security=tuple(security),
        ber=tuple(ber),
        tau_enc=tuple(x.enc for x in parts),
        tau_comm=tuple(x.comm for x in parts),
        tau_dec=tuple(x.dec for x in parts),
        gu_energy_cp=tuple(energy_cp),
        gu_energy_cm=tuple(energy_cm),
        uav_energy=tuple(uav_energy),
        uav_velocity=tuple(velocity),
        latency_norm=latency_norm,
        security_norm=security_norm,
        energy_norm=energy_norm,
        constraints=report,
        penalty=p,
        reward=r,
        final_reward=r - p,
    )
    return outcome, moved, new_ledgers


OUTCOME_CSV_HEADER = (
    "episode", "t", "entity", "entity_id", "latency_s", "security", "ber",
    "tau_enc_s", "tau_comm_s", "tau_dec_s", "energy_j", "velocity_mps",
    "latency_norm", "security_norm", "energy_norm", "violations", "penalty", "final_reward",
)


def outcome_rows(episode: int, outcome: StepOutcome) -> Iterator[Tuple[object, ...]]:
    """
    One row per (episode, t, entity). GU rows carry latency parts and the GU's
    energy (computation + communication); UAV rows carry propulsion energy and
    speed. "violations" lists the families the entity violates, ';'-separated;
    the step row (entity "step") carries penalty and final reward.
    """
    report = outcome.constraints
    for u in range(len(outcome.latency)):
        flags = [
            family.value
            for family, hit in (
                (ConstraintFamily.SECURITY, report.security[u]),
                (ConstraintFamily.COMPUTE, report.compute[u]),
                (ConstraintFamily.BATTERY, report.battery[u]),
                (ConstraintFamily.BER, report.ber[u]),
            )
            if hit
        ]
        yield (
            episode, outcome.t, "gu", u, outcome.latency[u], outcome.security[u], outcome.ber[u],
            outcome.tau_enc[u], outcome.tau_comm[u], outcome.tau_dec[u],
            outcome.gu_energy_cp[u] + outcome.gu_energy_cm[u], "",
            outcome.latency_norm[u], outcome.security_norm[u], "", ";".join(flags), "", "",
        )
    colliding = {index for pair in report.collision for index in pair}
    for a in range(len(outcome.uav_energy)):
        flags = []
        if report.uav_overflow[a]:
            flags.append(ConstraintFamily.RESOURCE_BLOCKS.value)
        if a in colliding:
            flags.append(ConstraintFamily.COLLISION.value)
        if report.displacement[a]:
            flags.append(ConstraintFamily.DISPLACEMENT.value)
        yield (
            episode, outcome.t, "uav", a, "", "", "", "", "", "",
            outcome.uav_energy[a], outcome.uav_velocity[a], "", "", outcome.energy_norm[a],
            ";".join(flags), "", "",
        )
    for g, overflow in enumerate(report.oru_overflow):
        yield (
            episode, outcome.t, "oru", g, "", "", "", "", "", "", "", "", "", "", "",
            ConstraintFamily.RESOURCE_BLOCKS.value if overflow else "", "", "",
        )
    yield (
        episode, outcome.t, "step", "", "", "", "", "", "", "", "", "",
        outcome.mean_latency_norm, outcome.mean_security_norm, outcome.mean_energy_norm,
        "", outcome.penalty, outcome.final_reward,
    )
