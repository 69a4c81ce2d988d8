"""
Scenario entities, scenario generation and ground-user mobility.

A scenario is a rectangular disaster area (grid_width x grid_height metres) with
ground users (GUs) that move on foot, fixed O-RAN radio units (O-RUs) and UAV
relays flying at a fixed altitude. Every other module reads the types defined
here.

Configuration is a flat text table with one "<key> <value>" pair per line, the
same line grammar as a hashes.txt table:

    # defaults
    grid_width 100
    num_gus 10
    bw_ug 50e6

Blank lines and lines starting with # are ignored. Unknown keys, duplicate keys,
missing keys and values that do not parse are errors naming the key. Any key
can be overridden from the environment as UAVSIM_<KEY>, e.g. UAVSIM_NUM_GUS=15.

Randomness comes from numpy Generators derived from the scenario seed:
O-RU placement uses a topology stream that only depends on rng_seed, while GUs,
UAVs and mobility use an episode stream derived from (seed, instance, episode),
so parallel environment instances never share a stream.
"""
from __future__ import annotations

import dataclasses
import logging
import math
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Tuple, Type, TypeVar

import numpy as np

logger = logging.getLogger("uav_relay_sim.scenario")

Point = Tuple[float, float]

ENV_PREFIX = "UAVSIM_"
TOPOLOGY_STREAM = 0
EPISODE_STREAM = 1
BITS_PER_MEGABYTE = 8 * 2**20
HEADINGS: Tuple[Point, ...] = ((1.0, 0.0), (-1.0, 0.0), (0.0, 1.0), (0.0, -1.0))
ACTION_MODES = ("factored", "box")
UAV_INIT_MODES = ("random", "center")
COMPUTE_BUDGET_READINGS = ("blocks", "cycles_per_block")
RESOURCE_TIERS: Dict[str, float] = {"low": 0.5, "medium": 1.0, "high": 2.0}

T = TypeVar("T")


class ConfigError(ValueError):
    def __init__(self, field_name: str, message: str) -> None:
        super().__init__(f"{field_name}: {message}")
        self.field = field_name


@dataclass(frozen=True)
class ScenarioConfig:
    grid_width: float = 100.0
    grid_height: float = 100.0
    num_orus: int = 2
    num_uavs: int = 3
    num_gus: int = 10
    horizon: int = 10
    bw_ug: float = 50e6
    bw_ua: float = 40e6
    bw_ag: float = 100e6
    p_ug: float = 1.0
    p_ua: float = 2.0
    p_ag: float = 4.0
    noise_power: float = 1e-13
    pathloss_ref: float = 1e-6
    pathloss_exp: float = 2.0
    compute_power: float = 4.0
    comm_power: float = 7.0
    uav_p0: float = 30.0
    uav_p1: float = 1.5
    uav_c0: float = 0.02
    uav_u_tip: float = 50.0
    uav_v0: float = 30.0
    slot_duration: float = 5.0
    uav_altitude: float = 100.0
    oru_height: float = 10.0
    d_min: float = 5.0
    d_max: float = 30.0
    ber_max: float = 1e-40
    w1: float = 1.0 / 3.0
    w2: float = 1.0 / 3.0
    w3: float = 1.0 / 3.0
    rng_seed: int = 0
    gu_clock_min: float = 1.8e9
    gu_clock_max: float = 2.4e9
    oru_clock_min: float = 3.5e9
    oru_clock_max: float = 3.9e9
    battery_min: float = 50.0
    battery_max: float = 250.0
    compute_budget_min: float = 656.0
    compute_budget_max: float = 1.7e7
    security_req_min: int = 6
    security_req_max: int = 12
    data_min_bits: int = 1 * BITS_PER_MEGABYTE
    data_max_bits: int = 10 * BITS_PER_MEGABYTE
    oru_resource_blocks: int = 3
    uav_resource_blocks: int = 3
    gu_speed_min: float = 0.5
    gu_speed_max: float = 2.0
    p_keep: float = 0.8
    n_and: float = 1.0
    n_or: float = 1.0
    n_shift: float = 1.0
    n_xor: float = 1.0
    penalty_security: float = 1.0
    penalty_resource_blocks: float = 1.0
    penalty_compute: float = 1.0
    penalty_battery: float = 1.0
    penalty_ber: float = 1.0
    penalty_collision: float = 1.0
    penalty_displacement: float = 1.0
    resample_topology: bool = False
    literal_induced_term: bool = False
    rich_observation: bool = False
    action_mode: str = "factored"
    uav_init: str = "random"
    compute_budget_reading: str = "blocks"

    def __post_init__(self) -> None:
        validate_config(self)

    @property
    def diagonal(self) -> float:
        return math.hypot(self.grid_width, self.grid_height)

    def replace(self, **changes: object) -> "ScenarioConfig":
        return dataclasses.replace(self, **changes)


_POSITIVE_FIELDS = (
    "grid_width", "grid_height", "bw_ug", "bw_ua", "bw_ag", "p_ug", "p_ua", "p_ag",
    "noise_power", "pathloss_ref", "pathloss_exp", "compute_power", "comm_power",
    "uav_p0", "uav_p1", "uav_c0", "uav_u_tip", "uav_v0", "slot_duration",
    "uav_altitude", "oru_height", "d_min", "d_max", "gu_clock_min", "oru_clock_min",
    "battery_min", "compute_budget_min", "data_min_bits", "n_and", "n_or", "n_shift", "n_xor",
)
_RANGES = (
    ("gu_clock_min", "gu_clock_max"),
    ("oru_clock_min", "oru_clock_max"),
    ("battery_min", "battery_max"),
    ("compute_budget_min", "compute_budget_max"),
    ("security_req_min", "security_req_max"),
    ("data_min_bits", "data_max_bits"),
    ("gu_speed_min", "gu_speed_max"),
)
_PENALTY_FIELDS = (
    "penalty_security", "penalty_resource_blocks", "penalty_compute", "penalty_battery",
    "penalty_ber", "penalty_collision", "penalty_displacement",
)


def validate_config(config: ScenarioConfig) -> None:
    for name in ("num_orus", "num_gus", "horizon", "oru_resource_blocks", "uav_resource_blocks"):
        if getattr(config, name) < 1:
            raise ConfigError(name, "must be at least 1")
    if config.num_uavs < 0:
        raise ConfigError("num_uavs", "must not be negative")
    for name in _POSITIVE_FIELDS:
        if not getattr(config, name) > 0:
            raise ConfigError(name, "must be positive")
    for low, high in _RANGES:
        if getattr(config, low) > getattr(config, high):
            raise ConfigError(high, f"must not be below {low}")
    if config.gu_speed_min < 0:
        raise ConfigError("gu_speed_min", "must not be negative")
    if config.security_req_min < 6:
        raise ConfigError("security_req_min", "requirements must lie in [6, 12]")
    if config.security_req_max > 12:
        raise ConfigError("security_req_max", "requirements must lie in [6, 12]")
    for name in ("w1", "w2", "w3"):
        if getattr(config, name) < 0:
            raise ConfigError(name, "must not be negative")
    if abs(config.w1 + config.w2 + config.w3 - 1.0) > 1e-9:
        raise ConfigError("w3", "w1 + w2 + w3 must equal 1")
    if not config.d_min < config.diagonal:
        raise ConfigError("d_min", "must be below the grid diagonal")
    if not 0 < config.ber_max <= 0.5:
        raise ConfigError("ber_max", "must lie in (0, 0.5]")
    if not 0 <= config.p_keep <= 1:
        raise ConfigError("p_keep", "must lie in [0, 1]")
    if config.rng_seed < 0:
        raise ConfigError("rng_seed", "must not be negative")
    for name in _PENALTY_FIELDS:
        if getattr(config, name) < 0:
            raise ConfigError(name, "must not be negative")
    if config.action_mode not in ACTION_MODES:
        raise ConfigError("action_mode", f"must be one of {', '.join(ACTION_MODES)}")
    if config.uav_init not in UAV_INIT_MODES:
        raise ConfigError("uav_init", f"must be one of {', '.join(UAV_INIT_MODES)}")
    if config.compute_budget_reading not in COMPUTE_BUDGET_READINGS:
        raise ConfigError(
            "compute_budget_reading", f"must be one of {', '.join(COMPUTE_BUDGET_READINGS)}"
        )


@dataclass
class GroundUser:
    id: int
    position: Point
    clock: float
    battery_capacity: float
    battery_remaining: float
    compute_budget: float
    data_size: int
    heading: Point = (1.0, 0.0)
    speed: float = 0.0


@dataclass(frozen=True)
class RadioUnit:
    id: int
    position: Point
    height: float
    clock: float
    security_requirement: int
    resource_blocks: int


@dataclass
class UavRelay:
    id: int
    position: Point
    altitude: float
    resource_blocks: int
    prev_position: Point


@dataclass
class WorldState:
    t: int
    gus: List[GroundUser]
    orus: List[RadioUnit]
    uavs: List[UavRelay] = field(default_factory=list)


def topology_rng(seed: int) -> np.random.Generator:
    return np.random.default_rng([seed, TOPOLOGY_STREAM])


def episode_rng(seed: int, instance_index: int = 0, episode: int = 0) -> np.random.Generator:
    return np.random.default_rng([seed, EPISODE_STREAM, instance_index, episode])


def _uniform_point(rng: np.random.Generator, width: float, height: float) -> Point:
    return (float(rng.uniform(0.0, width)), float(rng.uniform(0.0, height)))


def _draw_heading(rng: np.random.Generator, config: ScenarioConfig) -> Tuple[Point, float]:
    heading = HEADINGS[int(rng.integers(len(HEADINGS)))]
    speed = float(rng.uniform(config.gu_speed_min, config.gu_speed_max))
    return heading, speed


def draw_radio_units(config: ScenarioConfig, rng: np.random.Generator) -> List[RadioUnit]:
    orus: List[RadioUnit] = []
    for index in range(config.num_orus):
        orus.append(
            RadioUnit(
                id=index,
                position=_uniform_point(rng, config.grid_width, config.grid_height),
                height=config.oru_height,
                clock=float(rng.uniform(config.oru_clock_min, config.oru_clock_max)),
                security_requirement=int(
                    rng.integers(config.security_req_min, config.security_req_max + 1)
                ),
                resource_blocks=config.oru_resource_blocks,
            )
        )
    return orus


def draw_data_size(config: ScenarioConfig, rng: np.random.Generator) -> int:
    return int(rng.integers(config.data_min_bits, config.data_max_bits + 1))


def draw_ground_users(config: ScenarioConfig, rng: np.random.Generator) -> List[GroundUser]:
    gus: List[GroundUser] = []
    for index in range(config.num_gus):
        position = _uniform_point(rng, config.grid_width, config.grid_height)
        capacity = float(rng.uniform(config.battery_min, config.battery_max))
        gu = GroundUser(
            id=index,
            position=position,
            clock=float(rng.uniform(config.gu_clock_min, config.gu_clock_max)),
            battery_capacity=capacity,
            battery_remaining=capacity,
            compute_budget=float(rng.uniform(config.compute_budget_min, config.compute_budget_max)),
            data_size=draw_data_size(config, rng),
        )
        gu.heading, gu.speed = _draw_heading(rng, config)
        gus.append(gu)
    return gus


def draw_uavs(config: ScenarioConfig, rng: np.random.Generator) -> List[UavRelay]:
    uavs: List[UavRelay] = []
    for index in range(config.num_uavs):
        if config.uav_init == "center":
            position = (config.grid_width / 2.0, config.grid_height / 2.0)
        else:
            position = _uniform_point(rng, config.grid_width, config.grid_height)
        uavs.append(
            UavRelay(
                id=index,
                position=position,
                altitude=config.uav_altitude,
                resource_blocks=config.uav_resource_blocks,
                prev_position=position,
            )
        )
    return uavs


def generate_scenario(
    config: ScenarioConfig,
    rng: Optional[np.random.Generator] = None,
    orus: Optional[Sequence[RadioUnit]] = None,
) -> WorldState:
    """
    Draw a fresh world at t = 0. Without an explicit rng the result depends on
    config.rng_seed only. O-RUs come from the topology stream unless given.
    """
    if rng is None:
        rng = episode_rng(config.rng_seed)
    if orus is None:
        orus = draw_radio_units(config, topology_rng(config.rng_seed))
    elif len(orus) != config.num_orus:
        raise ConfigError("num_orus", f"expected {config.num_orus} radio units, got {len(orus)}")
    gus = draw_ground_users(config, rng)
    uavs = draw_uavs(config, rng)
    return WorldState(t=0, gus=gus, orus=list(orus), uavs=uavs)


def reflect(value: float, upper: float) -> Tuple[float, bool]:
    """Fold a coordinate back into [0, upper]; the flag is set when the direction flips."""
    if 0.0 <= value <= upper:
        return value, False
    bounces = math.floor(value / upper)
    period = 2.0 * upper
    folded = value % period
    if folded > upper:
        folded = period - folded
    return folded, bounces % 2 != 0


def clamp_point(point: Point, width: float, height: float) -> Point:
    return (min(max(point[0], 0.0), width), min(max(point[1], 0.0), height))


def move_ground_user(gu: GroundUser, config: ScenarioConfig) -> GroundUser:
    """One Manhattan step along the current heading, reflecting at the border."""
    step = gu.speed * config.slot_duration
    x, y = gu.position
    hx, hy = gu.heading
    if hx != 0.0:
        x, flipped = reflect(x + hx * step, config.grid_width)
        if flipped:
            hx = -hx
    else:
        y, flipped = reflect(y + hy * step, config.grid_height)
        if flipped:
            hy = -hy
    return dataclasses.replace(gu, position=(x, y), heading=(hx, hy))


def step_mobility(state: WorldState, rng: np.random.Generator, config: ScenarioConfig) -> WorldState:
    gus: List[GroundUser] = []
    for gu in state.gus:
        moved = move_ground_user(gu, config)
        if rng.random() >= config.p_keep:
            moved.heading, moved.speed = _draw_heading(rng, config)
        gus.append(moved)
    return dataclasses.replace(state, gus=gus)


def redraw_data_sizes(state: WorldState, rng: np.random.Generator, config: ScenarioConfig) -> WorldState:
    gus = [dataclasses.replace(gu, data_size=draw_data_size(config, rng)) for gu in state.gus]
    return dataclasses.replace(state, gus=gus)


def with_resource_tier(config: ScenarioConfig, tier: str) -> ScenarioConfig:
    """Scale the clock, battery and compute-budget ranges of the ground users."""
    try:
        factor = RESOURCE_TIERS[tier]
    except KeyError:
        raise ConfigError("tier", f"unknown resource tier {tier!r}") from None
    return config.replace(
        gu_clock_min=config.gu_clock_min * factor,
        gu_clock_max=config.gu_clock_max * factor,
        battery_min=config.battery_min * factor,
        battery_max=config.battery_max * factor,
        compute_budget_min=config.compute_budget_min * factor,
        compute_budget_max=config.compute_budget_max * factor,
    )


# Config table parsing


def read_config_table(path: Path) -> Dict[str, Tuple[str, int]]:
    """Read "<key> <value>" lines into {key: (raw value, line number)}."""
    table: Dict[str, Tuple[str, int]] = {}
    try:
        handle = path.open("r", encoding="utf-8")
    except OSError as exc:
        raise ConfigError("config", f"cannot read {path}: {exc}") from exc
    with handle:
        for line_no, line in enumerate(handle, 1):
            stripped = line.strip()
            if not stripped or stripped.startswith("#"):
                continue
            parts = stripped.split(maxsplit=1)
            if len(parts) != 2:
                raise ConfigError(parts[0], f"{path}:{line_no}: expected '<key> <value>'")
            key, raw = parts[0], parts[1].split("#", 1)[0].strip()
            if key in table:
                raise ConfigError(key, f"{path}:{line_no}: duplicate key (first on line {table[key][1]})")
            table[key] = (raw, line_no)
    return table


def apply_env_overrides(
    table: Dict[str, Tuple[str, int]],
    known_keys: Iterable[str],
    environ: Optional[Mapping[str, str]] = None,
) -> Dict[str, Tuple[str, int]]:
    environ = os.environ if environ is None else environ
    known = set(known_keys)
    merged = dict(table)
    for name, raw in sorted(environ.items()):
        if not name.startswith(ENV_PREFIX):
            continue
        key = name[len(ENV_PREFIX):].lower()
        if key not in known:
            raise ConfigError(key, f"unknown key in environment variable {name}")
        logger.info("Config key %s overridden from %s", key, name)
        merged[key] = (raw, 0)
    return merged


def _coerce(key: str, type_name: str, raw: str) -> object:
    try:
        if type_name == "bool":
            lowered = raw.lower()
            if lowered in ("true", "yes", "1", "on"):
                return True
            if lowered in ("false", "no", "0", "off"):
                return False
            raise ValueError(raw)
        if type_name == "int":
            number = float(raw)
            if not number.is_integer():
                raise ValueError(raw)
            return int(number)
        if type_name == "float":
            return float(raw)
        return raw
    except ValueError:
        raise ConfigError(key, f"cannot parse {raw!r} as {type_name}") from None


def config_field_names(cls: type, prefix: str = "") -> List[str]:
    return [prefix + f.name for f in dataclasses.fields(cls)]


def build_from_table(
    cls: Type[T],
    table: Mapping[str, Tuple[str, int]],
    prefix: str = "",
    require_all: bool = True,
) -> T:
    """Instantiate a config dataclass from table entries named <prefix><field>."""
    values: Dict[str, object] = {}
    for f in dataclasses.fields(cls):
        key = prefix + f.name
        if key not in table:
            if require_all:
                raise ConfigError(key, "missing from configuration")
            continue
        values[f.name] = _coerce(key, str(f.type), table[key][0])
    try:
        return cls(**values)
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(prefix.rstrip("_") or cls.__name__, str(exc)) from exc


def config_to_table(config: object) -> Dict[str, object]:
    return {f.name: getattr(config, f.name) for f in dataclasses.fields(config)}
