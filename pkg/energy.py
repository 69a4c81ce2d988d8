"""
Energy accounting: rotary-wing UAV propulsion and ground-user battery drain.

UAV slot energy at horizontal speed v over a slot of length dt:

    E = dt * [P0 * (1 + 3 v^2 / U_tip^2) + c0 * v^3]
      + dt * P1 * [sqrt(1 + v^4 / (4 v0^4)) - v^2 / (2 v0^2)]

Hovering (v = 0) costs dt * (P0 + P1). The induced-power bracket uses v^2 in the
subtracted term, which keeps it dimensionless; literal_induced_term switches to
v / (2 v0^2) for side-by-side comparisons. Radio transmission energy of the UAVs
is not counted here.

Ground users pay tau_enc * E_cp for computing and tau_comm * E_cm for
transmitting. Their ledgers only ever go down; an overdraft is recorded as a
violation and the remaining charge is clamped at zero.
"""
from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass
from typing import Tuple

from scenario import Point, ScenarioConfig


@dataclass(frozen=True)
class UavEnergyParams:
    p0: float
    p1: float
    c0: float
    u_tip: float
    v0: float
    slot_duration: float
    literal_induced_term: bool = False

    def __post_init__(self) -> None:
        for name in ("p0", "p1", "c0", "u_tip", "v0", "slot_duration"):
            if not getattr(self, name) > 0:
                raise ValueError(f"UAV energy parameter {name} must be positive")

    @classmethod
    def from_config(cls, config: ScenarioConfig) -> "UavEnergyParams":
        return cls(
            p0=config.uav_p0,
            p1=config.uav_p1,
            c0=config.uav_c0,
            u_tip=config.uav_u_tip,
            v0=config.uav_v0,
            slot_duration=config.slot_duration,
            literal_induced_term=config.literal_induced_term,
        )


@dataclass(frozen=True)
class GuEnergyLedger:
    capacity: float
    computation: float = 0.0
    communication: float = 0.0
    battery_remaining: float = 0.0
    overdrawn: bool = False

    @classmethod
    def full(cls, capacity: float) -> "GuEnergyLedger":
        return cls(capacity=capacity, battery_remaining=capacity)

    @property
    def consumed(self) -> float:
        return self.computation + self.communication


def uav_velocity(prev_position: Point, new_position: Point, slot_duration: float) -> float:
    # altitude is fixed, so the vertical displacement is always zero
    dx = new_position[0] - prev_position[0]
    dy = new_position[1] - prev_position[1]
    return math.hypot(dx, dy) / slot_duration


def blade_profile_energy(v: float, params: UavEnergyParams) -> float:
    return params.slot_duration * params.p0 * (1.0 + 3.0 * v**2 / params.u_tip**2)


def parasite_energy(v: float, params: UavEnergyParams) -> float:
    return params.slot_duration * params.c0 * v**3


def induced_energy(v: float, params: UavEnergyParams) -> float:
    root = math.sqrt(1.0 + v**4 / (4.0 * params.v0**4))
    if params.literal_induced_term:
        subtracted = v / (2.0 * params.v0**2)
    else:
        subtracted = v**2 / (2.0 * params.v0**2)
    return params.slot_duration * params.p1 * (root - subtracted)


def uav_slot_energy(v: float, params: UavEnergyParams) -> float:
    return blade_profile_energy(v, params) + parasite_energy(v, params) + induced_energy(v, params)


def hover_energy(params: UavEnergyParams) -> float:
    return params.slot_duration * (params.p0 + params.p1)


def gu_step_energy(tau_enc: float, tau_comm: float, config: ScenarioConfig) -> Tuple[float, float]:
    return tau_enc * config.compute_power, tau_comm * config.comm_power


def debit_battery(ledger: GuEnergyLedger, computation: float, communication: float) -> GuEnergyLedger:
    if computation == 0.0 and communication == 0.0:
        return ledger
    total_cp = ledger.computation + computation
    total_cm = ledger.communication + communication
    remaining = ledger.capacity - (total_cp + total_cm)
    return dataclasses.replace(
        ledger,
        computation=total_cp,
        communication=total_cm,
        battery_remaining=max(remaining, 0.0),
        overdrawn=remaining < 0.0,
    )
