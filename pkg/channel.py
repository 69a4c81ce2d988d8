"""
Link geometry, channel gain, rate, latency and BPSK bit error rate.

Distances are three dimensional: GUs sit on the ground, O-RU antennas at
oru_height and UAVs at uav_altitude. Each hop sees free-space style path loss
h = beta0 / d^alpha and thermal noise only (no interference, no fading):

    SNR  = p * h / sigma^2
    rate = B * log2(1 + SNR)
    BER  = erfc(sqrt(SNR)) / 2

erfc comes from scipy.special (Cephes implementation, relative error around
1e-15 over the whole positive axis), so very small BERs stay representable down
to roughly 1e-300 instead of collapsing to zero.

A hop with zero rate cannot carry data; its latency is UNUSABLE_LATENCY (inf)
and the caller treats the transmission as violating the link constraints.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Tuple, Union

from scipy.special import erfc

from scenario import GroundUser, Point, RadioUnit, ScenarioConfig, UavRelay

UNUSABLE_LATENCY = math.inf


@dataclass(frozen=True)
class LinkBudget:
    distance: float
    gain: float
    snr: float
    rate: float
    ber: float


def _ground_offset(a: Point, b: Point) -> float:
    return math.hypot(a[0] - b[0], a[1] - b[1])


def distance_gu_oru(gu_position: Point, oru_position: Point, oru_height: float) -> float:
    return math.hypot(oru_height, _ground_offset(oru_position, gu_position))


def distance_gu_uav(gu_position: Point, uav_position: Point, uav_altitude: float) -> float:
    return math.hypot(uav_altitude, _ground_offset(uav_position, gu_position))


def distance_uav_oru(
    uav_position: Point, oru_position: Point, uav_altitude: float, oru_height: float
) -> float:
    return math.hypot(oru_height - uav_altitude, _ground_offset(oru_position, uav_position))


def bpsk_ber(snr: float) -> float:
    return 0.5 * float(erfc(math.sqrt(max(snr, 0.0))))


def link_budget(distance: float, power: float, bandwidth: float, config: ScenarioConfig) -> LinkBudget:
    if not distance > 0:
        raise ValueError(f"Link distance must be positive, got {distance}")
    gain = config.pathloss_ref / distance**config.pathloss_exp
    snr = power * gain / config.noise_power
    rate = bandwidth * math.log2(1.0 + snr)
    return LinkBudget(distance=distance, gain=gain, snr=snr, rate=rate, ber=bpsk_ber(snr))


def hop_latency(data_size: float, budget: LinkBudget) -> float:
    if budget.rate <= 0.0:
        return UNUSABLE_LATENCY
    return data_size / budget.rate


def direct_link(gu: GroundUser, oru: RadioUnit, config: ScenarioConfig) -> LinkBudget:
    distance = distance_gu_oru(gu.position, oru.position, oru.height)
    return link_budget(distance, config.p_ug, config.bw_ug, config)


def access_link(gu: GroundUser, uav: UavRelay, config: ScenarioConfig) -> LinkBudget:
    distance = distance_gu_uav(gu.position, uav.position, uav.altitude)
    return link_budget(distance, config.p_ua, config.bw_ua, config)


def backhaul_link(uav: UavRelay, oru: RadioUnit, config: ScenarioConfig) -> LinkBudget:
    distance = distance_uav_oru(uav.position, oru.position, uav.altitude, oru.height)
    return link_budget(distance, config.p_ag, config.bw_ag, config)


def direct_latency(data_size: float, gu: GroundUser, oru: RadioUnit, config: ScenarioConfig) -> float:
    return hop_latency(data_size, direct_link(gu, oru, config))


def relay_latency(
    data_size: float, gu: GroundUser, uav: UavRelay, oru: RadioUnit, config: ScenarioConfig
) -> Tuple[float, float]:
    """(GU -> UAV, UAV -> O-RU) latencies; every relayed GU pays its own backhaul hop."""
    return (
        hop_latency(data_size, access_link(gu, uav, config)),
        hop_latency(data_size, backhaul_link(uav, oru, config)),
    )


def link_ber(gu: GroundUser, target: Union[RadioUnit, UavRelay], config: ScenarioConfig) -> float:
    """BER of the GU's first hop: straight to the O-RU, or up to the relaying UAV."""
    if isinstance(target, UavRelay):
        return access_link(gu, target, config).ber
    return direct_link(gu, target, config).ber
