import math

import numpy as np
import pytest

from channel import (
    UNUSABLE_LATENCY,
    LinkBudget,
    bpsk_ber,
    direct_latency,
    distance_gu_oru,
    distance_gu_uav,
    distance_uav_oru,
    hop_latency,
    link_ber,
    link_budget,
    relay_latency,
)
from conftest import make_gu, make_oru, make_uav
from scenario import ScenarioConfig


def test_ber_at_zero_snr_is_one_half():
    assert bpsk_ber(0.0) == 0.5


def test_ber_at_snr_four():
    assert bpsk_ber(4.0) == pytest.approx(2.338867e-3, rel=1e-6)


def test_ber_stays_positive_for_large_snr():
    ber = bpsk_ber(600.0)
    assert 0.0 < ber < 1e-250


def test_distances_are_three_dimensional():
    assert distance_gu_oru((0.0, 0.0), (30.0, 40.0), 10.0) == pytest.approx(math.hypot(10.0, 50.0))
    assert distance_gu_uav((5.0, 5.0), (5.0, 5.0), 100.0) == pytest.approx(100.0)
    assert distance_uav_oru((0.0, 0.0), (0.0, 0.0), 100.0, 10.0) == pytest.approx(90.0)


def test_link_budget_follows_shannon_rate():
    config = ScenarioConfig()
    budget = link_budget(100.0, 1.0, 50e6, config)
    assert budget.gain == pytest.approx(1e-10)
    assert budget.snr == pytest.approx(1000.0)
    assert budget.rate == pytest.approx(50e6 * math.log2(1001.0))
    assert budget.ber == bpsk_ber(budget.snr)


def test_zero_distance_is_rejected():
    with pytest.raises(ValueError):
        link_budget(0.0, 1.0, 50e6, ScenarioConfig())


def test_zero_rate_hop_is_unusable():
    dead = LinkBudget(distance=1.0, gain=0.0, snr=0.0, rate=0.0, ber=0.5)
    assert hop_latency(1024, dead) == UNUSABLE_LATENCY


def test_relay_pays_two_hops():
    config = ScenarioConfig()
    gu = make_gu(0, (20.0, 20.0))
    oru = make_oru(0, (80.0, 80.0))
    uav = make_uav(0, (50.0, 50.0))
    first, second = relay_latency(gu.data_size, gu, uav, oru, config)
    assert first > 0 and second > 0
    assert direct_latency(gu.data_size, gu, oru, config) > 0


def test_link_ber_picks_the_first_hop():
    config = ScenarioConfig()
    gu = make_gu(0, (0.0, 0.0))
    oru = make_oru(0, (300.0, 0.0))
    uav = make_uav(0, (0.0, 0.0))
    direct = link_budget(distance_gu_oru(gu.position, oru.position, oru.height), config.p_ug, config.bw_ug, config)
    access = link_budget(100.0, config.p_ua, config.bw_ua, config)
    assert link_ber(gu, oru, config) == direct.ber
    assert link_ber(gu, uav, config) == access.ber
    assert 0.0 < direct.ber < config.ber_max * 1e30
    assert access.ber < direct.ber


def test_distances_are_symmetric_in_the_ground_plane():
    rng = np.random.default_rng(8)
    for _ in range(200):
        a = tuple(rng.uniform(0.0, 400.0, size=2))
        b = tuple(rng.uniform(0.0, 400.0, size=2))
        assert distance_gu_oru(a, b, 15.0) == distance_gu_oru(b, a, 15.0)
        assert distance_gu_uav(a, b, 100.0) == distance_gu_uav(b, a, 100.0)
        assert distance_uav_oru(a, b, 100.0, 15.0) == distance_uav_oru(b, a, 100.0, 15.0)


def test_hop_latency_is_lowest_straight_overhead():
    config = ScenarioConfig()
    rng = np.random.default_rng(9)
    data = 8 * 2**20
    height = config.oru_height
    overhead = hop_latency(data, link_budget(height, config.p_ug, config.bw_ug, config))
    for _ in range(200):
        a = tuple(rng.uniform(0.0, 100.0, size=2))
        b = tuple(rng.uniform(0.0, 100.0, size=2))
        distance = distance_gu_oru(a, b, height)
        assert distance >= height
        assert hop_latency(data, link_budget(distance, config.p_ug, config.bw_ug, config)) >= overhead
    assert distance_gu_oru((3.0, 4.0), (3.0, 4.0), height) == height
