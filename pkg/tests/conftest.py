import os
import sys
from typing import Optional, Sequence, Tuple

import pytest

sys.path.insert(0, os.path.join(os.path.dirname(__file__), ".."))

from scenario import GroundUser, RadioUnit, ScenarioConfig, UavRelay, WorldState  # noqa: E402

REPO_ROOT = os.path.abspath(os.path.join(os.path.dirname(__file__), ".."))
DEFAULT_CONF = os.path.join(REPO_ROOT, "scenario.conf")
MEGABYTE = 8 * 2**20


def pytest_addoption(parser):
    parser.addoption("--run-slow", action="store_true", default=False, help="Run long training checks.")


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: long-running check, needs --run-slow")


def pytest_collection_modifyitems(config, items):
    if config.getoption("--run-slow"):
        return
    skip = pytest.mark.skip(reason="needs --run-slow")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip)


@pytest.fixture(autouse=True)
def _no_uavsim_environment(monkeypatch):
    for name in list(os.environ):
        if name.startswith("UAVSIM_") or name == "SOURCE_DATE_EPOCH":
            monkeypatch.delenv(name)


@pytest.fixture
def roomy_config() -> ScenarioConfig:
    """Defaults with compute budgets and batteries large enough for any key."""
    return ScenarioConfig(
        compute_budget_min=1e12,
        compute_budget_max=2e12,
        battery_min=1e6,
        battery_max=2e6,
    )


def make_gu(
    index: int,
    position: Tuple[float, float],
    data_size: int = MEGABYTE,
    clock: float = 2.0e9,
    battery: float = 1e6,
    compute_budget: float = 1e12,
) -> GroundUser:
    return GroundUser(
        id=index,
        position=position,
        clock=clock,
        battery_capacity=battery,
        battery_remaining=battery,
        compute_budget=compute_budget,
        data_size=data_size,
    )


def make_oru(
    index: int,
    position: Tuple[float, float],
    requirement: int = 6,
    resource_blocks: int = 3,
    clock: float = 3.6e9,
) -> RadioUnit:
    return RadioUnit(
        id=index,
        position=position,
        height=10.0,
        clock=clock,
        security_requirement=requirement,
        resource_blocks=resource_blocks,
    )


def make_uav(index: int, position: Tuple[float, float], resource_blocks: int = 3) -> UavRelay:
    return UavRelay(
        id=index,
        position=position,
        altitude=100.0,
        resource_blocks=resource_blocks,
        prev_position=position,
    )


def make_state(
    gus: Sequence[GroundUser],
    orus: Sequence[RadioUnit],
    uavs: Optional[Sequence[UavRelay]] = None,
) -> WorldState:
    return WorldState(t=0, gus=list(gus), orus=list(orus), uavs=list(uavs or []))
