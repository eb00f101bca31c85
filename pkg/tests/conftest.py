import math

import numpy as np
import pytest

from preoffload.geo import GeoPoint
from preoffload.simenv import ChannelParams, MecServer, Scenario, Task, Vehicle
from preoffload.synthetic import offset_deg

CENTER = (39.9042, 116.4074)


def point_at(east_m: float, north_m: float = 0.0) -> GeoPoint:
    lat, lon = offset_deg(CENTER, east_m, north_m)
    return GeoPoint(float(lat), float(lon))


def line_scenario(n_vehicles=2, server_east=(0.0, 1500.0), local_hz=1e9, server_hz=10e9):
    """Servers strung along an east-west line through CENTER."""
    vehicles = tuple(Vehicle(f"v{i}", local_hz) for i in range(n_vehicles))
    servers = tuple(MecServer(f"s{k}", point_at(e), server_hz) for k, e in enumerate(server_east))
    return Scenario(vehicles, servers, ChannelParams(subchannels=max(n_vehicles, 1)))


def make_task(bits=1e6, cycles=5e8, deadline=2.0, priority=0.5):
    return Task(bits, cycles, deadline, (1.0, 1.0, 0.5), priority)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def scenario():
    return line_scenario()


def straight_track(n: int, east0: float, step_m: float) -> np.ndarray:
    return np.array([[p.lat_deg, p.lon_deg] for p in (point_at(east0 + step_m * i) for i in range(n))])


__all__ = ["CENTER", "point_at", "line_scenario", "make_task", "straight_track", "math"]
