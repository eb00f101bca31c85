"""Synthetic tracks and station layouts for runs without field data."""

from __future__ import annotations

import math

import numpy as np

from .data import Trajectory
from .geo import EARTH_RADIUS_M, GeoPoint

EPOCH0 = 1_224_000_000.0  # late 2008, the Geolife collection period


def offset_deg(center: tuple[float, float], east_m, north_m) -> tuple[np.ndarray, np.ndarray]:
    """Small-offset conversion from local metres to latitude/longitude."""
    lat0, lon0 = center
    lat = lat0 + np.degrees(np.asarray(north_m) / EARTH_RADIUS_M)
    lon = lon0 + np.degrees(np.asarray(east_m) / (EARTH_RADIUS_M * math.cos(math.radians(lat0))))
    return lat, lon


def sinusoid_track(n: int = 2000, noise: float = 0.01, seed: int = 0, period: int = 200,
                   center: tuple[float, float] = (39.9042, 116.4074), amplitude_m: float = 500.0,
                   step_m: float = 10.0, interval_s: float = 1.0, vehicle_id: str = "sine") -> Trajectory:
    """Eastward drive with a sinusoidal north-south weave.

    ``noise`` is the Gaussian noise std as a fraction of each coordinate's
    span over the whole track.
    """
    rng = np.random.default_rng(seed)
    k = np.arange(n)
    east = k * step_m
    north = amplitude_m * np.sin(2.0 * math.pi * k / period)
    east = east + rng.normal(0.0, noise * np.ptp(east), n)
    north = north + rng.normal(0.0, noise * np.ptp(north), n)
    lat, lon = offset_deg(center, east, north)
    return Trajectory(vehicle_id, lat, lon, EPOCH0 + k * interval_s)


def loop_track(center: tuple[float, float], semi_major_m: float, semi_minor_m: float, rotation: float,
               points_per_loop: int, loops: int, noise_m: float = 2.0, phase: float = 0.0,
               speed_wobble: float = 0.15, seed: int = 0, interval_s: float = 1.0,
               vehicle_id: str = "loop") -> Trajectory:
    """A vehicle circling a rotated elliptical route at a wobbling speed.

    The route is exactly periodic in ``points_per_loop`` (plus GPS noise),
    so replaying the track cyclically has no seam.
    """
    rng = np.random.default_rng(seed)
    n = points_per_loop * loops
    u = 2.0 * math.pi * np.arange(n) / points_per_loop
    theta = u + speed_wobble * np.sin(3.0 * u) + phase
    x = semi_major_m * np.cos(theta)
    y = semi_minor_m * np.sin(theta)
    c, s = math.cos(rotation), math.sin(rotation)
    east = c * x - s * y + rng.normal(0.0, noise_m, n)
    north = s * x + c * y + rng.normal(0.0, noise_m, n)
    lat, lon = offset_deg(center, east, north)
    return Trajectory(vehicle_id, lat, lon, EPOCH0 + np.arange(n) * interval_s)


def station_grid(center: tuple[float, float], n: int, spacing_m: float) -> list[GeoPoint]:
    """``n`` stations on a two-row grid centred on ``center``."""
    cols = math.ceil(n / 2) if n > 1 else 1
    rows = 2 if n > 1 else 1
    pts = []
    for r in range(rows):
        for col in range(cols):
            if len(pts) == n:
                break
            east = (col - (cols - 1) / 2.0) * spacing_m
            north = (r - (rows - 1) / 2.0) * spacing_m
            lat, lon = offset_deg(center, east, north)
            pts.append(GeoPoint(float(lat), float(lon)))
    return pts


def stations_csv(points: list[GeoPoint]) -> str:
    lines = ["id,lat,lon"] + [f"s{k},{p.lat_deg!r},{p.lon_deg!r}" for k, p in enumerate(points)]
    return "\n".join(lines) + "\n"
