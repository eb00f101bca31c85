"""Great-circle distance and min-max scaling primitives."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

# Mean Earth radius, meters. Deliberately not configurable.
EARTH_RADIUS_M = 6_371_000.0


@dataclass(frozen=True, slots=True)
class GeoPoint:
    """A latitude/longitude pair in decimal degrees."""

    lat_deg: float
    lon_deg: float

    def __post_init__(self) -> None:
        if not (math.isfinite(self.lat_deg) and math.isfinite(self.lon_deg)):
            raise ValueError(f"non-finite coordinate ({self.lat_deg}, {self.lon_deg})")
        if not -90.0 <= self.lat_deg <= 90.0:
            raise ValueError(f"latitude {self.lat_deg} outside [-90, 90]")
        if not -180.0 <= self.lon_deg <= 180.0:
            raise ValueError(f"longitude {self.lon_deg} outside [-180, 180]")


def haversine_distance(a: GeoPoint, b: GeoPoint) -> float:
    """Great-circle distance in meters (atan2 form, spherical Earth)."""
    return float(haversine_m(a.lat_deg, a.lon_deg, b.lat_deg, b.lon_deg))


def haversine_m(lat1, lon1, lat2, lon2):
    """Vectorised haversine over degree arrays; broadcasts like numpy."""
    phi1 = np.radians(lat1)
    phi2 = np.radians(lat2)
    dphi = phi2 - phi1
    dlam = np.radians(np.asarray(lon2) - np.asarray(lon1))
    a = np.sin(dphi / 2.0) ** 2 + np.cos(phi1) * np.cos(phi2) * np.sin(dlam / 2.0) ** 2
    # rounding can push a a hair outside [0, 1] near antipodes
    a = np.clip(a, 0.0, 1.0)
    c = 2.0 * np.arctan2(np.sqrt(a), np.sqrt(1.0 - a))
    return EARTH_RADIUS_M * c


@dataclass(frozen=True, slots=True)
class NormalizationBounds:
    d_min: float
    d_max: float

    def __post_init__(self) -> None:
        if not (math.isfinite(self.d_min) and math.isfinite(self.d_max)):
            raise ValueError("normalization bounds must be finite")
        if not self.d_max > self.d_min:
            raise ValueError(f"degenerate bounds: d_max={self.d_max} must exceed d_min={self.d_min}")

    @property
    def span(self) -> float:
        return self.d_max - self.d_min

    @classmethod
    def of(cls, values) -> NormalizationBounds:
        arr = np.asarray(values, dtype=float)
        return cls(float(arr.min()), float(arr.max()))


def normalize(x, b: NormalizationBounds):
    """Min-max scale ``x`` into the unit interval of ``b``.

    Values outside the bounds map linearly past 0 or 1; callers decide
    whether that matters.
    """
    return (x - b.d_min) / (b.d_max - b.d_min)


def denormalize(u, b: NormalizationBounds):
    return b.d_min + u * (b.d_max - b.d_min)
