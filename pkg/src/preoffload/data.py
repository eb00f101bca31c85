"""Trajectory and base-station ingestion, cleaning and windowing."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from datetime import datetime, timezone
from typing import Sequence

import numpy as np

from .geo import GeoPoint, NormalizationBounds, haversine_m, normalize

PLT_HEADER_LINES = 6
DEFAULT_MAX_SPEED_MPS = 50.0
# Half-width (degrees) used when a coordinate never varies along a track.
_FLAT_PAD_DEG = 1e-6


class DataError(ValueError):
    """Raised for malformed or unusable input data."""


@dataclass(frozen=True, slots=True)
class TrajectoryRecord:
    position: GeoPoint
    timestamp: float


@dataclass
class Trajectory:
    """A vehicle track held column-wise (degrees, epoch seconds)."""

    vehicle_id: str
    lat: np.ndarray
    lon: np.ndarray
    time: np.ndarray

    def __post_init__(self) -> None:
        self.lat = np.asarray(self.lat, dtype=float)
        self.lon = np.asarray(self.lon, dtype=float)
        self.time = np.asarray(self.time, dtype=float)
        if not (self.lat.shape == self.lon.shape == self.time.shape) or self.lat.ndim != 1:
            raise DataError("trajectory columns must be 1-D and equally long")

    def __len__(self) -> int:
        return len(self.lat)

    @property
    def records(self) -> list[TrajectoryRecord]:
        return [
            TrajectoryRecord(GeoPoint(float(a), float(o)), float(t))
            for a, o, t in zip(self.lat, self.lon, self.time)
        ]

    @property
    def coords(self) -> np.ndarray:
        """(T, 2) array of [lat, lon]."""
        return np.column_stack([self.lat, self.lon])

    def point(self, i: int) -> GeoPoint:
        return GeoPoint(float(self.lat[i]), float(self.lon[i]))

    @classmethod
    def from_records(cls, vehicle_id: str, records: Sequence[TrajectoryRecord]) -> Trajectory:
        return cls(
            vehicle_id,
            [r.position.lat_deg for r in records],
            [r.position.lon_deg for r in records],
            [r.timestamp for r in records],
        )


@dataclass
class WindowedDataset:
    """Supervised next-position samples in normalized coordinates.

    ``inputs`` is (W, seq_len, 2), ``targets`` is (W, 2); column 0 is
    latitude and column 1 longitude.
    """

    inputs: np.ndarray
    targets: np.ndarray
    bounds: tuple[NormalizationBounds, NormalizationBounds]
    target_times: np.ndarray = field(default=None)  # type: ignore[assignment]

    def __post_init__(self) -> None:
        if self.target_times is None:
            self.target_times = np.arange(len(self.targets), dtype=float)

    def __len__(self) -> int:
        return len(self.targets)

    @property
    def seq_len(self) -> int:
        return self.inputs.shape[1]

    def subset(self, idx) -> WindowedDataset:
        return WindowedDataset(self.inputs[idx], self.targets[idx], self.bounds, self.target_times[idx])


@dataclass(frozen=True, slots=True)
class Station:
    id: str
    position: GeoPoint
    capacity_hz: float
    range_m: float


@dataclass
class StationSnapshot:
    stations: list[Station]

    def __post_init__(self) -> None:
        ids = [s.id for s in self.stations]
        if len(set(ids)) != len(ids):
            raise DataError("duplicate station id")
        for s in self.stations:
            if not (s.capacity_hz > 0 and s.range_m > 0):
                raise DataError(f"station {s.id}: capacity and range must be positive")

    def __len__(self) -> int:
        return len(self.stations)


def _plt_timestamp(date: str, clock: str) -> float:
    dt = datetime.strptime(f"{date.strip()} {clock.strip()}", "%Y-%m-%d %H:%M:%S")
    return dt.replace(tzinfo=timezone.utc).timestamp()


def parse_plt(file_content: str, vehicle_id: str = "0") -> Trajectory:
    """Parse a Geolife ``.plt`` file.

    Layout: six header lines, then ``lat,lon,0,altitude,days,date,time``.
    Records come back sorted by timestamp (stable); duplicates are left for
    :func:`clean`.
    """
    lines = file_content.splitlines()
    lats, lons, times = [], [], []
    for lineno, line in enumerate(lines[PLT_HEADER_LINES:], start=PLT_HEADER_LINES + 1):
        if not line.strip():
            continue
        parts = line.split(",")
        if len(parts) != 7:
            raise DataError(f"line {lineno}: expected 7 fields, got {len(parts)}")
        try:
            lat, lon = float(parts[0]), float(parts[1])
            ts = _plt_timestamp(parts[5], parts[6])
            GeoPoint(lat, lon)
        except ValueError as exc:
            raise DataError(f"line {lineno}: {exc}") from None
        lats.append(lat)
        lons.append(lon)
        times.append(ts)
    if not lats:
        raise DataError("no records")
    order = np.argsort(np.asarray(times), kind="stable")
    return Trajectory(vehicle_id, np.asarray(lats)[order], np.asarray(lons)[order], np.asarray(times)[order])


def clean(t: Trajectory, max_speed: float = DEFAULT_MAX_SPEED_MPS) -> Trajectory:
    """Drop duplicate timestamps and speed outliers.

    Each record is compared against the last *kept* record, so a single
    spike removes only itself. The first record is always kept.
    """
    if len(t) < 2:
        raise DataError("trajectory degenerate after cleaning")
    keep = [0]
    for i in range(1, len(t)):
        j = keep[-1]
        dt = t.time[i] - t.time[j]
        if dt <= 0:
            continue
        dist = haversine_m(t.lat[j], t.lon[j], t.lat[i], t.lon[i])
        if dist / dt > max_speed:
            continue
        keep.append(i)
    if len(keep) < 2:
        raise DataError("trajectory degenerate after cleaning")
    idx = np.asarray(keep)
    return Trajectory(t.vehicle_id, t.lat[idx], t.lon[idx], t.time[idx])


def coordinate_bounds(coords: np.ndarray) -> tuple[NormalizationBounds, NormalizationBounds]:
    out = []
    for dim in range(2):
        lo, hi = float(coords[:, dim].min()), float(coords[:, dim].max())
        if hi <= lo:
            lo, hi = lo - _FLAT_PAD_DEG, hi + _FLAT_PAD_DEG
        out.append(NormalizationBounds(lo, hi))
    return out[0], out[1]


def normalize_coords(coords: np.ndarray, bounds) -> np.ndarray:
    coords = np.asarray(coords, dtype=float)
    return np.stack([normalize(coords[..., 0], bounds[0]), normalize(coords[..., 1], bounds[1])], axis=-1)


def sliding_windows(series: np.ndarray, seq_len: int) -> tuple[np.ndarray, np.ndarray]:
    """Stride-1 windows of ``seq_len`` rows, each paired with the next row."""
    n = len(series) - seq_len
    idx = np.arange(seq_len)[None, :] + np.arange(n)[:, None]
    return series[idx], series[seq_len:]


def build_windows(t: Trajectory, seq_len: int = 8) -> WindowedDataset:
    if seq_len < 1:
        raise DataError("seq_len must be >= 1")
    if len(t) < seq_len + 1:
        raise DataError(f"need at least {seq_len + 1} records for seq_len {seq_len}, got {len(t)}")
    coords = t.coords
    bounds = coordinate_bounds(coords)
    norm = normalize_coords(coords, bounds)
    inputs, targets = sliding_windows(norm, seq_len)
    return WindowedDataset(inputs, targets, bounds, t.time[seq_len:].copy())


def split(d: WindowedDataset, train_fraction: float) -> tuple[WindowedDataset, WindowedDataset]:
    """Chronological train/test split (no shuffling)."""
    if not 0.0 < train_fraction < 1.0:
        raise DataError(f"train_fraction must lie in (0, 1), got {train_fraction}")
    n_train = math.floor(len(d) * train_fraction + 1e-9)
    if n_train < 1 or n_train >= len(d):
        raise DataError(f"split of {len(d)} windows at {train_fraction} leaves an empty share")
    return d.subset(slice(0, n_train)), d.subset(slice(n_train, None))


def parse_stations(
    file_content: str,
    default_capacity_hz: float | Sequence[float],
    default_range_m: float,
) -> StationSnapshot:
    """Read a station CSV (``lat``, ``lon`` required; ``id``, ``capacity_hz``,
    ``range_m`` optional).

    ``default_capacity_hz`` may be one value or one value per row.
    """
    reader = csv.DictReader(io.StringIO(file_content))
    cols = {c.strip() for c in (reader.fieldnames or [])}
    for required in ("lat", "lon"):
        if required not in cols:
            raise DataError(f"station file missing column '{required}'")
    rows = [{k.strip(): (v or "").strip() for k, v in row.items() if k is not None} for row in reader]
    if np.ndim(default_capacity_hz) == 0:
        caps = [float(default_capacity_hz)] * len(rows)  # type: ignore[arg-type]
    else:
        caps = [float(c) for c in default_capacity_hz]  # type: ignore[union-attr]
        if len(caps) < len(rows):
            raise DataError(f"{len(rows)} stations but only {len(caps)} default capacities")
    stations = []
    for i, row in enumerate(rows):
        lineno = i + 2
        try:
            pos = GeoPoint(float(row["lat"]), float(row["lon"]))
            cap = float(row["capacity_hz"]) if row.get("capacity_hz") else caps[i]
            rng = float(row["range_m"]) if row.get("range_m") else float(default_range_m)
        except ValueError as exc:
            raise DataError(f"station line {lineno}: {exc}") from None
        stations.append(Station(row.get("id") or str(i), pos, cap, rng))
    return StationSnapshot(stations)
