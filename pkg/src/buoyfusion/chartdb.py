"""Chart-marker storage and field-of-view selection.

Markers live in a CSV snapshot (columns: id, lat, lon, category,
description; header row required, UTF-8).  A loaded MarkerStore is
immutable; reloading swaps the whole store.

Selection keeps a marker iff

    (|bearing| <= fov_half_angle and dist <= d_max) or dist <= d_min

with dist/bearing computed in the camera body frame.  Output is sorted
by marker id so it does not depend on file row order.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

from .geo import (
    EARTH_RADIUS_M,
    CameraPose,
    GeodeticPosition,
    OutOfTangentRange,
    PolarOffset,
    body_to_polar,
    geodetic_to_body,
)

CATEGORIES = ("lateral-red", "lateral-green", "safe-water", "special", "mooring", "other")

# Pre-filter window around the camera, degrees. 0.05 deg of latitude is
# ~5.5 km, ample for the default 1 km selection radius; the window grows
# when d_max asks for more so the exact filter below never loses markers.
PREFILTER_DEG = 0.05

DEFAULT_D_MAX = 1000.0
DEFAULT_D_MIN = 50.0
DEFAULT_FOV_MARGIN = math.radians(10.0)


class ParseError(ValueError):
    """Marker file row that cannot be ingested."""


class DuplicateId(ValueError):
    """Two marker rows share an id."""


@dataclass(frozen=True)
class ChartMarker:
    id: str
    position: GeodeticPosition
    category: str = "other"
    description: str = ""

    def __post_init__(self):
        if not self.id:
            raise ValueError("marker id must be non-empty")
        if self.category not in CATEGORIES:
            raise ValueError(f"unknown category {self.category!r}")


@dataclass(frozen=True)
class SelectionParams:
    """Field-of-view and range gates for marker selection."""

    fov_half_angle: float = math.radians(30.0) + DEFAULT_FOV_MARGIN
    d_max: float = DEFAULT_D_MAX
    d_min: float = DEFAULT_D_MIN

    def __post_init__(self):
        if not 0.0 < self.fov_half_angle <= math.pi:
            raise ValueError("fov_half_angle must be in (0, pi]")
        if self.d_max <= 0.0:
            raise ValueError("d_max must be positive")
        if self.d_min < 0.0 or self.d_min > self.d_max:
            raise ValueError("need 0 <= d_min <= d_max")


@dataclass(frozen=True)
class BuoyQuery:
    """One selected marker expressed as a polar decoder query."""

    marker_id: str
    polar: PolarOffset


@dataclass(frozen=True)
class MarkerStore:
    markers: tuple[ChartMarker, ...]
    _by_id: dict = field(repr=False, compare=False, default_factory=dict)

    def __post_init__(self):
        by_id = {}
        for m in self.markers:
            if m.id in by_id:
                raise DuplicateId(f"duplicate marker id {m.id!r}")
            by_id[m.id] = m
        object.__setattr__(self, "_by_id", by_id)

    def __len__(self):
        return len(self.markers)

    def __iter__(self):
        return iter(self.markers)

    def get(self, marker_id: str) -> ChartMarker | None:
        return self._by_id.get(marker_id)


def load_markers(path: str | Path) -> MarkerStore:
    """Ingest a marker CSV snapshot. Duplicate ids and bad rows reject."""
    path = Path(path)
    markers = []
    with path.open("r", encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None:
            return MarkerStore(markers=())
        required = {"id", "lat", "lon", "category", "description"}
        missing = required - set(reader.fieldnames)
        if missing:
            raise ParseError(f"{path}: header missing columns {sorted(missing)}")
        for row in reader:
            lineno = reader.line_num
            try:
                marker = ChartMarker(
                    id=row["id"].strip(),
                    position=GeodeticPosition(float(row["lat"]), float(row["lon"])),
                    category=row["category"].strip(),
                    description=row["description"],
                )
            except (TypeError, ValueError) as exc:
                raise ParseError(f"{path}:{lineno}: {exc}") from exc
            markers.append(marker)
    return MarkerStore(markers=tuple(markers))


def save_markers(path: str | Path, store: MarkerStore) -> None:
    with Path(path).open("w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["id", "lat", "lon", "category", "description"])
        for m in store:
            writer.writerow([m.id, repr(m.position.lat), repr(m.position.lon), m.category, m.description])


def _prefilter_window_deg(pose: CameraPose, params: SelectionParams) -> tuple[float, float]:
    # Conservative half-windows (lat, lon): never smaller than the reach
    # of the exact distance gates, so the pre-filter is a pure speedup.
    reach_deg = math.degrees(max(params.d_max, params.d_min) / EARTH_RADIUS_M) * 1.5
    dlat = max(PREFILTER_DEG, reach_deg)
    cos_lat = max(math.cos(math.radians(pose.position.lat)), 1e-6)
    return dlat, dlat / cos_lat


def select_markers(
    store: MarkerStore, pose: CameraPose, params: SelectionParams = SelectionParams()
) -> list[BuoyQuery]:
    """Select markers visible from a pose, sorted by marker id."""
    dlat, dlon = _prefilter_window_deg(pose, params)
    lat0, lon0 = pose.position.lat, pose.position.lon
    out = []
    for m in store:
        if abs(m.position.lat - lat0) > dlat:
            continue
        dl = (m.position.lon - lon0 + 180.0) % 360.0 - 180.0
        if abs(dl) > dlon:
            continue
        try:
            polar = body_to_polar(geodetic_to_body(m.position, pose))
        except OutOfTangentRange:
            continue
        in_fov = abs(polar.bearing) <= params.fov_half_angle and polar.dist <= params.d_max
        if in_fov or polar.dist <= params.d_min:
            out.append(BuoyQuery(marker_id=m.id, polar=polar))
    out.sort(key=lambda q: q.marker_id)
    return out
