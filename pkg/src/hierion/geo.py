"""WGS84 points and great-circle distance for radius-based discovery."""

from __future__ import annotations

import math
import re
from dataclasses import dataclass

EARTH_RADIUS_KM = 6371.0088

_POINT_RE = re.compile(
    r"^\s*POINT\s*\(\s*(-?\d+(?:\.\d+)?(?:[eE][+-]?\d+)?)\s+"
    r"(-?\d+(?:\.\d+)?(?:[eE][+-]?\d+)?)\s*\)\s*$"
)


class GeoError(ValueError):
    pass


@dataclass(frozen=True)
class GeoPoint:
    """A WGS84 coordinate; longitude first, matching the st_point builtin."""

    lon: float
    lat: float

    def __post_init__(self):
        if not -180.0 <= self.lon <= 180.0:
            raise GeoError(f"longitude out of range: {self.lon}")
        if not -90.0 <= self.lat <= 90.0:
            raise GeoError(f"latitude out of range: {self.lat}")

    def wkt(self) -> str:
        return f"POINT({self.lon!r} {self.lat!r})"


def parse_point(text: str) -> GeoPoint:
    """Parse a `POINT(lon lat)` literal."""
    m = _POINT_RE.match(text)
    if m is None:
        raise GeoError(f"not a POINT(lon lat) literal: {text!r}")
    return GeoPoint(float(m.group(1)), float(m.group(2)))


def haversine_km(a: GeoPoint, b: GeoPoint) -> float:
    """Great-circle distance in kilometres on the mean-radius sphere."""
    lat1 = math.radians(a.lat)
    lat2 = math.radians(b.lat)
    dlat = lat2 - lat1
    dlon = math.radians(b.lon - a.lon)
    h = math.sin(dlat / 2.0) ** 2 + math.cos(lat1) * math.cos(lat2) * math.sin(dlon / 2.0) ** 2
    return 2.0 * EARTH_RADIUS_KM * math.asin(min(1.0, math.sqrt(h)))


def within_radius(point: GeoPoint, center: GeoPoint, radius_km: float) -> bool:
    if radius_km < 0:
        raise GeoError(f"negative radius: {radius_km}")
    return haversine_km(point, center) <= radius_km
