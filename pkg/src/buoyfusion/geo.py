"""Geodetic to ship-body coordinate conversions.

Every other module compares chart markers and camera detections in the
same vessel-fixed frame, so the conventions are pinned here once:

Body frame (right-handed):
    x_b: forward, along the vessel heading (meters)
    y_b: to port, i.e. left when facing forward (meters)
    z_b: up (meters); chart markers sit on the water plane, z_b = 0

Bearing:
    horizontal angle from the forward axis to the target, radians,
    wrapped to [-pi, pi), positive toward port.  An object right of
    the image center therefore has a negative bearing.

Geodetic deltas are mapped to local east/north meters with an
equirectangular tangent-plane approximation around the camera
position.  Marker selection works at ranges of about a kilometer,
where the approximation error is below 0.01%; inputs further than
one degree away are rejected rather than silently degraded.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

# WGS84 equatorial radius, meters.
EARTH_RADIUS_M = 6_378_137.0

_DEG = math.pi / 180.0


class OutOfTangentRange(ValueError):
    """Marker too far from the camera for the tangent-plane approximation."""


def wrap_angle(a: float) -> float:
    """Wrap an angle in radians into [-pi, pi).

    The output differs from the input by an exact integer multiple of
    2*pi (up to floating-point rounding); +pi maps to -pi.
    """
    if not math.isfinite(a):
        raise ValueError(f"angle must be finite, got {a!r}")
    wrapped = math.fmod(a + math.pi, 2.0 * math.pi)
    if wrapped < 0.0:
        wrapped += 2.0 * math.pi
    return wrapped - math.pi


def wrap_degrees(d: float) -> float:
    """Wrap degrees into [-180, 180)."""
    if not math.isfinite(d):
        raise ValueError(f"degrees must be finite, got {d!r}")
    wrapped = math.fmod(d + 180.0, 360.0)
    if wrapped < 0.0:
        wrapped += 360.0
    return wrapped - 180.0


@dataclass(frozen=True)
class GeodeticPosition:
    """A latitude/longitude pair in degrees.

    Longitude is wrapped modulo 360 into [-180, 180) on construction;
    latitude outside [-90, 90] is an error.
    """

    lat: float
    lon: float

    def __post_init__(self) -> None:
        if not (math.isfinite(self.lat) and math.isfinite(self.lon)):
            raise ValueError("latitude and longitude must be finite")
        if not -90.0 <= self.lat <= 90.0:
            raise ValueError(f"latitude {self.lat} outside [-90, 90]")
        object.__setattr__(self, "lon", wrap_degrees(self.lon))


@dataclass(frozen=True)
class BodyFramePoint:
    """A point in the vessel body frame (x forward, y port, z up), meters."""

    x_b: float
    y_b: float
    z_b: float = 0.0


@dataclass(frozen=True)
class CameraPose:
    """Vessel/camera state for one frame.

    heading: degrees clockwise from true north, normalized to [0, 360).
    roll/pitch: degrees; they do not enter the geodetic transform (markers
    live on the water plane) and only matter for the camera extrinsics.
    height: camera mount height above the water, meters.
    """

    position: GeodeticPosition
    heading: float
    roll: float = 0.0
    pitch: float = 0.0
    height: float = 2.0
    timestamp: float = 0.0

    def __post_init__(self) -> None:
        for name in ("heading", "roll", "pitch", "height", "timestamp"):
            if not math.isfinite(getattr(self, name)):
                raise ValueError(f"{name} must be finite")
        if self.height < 0.0:
            raise ValueError(f"height must be >= 0, got {self.height}")
        object.__setattr__(self, "heading", self.heading % 360.0)


@dataclass(frozen=True)
class PolarOffset:
    """Distance (meters) and relative bearing (radians, [-pi, pi))."""

    dist: float
    bearing: float = field(default=0.0)

    def __post_init__(self) -> None:
        if not math.isfinite(self.dist) or self.dist < 0.0:
            raise ValueError(f"dist must be finite and >= 0, got {self.dist}")
        object.__setattr__(self, "bearing", wrap_angle(self.bearing))


def geodetic_to_body(marker: GeodeticPosition, pose: CameraPose) -> BodyFramePoint:
    """Transform a chart marker position into the vessel body frame.

    Uses the local equirectangular approximation around the camera:
    east  = dlon * cos(lat) * R * pi/180, north = dlat * R * pi/180,
    then rotates east/north by the heading into body axes.  The marker
    is assumed to float on the water plane, so z_b = 0.

    Raises OutOfTangentRange when the marker is a degree or more away
    in latitude or longitude.
    """
    dlat = marker.lat - pose.position.lat
    dlon = wrap_degrees(marker.lon - pose.position.lon)
    if abs(dlat) >= 1.0 or abs(dlon) >= 1.0:
        raise OutOfTangentRange(
            f"marker offset ({dlat:.4f} deg, {dlon:.4f} deg) exceeds the "
            f"1 degree tangent-plane limit"
        )
    north = dlat * _DEG * EARTH_RADIUS_M
    east = dlon * _DEG * math.cos(pose.position.lat * _DEG) * EARTH_RADIUS_M
    h = pose.heading * _DEG
    sin_h, cos_h = math.sin(h), math.cos(h)
    x_b = north * cos_h + east * sin_h
    y_b = north * sin_h - east * cos_h
    return BodyFramePoint(x_b=x_b, y_b=y_b, z_b=0.0)


def body_to_polar(p: BodyFramePoint) -> PolarOffset:
    """Ground distance and relative bearing of a body-frame point.

    Distance is the 2-D ground distance sqrt(x_b^2 + y_b^2); z_b is
    ignored because markers sit on the water plane.  The origin maps
    to (dist 0, bearing 0) by convention.
    """
    dist = math.hypot(p.x_b, p.y_b)
    if dist == 0.0:
        return PolarOffset(dist=0.0, bearing=0.0)
    return PolarOffset(dist=dist, bearing=wrap_angle(math.atan2(p.y_b, p.x_b)))


def polar_to_body(po: PolarOffset) -> BodyFramePoint:
    """Inverse of body_to_polar, back onto the water plane (z_b = 0)."""
    b = po.bearing
    return BodyFramePoint(
        x_b=po.dist * math.cos(b), y_b=po.dist * math.sin(b), z_b=0.0
    )


def body_to_geodetic(p: BodyFramePoint, pose: CameraPose) -> GeodeticPosition:
    """Place a body-frame water-plane point back onto the chart.

    Exact inverse of geodetic_to_body under the same equirectangular
    approximation: the heading rotation is undone, then north/east are
    divided back out using cos(lat) at the camera.  Used to synthesise
    marker positions from desired polar offsets.
    """
    h = pose.heading * _DEG
    sin_h, cos_h = math.sin(h), math.cos(h)
    north = p.x_b * cos_h + p.y_b * sin_h
    east = p.x_b * sin_h - p.y_b * cos_h
    dlat = north / (_DEG * EARTH_RADIUS_M)
    dlon = east / (_DEG * math.cos(pose.position.lat * _DEG) * EARTH_RADIUS_M)
    return GeodeticPosition(
        lat=pose.position.lat + dlat,
        lon=wrap_degrees(pose.position.lon + dlon),
    )
