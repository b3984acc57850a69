"""Pinhole camera model: pixel rays, water-plane intersection, bearings.

Frames and conventions (documented once, used everywhere):

Camera frame: x right, y down, z forward along the optical axis.
Body frame:   x forward, y port, z up (see geo module).

The fixed axis permutation between them maps camera z to body x,
camera x to body -y and camera y to body -z.  Mount attitude is an
intrinsic Z(yaw)-Y(pitch)-X(roll) Euler rotation applied on top of
that permutation; angles are right-handed rotations about the body
axes, so positive yaw turns the view to port and positive pitch tilts
it down toward the water.

Intrinsics keep the pixel-scale factor f_s and focal length f_l as
separate fields to mirror the ray equations they come from; only the
product f_px = f_s * f_l ever matters.  Rays through a pixel (u, v)
point along [ (u - u0)/f_s, (v - v0)/f_s, f_l ] in camera axes.

Intrinsics plus the camera mount position are persisted as a
"key = value" calibration text file with keys u0, v0, fs, fl,
image_w, image_h, mount_x, mount_y, mount_z.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .geo import BodyFramePoint

# Rays with a downward component smaller than this never meet the water.
HORIZON_EPS = 1e-9

# Columns are the body-frame images of the camera x, y, z axes.
CAM_TO_BODY = np.array(
    [
        [0.0, 0.0, 1.0],
        [-1.0, 0.0, 0.0],
        [0.0, -1.0, 0.0],
    ]
)


class HorizonRay(ValueError):
    """The cast ray runs parallel to or above the water plane."""


class BehindCamera(ValueError):
    """The point lies behind the image plane and has no projection."""


@dataclass(frozen=True)
class CameraIntrinsics:
    """Principal point, pixel scale, focal length and image size."""

    u_0: float
    v_0: float
    f_s: float
    f_l: float
    image_w: int
    image_h: int

    def __post_init__(self) -> None:
        if self.f_s <= 0.0 or self.f_l <= 0.0:
            raise ValueError("f_s and f_l must be positive")
        if not (0.0 <= self.u_0 < self.image_w):
            raise ValueError(f"u_0 {self.u_0} outside [0, {self.image_w})")
        if not (0.0 <= self.v_0 < self.image_h):
            raise ValueError(f"v_0 {self.v_0} outside [0, {self.image_h})")

    @property
    def f_px(self) -> float:
        """Focal length in pixels, f_s * f_l."""
        return self.f_s * self.f_l

    @property
    def horizontal_fov(self) -> float:
        """Full horizontal field of view in radians."""
        return 2.0 * math.atan(self.image_w / (2.0 * self.f_px))


@dataclass(frozen=True)
class CameraExtrinsics:
    """Rigid transform camera -> ship: rotation matrix and camera origin."""

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self) -> None:
        rot = np.asarray(self.rotation, dtype=np.float64)
        trans = np.asarray(self.translation, dtype=np.float64)
        if rot.shape != (3, 3) or trans.shape != (3,):
            raise ValueError("rotation must be 3x3 and translation a 3-vector")
        if not np.allclose(rot.T @ rot, np.eye(3), atol=1e-9):
            raise ValueError("rotation is not orthonormal")
        if not math.isclose(float(np.linalg.det(rot)), 1.0, abs_tol=1e-9):
            raise ValueError("rotation determinant must be +1")
        object.__setattr__(self, "rotation", rot)
        object.__setattr__(self, "translation", trans)


@dataclass(frozen=True)
class BoundingBox:
    """Center/extent box, optionally in normalized [0, 1] coordinates."""

    c_x: float
    c_y: float
    w: float
    h: float
    score: float = 1.0
    normalized: bool = False

    def __post_init__(self) -> None:
        if self.w <= 0.0 or self.h <= 0.0:
            raise ValueError(f"box extents must be positive, got w={self.w} h={self.h}")
        if not 0.0 <= self.score <= 1.0:
            raise ValueError(f"score {self.score} outside [0, 1]")

    def to_pixels(self, intr: CameraIntrinsics) -> "BoundingBox":
        if not self.normalized:
            return self
        return replace(
            self,
            c_x=self.c_x * intr.image_w,
            c_y=self.c_y * intr.image_h,
            w=self.w * intr.image_w,
            h=self.h * intr.image_h,
            normalized=False,
        )

    def to_normalized(self, intr: CameraIntrinsics) -> "BoundingBox":
        if self.normalized:
            return self
        return replace(
            self,
            c_x=self.c_x / intr.image_w,
            c_y=self.c_y / intr.image_h,
            w=self.w / intr.image_w,
            h=self.h / intr.image_h,
            normalized=True,
        )

    def clamped_to_image(self, intr: CameraIntrinsics) -> "BoundingBox":
        """Clip the box to the image rectangle, keeping extents positive."""
        box = self.to_pixels(intr)
        x0 = min(max(box.c_x - box.w / 2.0, 0.0), intr.image_w)
        x1 = min(max(box.c_x + box.w / 2.0, 0.0), intr.image_w)
        y0 = min(max(box.c_y - box.h / 2.0, 0.0), intr.image_h)
        y1 = min(max(box.c_y + box.h / 2.0, 0.0), intr.image_h)
        if x1 - x0 <= 0.0 or y1 - y0 <= 0.0:
            raise ValueError("box lies entirely outside the image")
        return replace(
            box,
            c_x=(x0 + x1) / 2.0,
            c_y=(y0 + y1) / 2.0,
            w=x1 - x0,
            h=y1 - y0,
        )


def _rot_x(a: float) -> np.ndarray:
    c, s = math.cos(a), math.sin(a)
    return np.array([[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]])


def _rot_y(a: float) -> np.ndarray:
    c, s = math.cos(a), math.sin(a)
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


def _rot_z(a: float) -> np.ndarray:
    c, s = math.cos(a), math.sin(a)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def build_extrinsics(
    roll: float, pitch: float, yaw: float, mount: np.ndarray | tuple | list
) -> CameraExtrinsics:
    """Camera-to-ship transform from IMU angles and the mount position.

    rotation = Rz(yaw) @ Ry(pitch) @ Rx(roll) @ CAM_TO_BODY, so with all
    angles zero the camera optical axis coincides with the body forward
    axis.  mount is the camera origin in the ship frame; its z component
    is the height above water.
    """
    for name, a in (("roll", roll), ("pitch", pitch), ("yaw", yaw)):
        if not math.isfinite(a):
            raise ValueError(f"{name} must be finite")
    rotation = _rot_z(yaw) @ _rot_y(pitch) @ _rot_x(roll) @ CAM_TO_BODY
    return CameraExtrinsics(rotation=rotation, translation=np.asarray(mount, dtype=np.float64))


def pixel_to_ray(
    u: float, v: float, intr: CameraIntrinsics, extr: CameraExtrinsics
) -> tuple[np.ndarray, np.ndarray]:
    """Ship-frame origin and unit direction of the ray through pixel (u, v)."""
    cam_vec = np.array([(u - intr.u_0) / intr.f_s, (v - intr.v_0) / intr.f_s, intr.f_l])
    direction = extr.rotation @ cam_vec
    return extr.translation, direction / np.linalg.norm(direction)


def raycast_to_water(
    box: BoundingBox, intr: CameraIntrinsics, extr: CameraExtrinsics
) -> BodyFramePoint:
    """Intersect the ray through the box bottom-center with the water plane.

    The ray is anchored at (c_x, c_y + h/2) because the waterline of a
    floating object, not its center, lies on the z = 0 plane.  Raises
    HorizonRay when the ray does not descend toward the water in front
    of the camera.
    """
    pix = box.to_pixels(intr)
    origin, direction = pixel_to_ray(pix.c_x, pix.c_y + pix.h / 2.0, intr, extr)
    if direction[2] >= -HORIZON_EPS:
        raise HorizonRay(f"ray direction z={direction[2]:.3e} does not descend")
    t = -origin[2] / direction[2]
    if t < 0.0:
        raise HorizonRay("water-plane intersection lies behind the camera")
    hit = origin + t * direction
    return BodyFramePoint(x_b=float(hit[0]), y_b=float(hit[1]), z_b=0.0)


def bearing_from_box(box: BoundingBox, intr: CameraIntrinsics) -> float:
    """Relative bearing of the box center: -arctan((c_x - u0)/(f_s * f_l))."""
    c_x = box.to_pixels(intr).c_x
    return -math.atan((c_x - intr.u_0) / intr.f_px)


def polar_to_body(dist: float, bearing: float) -> BodyFramePoint:
    """Body-frame point on the water plane at the given range and bearing."""
    if dist < 0.0:
        raise ValueError(f"dist must be >= 0, got {dist}")
    return BodyFramePoint(x_b=dist * math.cos(bearing), y_b=dist * math.sin(bearing), z_b=0.0)


def project_to_pixel(
    point: BodyFramePoint | np.ndarray, intr: CameraIntrinsics, extr: CameraExtrinsics
) -> tuple[float, float]:
    """Project a ship-frame point through the pinhole onto the image.

    Inverse of pixel_to_ray up to ray scale.  Raises BehindCamera when
    the point is not in front of the image plane; the returned pixel may
    lie outside the image bounds (callers decide about visibility).
    """
    if isinstance(point, BodyFramePoint):
        p = np.array([point.x_b, point.y_b, point.z_b])
    else:
        p = np.asarray(point, dtype=np.float64)
    cam_vec = extr.rotation.T @ (p - extr.translation)
    if cam_vec[2] <= 0.0:
        raise BehindCamera(f"point depth {cam_vec[2]:.3f} m is not positive")
    u = intr.u_0 + intr.f_px * cam_vec[0] / cam_vec[2]
    v = intr.v_0 + intr.f_px * cam_vec[1] / cam_vec[2]
    return float(u), float(v)


def save_calibration(
    path: str | Path, intr: CameraIntrinsics, mount: np.ndarray | tuple | list
) -> None:
    """Write the calibration key-value file (see module docstring)."""
    mount = np.asarray(mount, dtype=np.float64)
    lines = [
        "# buoyfusion camera calibration",
        f"u0 = {intr.u_0!r}",
        f"v0 = {intr.v_0!r}",
        f"fs = {intr.f_s!r}",
        f"fl = {intr.f_l!r}",
        f"image_w = {intr.image_w}",
        f"image_h = {intr.image_h}",
        f"mount_x = {float(mount[0])!r}",
        f"mount_y = {float(mount[1])!r}",
        f"mount_z = {float(mount[2])!r}",
    ]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_calibration(path: str | Path) -> tuple[CameraIntrinsics, np.ndarray]:
    """Read a calibration file; returns (intrinsics, mount vector)."""
    values: dict[str, float] = {}
    for lineno, raw in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ValueError(f"{path}:{lineno}: expected 'key = value', got {raw!r}")
        key, _, value = line.partition("=")
        try:
            values[key.strip()] = float(value.strip())
        except ValueError as exc:
            raise ValueError(f"{path}:{lineno}: bad number {value.strip()!r}") from exc
    required = {"u0", "v0", "fs", "fl", "image_w", "image_h", "mount_x", "mount_y", "mount_z"}
    missing = required - values.keys()
    if missing:
        raise ValueError(f"{path}: missing calibration keys {sorted(missing)}")
    intr = CameraIntrinsics(
        u_0=values["u0"],
        v_0=values["v0"],
        f_s=values["fs"],
        f_l=values["fl"],
        image_w=int(values["image_w"]),
        image_h=int(values["image_h"]),
    )
    mount = np.array([values["mount_x"], values["mount_y"], values["mount_z"]])
    return intr, mount
