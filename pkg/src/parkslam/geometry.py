"""SE(2) pose algebra and planar point transforms.

Poses follow the usual robotics convention: ``theta`` is the heading of the
body +x axis, measured counter-clockwise from world +x.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


def normalize_angle(theta: float) -> float:
    """Wrap an angle into ``(-pi, pi]``."""
    wrapped = math.remainder(theta, 2.0 * math.pi)
    if wrapped <= -math.pi:
        wrapped += 2.0 * math.pi
    return wrapped


def normalize_angles(theta: np.ndarray) -> np.ndarray:
    """Vectorized :func:`normalize_angle`."""
    wrapped = np.remainder(np.asarray(theta, dtype=float) + np.pi, 2.0 * np.pi) - np.pi
    # remainder maps pi to -pi; fold the closed end back
    return np.where(wrapped <= -np.pi, wrapped + 2.0 * np.pi, wrapped)


@dataclass(frozen=True, slots=True)
class Point2:
    x: float
    y: float

    def __post_init__(self) -> None:
        if not (math.isfinite(self.x) and math.isfinite(self.y)):
            raise ValueError(f"non-finite point ({self.x}, {self.y})")

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y], dtype=float)

    @classmethod
    def from_array(cls, arr) -> "Point2":
        return cls(float(arr[0]), float(arr[1]))


@dataclass(frozen=True, slots=True)
class Pose2:
    """Planar vehicle pose. ``theta`` is normalized on construction."""

    x: float
    y: float
    theta: float

    def __post_init__(self) -> None:
        if not all(math.isfinite(v) for v in (self.x, self.y, self.theta)):
            raise ValueError(f"non-finite pose ({self.x}, {self.y}, {self.theta})")
        object.__setattr__(self, "theta", normalize_angle(self.theta))

    @classmethod
    def identity(cls) -> "Pose2":
        return cls(0.0, 0.0, 0.0)

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.theta], dtype=float)

    @classmethod
    def from_array(cls, arr) -> "Pose2":
        return cls(float(arr[0]), float(arr[1]), float(arr[2]))

    def rotation(self) -> np.ndarray:
        c, s = math.cos(self.theta), math.sin(self.theta)
        return np.array([[c, -s], [s, c]])


def compose(a: Pose2, b: Pose2) -> Pose2:
    """Return ``a (+) b``: ``b`` is expressed in ``a``'s frame."""
    c, s = math.cos(a.theta), math.sin(a.theta)
    return Pose2(a.x + c * b.x - s * b.y, a.y + s * b.x + c * b.y, a.theta + b.theta)


def inverse(p: Pose2) -> Pose2:
    c, s = math.cos(p.theta), math.sin(p.theta)
    return Pose2(-c * p.x - s * p.y, s * p.x - c * p.y, -p.theta)


def between(a: Pose2, b: Pose2) -> Pose2:
    """Relative pose of ``b`` seen from ``a``, i.e. ``inverse(a) (+) b``."""
    c, s = math.cos(a.theta), math.sin(a.theta)
    dx, dy = b.x - a.x, b.y - a.y
    return Pose2(c * dx + s * dy, -s * dx + c * dy, b.theta - a.theta)


def transform_to_body(pose: Pose2, world_pt: Point2) -> Point2:
    c, s = math.cos(pose.theta), math.sin(pose.theta)
    dx, dy = world_pt.x - pose.x, world_pt.y - pose.y
    return Point2(c * dx + s * dy, -s * dx + c * dy)


def transform_to_world(pose: Pose2, body_pt: Point2) -> Point2:
    c, s = math.cos(pose.theta), math.sin(pose.theta)
    return Point2(pose.x + c * body_pt.x - s * body_pt.y, pose.y + s * body_pt.x + c * body_pt.y)


def to_world_array(pose, body_pts: np.ndarray) -> np.ndarray:
    """Map an ``(n, 2)`` array of body-frame points to world coordinates."""
    x, y, th = pose.as_array() if isinstance(pose, Pose2) else pose
    c, s = math.cos(th), math.sin(th)
    pts = np.asarray(body_pts, dtype=float)
    return np.column_stack((x + c * pts[:, 0] - s * pts[:, 1], y + s * pts[:, 0] + c * pts[:, 1]))


def to_body_array(pose, world_pts: np.ndarray) -> np.ndarray:
    """Map an ``(n, 2)`` array of world points into the body frame of ``pose``."""
    x, y, th = pose.as_array() if isinstance(pose, Pose2) else pose
    c, s = math.cos(th), math.sin(th)
    pts = np.asarray(world_pts, dtype=float)
    dx, dy = pts[:, 0] - x, pts[:, 1] - y
    return np.column_stack((c * dx + s * dy, -s * dx + c * dy))


def bicycle_increment(speed: float, steering: float, wheelbase: float, dt: float) -> Pose2:
    """Body-frame motion of a kinematic bicycle over ``dt`` at constant inputs.

    Integrated exactly along the circular arc of curvature
    ``tan(steering) / wheelbase``.
    """
    s = speed * dt
    kappa = math.tan(steering) / wheelbase
    dth = kappa * s
    if abs(dth) < 1e-9:
        # second-order series of the arc, exact to rounding at this size
        return Pose2(s - kappa * kappa * s**3 / 6.0, 0.5 * kappa * s * s, dth)
    return Pose2(math.sin(dth) / kappa, (1.0 - math.cos(dth)) / kappa, dth)


def steering_for_curvature(kappa: float, wheelbase: float) -> float:
    return math.atan(kappa * wheelbase)
