"""SE(2) pose algebra: composition, relative poses, frame transforms, and
the Jacobians needed for least-squares linearization.

Local coordinates for a pose are (dx, dy, dtheta) applied in the pose's own
frame by ``retract``.  All Jacobians here map a local perturbation of an
argument to the change in the result's components (x, y, theta), which is the
convention the factor-graph linearizer expects.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

TWO_PI = 2.0 * math.pi


def wrap_angle(theta):
    """Wrap an angle (scalar or array) to the half-open interval (-pi, pi]."""
    r = np.remainder(np.asarray(theta, dtype=float) + math.pi, TWO_PI)
    # remainder lands in [0, 2pi); send 0 to 2pi so -pi maps to +pi, not -pi
    r = np.where(r == 0.0, TWO_PI, r) - math.pi
    if np.ndim(theta) == 0:
        return float(r)
    return r


@dataclass(frozen=True)
class Pose2:
    """A 2D rigid transform; theta is wrapped to (-pi, pi] at construction."""

    x: float
    y: float
    theta: float

    def __post_init__(self):
        object.__setattr__(self, "x", float(self.x))
        object.__setattr__(self, "y", float(self.y))
        object.__setattr__(self, "theta", wrap_angle(float(self.theta)))

    def rotation(self) -> np.ndarray:
        c, s = math.cos(self.theta), math.sin(self.theta)
        return np.array([[c, -s], [s, c]])

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.theta])


@dataclass(frozen=True)
class Point2:
    """A 2D point in meters.  Coordinates must be finite."""

    x: float
    y: float

    def __post_init__(self):
        x, y = float(self.x), float(self.y)
        if not (math.isfinite(x) and math.isfinite(y)):
            raise ValueError(f"Point2 coordinates must be finite, got ({self.x!r}, {self.y!r})")
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "y", y)

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y])


IDENTITY = Pose2(0.0, 0.0, 0.0)


def compose(a: Pose2, b: Pose2) -> Pose2:
    """Group composition a . b: apply b in the frame of a."""
    ca, sa = math.cos(a.theta), math.sin(a.theta)
    return Pose2(
        a.x + ca * b.x - sa * b.y,
        a.y + sa * b.x + ca * b.y,
        a.theta + b.theta,
    )


def inverse(p: Pose2) -> Pose2:
    """Group inverse: compose(inverse(p), p) is the identity."""
    c, s = math.cos(p.theta), math.sin(p.theta)
    return Pose2(-(c * p.x + s * p.y), s * p.x - c * p.y, -p.theta)


def between(a: Pose2, b: Pose2) -> Pose2:
    """Relative pose inverse(a) . b: the transform taking frame a to frame b."""
    ca, sa = math.cos(a.theta), math.sin(a.theta)
    dx, dy = b.x - a.x, b.y - a.y
    return Pose2(ca * dx + sa * dy, -sa * dx + ca * dy, b.theta - a.theta)


def transform_to(frame: Pose2, p: Point2) -> Point2:
    """Express a world point in the local frame of ``frame``."""
    c, s = math.cos(frame.theta), math.sin(frame.theta)
    dx, dy = p.x - frame.x, p.y - frame.y
    return Point2(c * dx + s * dy, -s * dx + c * dy)


def transform_from(frame: Pose2, p: Point2) -> Point2:
    """Map a point given in the frame of ``frame`` back into world coordinates."""
    c, s = math.cos(frame.theta), math.sin(frame.theta)
    return Point2(frame.x + c * p.x - s * p.y, frame.y + s * p.x + c * p.y)


def retract(p: Pose2, delta) -> Pose2:
    """Apply local coordinates (dx, dy, dtheta) in the frame of p."""
    return compose(p, Pose2(float(delta[0]), float(delta[1]), float(delta[2])))


def local(a: Pose2, b: Pose2) -> np.ndarray:
    """Local coordinates v with retract(a, v) == b."""
    d = between(a, b)
    return np.array([d.x, d.y, d.theta])


def retract_point(p: Point2, delta) -> Point2:
    return Point2(p.x + float(delta[0]), p.y + float(delta[1]))


def local_point(a: Point2, b: Point2) -> np.ndarray:
    return np.array([b.x - a.x, b.y - a.y])


def compose_jacobians(a: Pose2, b: Pose2) -> tuple[np.ndarray, np.ndarray]:
    """Jacobians of compose(a, b) w.r.t. local perturbations of a and b."""
    ca, sa = math.cos(a.theta), math.sin(a.theta)
    rx = ca * b.x - sa * b.y
    ry = sa * b.x + ca * b.y
    ja = np.array([
        [ca, -sa, -ry],
        [sa, ca, rx],
        [0.0, 0.0, 1.0],
    ])
    cr, sr = math.cos(a.theta + b.theta), math.sin(a.theta + b.theta)
    jb = np.array([
        [cr, -sr, 0.0],
        [sr, cr, 0.0],
        [0.0, 0.0, 1.0],
    ])
    return ja, jb


def between_jacobians(a: Pose2, b: Pose2) -> tuple[np.ndarray, np.ndarray]:
    """Jacobians of between(a, b) w.r.t. local perturbations of a and b."""
    h = between(a, b)
    ja = np.array([
        [-1.0, 0.0, h.y],
        [0.0, -1.0, -h.x],
        [0.0, 0.0, -1.0],
    ])
    ch, sh = math.cos(h.theta), math.sin(h.theta)
    jb = np.array([
        [ch, -sh, 0.0],
        [sh, ch, 0.0],
        [0.0, 0.0, 1.0],
    ])
    return ja, jb


def transform_to_jacobians(frame: Pose2, p: Point2) -> tuple[np.ndarray, np.ndarray]:
    """Jacobians of transform_to(frame, p) w.r.t. the frame and the point."""
    h = transform_to(frame, p)
    jframe = np.array([
        [-1.0, 0.0, h.y],
        [0.0, -1.0, -h.x],
    ])
    c, s = math.cos(frame.theta), math.sin(frame.theta)
    jpoint = np.array([[c, s], [-s, c]])
    return jframe, jpoint
