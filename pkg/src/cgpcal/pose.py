"""
Planar roto-translation algebra.

Poses are ``(x, y, theta)`` triples. ``Pose2D`` is the scalar value type;
the ``*_arr`` functions do the same arithmetic on ``(..., 3)`` arrays and
are what the simulator, the metrics and the property tests use in bulk.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

TWO_PI = 2.0 * math.pi


def normalize_angle(theta):
    """Wrap an angle (scalar or array) into (-pi, pi]."""
    if np.ndim(theta) == 0:
        t = math.fmod(float(theta), TWO_PI)
        if t <= -math.pi:
            t += TWO_PI
        elif t > math.pi:
            t -= TWO_PI
        return t
    t = np.fmod(np.asarray(theta, dtype=float), TWO_PI)
    t = np.where(t <= -np.pi, t + TWO_PI, t)
    return np.where(t > np.pi, t - TWO_PI, t)


@dataclass(frozen=True)
class Pose2D:
    """Planar pose. ``theta`` is normalized to (-pi, pi] on construction."""

    x: float = 0.0
    y: float = 0.0
    theta: float = 0.0

    def __post_init__(self):
        x, y, t = float(self.x), float(self.y), float(self.theta)
        if not (math.isfinite(x) and math.isfinite(y) and math.isfinite(t)):
            raise ValueError(f"non-finite pose ({x}, {y}, {t})")
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "theta", normalize_angle(t))

    @classmethod
    def from_array(cls, a) -> "Pose2D":
        a = np.asarray(a, dtype=float).reshape(3)
        return cls(a[0], a[1], a[2])

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.theta])

    def __iter__(self):
        return iter((self.x, self.y, self.theta))

    def __add__(self, other: "Pose2D") -> "Pose2D":
        # a + b reads as a (+) b
        return oplus(self, other)

    def __neg__(self) -> "Pose2D":
        return ominus(self)


IDENTITY = Pose2D(0.0, 0.0, 0.0)


def oplus(a: Pose2D, b: Pose2D) -> Pose2D:
    """Compose ``a`` with ``b`` expressed in the frame of ``a``."""
    c, s = math.cos(a.theta), math.sin(a.theta)
    return Pose2D(a.x + b.x * c - b.y * s,
                  a.y + b.x * s + b.y * c,
                  a.theta + b.theta)


def ominus(a: Pose2D) -> Pose2D:
    """Inverse of ``a`` under :func:`oplus`."""
    c, s = math.cos(a.theta), math.sin(a.theta)
    return Pose2D(-a.x * c - a.y * s, a.x * s - a.y * c, -a.theta)


def relative_pose(q_j: Pose2D, q_k: Pose2D) -> Pose2D:
    """Pose of ``q_k`` seen from ``q_j``."""
    return oplus(ominus(q_j), q_k)


def compose_all(poses: Iterable[Pose2D], start: Pose2D = IDENTITY) -> Pose2D:
    out = start
    for p in poses:
        out = oplus(out, p)
    return out


# -- vectorized ----------------------------------------------------------

def oplus_arr(a, b) -> np.ndarray:
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    c, s = np.cos(a[..., 2]), np.sin(a[..., 2])
    out = np.empty(np.broadcast_shapes(a.shape, b.shape))
    out[..., 0] = a[..., 0] + b[..., 0] * c - b[..., 1] * s
    out[..., 1] = a[..., 1] + b[..., 0] * s + b[..., 1] * c
    out[..., 2] = normalize_angle(a[..., 2] + b[..., 2])
    return out


def ominus_arr(a) -> np.ndarray:
    a = np.asarray(a, dtype=float)
    c, s = np.cos(a[..., 2]), np.sin(a[..., 2])
    out = np.empty(a.shape)
    out[..., 0] = -a[..., 0] * c - a[..., 1] * s
    out[..., 1] = a[..., 0] * s - a[..., 1] * c
    out[..., 2] = normalize_angle(-a[..., 2])
    return out


def relative_pose_arr(q_j, q_k) -> np.ndarray:
    return oplus_arr(ominus_arr(q_j), q_k)


def conjugate_arr(q, sensor) -> np.ndarray:
    """Express robot displacement(s) ``q`` as sensor displacement(s): (-l) + q + l."""
    sensor = np.asarray(sensor, dtype=float)
    return oplus_arr(oplus_arr(ominus_arr(sensor), q), sensor)


def chain_arr(start, steps) -> np.ndarray:
    """Cumulative left fold of ``steps`` (k, 3) onto ``start``; returns (k + 1, 3)."""
    steps = np.asarray(steps, dtype=float).reshape(-1, 3)
    out = np.empty((len(steps) + 1, 3))
    out[0] = np.asarray(start, dtype=float)
    out[0, 2] = normalize_angle(out[0, 2])
    for k, st in enumerate(steps):
        out[k + 1] = oplus_arr(out[k], st)
    return out


def poses_to_array(poses: Sequence[Pose2D]) -> np.ndarray:
    return np.array([[p.x, p.y, p.theta] for p in poses], dtype=float).reshape(-1, 3)


def array_to_poses(arr) -> list[Pose2D]:
    return [Pose2D(*row) for row in np.asarray(arr, dtype=float).reshape(-1, 3)]
