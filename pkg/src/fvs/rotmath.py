"""Quaternion and rotation-manifold arithmetic.

Conventions used everywhere in this package:

* Hamilton product, components ordered (w, x, y, z).
* ``q.to_matrix()`` is the rotation matrix acting on column vectors,
  so ``(qa * qb).to_matrix() == qa.to_matrix() @ qb.to_matrix()``.
* ``q`` and ``-q`` denote the same rotation; stored quaternions are
  canonicalized to w >= 0.
* Rotation vectors (axis * angle, radians) are plain length-3 numpy
  arrays; ``exp_map``/``log_map`` convert to and from quaternions.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import InvalidArgumentError

__all__ = [
    "Quaternion",
    "IDENTITY",
    "quat_from_angular_velocity",
    "slerp",
    "spherical_angle",
    "exp_map",
    "log_map",
]


@dataclass(frozen=True, slots=True)
class Quaternion:
    w: float
    x: float
    y: float
    z: float

    @classmethod
    def unit(cls, w, x, y, z) -> "Quaternion":
        """Build a normalized quaternion, rejecting non-finite input."""
        n = math.sqrt(w * w + x * x + y * y + z * z)
        if not math.isfinite(n) or n == 0.0:
            raise InvalidArgumentError(f"cannot normalize quaternion ({w},{x},{y},{z})")
        return cls(w / n, x / n, y / n, z / n)

    @classmethod
    def from_axis_angle(cls, axis, angle: float) -> "Quaternion":
        ax = np.asarray(axis, dtype=float)
        n = float(np.linalg.norm(ax))
        if n == 0.0:
            return IDENTITY
        h = 0.5 * angle
        s = math.sin(h) / n
        return cls(math.cos(h), ax[0] * s, ax[1] * s, ax[2] * s)

    def __mul__(self, other: "Quaternion") -> "Quaternion":
        # terms paired so that conj(q) * q cancels to exact float zeros
        w1, x1, y1, z1 = self.w, self.x, self.y, self.z
        w2, x2, y2, z2 = other.w, other.x, other.y, other.z
        return Quaternion(
            (w1 * w2 - x1 * x2) - (y1 * y2 + z1 * z2),
            (w1 * x2 + x1 * w2) + (y1 * z2 - z1 * y2),
            (w1 * y2 + y1 * w2) + (z1 * x2 - x1 * z2),
            (w1 * z2 + z1 * w2) + (x1 * y2 - y1 * x2),
        )

    def conj(self) -> "Quaternion":
        return Quaternion(self.w, -self.x, -self.y, -self.z)

    inverse = conj  # unit quaternions only

    def dot(self, other: "Quaternion") -> float:
        return self.w * other.w + self.x * other.x + self.y * other.y + self.z * other.z

    def norm(self) -> float:
        return math.sqrt(self.dot(self))

    def normalized(self) -> "Quaternion":
        n = self.norm()
        return Quaternion(self.w / n, self.x / n, self.y / n, self.z / n)

    def canonical(self) -> "Quaternion":
        """Flip both signs if needed so that w >= 0."""
        if self.w < 0.0:
            return Quaternion(-self.w, -self.x, -self.y, -self.z)
        return self

    def neg(self) -> "Quaternion":
        return Quaternion(-self.w, -self.x, -self.y, -self.z)

    def rotate(self, v):
        """Rotate a 3-vector: R(q) @ v."""
        return self.to_matrix() @ np.asarray(v, dtype=float)

    def to_matrix(self) -> np.ndarray:
        w, x, y, z = self.w, self.x, self.y, self.z
        return np.array(
            [
                [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
                [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
                [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
            ]
        )

    def to_array(self) -> np.ndarray:
        return np.array([self.w, self.x, self.y, self.z])

    @classmethod
    def from_array(cls, a) -> "Quaternion":
        return cls(float(a[0]), float(a[1]), float(a[2]), float(a[3]))

    def is_identity(self) -> bool:
        """Exact float test for the identity rotation (either sign)."""
        return self.x == 0.0 and self.y == 0.0 and self.z == 0.0 and abs(self.w) == 1.0


IDENTITY = Quaternion(1.0, 0.0, 0.0, 0.0)


def quat_from_angular_velocity(omega, dt: float) -> Quaternion:
    """Rotation increment for constant angular velocity over dt seconds.

    Axis omega/|omega|, angle |omega|*dt; identity for a zero angle.
    """
    om = np.asarray(omega, dtype=float)
    if not (np.all(np.isfinite(om)) and math.isfinite(dt)):
        raise InvalidArgumentError("non-finite angular velocity or dt")
    if dt < 0:
        raise InvalidArgumentError(f"negative dt {dt}")
    return exp_map(om * dt)


def slerp(qa: Quaternion, qb: Quaternion, u: float) -> Quaternion:
    """Geodesic interpolation; u=0 returns qa, u=1 returns qb.

    qb's sign is flipped first when dot(qa, qb) < 0 so the shorter arc
    is taken and the double cover cannot leak into results.
    """
    if not 0.0 <= u <= 1.0:
        raise InvalidArgumentError(f"slerp factor {u} outside [0, 1]")
    d = qa.dot(qb)
    if d < 0.0:
        qb = qb.neg()
        d = -d
    if u == 0.0:
        return qa
    if u == 1.0:
        return qb
    d = min(d, 1.0)
    theta = math.acos(d)
    if theta < 1e-9:
        # endpoints nearly equal: normalized lerp is exact to float here
        a = qa.to_array() * (1.0 - u) + qb.to_array() * u
        return Quaternion.from_array(a).normalized()
    s = math.sin(theta)
    ca = math.sin((1.0 - u) * theta) / s
    cb = math.sin(u * theta) / s
    return Quaternion(
        ca * qa.w + cb * qb.w,
        ca * qa.x + cb * qb.x,
        ca * qa.y + cb * qb.y,
        ca * qa.z + cb * qb.z,
    )


def spherical_angle(qa: Quaternion, qb: Quaternion) -> float:
    """Rotation angle between qa and qb in [0, pi], double-cover safe.

    Uses the 4D chord (of whichever sign of qb is closer) instead of
    acos of the dot product, which loses half the mantissa near 0.
    """
    if not (math.isfinite(qa.w) and math.isfinite(qb.w)):
        raise InvalidArgumentError("non-finite quaternion")
    m2 = min(_sq4(qa, qb), _sq4(qa, qb.neg()))
    return 4.0 * math.asin(min(0.5 * math.sqrt(m2), 1.0))


def _sq4(qa: Quaternion, qb: Quaternion) -> float:
    dw = qa.w - qb.w
    dx = qa.x - qb.x
    dy = qa.y - qb.y
    dz = qa.z - qb.z
    return dw * dw + dx * dx + dy * dy + dz * dz


def exp_map(v) -> Quaternion:
    """Rotation vector (radians) -> unit quaternion."""
    v = np.asarray(v, dtype=float)
    theta = float(np.linalg.norm(v))
    if theta < 1e-6:
        # sin(t/2)/t Taylor; exact at t=0
        s = 0.5 - theta * theta / 48.0
    else:
        s = math.sin(0.5 * theta) / theta
    return Quaternion(math.cos(0.5 * theta), v[0] * s, v[1] * s, v[2] * s)


def log_map(q: Quaternion) -> np.ndarray:
    """Unit quaternion -> rotation vector with |v| <= pi.

    Inverse of exp_map for angles below pi; sign-canonicalizes first.
    """
    q = q.canonical()
    xyz = np.array([q.x, q.y, q.z])
    s = float(np.linalg.norm(xyz))
    if s < 1e-12:
        return xyz * (2.0 / q.w)
    theta = 2.0 * math.atan2(s, q.w)
    return xyz * (theta / s)
