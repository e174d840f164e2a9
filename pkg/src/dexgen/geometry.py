"""SE(3) pose algebra on unit quaternions.

Poses are immutable and store plain float tuples; quaternions are scalar-first
``(w, x, y, z)`` and always kept unit-norm with ``w >= 0``. Pure Python floats
keep the per-step cost of the simulator low and make serialized values
bit-comparable.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

Vec3 = tuple[float, float, float]
Quat = tuple[float, float, float, float]

# Below this rotation angle slerp falls back to normalized lerp.
SLERP_EPS = 1e-8


def _canonical(q: Sequence[float]) -> Quat:
    w, x, y, z = (float(v) for v in q)
    n2 = w * w + x * x + y * y + z * z
    if not n2 > 0.0 or not math.isfinite(n2):
        raise ValueError(f"invalid quaternion {tuple(q)!r}")
    if abs(n2 - 1.0) > 1e-15:
        n = math.sqrt(n2)
        w, x, y, z = w / n, x / n, y / n, z / n
    if w < 0.0 or (w == 0.0 and (x < 0.0 or (x == 0.0 and (y < 0.0 or (y == 0.0 and z < 0.0))))):
        w, x, y, z = -w, -x, -y, -z
    # + 0.0 turns -0.0 into 0.0
    return (w + 0.0, x + 0.0, y + 0.0, z + 0.0)


@dataclass(frozen=True, slots=True)
class Pose:
    """Rigid pose (or rigid transform) in the world frame."""

    pos: Vec3 = (0.0, 0.0, 0.0)
    quat: Quat = (1.0, 0.0, 0.0, 0.0)

    def __post_init__(self) -> None:
        p = tuple(float(v) for v in self.pos)
        if len(p) != 3:
            raise ValueError(f"position must have 3 components, got {len(p)}")
        if len(self.quat) != 4:
            raise ValueError(f"quaternion must have 4 components, got {len(self.quat)}")
        object.__setattr__(self, "pos", p)
        object.__setattr__(self, "quat", _canonical(self.quat))

    def to_dict(self) -> dict:
        return {"pos": list(self.pos), "quat": list(self.quat)}

    @classmethod
    def from_dict(cls, d: dict) -> "Pose":
        return cls(tuple(d["pos"]), tuple(d["quat"]))


Transform = Pose
IDENTITY = Pose()


def _make(pos: Vec3, quat: Sequence[float]) -> Pose:
    # trusted constructor: pos already floats
    p = object.__new__(Pose)
    object.__setattr__(p, "pos", pos)
    object.__setattr__(p, "quat", _canonical(quat))
    return p


def quat_mul(a: Sequence[float], b: Sequence[float]) -> Quat:
    aw, ax, ay, az = a
    bw, bx, by, bz = b
    return (
        aw * bw - ax * bx - ay * by - az * bz,
        aw * bx + ax * bw + ay * bz - az * by,
        aw * by - ax * bz + ay * bw + az * bx,
        aw * bz + ax * by - ay * bx + az * bw,
    )


def quat_conj(q: Sequence[float]) -> Quat:
    return (q[0], -q[1], -q[2], -q[3])


def rotate(q: Sequence[float], v: Sequence[float]) -> Vec3:
    """Rotate vector ``v`` by unit quaternion ``q``."""
    w, x, y, z = q
    vx, vy, vz = v
    # t = 2 * (u x v)
    tx = 2.0 * (y * vz - z * vy)
    ty = 2.0 * (z * vx - x * vz)
    tz = 2.0 * (x * vy - y * vx)
    return (
        vx + w * tx + (y * tz - z * ty),
        vy + w * ty + (z * tx - x * tz),
        vz + w * tz + (x * ty - y * tx),
    )


def compose(a: Transform, b: Transform) -> Transform:
    """``a * b``: apply ``b`` first, then ``a``."""
    r = rotate(a.quat, b.pos)
    ap = a.pos
    return _make((ap[0] + r[0], ap[1] + r[1], ap[2] + r[2]), quat_mul(a.quat, b.quat))


def invert(t: Transform) -> Transform:
    qi = quat_conj(t.quat)
    r = rotate(qi, t.pos)
    return _make((-r[0], -r[1], -r[2]), qi)


def apply(t: Transform, p: Pose) -> Pose:
    """Rigid action of ``t`` on the pose ``p``."""
    return compose(t, p)


def relative_transform(source_obj: Pose, new_obj: Pose) -> Transform:
    """Transform mapping ``source_obj`` onto ``new_obj`` (``new * source^-1``)."""
    return compose(new_obj, invert(source_obj))


def transform_point(t: Transform, v: Sequence[float]) -> Vec3:
    r = rotate(t.quat, v)
    return (t.pos[0] + r[0], t.pos[1] + r[1], t.pos[2] + r[2])


def slerp(q0: Sequence[float], q1: Sequence[float], frac: float) -> Quat:
    """Shortest-arc spherical interpolation (not canonicalized)."""
    dot = q0[0] * q1[0] + q0[1] * q1[1] + q0[2] * q1[2] + q0[3] * q1[3]
    if dot < 0.0:
        q1 = (-q1[0], -q1[1], -q1[2], -q1[3])
        dot = -dot
    dot = min(dot, 1.0)
    half = math.acos(dot)
    if 2.0 * half < SLERP_EPS:
        out = [a + frac * (b - a) for a, b in zip(q0, q1)]
        n = math.sqrt(sum(c * c for c in out))
        return (out[0] / n, out[1] / n, out[2] / n, out[3] / n)
    s = math.sin(half)
    k0 = math.sin((1.0 - frac) * half) / s
    k1 = math.sin(frac * half) / s
    return (
        k0 * q0[0] + k1 * q1[0],
        k0 * q0[1] + k1 * q1[1],
        k0 * q0[2] + k1 * q1[2],
        k0 * q0[3] + k1 * q1[3],
    )


def interpolate(start: Pose, end: Pose, n_steps: int) -> list[Pose]:
    """Uniformly spaced poses from ``start`` (exclusive) to ``end`` (inclusive).

    Position is interpolated linearly and orientation by slerp; the last pose
    is ``end`` itself.
    """
    if n_steps < 1:
        raise ValueError(f"n_steps must be >= 1, got {n_steps}")
    out = []
    sp, ep = start.pos, end.pos
    for i in range(1, n_steps):
        f = i / n_steps
        pos = (sp[0] + f * (ep[0] - sp[0]), sp[1] + f * (ep[1] - sp[1]), sp[2] + f * (ep[2] - sp[2]))
        out.append(_make(pos, slerp(start.quat, end.quat, f)))
    out.append(end)
    return out


def rotation_angle(q: Sequence[float]) -> float:
    """Rotation angle in [0, pi] of a unit quaternion."""
    v = math.sqrt(q[1] * q[1] + q[2] * q[2] + q[3] * q[3])
    return 2.0 * math.atan2(v, abs(q[0]))


def quat_distance(a: Sequence[float], b: Sequence[float]) -> float:
    """Angle of the rotation taking ``a`` to ``b``."""
    return rotation_angle(quat_mul(quat_conj(a), b))


def pose_error(a: Pose, b: Pose) -> tuple[float, float]:
    """(position distance, rotation angle) between two poses."""
    return math.dist(a.pos, b.pos), quat_distance(a.quat, b.quat)


def axis_angle(axis: Sequence[float], angle: float) -> Quat:
    n = math.sqrt(sum(c * c for c in axis))
    if n == 0.0:
        return (1.0, 0.0, 0.0, 0.0)
    s = math.sin(angle / 2.0) / n
    return _canonical((math.cos(angle / 2.0), axis[0] * s, axis[1] * s, axis[2] * s))


def from_rotvec(rv: Sequence[float]) -> Quat:
    return axis_angle(rv, math.sqrt(sum(c * c for c in rv)))


def to_rotvec(q: Sequence[float]) -> Vec3:
    q = _canonical(q)
    v = math.sqrt(q[1] * q[1] + q[2] * q[2] + q[3] * q[3])
    if v < 1e-15:
        return (2.0 * q[1], 2.0 * q[2], 2.0 * q[3])
    angle = 2.0 * math.atan2(v, q[0])
    return (q[1] / v * angle, q[2] / v * angle, q[3] / v * angle)


def from_yaw(yaw: float) -> Quat:
    return axis_angle((0.0, 0.0, 1.0), yaw)


def translation(x: float, y: float, z: float) -> Transform:
    return Pose((x, y, z))


def planar(x: float, y: float, z: float, yaw: float = 0.0) -> Pose:
    return Pose((x, y, z), from_yaw(yaw))


def as_matrix(p: Pose) -> list[list[float]]:
    """4x4 homogeneous matrix as nested lists."""
    w, x, y, z = p.quat
    return [
        [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y), p.pos[0]],
        [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x), p.pos[1]],
        [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y), p.pos[2]],
        [0.0, 0.0, 0.0, 1.0],
    ]
