"""Gyroscope/OIS ingestion and time-indexed camera motion queries.

Gyro samples are integrated into a queue of absolute rotations starting
at the identity; increments pre-multiply the previous rotation.  The
resulting ``SensorTimeline`` serves rotations (SLERP) and OIS offsets
(linear) at arbitrary timestamps inside the covered span, including the
per-scanline times needed for rolling-shutter handling.

Log formats (text, comma separated, ``#`` comments allowed):

* gyro:       ``t_ns,omega_x,omega_y,omega_z``   (rad/s)
* OIS:        ``t_ns,o_x,o_y``                   (pixels)
* frame meta: ``index,t_start_ns,readout_ns,width,height``
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import FormatError, InvalidArgumentError, OutOfRangeError
from .rotmath import IDENTITY, Quaternion, quat_from_angular_velocity, slerp

NOMINAL_INTERVAL_NS = 5_000_000  # 200 Hz sampling


@dataclass(frozen=True, slots=True)
class GyroSample:
    t: int  # nanoseconds, monotonic
    omega: np.ndarray  # rad/s, shape (3,)


@dataclass(frozen=True, slots=True)
class OisSample:
    t: int
    o: np.ndarray  # pixels, shape (2,)


@dataclass(frozen=True, slots=True)
class FrameMeta:
    index: int
    t_start: int  # exposure center of the first scanline, ns
    readout: int  # first-to-last scanline delta, ns
    width: int
    height: int


class SensorTimeline:
    """Immutable time-sorted queues of absolute rotations and OIS offsets."""

    def __init__(self, rot_t, rot_q, ois_t=None, ois_v=None):
        self.rot_t = np.asarray(rot_t, dtype=np.int64)
        self.rot_q = [q.canonical() for q in rot_q]
        if len(self.rot_t) != len(self.rot_q):
            raise InvalidArgumentError("rotation times/values length mismatch")
        if ois_t is None:
            # no OIS log: serve zero offsets over the rotation span
            ois_t = self.rot_t[[0, -1]]
            ois_v = np.zeros((2, 2))
        self.ois_t = np.asarray(ois_t, dtype=np.int64)
        self.ois_v = np.asarray(ois_v, dtype=float).reshape(len(self.ois_t), 2)
        self._qarr = np.array([[q.w, q.x, q.y, q.z] for q in self.rot_q])

    @property
    def t_first(self) -> int:
        return int(self.rot_t[0])

    @property
    def t_last(self) -> int:
        return int(self.rot_t[-1])

    def covers(self, t: int) -> bool:
        return self.rot_t[0] <= t <= self.rot_t[-1]


def _check_sorted(ts, what: str):
    ts = np.asarray(ts)
    if len(ts) and np.any(np.diff(ts) <= 0):
        k = int(np.argmax(np.diff(ts) <= 0))
        raise FormatError(f"{what} timestamps not strictly increasing at sample {k + 1}")


def integrate_gyro(samples, ois_samples=None) -> SensorTimeline:
    """Integrate a gyro log into an absolute-rotation queue.

    R(t_0) = identity, R(t_k) = dq(omega_k, t_k - t_{k-1}) * R(t_{k-1});
    the actual inter-sample dt is used rather than the nominal 5 ms.
    """
    samples = list(samples)
    if len(samples) < 2:
        raise InvalidArgumentError("need at least 2 gyro samples")
    _check_sorted([s.t for s in samples], "gyro")
    rot_t = np.array([s.t for s in samples], dtype=np.int64)
    quats = [IDENTITY]
    q = IDENTITY
    for prev, cur in zip(samples, samples[1:]):
        dt = (cur.t - prev.t) * 1e-9
        q = (quat_from_angular_velocity(cur.omega, dt) * q).normalized().canonical()
        quats.append(q)
    ois_t = ois_v = None
    if ois_samples is not None:
        ois_samples = list(ois_samples)
        _check_sorted([s.t for s in ois_samples], "OIS")
        ois_t = [s.t for s in ois_samples]
        ois_v = [s.o for s in ois_samples]
    return SensorTimeline(rot_t, quats, ois_t, ois_v)


def extend_gyro(tl: SensorTimeline, samples) -> SensorTimeline:
    """Continue integration with newly appended samples (new timeline).

    Previously queryable values are unchanged.
    """
    samples = list(samples)
    if not samples:
        return tl
    ts = [tl.t_last] + [s.t for s in samples]
    _check_sorted(ts, "appended gyro")
    q = tl.rot_q[-1]
    add_t = []
    add_q = []
    prev_t = tl.t_last
    for s in samples:
        dt = (s.t - prev_t) * 1e-9
        q = (quat_from_angular_velocity(s.omega, dt) * q).normalized().canonical()
        add_t.append(s.t)
        add_q.append(q)
        prev_t = s.t
    return SensorTimeline(
        np.concatenate([tl.rot_t, np.array(add_t, dtype=np.int64)]),
        tl.rot_q + add_q,
        tl.ois_t,
        tl.ois_v,
    )


def _bracket(ts: np.ndarray, t: int, what: str):
    if t < ts[0] or t > ts[-1]:
        raise OutOfRangeError(f"{what} query {t} outside [{ts[0]}, {ts[-1]}]")
    i = int(np.searchsorted(ts, t, side="right")) - 1
    if i == len(ts) - 1:
        i -= 1
    return i


def query_rotation(tl: SensorTimeline, t: int) -> Quaternion:
    """Rotation at an arbitrary timestamp via SLERP; no extrapolation."""
    i = _bracket(tl.rot_t, t, "rotation")
    ta, tb = int(tl.rot_t[i]), int(tl.rot_t[i + 1])
    if t == ta:
        return tl.rot_q[i]
    if t == tb:
        return tl.rot_q[i + 1]
    u = (t - ta) / (tb - ta)
    return slerp(tl.rot_q[i], tl.rot_q[i + 1], u)


def query_ois(tl: SensorTimeline, t: int) -> np.ndarray:
    """OIS principal-point offset at t, componentwise linear."""
    i = _bracket(tl.ois_t, t, "OIS")
    ta, tb = int(tl.ois_t[i]), int(tl.ois_t[i + 1])
    if t == ta:
        return tl.ois_v[i].copy()
    u = (t - ta) / (tb - ta)
    return (1.0 - u) * tl.ois_v[i] + u * tl.ois_v[i + 1]


def query_rotation_many(tl: SensorTimeline, ts) -> np.ndarray:
    """Vectorized SLERP queries; returns (N, 4) quaternion components."""
    ts = np.asarray(ts, dtype=float)
    flat = ts.ravel()
    lo, hi = float(tl.rot_t[0]), float(tl.rot_t[-1])
    if flat.min() < lo or flat.max() > hi:
        raise OutOfRangeError(f"rotation query span outside [{lo}, {hi}]")
    t_axis = tl.rot_t.astype(float)
    i = np.clip(np.searchsorted(t_axis, flat, side="right") - 1, 0, len(t_axis) - 2)
    ta = t_axis[i]
    tb = t_axis[i + 1]
    u = (flat - ta) / (tb - ta)
    qa = tl._qarr[i]
    qb = tl._qarr[i + 1].copy()
    d = np.sum(qa * qb, axis=1)
    neg = d < 0.0
    qb[neg] = -qb[neg]
    d = np.minimum(np.abs(d), 1.0)
    theta = np.arccos(d)
    out = np.empty_like(qa)
    small = theta < 1e-9
    if small.any():
        lerped = qa[small] * (1.0 - u[small, None]) + qb[small] * u[small, None]
        out[small] = lerped / np.linalg.norm(lerped, axis=1, keepdims=True)
    big = ~small
    if big.any():
        s = np.sin(theta[big])
        ca = np.sin((1.0 - u[big]) * theta[big]) / s
        cb = np.sin(u[big] * theta[big]) / s
        out[big] = qa[big] * ca[:, None] + qb[big] * cb[:, None]
    out[u == 0.0] = qa[u == 0.0]
    out[u == 1.0] = qb[u == 1.0]
    return out.reshape(ts.shape + (4,))


def query_ois_many(tl: SensorTimeline, ts):
    """Vectorized linear OIS queries; returns (ox, oy) arrays shaped like ts."""
    ts = np.asarray(ts, dtype=float)
    lo, hi = float(tl.ois_t[0]), float(tl.ois_t[-1])
    if ts.size and (ts.min() < lo or ts.max() > hi):
        raise OutOfRangeError(f"OIS query span [{ts.min()}, {ts.max()}] outside [{lo}, {hi}]")
    t_axis = tl.ois_t.astype(float)
    return (
        np.interp(ts, t_axis, tl.ois_v[:, 0]),
        np.interp(ts, t_axis, tl.ois_v[:, 1]),
    )


def rotate_vectors(quats: np.ndarray, vecs: np.ndarray) -> np.ndarray:
    """Apply R(q) to each row vector: quats (N,4), vecs (N,3)."""
    w = quats[:, :1]
    u = quats[:, 1:]
    uv = np.cross(u, vecs)
    return vecs + 2.0 * (w * uv + np.cross(u, uv))


def scanline_time(fm: FrameMeta, row) -> float:
    """Exposure-center time of a scanline; rows may be fractional."""
    if not 0 <= row <= fm.height - 1:
        raise InvalidArgumentError(f"row {row} outside frame of height {fm.height}")
    if fm.height == 1 or fm.readout == 0:
        return float(fm.t_start)
    return fm.t_start + fm.readout * (row / (fm.height - 1))


# ---------------------------------------------------------------------------
# log parsing / writing


def _parse_csv(path, n_fields, what):
    rows = []
    with open(path, "r", encoding="ascii") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split(",")
            if len(parts) != n_fields:
                raise FormatError(
                    f"expected {n_fields} comma-separated fields in {what} record",
                    path=path,
                    line=lineno,
                )
            try:
                rows.append([float(p) for p in parts])
            except ValueError:
                raise FormatError(f"non-numeric field in {what} record", path=path, line=lineno)
    return rows


def read_gyro_log(path) -> list[GyroSample]:
    rows = _parse_csv(path, 4, "gyro")
    return [GyroSample(int(r[0]), np.array(r[1:4])) for r in rows]


def read_ois_log(path) -> list[OisSample]:
    rows = _parse_csv(path, 3, "OIS")
    return [OisSample(int(r[0]), np.array(r[1:3])) for r in rows]


def read_frame_meta(path) -> list[FrameMeta]:
    rows = _parse_csv(path, 5, "frame metadata")
    frames = [FrameMeta(int(r[0]), int(r[1]), int(r[2]), int(r[3]), int(r[4])) for r in rows]
    for prev, cur in zip(frames, frames[1:]):
        if cur.t_start <= prev.t_start or cur.index <= prev.index:
            raise FormatError(f"frame metadata not increasing at index {cur.index}", path=path)
    return frames


def write_gyro_log(path, samples) -> None:
    with open(path, "w", encoding="ascii") as fh:
        for s in samples:
            fh.write(f"{s.t},{s.omega[0]:.17g},{s.omega[1]:.17g},{s.omega[2]:.17g}\n")


def write_ois_log(path, samples) -> None:
    with open(path, "w", encoding="ascii") as fh:
        for s in samples:
            fh.write(f"{s.t},{s.o[0]:.17g},{s.o[1]:.17g}\n")


def write_frame_meta(path, frames) -> None:
    with open(path, "w", encoding="ascii") as fh:
        for f in frames:
            fh.write(f"{f.index},{f.t_start},{f.readout},{f.width},{f.height}\n")
