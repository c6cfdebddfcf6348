"""Camera pose model: intrinsics, real<->virtual projection, histories.

A pose is ``(R, O)``: a rotation quaternion plus a 2D principal-point
offset in pixels (OIS for real poses, always (0,0) for virtual ones).
Pose quaternions are camera-to-world; the projection between two
cameras only ever consumes the *relative* rotation, which makes every
mapping here invariant to a global rotation of all poses.

Image coordinates are continuous with the frame occupying
``[0, width] x [0, height]`` and pixel (row r, col c) centered at
``(c + 0.5, r + 0.5)``; the principal point sits at the frame center.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import BehindCameraError, FormatError, InvalidArgumentError, OutOfRangeError
from .rotmath import Quaternion, slerp
from .sensor import SensorTimeline, query_rotation

DEFAULT_FOCAL = 1511.8  # pixels, shared by real and virtual cameras
DELTA_T_NS = 40_000_000  # history/update step, invariant to frame rate
HISTORY_N = 10

ZERO_OFFSET = np.zeros(2)


@dataclass(frozen=True, slots=True)
class CameraPose:
    q: Quaternion
    o: np.ndarray = field(default_factory=lambda: ZERO_OFFSET.copy())


@dataclass(frozen=True, slots=True)
class Intrinsics:
    width: int
    height: int
    f: float = DEFAULT_FOCAL

    @property
    def center(self) -> np.ndarray:
        return np.array([self.width / 2.0, self.height / 2.0])

    def k_matrix(self, offset=None) -> np.ndarray:
        c = self.center if offset is None else self.center + np.asarray(offset)
        return np.array([[self.f, 0.0, c[0]], [0.0, self.f, c[1]], [0.0, 0.0, 1.0]])

    def k_inverse(self, offset=None) -> np.ndarray:
        c = self.center if offset is None else self.center + np.asarray(offset)
        return np.array(
            [[1.0 / self.f, 0.0, -c[0] / self.f], [0.0, 1.0 / self.f, -c[1] / self.f], [0.0, 0.0, 1.0]]
        )


def relative_rotation(q_dst: Quaternion, q_src: Quaternion) -> Quaternion:
    """Rotation consumed when re-projecting from src camera to dst camera."""
    return q_dst.conj() * q_src


def _project_array(xy, g: Quaternion, o_src, o_dst, k: Intrinsics):
    """Map (N,2) points through K(o_dst) R(g) K(o_src)^-1; returns (xy, depth)."""
    xy = np.asarray(xy, dtype=float)
    pts = np.atleast_2d(xy)
    if g.is_identity():
        # exact short-circuit: pure principal-point shift
        out = pts + (np.asarray(o_dst) - np.asarray(o_src))
        depth = np.ones(len(pts))
    else:
        c_src = k.center + np.asarray(o_src)
        rays = np.empty((len(pts), 3))
        rays[:, 0] = (pts[:, 0] - c_src[0]) / k.f
        rays[:, 1] = (pts[:, 1] - c_src[1]) / k.f
        rays[:, 2] = 1.0
        d = rays @ g.to_matrix().T
        depth = d[:, 2]
        c_dst = k.center + np.asarray(o_dst)
        with np.errstate(divide="ignore", invalid="ignore"):
            out = np.stack(
                [k.f * d[:, 0] / depth + c_dst[0], k.f * d[:, 1] / depth + c_dst[1]], axis=1
            )
    if xy.ndim == 1:
        return out[0], depth[0]
    return out, depth


def project_real_to_virtual(x_r, p_r: CameraPose, p_v: CameraPose, k: Intrinsics):
    """Real-camera pixel -> virtual (stabilized) camera pixel."""
    out, depth = _project_array(x_r, relative_rotation(p_v.q, p_r.q), p_r.o, p_v.o, k)
    if np.any(np.asarray(depth) <= 0.0):
        raise BehindCameraError("point behind virtual camera")
    return out


def project_virtual_to_real(x_v, p_r: CameraPose, p_v: CameraPose, k: Intrinsics):
    """Virtual-camera pixel -> real-camera pixel (exact inverse)."""
    out, depth = _project_array(x_v, relative_rotation(p_r.q, p_v.q), p_v.o, p_r.o, k)
    if np.any(np.asarray(depth) <= 0.0):
        raise BehindCameraError("point behind real camera")
    return out


def project_points(xy, g: Quaternion, o_src, o_dst, k: Intrinsics):
    """Vectorized projection returning (points, depths); caller masks depths."""
    return _project_array(xy, g, o_src, o_dst, k)


def homography_between(p_src: CameraPose, p_dst: CameraPose, k: Intrinsics) -> np.ndarray:
    """Closed 3x3 map from src-camera pixels to dst-camera pixels."""
    g = relative_rotation(p_dst.q, p_src.q)
    if g.is_identity():
        h = np.eye(3)
        h[:2, 2] = np.asarray(p_dst.o) - np.asarray(p_src.o)
        return h
    return k.k_matrix(p_dst.o) @ g.to_matrix() @ k.k_inverse(p_src.o)


# ---------------------------------------------------------------------------
# virtual path


class VirtualPath:
    """Per-frame virtual camera poses plus clamped SLERP queries.

    Queries before the first entry return the first pose (startup seed:
    the virtual camera is locked to the initial pose until real history
    accumulates); queries after the last entry return the last pose.
    """

    def __init__(self, provenance: str = ""):
        self.times: list[int] = []
        self.quats: list[Quaternion] = []
        self.provenance = provenance

    def __len__(self) -> int:
        return len(self.times)

    def append(self, t: int, q: Quaternion) -> None:
        if self.times and t <= self.times[-1]:
            raise InvalidArgumentError(f"non-increasing path timestamp {t}")
        self.times.append(int(t))
        self.quats.append(q.canonical())

    def pose(self, i: int) -> CameraPose:
        return CameraPose(self.quats[i], ZERO_OFFSET.copy())

    def query(self, t: int) -> Quaternion:
        if not self.times:
            raise InvalidArgumentError("empty virtual path")
        if t <= self.times[0]:
            return self.quats[0]
        if t >= self.times[-1]:
            return self.quats[-1]
        i = int(np.searchsorted(self.times, t, side="right")) - 1
        ta, tb = self.times[i], self.times[i + 1]
        if t == ta:
            return self.quats[i]
        return slerp(self.quats[i], self.quats[i + 1], (t - ta) / (tb - ta))

    @classmethod
    def from_quats(cls, times, quats, provenance: str = "") -> "VirtualPath":
        p = cls(provenance)
        for t, q in zip(times, quats):
            p.append(t, q)
        return p


def write_path(path, vp: VirtualPath, offsets=None) -> None:
    """Text path file: ``frame_index,t_ns,qw,qx,qy,qz,ox,oy``."""
    with open(path, "w", encoding="ascii") as fh:
        for i, (t, q) in enumerate(zip(vp.times, vp.quats)):
            o = ZERO_OFFSET if offsets is None else offsets[i]
            fh.write(
                f"{i},{t},{q.w:.17g},{q.x:.17g},{q.y:.17g},{q.z:.17g},{o[0]:.17g},{o[1]:.17g}\n"
            )


def read_path(path):
    """Returns (VirtualPath, offsets array)."""
    vp = VirtualPath()
    offsets = []
    with open(path, "r", encoding="ascii") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split(",")
            if len(parts) != 8:
                raise FormatError("expected 8 fields in path record", path=path, line=lineno)
            try:
                vals = [float(p) for p in parts]
            except ValueError:
                raise FormatError("non-numeric field in path record", path=path, line=lineno)
            q = Quaternion(*vals[2:6])
            if abs(q.norm() - 1.0) > 1e-6:
                raise FormatError(f"non-unit quaternion (norm {q.norm()})", path=path, line=lineno)
            vp.append(int(vals[1]), q)
            offsets.append(vals[6:8])
    return vp, np.array(offsets) if offsets else np.zeros((0, 2))


# ---------------------------------------------------------------------------
# motion history


@dataclass(frozen=True, slots=True)
class MotionHistory:
    """Real/virtual rotations around t, relative to the real pose at t.

    ``h_r`` holds 2N+1 entries for t-N*dt .. t+N*dt (center = identity);
    ``h_v`` holds N entries for t-N*dt .. t-dt.  Entries are composed as
    R^-1(t) * R(t'), which is unchanged when every absolute pose is
    left-multiplied by a fixed global rotation.
    """

    h_r: tuple
    h_v: tuple
    n: int
    delta_t_ns: int

    def flat_real(self) -> np.ndarray:
        return np.concatenate([q.to_array() for q in self.h_r])

    def flat_virtual(self) -> np.ndarray:
        return np.concatenate([q.to_array() for q in self.h_v])


def history_span_ns(n: int = HISTORY_N, delta_t_ns: int = DELTA_T_NS) -> int:
    return n * delta_t_ns


def build_history(
    tl: SensorTimeline,
    vpath: VirtualPath,
    t: int,
    n: int = HISTORY_N,
    delta_t_ns: int = DELTA_T_NS,
) -> MotionHistory:
    """Sample relative rotation histories around t.

    Requires gyro coverage over [t - n*dt, t + n*dt]; the online loop
    guarantees it by buffering n future frames.
    """
    lo, hi = t - n * delta_t_ns, t + n * delta_t_ns
    if not (tl.covers(lo) and tl.covers(hi)):
        raise OutOfRangeError(
            f"history window [{lo}, {hi}] not covered by gyro span [{tl.t_first}, {tl.t_last}]"
        )
    inv_rt = query_rotation(tl, t).conj()
    h_r = tuple(
        (inv_rt * query_rotation(tl, t + k * delta_t_ns)).canonical() for k in range(-n, n + 1)
    )
    h_v = tuple(
        (inv_rt * vpath.query(t - k * delta_t_ns)).canonical() for k in range(n, 0, -1)
    )
    return MotionHistory(h_r, h_v, n, delta_t_ns)
