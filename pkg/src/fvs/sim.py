"""Synthetic handheld-capture generator with closed-form ground truth.

Produces gyro/OIS logs whose integration reproduces a known camera
path, frame metadata with rolling-shutter timing, analytically exact
optical flow for a static scene at infinity, and rolling-shutter
renders of a procedural texture.  Everything is seeded and pure, so
fixtures and oracles are reproducible bit for bit.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import InvalidArgumentError
from .flow import BACKWARD, FORWARD, FlowField, row_of, scanline_time_array
from .pose import Intrinsics, VirtualPath
from .rotmath import IDENTITY, Quaternion, exp_map, log_map, slerp
from .sensor import (
    FrameMeta,
    GyroSample,
    OisSample,
    SensorTimeline,
    integrate_gyro,
    query_ois_many,
    query_rotation,
    query_rotation_many,
    rotate_vectors,
    scanline_time,
)
from .warp import RasterFrame

GYRO_DT_NS = 5_000_000  # 200 Hz


@dataclass(slots=True)
class ShakeSpec:
    duration: float = 8.0  # seconds of footage
    fps: float = 30.0
    width: int = 1920
    height: int = 1080
    readout_ns: int = 25_000_000
    base: str = "constant"  # constant | panning | keyframes
    pan_rate_deg: float = 0.0  # deg/s about the camera y axis
    keyframes: tuple = ()  # ((t_seconds, Quaternion), ...) for base="keyframes"
    shake_amp_deg: float = 1.0  # total RMS rotation noise across axes
    shake_band: tuple = (2.0, 8.0)  # Hz
    ois_amp_px: float = 0.0  # per-component RMS offset
    ois_band: tuple = (1.0, 6.0)
    margin: float = 0.6  # sensor coverage before/after footage, seconds
    seed: int = 0
    n_waves: int = 16  # sinusoids per band-limited component

    def validate(self):
        for lo, hi in (self.shake_band, self.ois_band):
            if not (0.0 < lo < hi < 100.0):
                raise InvalidArgumentError(f"band ({lo}, {hi}) outside (0, 100) Hz")
        if self.shake_amp_deg < 0 or self.ois_amp_px < 0:
            raise InvalidArgumentError("amplitudes must be >= 0")
        if self.duration <= 0 or self.fps <= 0:
            raise InvalidArgumentError("duration and fps must be positive")


@dataclass(slots=True)
class SimCapture:
    spec: ShakeSpec
    gyro: list
    ois: list
    frames: list
    truth: VirtualPath  # ground-truth path, identity at the first gyro sample
    timeline: SensorTimeline = None
    intrinsics: Intrinsics = None

    def __post_init__(self):
        if self.timeline is None:
            self.timeline = integrate_gyro(self.gyro, self.ois)
        if self.intrinsics is None:
            self.intrinsics = Intrinsics(self.spec.width, self.spec.height)


class _BandNoise:
    """Sum of random-phase sinusoids inside a band, unit RMS."""

    def __init__(self, rng, band, n_waves):
        self.freqs = rng.uniform(band[0], band[1], n_waves)
        self.phases = rng.uniform(0.0, 2.0 * math.pi, n_waves)
        self.amp = math.sqrt(2.0 / n_waves)

    def at(self, t):
        t = np.asarray(t, dtype=float)
        arg = 2.0 * math.pi * self.freqs[:, None] * t[None, :] + self.phases[:, None]
        return self.amp * np.sin(arg).sum(axis=0)


def _base_quat(spec: ShakeSpec, t: float) -> Quaternion:
    if spec.base == "constant":
        return IDENTITY
    if spec.base == "panning":
        return Quaternion.from_axis_angle((0.0, 1.0, 0.0), math.radians(spec.pan_rate_deg) * t)
    if spec.base == "keyframes":
        kf = spec.keyframes
        if not kf:
            return IDENTITY
        if t <= kf[0][0]:
            return kf[0][1]
        for (ta, qa), (tb, qb) in zip(kf, kf[1:]):
            if t <= tb:
                return slerp(qa, qb, (t - ta) / (tb - ta))
        return kf[-1][1]
    raise InvalidArgumentError(f"unknown base path {spec.base!r}")


def generate_capture(spec: ShakeSpec) -> SimCapture:
    """Sample the ground-truth path at 200 Hz and emit matching logs.

    Gyro angular velocities are the exact per-interval increments of
    the sampled path, so integration reproduces it to float precision.
    """
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    shake = [_BandNoise(rng, spec.shake_band, spec.n_waves) for _ in range(3)]
    ois = [_BandNoise(rng, spec.ois_band, spec.n_waves) for _ in range(2)]

    total = spec.margin + spec.duration + spec.margin
    n_samples = int(math.ceil(total * 1e9 / GYRO_DT_NS)) + 1
    ts_ns = np.arange(n_samples, dtype=np.int64) * GYRO_DT_NS
    ts = ts_ns * 1e-9

    amp_axis = math.radians(spec.shake_amp_deg) / math.sqrt(3.0)
    noise = np.stack([amp_axis * s.at(ts) for s in shake], axis=1)
    if spec.shake_amp_deg == 0.0:
        noise[:] = 0.0

    quats = []
    for i, t in enumerate(ts):
        q = exp_map(noise[i]) * _base_quat(spec, float(t))
        quats.append(q.normalized())
    q0_inv = quats[0].conj()
    truth_quats = [(q * q0_inv).canonical() for q in quats]

    gyro = [GyroSample(int(ts_ns[0]), np.zeros(3))]
    for i in range(1, len(truth_quats)):
        dq = truth_quats[i] * truth_quats[i - 1].conj()
        dt = (ts_ns[i] - ts_ns[i - 1]) * 1e-9
        gyro.append(GyroSample(int(ts_ns[i]), log_map(dq) / dt))

    ois_vals = np.stack([spec.ois_amp_px * o.at(ts) for o in ois], axis=1)
    if spec.ois_amp_px == 0.0:
        ois_vals[:] = 0.0
    ois_samples = [OisSample(int(t), ois_vals[i]) for i, t in enumerate(ts_ns)]

    n_frames = int(round(spec.duration * spec.fps))
    margin_ns = int(round(spec.margin * 1e9))
    frames = [
        FrameMeta(
            i,
            margin_ns + int(round(i * 1e9 / spec.fps)),
            spec.readout_ns,
            spec.width,
            spec.height,
        )
        for i in range(n_frames)
    ]
    truth = VirtualPath.from_quats([int(t) for t in ts_ns], truth_quats, provenance="truth")
    return SimCapture(spec, gyro, ois_samples, frames, truth)


# ---------------------------------------------------------------------------
# analytic flow


def analytic_displacement(tl, fm_src, fm_dst, k: Intrinsics, pts) -> np.ndarray:
    """Exact displacement of arbitrary src-frame points into the dst frame.

    Returns (N, 2) vectors; destination scanline times are resolved by
    fixed-point iteration to float precision.  Points whose source and
    destination poses are float-identical map through exactly.
    """
    pts = np.atleast_2d(np.asarray(pts, dtype=float))
    n = len(pts)
    rows_src = row_of(pts[:, 1], fm_src.height)
    t_src = scanline_time_array(fm_src, rows_src)
    q_src = query_rotation_many(tl, t_src)
    cx, cy = k.center
    rays_cam = np.stack(
        [(pts[:, 0] - cx) / k.f, (pts[:, 1] - cy) / k.f, np.ones(n)], axis=1
    )
    rays_world = rotate_vectors(q_src, rays_cam)
    o_src = np.stack(query_ois_many(tl, t_src), axis=1)

    # rotation geometry first: destination scanline from the OIS-free row
    row_dst = row_of(pts[:, 1], fm_dst.height).copy()
    y0 = q_dst = None
    for _ in range(40):
        t_dst = scanline_time_array(fm_dst, row_dst)
        q_dst = query_rotation_many(tl, t_dst)
        q_dst_conj = q_dst * np.array([1.0, -1.0, -1.0, -1.0])
        d = rotate_vectors(q_dst_conj, rays_world)
        y0 = np.stack([k.f * d[:, 0] / d[:, 2] + cx, k.f * d[:, 1] / d[:, 2] + cy], axis=1)
        new_row = row_of(y0[:, 1], fm_dst.height)
        if np.max(np.abs(new_row - row_dst)) < 1e-10:
            break
        row_dst = new_row
    # identical poses map through exactly (no projective round-off)
    same = np.all(q_dst == q_src, axis=1)
    if same.any():
        y0[same] = pts[same]
    # OIS shifts the observed content; its timestamp comes from the
    # shifted row itself, mirroring the one-shot lookup in remove_ois
    t_ois = scanline_time_array(fm_dst, row_of(y0[:, 1], fm_dst.height))
    o_dst = np.stack(query_ois_many(tl, t_ois), axis=1)
    for _ in range(40):
        y = y0 + (o_dst - o_src)
        t_new = scanline_time_array(fm_dst, row_of(y[:, 1], fm_dst.height))
        if np.max(np.abs(t_new - t_ois)) < 1e-6:
            t_ois = t_new
            o_dst = np.stack(query_ois_many(tl, t_ois), axis=1)
            break
        t_ois = t_new
        o_dst = np.stack(query_ois_many(tl, t_ois), axis=1)
    return y0 + (o_dst - o_src) - pts


def _flow_one_direction(tl, fm_src, fm_dst, k: Intrinsics, grid, direction, frame_index):
    gw, gh = grid
    w, h = fm_src.width, fm_src.height
    xs = (np.arange(gw) + 0.5) * (w / gw)
    ys = (np.arange(gh) + 0.5) * (h / gh)
    mx, my = np.meshgrid(xs, ys)
    pts = np.stack([mx.ravel(), my.ravel()], axis=1)
    vec = analytic_displacement(tl, fm_src, fm_dst, k, pts)
    return FlowField(
        vec[:, 0].reshape(gh, gw),
        vec[:, 1].reshape(gh, gw),
        np.ones((gh, gw), dtype=bool),
        direction,
        frame_index,
        w,
        h,
    )


def analytic_flow(tl: SensorTimeline, fm_n: FrameMeta, fm_n1: FrameMeta, k: Intrinsics, grid=(64, 36)):
    """Exact forward/backward flow for a static scene at infinity.

    Per-scanline rotations are applied at both endpoints (destination
    scanline resolved by fixed-point iteration) and OIS shifts frame
    content additively, which makes OIS removal cancel exactly.
    """
    fwd = _flow_one_direction(tl, fm_n, fm_n1, k, grid, FORWARD, fm_n.index)
    bwd = _flow_one_direction(tl, fm_n1, fm_n, k, grid, BACKWARD, fm_n.index)
    return fwd, bwd


# ---------------------------------------------------------------------------
# rendering


def plaid_texture(a, b):
    """Smooth procedural texture over plane-at-infinity coordinates."""
    return (
        127.5
        + 55.0 * np.sin(2.0 * math.pi * a / 0.07) * np.cos(2.0 * math.pi * b / 0.09)
        + 35.0 * np.sin(2.0 * math.pi * (a + b) / 0.23)
    )


def render_synthetic_frame(
    tl: SensorTimeline, fm: FrameMeta, k: Intrinsics, texture=plaid_texture
) -> RasterFrame:
    """Rolling-shutter render of the static scene through the real path."""
    w, h = fm.width, fm.height
    img = np.empty((h, w), dtype=np.uint8)
    xs = np.arange(w) + 0.5
    cx, cy = k.center
    for r in range(h):
        t = scanline_time(fm, r)
        q = query_rotation(tl, t)
        ox, oy = query_ois_many(tl, np.array([t]))
        rays = np.stack(
            [
                (xs - cx - ox[0]) / k.f,
                np.full(w, (r + 0.5 - cy - oy[0]) / k.f),
                np.ones(w),
            ],
            axis=1,
        )
        d = rays @ q.to_matrix().T
        vals = np.where(
            d[:, 2] > 0.0, texture(d[:, 0] / d[:, 2], d[:, 1] / d[:, 2]), 0.0
        )
        img[r] = np.rint(np.clip(vals, 0.0, 255.0)).astype(np.uint8)
    return RasterFrame(img)
