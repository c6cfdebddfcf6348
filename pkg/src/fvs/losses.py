"""The unsupervised loss suite scoring a candidate virtual camera path.

Five terms: C0/C1 smoothness of the virtual rotations, a look-ahead
protrusion penalty keeping the stabilized crop inside the real frame,
a logistic-gated distortion penalty on the virtual/real angle, and an
optical-flow term pinning corresponding pixels together in the virtual
frame.  Quaternion differences use the 4-vector norm after flipping
signs to a non-negative dot product, so the double cover never affects
a loss value.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateInputError
from .flow import FlowField, row_of
from .pose import CameraPose, Intrinsics, project_points, relative_rotation
from .rotmath import Quaternion, spherical_angle
from .sensor import FrameMeta, SensorTimeline, query_ois, query_rotation, scanline_time


@dataclass(slots=True)
class LossWeights:
    c0: float = 2.0
    c1: float = 40.0
    p: float = 2.0
    d: float = 1.0
    f: float = 1.0

    def as_dict(self):
        return {"c0": self.c0, "c1": self.c1, "p": self.p, "d": self.d, "f": self.f}


@dataclass(slots=True)
class ProtrusionParams:
    sigma: float = 2.5  # frames, Gaussian look-ahead weighting
    n: int = 10  # look-ahead frames
    alpha: float = 0.2  # tolerated protrusion
    beta: float = 0.08  # virtual crop ratio
    gamma: float = 0.04  # real crop ratio


@dataclass(slots=True)
class DistortionParams:
    beta0: float = math.radians(6.0)  # gate threshold, radians
    beta1: float = 100.0  # gate slope, per radian


@dataclass(slots=True)
class LossBreakdown:
    c0: float = 0.0
    c1: float = 0.0
    p: float = 0.0
    d: float = 0.0
    f: float = 0.0
    total: float = 0.0


def _flip_to_dot(qa: Quaternion, qb: Quaternion):
    if qa.dot(qb) < 0.0:
        return qa, qb.neg()
    return qa, qb


def _sqdiff(qa: Quaternion, qb: Quaternion) -> float:
    dw = qa.w - qb.w
    dx = qa.x - qb.x
    dy = qa.y - qb.y
    dz = qa.z - qb.z
    return dw * dw + dx * dx + dy * dy + dz * dz


def loss_c0(q_t: Quaternion, q_prev: Quaternion) -> float:
    """Squared quaternion distance between consecutive virtual poses."""
    qa, qb = _flip_to_dot(q_t, q_prev)
    return _sqdiff(qa, qb)


def loss_c1(q_t: Quaternion, q_prev: Quaternion, q_prev2: Quaternion) -> float:
    """Squared difference of consecutive virtual rotation increments.

    Zero for constant angular velocity.
    """
    d1 = (q_t * q_prev.conj()).canonical()
    d2 = (q_prev * q_prev2.conj()).canonical()
    d1, d2 = _flip_to_dot(d1, d2)
    return _sqdiff(d1, d2)


def protrude(
    p_v: CameraPose, p_r: CameraPose, k: Intrinsics, beta: float, gamma: float
) -> float:
    """Max normalized signed distance of the warped virtual corners
    to the inset real-frame boundary (positive = outside).

    Corners behind the real camera saturate to 1.
    """
    w, h = k.width, k.height
    corners = np.array(
        [
            [beta * w, beta * h],
            [(1 - beta) * w, beta * h],
            [(1 - beta) * w, (1 - beta) * h],
            [beta * w, (1 - beta) * h],
        ]
    )
    g = relative_rotation(p_r.q, p_v.q)
    pts, depth = project_points(corners, g, p_v.o, p_r.o, k)
    if np.any(depth <= 0.0):
        return 1.0
    dx = np.maximum((gamma * w - pts[:, 0]) / w, (pts[:, 0] - (1 - gamma) * w) / w)
    dy = np.maximum((gamma * h - pts[:, 1]) / h, (pts[:, 1] - (1 - gamma) * h) / h)
    return float(np.max(np.maximum(dx, dy)))


def protrusion_weights(m: int, sigma: float) -> np.ndarray:
    """Half-Gaussian look-ahead weights over i=0..m-1, normalized to 1."""
    i = np.arange(m, dtype=float)
    w = np.exp(-(i * i) / (2.0 * sigma * sigma))
    return w / w.sum()


def loss_protrusion(
    vpose: CameraPose, real_poses, k: Intrinsics, params: ProtrusionParams
) -> float:
    """Gaussian-weighted, clamped, saturated protrusion over the look-ahead.

    ``real_poses`` holds the poses at t, t+dt, ..., up to t+n*dt; near
    the end of a capture the window may be shorter and the weights are
    renormalized over what is available.
    """
    m = len(real_poses)
    if m == 0:
        raise DegenerateInputError("no real poses for protrusion window")
    w = protrusion_weights(m, params.sigma)
    total = 0.0
    for i, p_r in enumerate(real_poses):
        pr = protrude(vpose, p_r, k, params.beta, params.gamma)
        term = min(max(pr, 0.0) / params.alpha, 1.0)
        total += w[i] * term * term
    return total


def loss_distortion(q_v: Quaternion, q_r: Quaternion, params: DistortionParams) -> float:
    """Spherical angle gated by a logistic: inactive below beta0."""
    omega = spherical_angle(q_v, q_r)
    if omega == 0.0:
        return 0.0
    return omega / (1.0 + math.exp(-params.beta1 * (omega - params.beta0)))


# ---------------------------------------------------------------------------
# flow loss


def real_rays(tl: SensorTimeline, fm: FrameMeta, k: Intrinsics, pts) -> np.ndarray:
    """World rays of real-frame pixels, per-scanline rotation and OIS.

    Rows are clamped into the frame so slightly out-of-frame flow
    targets still resolve to a sensible scanline time.
    """
    pts = np.atleast_2d(np.asarray(pts, dtype=float))
    rows = row_of(pts[:, 1], fm.height)
    rays = np.empty((len(pts), 3))
    cx, cy = k.center
    uniq, inverse = np.unique(rows, return_inverse=True)
    for j, row in enumerate(uniq):
        t = scanline_time(fm, row)
        q = query_rotation(tl, t)
        o = query_ois(tl, t)
        sel = inverse == j
        hx = (pts[sel, 0] - cx - o[0]) / k.f
        hy = (pts[sel, 1] - cy - o[1]) / k.f
        m = q.to_matrix()
        rays[sel] = np.stack([hx, hy, np.ones(hx.shape)], axis=1) @ m.T
    return rays


def rays_to_virtual(rays, q_v: Quaternion, k: Intrinsics, o_v=(0.0, 0.0)):
    """Project world rays into the (global-shutter) virtual camera."""
    d = np.atleast_2d(rays) @ q_v.to_matrix()  # == R(q_v)^T @ ray, row form
    depth = d[:, 2]
    ok = depth > 0.0
    out = np.empty((len(d), 2))
    cx, cy = k.center
    with np.errstate(divide="ignore", invalid="ignore"):
        out[:, 0] = k.f * d[:, 0] / depth + cx + o_v[0]
        out[:, 1] = k.f * d[:, 1] / depth + cy + o_v[1]
    return out, ok


class ScanlineProjector:
    """Real-frame pixels -> virtual frame for one frame's poses.

    The real pose is evaluated at each pixel's scanline time; the
    virtual camera is a single global-shutter pose.
    """

    def __init__(self, tl: SensorTimeline, fm: FrameMeta, k: Intrinsics, q_v: Quaternion):
        self.tl = tl
        self.fm = fm
        self.k = k
        self.q_v = q_v

    def map(self, pts):
        rays = real_rays(self.tl, self.fm, self.k, pts)
        return rays_to_virtual(rays, self.q_v, self.k)


def _inside(pts, w, h):
    return (pts[:, 0] >= 0) & (pts[:, 0] < w) & (pts[:, 1] >= 0) & (pts[:, 1] < h)


def sample_grid(frame_w: int, frame_h: int, gw: int, gh: int) -> np.ndarray:
    """Coarse evaluation grid of full-res positions, shape (gw*gh, 2)."""
    xs = (np.arange(gw) + 0.5) * (frame_w / gw)
    ys = (np.arange(gh) + 0.5) * (frame_h / gh)
    mx, my = np.meshgrid(xs, ys)
    return np.stack([mx.ravel(), my.ravel()], axis=1)


def _directional_flow_term(t_src, t_dst, fl: FlowField, grid):
    pts = sample_grid(fl.frame_width, fl.frame_height, grid[0], grid[1])
    vec, ok = fl.sample(pts)
    targets = pts + vec
    a, ok_a = t_src.map(pts)
    b, ok_b = t_dst.map(targets)
    w, h = fl.frame_width, fl.frame_height
    use = ok & ok_a & ok_b & _inside(a, w, h) & _inside(b, w, h)
    if not use.any():
        return 0.0, 0
    diff = a[use] - b[use]
    return float(np.mean(np.sum(diff * diff, axis=1))), int(use.sum())


def loss_flow(t_n, t_n1, fwd: FlowField, bwd: FlowField, grid=(16, 16)) -> float:
    """Mean squared virtual-space separation of flow correspondences.

    Forward term samples frame n, backward term frame n+1; samples are
    dropped when the flow lookup is invalid or either mapped point
    leaves the frame.  The two directional means are summed.
    """
    fwd_term, n_fwd = _directional_flow_term(t_n, t_n1, fwd, grid)
    bwd_term, n_bwd = _directional_flow_term(t_n1, t_n, bwd, grid)
    if n_fwd == 0 and n_bwd == 0:
        raise DegenerateInputError("flow loss has no valid samples in either direction")
    return fwd_term + bwd_term


def total_loss(
    c0: float, c1: float, p: float, d: float, f: float, weights: LossWeights
) -> LossBreakdown:
    total = (
        weights.c0 * c0 + weights.c1 * c1 + weights.p * p + weights.d * d + weights.f * f
    )
    return LossBreakdown(c0, c1, p, d, f, total)


def write_loss_report(path, rows) -> None:
    """Text report: ``frame,L_c0,L_c1,L_p,L_d,L_f,total`` per line."""
    with open(path, "w", encoding="ascii") as fh:
        fh.write("# frame,L_c0,L_c1,L_p,L_d,L_f,total\n")
        for frame, bd in rows:
            fh.write(
                f"{frame},{bd.c0:.17g},{bd.c1:.17g},{bd.p:.17g},"
                f"{bd.d:.17g},{bd.f:.17g},{bd.total:.17g}\n"
            )
