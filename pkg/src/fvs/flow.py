"""Dense optical flow between adjacent frames, OIS-free preparation.

A ``FlowField`` is a (possibly downsampled) grid of displacement
samples in *full-resolution pixel units*.  Grid sample (row r, col c)
sits at full-resolution position ``((c+0.5)*scale_x, (r+0.5)*scale_y)``.

Binary file format (little-endian): magic ``FVSF``, u32 width, u32
height, u32 direction (0=forward, 1=backward), u32 frame_index,
f32 grid_scale, then height*width interleaved (f32 u, f32 v, u8 valid).
The file format implies square grid cells; fields resampled to other
aspect ratios (encoder inputs) stay in memory.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .errors import FormatError, InvalidArgumentError
from .sensor import FrameMeta, SensorTimeline, query_ois_many, scanline_time

MAGIC = b"FVSF"
FORWARD = "forward"
BACKWARD = "backward"

_RECORD = np.dtype([("u", "<f4"), ("v", "<f4"), ("valid", "u1")])


@dataclass(slots=True)
class FlowField:
    u: np.ndarray  # (h, w) displacement x, full-res pixels
    v: np.ndarray  # (h, w) displacement y
    valid: np.ndarray  # (h, w) bool
    direction: str  # FORWARD: n -> n+1, BACKWARD: n+1 -> n
    frame_index: int  # n of the (n, n+1) pair
    frame_width: int
    frame_height: int

    def __post_init__(self):
        self.u = np.asarray(self.u, dtype=float)
        self.v = np.asarray(self.v, dtype=float)
        self.valid = np.asarray(self.valid, dtype=bool)
        if self.u.shape != self.v.shape or self.u.shape != self.valid.shape:
            raise InvalidArgumentError("flow plane shapes differ")
        if self.direction not in (FORWARD, BACKWARD):
            raise InvalidArgumentError(f"bad flow direction {self.direction!r}")

    @property
    def height(self) -> int:
        return self.u.shape[0]

    @property
    def width(self) -> int:
        return self.u.shape[1]

    @property
    def scale_x(self) -> float:
        return self.frame_width / self.width

    @property
    def scale_y(self) -> float:
        return self.frame_height / self.height

    def sample_positions(self):
        """Full-res (x, y) of every grid sample, each shaped (h, w)."""
        xs = (np.arange(self.width) + 0.5) * self.scale_x
        ys = (np.arange(self.height) + 0.5) * self.scale_y
        return np.meshgrid(xs, ys)

    def sample(self, pts):
        """Bilinear flow lookup at full-res positions (N,2).

        Returns (vectors (N,2), ok (N,)); ok is False where the point
        leaves the grid or touches an invalid sample.
        """
        pts = np.atleast_2d(np.asarray(pts, dtype=float))
        gx = pts[:, 0] / self.scale_x - 0.5
        gy = pts[:, 1] / self.scale_y - 0.5
        x0 = np.floor(gx).astype(int)
        y0 = np.floor(gy).astype(int)
        ok = (x0 >= 0) & (x0 <= self.width - 2) & (y0 >= 0) & (y0 <= self.height - 2)
        x0c = np.clip(x0, 0, self.width - 2)
        y0c = np.clip(y0, 0, self.height - 2)
        fx = gx - x0c
        fy = gy - y0c
        w00 = (1 - fx) * (1 - fy)
        w01 = fx * (1 - fy)
        w10 = (1 - fx) * fy
        w11 = fx * fy
        out = np.empty_like(pts)
        for plane, col in ((self.u, 0), (self.v, 1)):
            out[:, col] = (
                w00 * plane[y0c, x0c]
                + w01 * plane[y0c, x0c + 1]
                + w10 * plane[y0c + 1, x0c]
                + w11 * plane[y0c + 1, x0c + 1]
            )
        ok &= (
            self.valid[y0c, x0c]
            & self.valid[y0c, x0c + 1]
            & self.valid[y0c + 1, x0c]
            & self.valid[y0c + 1, x0c + 1]
        )
        return out, ok


def row_of(y, height: int):
    """Continuous full-res y -> clamped scanline row (pixel centers at r+0.5)."""
    return np.clip(np.asarray(y, dtype=float) - 0.5, 0.0, height - 1.0)


def ois_difference(raw: FlowField, tl: SensorTimeline, fm_n: FrameMeta, fm_n1: FrameMeta):
    """Per-sample OIS offset difference O(t_dst) - O(t_src).

    The destination timestamp uses the row of the raw-flow-displaced
    position (single shot; OIS varies slowly over one row of error).
    """
    if raw.direction == FORWARD:
        fm_src, fm_dst = fm_n, fm_n1
    else:
        fm_src, fm_dst = fm_n1, fm_n
    xs, ys = raw.sample_positions()
    t_src = np.array([scanline_time(fm_src, r) for r in row_of(ys[:, 0], fm_src.height)])
    t_src = np.broadcast_to(t_src[:, None], raw.u.shape)
    t_dst = scanline_time_array(fm_dst, row_of(ys + raw.v, fm_dst.height))
    o_src = query_ois_many(tl, t_src)
    o_dst = query_ois_many(tl, t_dst)
    return o_dst[0] - o_src[0], o_dst[1] - o_src[1]


def scanline_time_array(fm: FrameMeta, rows) -> np.ndarray:
    rows = np.asarray(rows, dtype=float)
    if fm.height == 1 or fm.readout == 0:
        return np.full(rows.shape, float(fm.t_start))
    return fm.t_start + fm.readout * (rows / (fm.height - 1))


def remove_ois(raw: FlowField, tl: SensorTimeline, fm_n: FrameMeta, fm_n1: FrameMeta) -> FlowField:
    """Subtract the OIS principal-point motion from a raw flow field."""
    du, dv = ois_difference(raw, tl, fm_n, fm_n1)
    return FlowField(
        raw.u - du,
        raw.v - dv,
        raw.valid.copy(),
        raw.direction,
        raw.frame_index,
        raw.frame_width,
        raw.frame_height,
    )


def resample(f: FlowField, out_w: int, out_h: int) -> FlowField:
    """Validity-aware bilinear (tent) average onto an out_w x out_h grid.

    Displacements stay in full-res pixel units; an output sample is
    valid when at least one contributing input sample is valid.
    """
    if out_w < 1 or out_h < 1:
        raise InvalidArgumentError("resample target must be at least 1x1")
    h, w = f.u.shape
    rx = max(w / out_w, 1.0)
    ry = max(h / out_h, 1.0)
    gx = (np.arange(out_w) + 0.5) * (w / out_w) - 0.5
    gy = (np.arange(out_h) + 0.5) * (h / out_h) - 0.5
    # tent weights along each axis, (out, in); support radius rx/ry
    wx = np.maximum(0.0, 1.0 - np.abs(np.arange(w)[None, :] - gx[:, None]) / rx)
    wy = np.maximum(0.0, 1.0 - np.abs(np.arange(h)[None, :] - gy[:, None]) / ry)
    vmask = f.valid.astype(float)
    wsum = wy @ vmask @ wx.T
    out_u = np.zeros((out_h, out_w))
    out_v = np.zeros((out_h, out_w))
    ok = wsum > 0.0
    nu = wy @ (f.u * vmask) @ wx.T
    nv = wy @ (f.v * vmask) @ wx.T
    out_u[ok] = nu[ok] / wsum[ok]
    out_v[ok] = nv[ok] / wsum[ok]
    return FlowField(out_u, out_v, ok, f.direction, f.frame_index, f.frame_width, f.frame_height)


def chain_trajectories(flows, seeds):
    """Chain forward flows from seed points; bilinear lookups.

    Returns one (T_i, 2) position array per seed (the seed included);
    a trajectory stops growing when it leaves the valid flow region.
    """
    seeds = np.atleast_2d(np.asarray(seeds, dtype=float))
    if seeds.size == 0:
        raise InvalidArgumentError("empty seed set")
    flows = list(flows)
    for a, b in zip(flows, flows[1:]):
        if b.frame_index != a.frame_index + 1:
            raise InvalidArgumentError("flows are not a consecutive forward chain")
    if any(f.direction != FORWARD for f in flows):
        raise InvalidArgumentError("chain_trajectories needs forward flows")
    tracks = [[p.copy()] for p in seeds]
    alive = np.ones(len(seeds), dtype=bool)
    pts = seeds.copy()
    for f in flows:
        if not alive.any():
            break
        vec, ok = f.sample(pts)
        ok &= alive
        pts = pts + vec
        for i in np.nonzero(ok)[0]:
            tracks[i].append(pts[i].copy())
        alive = ok
    return [np.array(t) for t in tracks]


# ---------------------------------------------------------------------------
# file IO


def write_flow(path, f: FlowField) -> None:
    if abs(f.scale_x - f.scale_y) > 1e-9:
        raise FormatError(
            f"flow file needs square grid cells (scale {f.scale_x} vs {f.scale_y})", path=path
        )
    rec = np.empty((f.height, f.width), dtype=_RECORD)
    rec["u"] = f.u.astype("<f4")
    rec["v"] = f.v.astype("<f4")
    rec["valid"] = f.valid.astype("u1")
    header = MAGIC + struct.pack(
        "<IIIIf", f.width, f.height, 0 if f.direction == FORWARD else 1, f.frame_index, f.scale_x
    )
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(rec.tobytes())


def read_flow(path) -> FlowField:
    with open(path, "rb") as fh:
        header = fh.read(24)
        if len(header) != 24 or header[:4] != MAGIC:
            raise FormatError("bad flow file magic/header", path=path)
        w, h, direction, frame_index, scale = struct.unpack("<IIIIf", header[4:])
        if direction not in (0, 1):
            raise FormatError(f"bad flow direction code {direction}", path=path)
        body = fh.read(w * h * _RECORD.itemsize)
        if len(body) != w * h * _RECORD.itemsize:
            raise FormatError("truncated flow body", path=path)
    rec = np.frombuffer(body, dtype=_RECORD).reshape(h, w)
    return FlowField(
        rec["u"].astype(float),
        rec["v"].astype(float),
        rec["valid"].astype(bool),
        FORWARD if direction == 0 else BACKWARD,
        frame_index,
        int(round(w * scale)),
        int(round(h * scale)),
    )
