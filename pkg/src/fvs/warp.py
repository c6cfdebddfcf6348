"""Per-scanline-strip warp meshes and stabilized-frame rendering.

A mesh stores, for every vertex of a (cols+1) x (rows+1) grid laid over
the *output* (virtual) frame, the source coordinate in the *input*
(real) frame.  Vertex rows correspond to evenly spaced output
scanlines, so the mesh undoes rolling shutter strip by strip.
Rendering interpolates source coordinates bilinearly inside each mesh
cell und samples the input image bilinearly.

Frames travel as binary PPM (P6) / PGM (P5); mesh dumps are text with
one ``row,col,src_x,src_y,flag`` line per vertex.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import FormatError, InvalidArgumentError, OutOfRangeError
from .flow import row_of
from .pose import CameraPose, Intrinsics, project_points, relative_rotation
from .sensor import FrameMeta, SensorTimeline, query_ois, query_rotation, scanline_time

DEFAULT_STRIPS = (16, 12)  # (cols, rows)


@dataclass(slots=True)
class RasterFrame:
    pixels: np.ndarray  # (h, w) or (h, w, 3), uint8, row-major

    def __post_init__(self):
        self.pixels = np.asarray(self.pixels, dtype=np.uint8)
        if self.pixels.ndim not in (2, 3) or (
            self.pixels.ndim == 3 and self.pixels.shape[2] != 3
        ):
            raise InvalidArgumentError("raster must be (h,w) gray or (h,w,3) rgb")

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def channels(self) -> int:
        return 1 if self.pixels.ndim == 2 else 3


@dataclass(slots=True)
class WarpMesh:
    src_x: np.ndarray  # (rows+1, cols+1) source coordinates, real frame
    src_y: np.ndarray
    oob: np.ndarray  # vertex source left the input frame
    behind: np.ndarray  # back-projection had non-positive depth
    frame_index: int
    width: int  # output frame size
    height: int

    @property
    def rows(self) -> int:
        return self.src_x.shape[0] - 1

    @property
    def cols(self) -> int:
        return self.src_x.shape[1] - 1

    def vertex_positions(self):
        xs = np.linspace(0.0, self.width, self.cols + 1)
        ys = np.linspace(0.0, self.height, self.rows + 1)
        return np.meshgrid(xs, ys)

    def flags(self) -> np.ndarray:
        return self.oob | self.behind


def identity_mesh(width: int, height: int, strips=DEFAULT_STRIPS, frame_index: int = 0) -> WarpMesh:
    cols, rows = strips
    xs = np.linspace(0.0, width, cols + 1)
    ys = np.linspace(0.0, height, rows + 1)
    mx, my = np.meshgrid(xs, ys)
    z = np.zeros_like(mx, dtype=bool)
    return WarpMesh(mx, my, z.copy(), z.copy(), frame_index, width, height)


def build_mesh(
    fm: FrameMeta,
    tl: SensorTimeline,
    p_v: CameraPose,
    k: Intrinsics,
    strips=DEFAULT_STRIPS,
) -> WarpMesh:
    """Warp mesh mapping output pixels back to rolling-shutter input.

    The real pose must be sampled at the scanline time of the *input*
    row, which is unknown until the vertex is projected; two fixed-point
    iterations seeded with the output row resolve it (the rotation
    changes little across the residual row error).
    """
    if not (tl.covers(fm.t_start) and tl.covers(fm.t_start + fm.readout)):
        raise OutOfRangeError(
            f"frame {fm.index} readout [{fm.t_start}, {fm.t_start + fm.readout}] "
            f"not covered by sensor span"
        )
    cols, rows = strips
    xs = np.linspace(0.0, fm.width, cols + 1)
    ys = np.linspace(0.0, fm.height, rows + 1)
    src_x = np.empty((rows + 1, cols + 1))
    src_y = np.empty_like(src_x)
    behind = np.zeros(src_x.shape, dtype=bool)
    for i, y_out in enumerate(ys):
        for j, x_out in enumerate(xs):
            row = float(row_of(y_out, fm.height))
            pt = np.array([x_out, y_out])
            ok = True
            for _ in range(2):
                t = scanline_time(fm, row)
                q_r = query_rotation(tl, t)
                o_r = query_ois(tl, t)
                g = relative_rotation(q_r, p_v.q)
                out, depth = project_points(pt, g, p_v.o, o_r, k)
                if depth <= 0.0:
                    ok = False
                    break
                row = float(row_of(out[1], fm.height))
            if ok:
                src_x[i, j], src_y[i, j] = out
            else:
                behind[i, j] = True
                src_x[i, j], src_y[i, j] = -float(fm.width), -float(fm.height)
    oob = (
        (src_x < 0.0) | (src_x > fm.width) | (src_y < 0.0) | (src_y > fm.height)
    )
    return WarpMesh(src_x, src_y, oob, behind, fm.index, fm.width, fm.height)


def _bilinear_sample(img: np.ndarray, sx, sy):
    """Sample at continuous coords; border strip clamps to edge pixels."""
    h, w = img.shape[:2]
    gx = np.clip(sx - 0.5, 0.0, w - 1.0)
    gy = np.clip(sy - 0.5, 0.0, h - 1.0)
    x0 = np.minimum(np.floor(gx).astype(int), w - 2) if w > 1 else np.zeros_like(gx, dtype=int)
    y0 = np.minimum(np.floor(gy).astype(int), h - 2) if h > 1 else np.zeros_like(gy, dtype=int)
    fx = gx - x0
    fy = gy - y0
    if img.ndim == 3:
        fx = fx[..., None]
        fy = fy[..., None]
    p00 = img[y0, x0].astype(float)
    p01 = img[y0, np.minimum(x0 + 1, w - 1)].astype(float)
    p10 = img[np.minimum(y0 + 1, h - 1), x0].astype(float)
    p11 = img[np.minimum(y0 + 1, h - 1), np.minimum(x0 + 1, w - 1)].astype(float)
    return (
        p00 * (1 - fx) * (1 - fy)
        + p01 * fx * (1 - fy)
        + p10 * (1 - fx) * fy
        + p11 * fx * fy
    )


def render(mesh: WarpMesh, src: RasterFrame):
    """Backward-warp the source frame through the mesh.

    Returns (RasterFrame, coverage mask); uncovered output pixels are
    black with mask False.  Cells touching a behind-camera vertex are
    fully uncovered since their interpolated coordinates are garbage.
    """
    if src.width != mesh.width or src.height != mesh.height:
        raise InvalidArgumentError("mesh and source frame dimensions differ")
    h, w = mesh.height, mesh.width
    out_x = (np.arange(w) + 0.5)[None, :].repeat(h, axis=0)
    out_y = (np.arange(h) + 0.5)[:, None].repeat(w, axis=1)
    cell_w = w / mesh.cols
    cell_h = h / mesh.rows
    cx = np.minimum((out_x / cell_w).astype(int), mesh.cols - 1)
    cy = np.minimum((out_y / cell_h).astype(int), mesh.rows - 1)
    fx = out_x / cell_w - cx
    fy = out_y / cell_h - cy
    sx = (
        mesh.src_x[cy, cx] * (1 - fx) * (1 - fy)
        + mesh.src_x[cy, cx + 1] * fx * (1 - fy)
        + mesh.src_x[cy + 1, cx] * (1 - fx) * fy
        + mesh.src_x[cy + 1, cx + 1] * fx * fy
    )
    sy = (
        mesh.src_y[cy, cx] * (1 - fx) * (1 - fy)
        + mesh.src_y[cy, cx + 1] * fx * (1 - fy)
        + mesh.src_y[cy + 1, cx] * (1 - fx) * fy
        + mesh.src_y[cy + 1, cx + 1] * fx * fy
    )
    bad_cell = (
        mesh.behind[cy, cx]
        | mesh.behind[cy, cx + 1]
        | mesh.behind[cy + 1, cx]
        | mesh.behind[cy + 1, cx + 1]
    )
    covered = (
        ~bad_cell & (sx >= 0.0) & (sx <= mesh.width) & (sy >= 0.0) & (sy <= mesh.height)
    )
    values = _bilinear_sample(src.pixels, sx, sy)
    values[~covered] = 0.0
    out = np.rint(np.clip(values, 0.0, 255.0)).astype(np.uint8)
    return RasterFrame(out), covered


def coverage_ratio(mask: np.ndarray) -> float:
    """Fraction of covered output pixels."""
    mask = np.asarray(mask, dtype=bool)
    if mask.size == 0:
        return 0.0
    return float(mask.mean())


# ---------------------------------------------------------------------------
# file IO


def write_mesh(path, mesh: WarpMesh) -> None:
    flags = mesh.flags()
    with open(path, "w", encoding="ascii") as fh:
        for i in range(mesh.rows + 1):
            for j in range(mesh.cols + 1):
                fh.write(
                    f"{i},{j},{mesh.src_x[i, j]:.17g},{mesh.src_y[i, j]:.17g},"
                    f"{int(flags[i, j])}\n"
                )


def read_mesh(path, width: int, height: int, frame_index: int = 0) -> WarpMesh:
    rows = {}
    with open(path, "r", encoding="ascii") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split(",")
            if len(parts) != 5:
                raise FormatError("expected 5 fields in mesh record", path=path, line=lineno)
            i, j = int(parts[0]), int(parts[1])
            rows[(i, j)] = (float(parts[2]), float(parts[3]), int(parts[4]))
    n_rows = max(i for i, _ in rows) + 1
    n_cols = max(j for _, j in rows) + 1
    src_x = np.empty((n_rows, n_cols))
    src_y = np.empty_like(src_x)
    oob = np.zeros(src_x.shape, dtype=bool)
    for (i, j), (x, y, flag) in rows.items():
        src_x[i, j], src_y[i, j] = x, y
        oob[i, j] = bool(flag)
    return WarpMesh(
        src_x, src_y, oob, np.zeros_like(oob), frame_index, width, height
    )


def write_image(path, frame: RasterFrame) -> None:
    magic = b"P5" if frame.channels == 1 else b"P6"
    header = magic + f" {frame.width} {frame.height} 255\n".encode("ascii")
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(frame.pixels.tobytes())


def read_image(path) -> RasterFrame:
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:2] not in (b"P5", b"P6"):
        raise FormatError("not a binary PGM/PPM file", path=path)
    # header: magic, width, height, maxval as whitespace-separated tokens,
    # with '#' comments; pixel data follows the single byte after maxval
    tokens = []
    pos = 2
    while len(tokens) < 3:
        while pos < len(data) and data[pos : pos + 1].isspace():
            pos += 1
        if data[pos : pos + 1] == b"#":
            while pos < len(data) and data[pos] != 0x0A:
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos : pos + 1].isspace():
            pos += 1
        tokens.append(data[start:pos])
    pos += 1  # single whitespace after maxval
    try:
        w, h, maxval = (int(t) for t in tokens)
    except ValueError:
        raise FormatError("bad PNM header", path=path)
    if maxval != 255:
        raise FormatError(f"unsupported maxval {maxval}", path=path)
    channels = 1 if data[:2] == b"P5" else 3
    need = w * h * channels
    body = data[pos : pos + need]
    if len(body) != need:
        raise FormatError("truncated pixel data", path=path)
    px = np.frombuffer(body, dtype=np.uint8)
    px = px.reshape((h, w) if channels == 1 else (h, w, 3))
    return RasterFrame(px.copy())
