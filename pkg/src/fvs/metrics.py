"""Stabilization quality scores: stability, distortion, correlation, FOV.

Stability is a frequency-domain score on the virtual-rotation Euler
series (or on feature-trajectory coordinates): the fraction of non-DC
spectral energy that sits in the low bins 2..6.  Distortion and FOV
come from per-frame input->output homographies (closed form when the
warp is rigid, least-squares fits otherwise); correlation compares the
homography-warped input against the actual output with ZNCC.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidArgumentError
from .rotmath import Quaternion
from .warp import RasterFrame, _bilinear_sample

MIN_STABILITY_SAMPLES = 64
LOW_BIN_FIRST, LOW_BIN_LAST = 2, 6


@dataclass(slots=True)
class MetricReport:
    stability: float
    distortion: float
    correlation: float
    fov_ratio: float
    per_frame: dict = field(default_factory=dict)

    def rows(self):
        return [
            ("stability", self.stability),
            ("distortion", self.distortion),
            ("correlation", self.correlation),
            ("fov_ratio", self.fov_ratio),
        ]


def quat_euler(q: Quaternion):
    """Intrinsic x-y-z Euler angles; any fixed convention works here."""
    roll = math.atan2(2 * (q.w * q.x + q.y * q.z), 1 - 2 * (q.x * q.x + q.y * q.y))
    arg = 2 * (q.w * q.y - q.z * q.x)
    pitch = math.asin(max(-1.0, min(1.0, arg)))
    yaw = math.atan2(2 * (q.w * q.z + q.x * q.y), 1 - 2 * (q.y * q.y + q.z * q.z))
    return roll, pitch, yaw


def _band_energy(series: np.ndarray):
    spectrum = np.abs(np.fft.rfft(series)) ** 2
    low = float(spectrum[LOW_BIN_FIRST : LOW_BIN_LAST + 1].sum())
    tail = float(spectrum[LOW_BIN_FIRST:].sum())
    return low, tail


def stability_of_series(series_list) -> float:
    """Low-band share of the pooled non-DC energy across all series.

    Pooling (rather than a per-series mean) keeps motion-free series,
    whose ratio is degenerate, from diluting the score; a fully static
    input is defined as 1.0.
    """
    low_sum = tail_sum = 0.0
    for s in series_list:
        s = np.asarray(s, dtype=float)
        if len(s) < MIN_STABILITY_SAMPLES:
            raise InvalidArgumentError(
                f"stability needs >= {MIN_STABILITY_SAMPLES} samples, got {len(s)}"
            )
        low, tail = _band_energy(s)
        low_sum += low
        tail_sum += tail
    if tail_sum < 1e-12:
        return 1.0
    return low_sum / tail_sum


def stability_of_path(quats) -> float:
    """Stability of a rotation sequence via its three Euler-angle series."""
    angles = np.array([quat_euler(q) for q in quats])
    return stability_of_series([np.unwrap(angles[:, i]) for i in range(3)])


def stability_of_trajectories(tracks) -> float:
    """Stability of chained/tracked feature trajectories (x and y series)."""
    series = []
    for t in tracks:
        t = np.asarray(t, dtype=float)
        series.append(t[:, 0])
        series.append(t[:, 1])
    return stability_of_series(series)


# ---------------------------------------------------------------------------
# homography-based scores


def fit_homography(src, dst) -> np.ndarray:
    """Normalized DLT least-squares fit mapping src -> dst (>= 64 pairs)."""
    src = np.asarray(src, dtype=float)
    dst = np.asarray(dst, dtype=float)
    if len(src) < 64:
        raise InvalidArgumentError(f"homography fit needs >= 64 correspondences, got {len(src)}")
    if np.array_equal(src, dst):
        return np.eye(3)

    def normalize(pts):
        c = pts.mean(axis=0)
        scale = math.sqrt(2.0) / max(np.mean(np.linalg.norm(pts - c, axis=1)), 1e-12)
        t = np.array([[scale, 0, -scale * c[0]], [0, scale, -scale * c[1]], [0, 0, 1]])
        return (pts - c) * scale, t

    ns, ts = normalize(src)
    nd, td = normalize(dst)
    a = np.zeros((2 * len(src), 9))
    a[0::2, 0:2] = ns
    a[0::2, 2] = 1
    a[0::2, 6:8] = -ns * nd[:, :1]
    a[0::2, 8] = -nd[:, 0]
    a[1::2, 3:5] = ns
    a[1::2, 5] = 1
    a[1::2, 6:8] = -ns * nd[:, 1:2]
    a[1::2, 8] = -nd[:, 1]
    _, _, vt = np.linalg.svd(a, full_matrices=False)
    h = vt[-1].reshape(3, 3)
    h = np.linalg.inv(td) @ h @ ts
    return h / h[2, 2]


def singular_values_2x2(a: np.ndarray):
    """Closed-form singular values; exact for identity and diagonal input."""
    q1 = (a[0, 0] + a[1, 1]) ** 2 + (a[0, 1] - a[1, 0]) ** 2
    q2 = (a[0, 0] - a[1, 1]) ** 2 + (a[0, 1] + a[1, 0]) ** 2
    s1 = math.sqrt(q1)
    s2 = math.sqrt(q2)
    return (s1 + s2) / 2.0, abs(s1 - s2) / 2.0


def _affine_part(h: np.ndarray) -> np.ndarray:
    return h[:2, :2] / h[2, 2]


def distortion_of_homographies(homographies) -> float:
    """Min over frames of the affine-part singular-value ratio."""
    worst = 1.0
    series = []
    for h in homographies:
        smax, smin = singular_values_2x2(_affine_part(np.asarray(h, dtype=float)))
        ratio = smin / smax if smax > 0 else 0.0
        series.append(ratio)
        worst = min(worst, ratio)
    if not series:
        raise InvalidArgumentError("no homographies")
    return worst, series


def fov_ratio_of_homographies(homographies) -> float:
    """Mean per-frame min(scale, 1/scale); cropping lowers the score."""
    series = []
    for h in homographies:
        a = _affine_part(np.asarray(h, dtype=float))
        scale = math.sqrt(abs(a[0, 0] * a[1, 1] - a[0, 1] * a[1, 0]))
        series.append(min(scale, 1.0 / scale) if scale > 0 else 0.0)
    if not series:
        raise InvalidArgumentError("no homographies")
    return float(np.mean(series)), series


def warp_by_homography(img: np.ndarray, h: np.ndarray):
    """Backward-warp img by the pixel map h; returns (warped, mask)."""
    hh, ww = img.shape[:2]
    hinv = np.linalg.inv(h)
    ox, oy = np.meshgrid(np.arange(ww) + 0.5, np.arange(hh) + 0.5)
    pts = np.stack([ox.ravel(), oy.ravel(), np.ones(ox.size)], axis=1) @ hinv.T
    sx = (pts[:, 0] / pts[:, 2]).reshape(hh, ww)
    sy = (pts[:, 1] / pts[:, 2]).reshape(hh, ww)
    mask = (sx >= 0) & (sx <= ww) & (sy >= 0) & (sy <= hh) & (pts[:, 2].reshape(hh, ww) > 0)
    warped = _bilinear_sample(img, sx, sy)
    return warped, mask


def zncc(a: np.ndarray, b: np.ndarray) -> float:
    """Zero-normalized cross-correlation with a zero-variance guard."""
    a = a.astype(float).ravel()
    b = b.astype(float).ravel()
    va = a - a.mean()
    vb = b - b.mean()
    na = np.linalg.norm(va)
    nb = np.linalg.norm(vb)
    if na < 1e-9 or nb < 1e-9:
        return 1.0
    return float(np.dot(va, vb) / (na * nb))


def correlation_of_frames(inputs, outputs, homographies) -> float:
    """Mean ZNCC of homography-warped input vs output, clamped to [0, 1]."""
    series = []
    for src, dst, h in zip(inputs, outputs, homographies):
        src_px = src.pixels if isinstance(src, RasterFrame) else np.asarray(src)
        dst_px = dst.pixels if isinstance(dst, RasterFrame) else np.asarray(dst)
        if src_px.ndim == 3:
            src_px = src_px.mean(axis=2)
            dst_px = dst_px.mean(axis=2)
        warped, mask = warp_by_homography(src_px, np.asarray(h, dtype=float))
        # compare over the covered region, away from resampling borders
        mask &= dst_px > 0
        if mask.sum() < 16:
            series.append(1.0)
            continue
        series.append(min(max(zncc(warped[mask], dst_px[mask]), 0.0), 1.0))
    if not series:
        raise InvalidArgumentError("no frames")
    return float(np.mean(series)), series


def evaluate(
    quats,
    homographies,
    inputs=None,
    outputs=None,
) -> MetricReport:
    """Full report; correlation falls back to 1.0 when frames are absent."""
    stability = stability_of_path(quats)
    distortion, d_series = distortion_of_homographies(homographies)
    fov, f_series = fov_ratio_of_homographies(homographies)
    if inputs is not None and outputs is not None:
        correlation, c_series = correlation_of_frames(inputs, outputs, homographies)
    else:
        correlation, c_series = 1.0, []
    return MetricReport(
        stability,
        distortion,
        correlation,
        fov,
        per_frame={"distortion": d_series, "fov_ratio": f_series, "correlation": c_series},
    )


def write_report(path, report: MetricReport) -> None:
    with open(path, "w", encoding="ascii") as fh:
        for name, value in report.rows():
            fh.write(f"{name},{value:.17g}\n")


def write_series(path, name: str, values) -> None:
    with open(path, "w", encoding="ascii") as fh:
        for i, v in enumerate(values):
            fh.write(f"{i},{v:.17g}\n")
