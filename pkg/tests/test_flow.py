import numpy as np
import pytest

from fvs.errors import FormatError, InvalidArgumentError
from fvs.flow import (
    BACKWARD,
    FORWARD,
    FlowField,
    chain_trajectories,
    ois_difference,
    read_flow,
    remove_ois,
    resample,
    write_flow,
)
from fvs.sensor import FrameMeta, GyroSample, OisSample, integrate_gyro

DT = 5_000_000


def make_timeline(ois_fn=None, seconds=0.5):
    n = int(seconds * 200) + 1
    gyro = [GyroSample(i * DT, np.zeros(3)) for i in range(n)]
    ois = None
    if ois_fn is not None:
        ois = [OisSample(i * DT, np.asarray(ois_fn(i * DT), dtype=float)) for i in range(n)]
    return integrate_gyro(gyro, ois)


def make_flow(u, v, valid=None, direction=FORWARD, frame_w=None, frame_h=None):
    u = np.asarray(u, dtype=float)
    if valid is None:
        valid = np.ones(u.shape, dtype=bool)
    return FlowField(
        u,
        np.asarray(v, dtype=float),
        valid,
        direction,
        0,
        frame_w or u.shape[1],
        frame_h or u.shape[0],
    )


FRAMES = [
    FrameMeta(0, 10_000_000, 20_000_000, 16, 12),
    FrameMeta(1, 50_000_000, 20_000_000, 16, 12),
]


class TestRemoveOis:
    def test_zero_ois_is_identity(self):
        tl = make_timeline(lambda t: (0.0, 0.0))
        raw = make_flow(np.random.default_rng(0).normal(size=(12, 16)), np.zeros((12, 16)))
        out = remove_ois(raw, tl, *FRAMES)
        np.testing.assert_array_equal(out.u, raw.u)
        np.testing.assert_array_equal(out.v, raw.v)

    def test_constant_ois_cancels(self):
        tl = make_timeline(lambda t: (3.5, -1.25))
        raw = make_flow(np.full((12, 16), 2.0), np.full((12, 16), -1.0))
        out = remove_ois(raw, tl, *FRAMES)
        np.testing.assert_array_equal(out.u, raw.u)
        np.testing.assert_array_equal(out.v, raw.v)

    def test_direct_substitution(self):
        # O at destination time (1,0), at source time (0,0), raw flow (5,5)
        def ois(t):
            return (1.0, 0.0) if t >= 40_000_000 else (0.0, 0.0)

        tl = make_timeline(ois)
        raw = make_flow(np.full((12, 16), 5.0), np.full((12, 16), 5.0))
        fm0 = FrameMeta(0, 10_000_000, 0, 16, 12)
        fm1 = FrameMeta(1, 50_000_000, 0, 16, 12)
        out = remove_ois(raw, tl, fm0, fm1)
        np.testing.assert_allclose(out.u, 4.0)
        np.testing.assert_allclose(out.v, 5.0)

    def test_exactly_invertible(self):
        # adding back the same differences restores the raw flow; IEEE
        # rounding of (a - d) + d permits at most 1 ulp of drift
        rng = np.random.default_rng(7)
        tl = make_timeline(lambda t: (2.0 * np.sin(t * 1e-8), np.cos(t * 1e-8)))
        raw = make_flow(rng.normal(size=(12, 16)), rng.normal(size=(12, 16)))
        du, dv = ois_difference(raw, tl, *FRAMES)
        out = remove_ois(raw, tl, *FRAMES)
        eps = np.finfo(float).eps
        for restored, orig, d in ((out.u + du, raw.u, du), (out.v + dv, raw.v, dv)):
            tol = 4 * eps * np.maximum(np.abs(orig), np.abs(d))
            assert np.all(np.abs(restored - orig) <= tol)

    def test_invertible_bitwise_with_zero_ois(self):
        rng = np.random.default_rng(8)
        tl = make_timeline(lambda t: (0.0, 0.0))
        raw = make_flow(rng.normal(size=(12, 16)), rng.normal(size=(12, 16)))
        du, dv = ois_difference(raw, tl, *FRAMES)
        out = remove_ois(raw, tl, *FRAMES)
        np.testing.assert_array_equal(out.u + du, raw.u)
        np.testing.assert_array_equal(out.v + dv, raw.v)

    def test_mask_preserved(self):
        tl = make_timeline(lambda t: (1.0, 1.0))
        valid = np.zeros((12, 16), dtype=bool)
        valid[::2, ::3] = True
        raw = make_flow(np.ones((12, 16)), np.ones((12, 16)), valid=valid)
        out = remove_ois(raw, tl, *FRAMES)
        np.testing.assert_array_equal(out.valid, valid)

    def test_backward_direction_symmetric(self):
        def ois(t):
            return (1.0, 0.0) if t >= 40_000_000 else (0.0, 0.0)

        tl = make_timeline(ois)
        fm0 = FrameMeta(0, 10_000_000, 0, 16, 12)
        fm1 = FrameMeta(1, 50_000_000, 0, 16, 12)
        # backward flow lives on frame 1; destination times are frame 0's
        raw = make_flow(np.full((12, 16), -5.0), np.zeros((12, 16)), direction=BACKWARD)
        out = remove_ois(raw, tl, fm0, fm1)
        np.testing.assert_allclose(out.u, -5.0 - (0.0 - 1.0))

    def test_commutes_with_resample_for_constant_ois(self):
        rng = np.random.default_rng(3)
        tl = make_timeline(lambda t: (4.0, -2.0))
        raw = make_flow(rng.normal(size=(12, 16)), rng.normal(size=(12, 16)))
        a = resample(remove_ois(raw, tl, *FRAMES), 8, 6)
        b = remove_ois(resample(raw, 8, 6), tl, *FRAMES)
        np.testing.assert_allclose(a.u, b.u, atol=1e-6)
        np.testing.assert_allclose(a.v, b.v, atol=1e-6)


def brute_force_resample(f, out_w, out_h):
    """Independent per-cell tent-kernel accumulation."""
    h, w = f.u.shape
    rx = max(w / out_w, 1.0)
    ry = max(h / out_h, 1.0)
    out_u = np.zeros((out_h, out_w))
    out_v = np.zeros((out_h, out_w))
    ok = np.zeros((out_h, out_w), dtype=bool)
    for oy in range(out_h):
        gy = (oy + 0.5) * h / out_h - 0.5
        for ox in range(out_w):
            gx = (ox + 0.5) * w / out_w - 0.5
            acc_u = acc_v = acc_w = 0.0
            for iy in range(h):
                for ix in range(w):
                    if not f.valid[iy, ix]:
                        continue
                    wgt = max(0.0, 1.0 - abs(ix - gx) / rx) * max(0.0, 1.0 - abs(iy - gy) / ry)
                    acc_u += wgt * f.u[iy, ix]
                    acc_v += wgt * f.v[iy, ix]
                    acc_w += wgt
            if acc_w > 0:
                out_u[oy, ox] = acc_u / acc_w
                out_v[oy, ox] = acc_v / acc_w
                ok[oy, ox] = True
    return out_u, out_v, ok


class TestResample:
    def test_same_size_is_identity(self):
        rng = np.random.default_rng(1)
        f = make_flow(rng.normal(size=(6, 9)), rng.normal(size=(6, 9)))
        out = resample(f, 9, 6)
        np.testing.assert_allclose(out.u, f.u, atol=1e-12)
        np.testing.assert_allclose(out.v, f.v, atol=1e-12)

    def test_constant_field_any_size(self):
        f = make_flow(np.full((7, 5), 3.0), np.full((7, 5), -2.0))
        for shape in ((3, 2), (10, 14), (1, 1)):
            out = resample(f, *shape)
            np.testing.assert_allclose(out.u, 3.0, atol=1e-12)
            np.testing.assert_allclose(out.v, -2.0, atol=1e-12)

    def test_checkerboard_matches_brute_force(self):
        rng = np.random.default_rng(5)
        valid = np.indices((8, 10)).sum(axis=0) % 2 == 0
        f = make_flow(rng.normal(size=(8, 10)), rng.normal(size=(8, 10)), valid=valid)
        for out_w, out_h in ((5, 4), (10, 8), (16, 13)):
            out = resample(f, out_w, out_h)
            bu, bv, bok = brute_force_resample(f, out_w, out_h)
            np.testing.assert_allclose(out.u, bu, atol=1e-12)
            np.testing.assert_allclose(out.v, bv, atol=1e-12)
            np.testing.assert_array_equal(out.valid, bok)

    def test_rejects_empty_target(self):
        f = make_flow(np.zeros((4, 4)), np.zeros((4, 4)))
        with pytest.raises(InvalidArgumentError):
            resample(f, 0, 4)


class TestChainTrajectories:
    def flows(self, u_val, v_val, n=10, shape=(24, 32)):
        out = []
        for i in range(n):
            f = make_flow(np.full(shape, float(u_val)), np.full(shape, float(v_val)))
            f.frame_index = i
            out.append(f)
        return out

    def test_zero_flow_stationary(self):
        tracks = chain_trajectories(self.flows(0, 0), [(16.0, 12.0)])
        assert len(tracks[0]) == 11
        np.testing.assert_allclose(tracks[0][-1], [16.0, 12.0])

    def test_constant_flow_accumulates(self):
        tracks = chain_trajectories(self.flows(1, 0), [(2.0, 12.0)])
        np.testing.assert_allclose(tracks[0][-1], [12.0, 12.0], atol=1e-12)

    def test_terminates_on_leaving_grid(self):
        tracks = chain_trajectories(self.flows(10, 0, n=10), [(16.0, 12.0)])
        assert len(tracks[0]) < 11

    def test_empty_seed_set_rejected(self):
        with pytest.raises(InvalidArgumentError):
            chain_trajectories(self.flows(0, 0), np.zeros((0, 2)))

    def test_backward_flow_rejected(self):
        f = make_flow(np.zeros((4, 4)), np.zeros((4, 4)), direction=BACKWARD)
        with pytest.raises(InvalidArgumentError):
            chain_trajectories([f], [(2.0, 2.0)])


class TestFlowIO:
    def test_round_trip(self, tmp_path):
        rng = np.random.default_rng(2)
        valid = rng.random((6, 8)) > 0.3
        f = FlowField(
            rng.normal(size=(6, 8)).astype(np.float32),
            rng.normal(size=(6, 8)).astype(np.float32),
            valid,
            BACKWARD,
            17,
            32,
            24,
        )
        path = tmp_path / "f.fvsf"
        write_flow(path, f)
        g = read_flow(path)
        np.testing.assert_array_equal(g.u, f.u)
        np.testing.assert_array_equal(g.v, f.v)
        np.testing.assert_array_equal(g.valid, f.valid)
        assert g.direction == BACKWARD
        assert g.frame_index == 17
        assert (g.frame_width, g.frame_height) == (32, 24)

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "bad.fvsf"
        path.write_bytes(b"NOPE" + b"\0" * 40)
        with pytest.raises(FormatError):
            read_flow(path)

    def test_truncated_body(self, tmp_path):
        f = make_flow(np.zeros((4, 4)), np.zeros((4, 4)))
        path = tmp_path / "f.fvsf"
        write_flow(path, f)
        data = path.read_bytes()
        path.write_bytes(data[:-5])
        with pytest.raises(FormatError):
            read_flow(path)

    def test_non_square_cells_rejected(self, tmp_path):
        f = FlowField(np.zeros((4, 8)), np.zeros((4, 8)), np.ones((4, 8), bool), FORWARD, 0, 16, 16)
        with pytest.raises(FormatError):
            write_flow(tmp_path / "f.fvsf", f)
