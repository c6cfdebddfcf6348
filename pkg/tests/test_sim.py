import math

import numpy as np
import pytest

from fvs.errors import InvalidArgumentError
from fvs.flow import chain_trajectories, remove_ois
from fvs.pose import CameraPose, Intrinsics
from fvs.rotmath import IDENTITY, Quaternion, spherical_angle
from fvs.sensor import query_rotation
from fvs.sim import (
    ShakeSpec,
    analytic_displacement,
    analytic_flow,
    generate_capture,
    plaid_texture,
    render_synthetic_frame,
)
from fvs.warp import build_mesh, render

F_TAN_1DEG = 26.38856715847935  # 1511.8 * tan(1 degree), 40-digit evaluation


def quat_yaw(q):
    return math.atan2(
        2 * (q.w * q.y + q.z * q.x), 1 - 2 * (q.x * q.x + q.y * q.y)
    )


class TestGenerateCapture:
    def test_zero_shake_constant_base_gives_zero_gyro(self):
        cap = generate_capture(ShakeSpec(duration=1.0, shake_amp_deg=0.0, seed=1))
        for s in cap.gyro:
            assert np.all(s.omega == 0.0)

    def test_integration_round_trip(self):
        spec = ShakeSpec(duration=2.0, shake_amp_deg=1.0, seed=3)
        cap = generate_capture(spec)
        seconds = (cap.timeline.t_last - cap.timeline.t_first) * 1e-9
        worst = max(
            spherical_angle(q, cap.truth.quats[i])
            for i, q in enumerate(cap.timeline.rot_q)
        )
        assert worst < 1e-7 * seconds

    def test_panning_final_yaw(self):
        spec = ShakeSpec(
            duration=2.0, base="panning", pan_rate_deg=10.0, shake_amp_deg=0.0, seed=0
        )
        cap = generate_capture(spec)
        t0 = cap.frames[0].t_start
        t1 = cap.frames[-1].t_start
        q0 = query_rotation(cap.timeline, t0)
        q1 = query_rotation(cap.timeline, t1)
        swept = quat_yaw(q1) - quat_yaw(q0)
        elapsed = (t1 - t0) * 1e-9
        assert swept == pytest.approx(math.radians(10.0) * elapsed, abs=1e-6)

    def test_frame_count_and_coverage(self):
        spec = ShakeSpec(duration=2.0, fps=30.0, seed=7)
        cap = generate_capture(spec)
        assert len(cap.frames) == 60
        lookahead = 10 * 40_000_000
        assert cap.frames[0].t_start - lookahead >= cap.timeline.t_first
        assert cap.frames[-1].t_start + lookahead <= cap.timeline.t_last

    def test_seeded_reproducibility(self):
        a = generate_capture(ShakeSpec(duration=1.0, seed=5))
        b = generate_capture(ShakeSpec(duration=1.0, seed=5))
        for sa, sb in zip(a.gyro, b.gyro):
            np.testing.assert_array_equal(sa.omega, sb.omega)

    def test_bad_band_rejected(self):
        with pytest.raises(InvalidArgumentError):
            generate_capture(ShakeSpec(shake_band=(8.0, 2.0)))


def small_capture(**kw):
    defaults = dict(duration=1.0, fps=25.0, width=640, height=480, shake_amp_deg=0.8, seed=11)
    defaults.update(kw)
    return generate_capture(ShakeSpec(**defaults))


class TestAnalyticFlow:
    def test_static_global_shutter_zero_flow(self):
        cap = small_capture(shake_amp_deg=0.0, readout_ns=0)
        fwd, bwd = analytic_flow(cap.timeline, cap.frames[0], cap.frames[1], cap.intrinsics)
        assert np.max(np.abs(fwd.u)) == 0.0
        assert np.max(np.abs(bwd.v)) == 0.0

    def test_one_degree_yaw_center_displacement(self):
        # constant-rate panning crossing 1 degree between two frames
        fps = 25.0
        spec = ShakeSpec(
            duration=1.0,
            fps=fps,
            width=1920,
            height=1080,
            readout_ns=0,
            base="panning",
            pan_rate_deg=1.0 * fps,
            shake_amp_deg=0.0,
            seed=0,
        )
        cap = generate_capture(spec)
        vec = analytic_displacement(
            cap.timeline, cap.frames[0], cap.frames[1], cap.intrinsics, [[960.0, 540.0]]
        )
        assert abs(vec[0, 0]) == pytest.approx(F_TAN_1DEG, abs=1e-6)
        assert vec[0, 1] == pytest.approx(0.0, abs=1e-9)
        # grid samples agree up to bilinear interpolation error
        fwd, _ = analytic_flow(
            cap.timeline, cap.frames[0], cap.frames[1], cap.intrinsics, grid=(64, 36)
        )
        sampled, ok = fwd.sample(np.array([[960.0, 540.0]]))
        assert ok[0]
        assert abs(sampled[0, 0]) == pytest.approx(F_TAN_1DEG, abs=5e-3)

    def test_ois_cancellation(self):
        cap = small_capture(ois_amp_px=3.0, readout_ns=25_000_000)
        cap0 = small_capture(ois_amp_px=0.0, readout_ns=25_000_000)
        fm0, fm1 = cap.frames[0], cap.frames[1]
        fwd, bwd = analytic_flow(cap.timeline, fm0, fm1, cap.intrinsics)
        fwd0, bwd0 = analytic_flow(cap0.timeline, fm0, fm1, cap0.intrinsics)
        for with_ois, without in ((fwd, fwd0), (bwd, bwd0)):
            clean = remove_ois(with_ois, cap.timeline, fm0, fm1)
            assert np.max(np.abs(clean.u - without.u)) < 1e-6
            assert np.max(np.abs(clean.v - without.v)) < 1e-6

    def test_forward_backward_chaining_consistency(self):
        cap = small_capture(readout_ns=25_000_000)
        fm0, fm1 = cap.frames[0], cap.frames[1]
        fwd, _ = analytic_flow(cap.timeline, fm0, fm1, cap.intrinsics, grid=(32, 24))
        xs, ys = fwd.sample_positions()
        pts = np.stack([xs.ravel(), ys.ravel()], axis=1)
        fwd_vec = np.stack([fwd.u.ravel(), fwd.v.ravel()], axis=1)
        landed = pts + fwd_vec
        back_vec = analytic_displacement(cap.timeline, fm1, fm0, cap.intrinsics, landed)
        returned = landed + back_vec
        assert np.max(np.abs(returned - pts)) < 1e-6

    def test_flow_scales_with_focal_length(self):
        cap = small_capture(shake_amp_deg=0.0, readout_ns=0, base="panning", pan_rate_deg=5.0)
        fm0, fm1 = cap.frames[0], cap.frames[1]
        k1 = Intrinsics(640, 480, f=1511.8)
        k2 = Intrinsics(640, 480, f=3023.6)
        f1, _ = analytic_flow(cap.timeline, fm0, fm1, k1, grid=(8, 6))
        f2, _ = analytic_flow(cap.timeline, fm0, fm1, k2, grid=(8, 6))
        center = (slice(2, 4), slice(3, 5))
        ratio = f2.u[center] / f1.u[center]
        np.testing.assert_allclose(ratio, 2.0, rtol=0.01)

    def test_chained_trajectories_match_homography_composition(self):
        cap = small_capture(readout_ns=0, shake_amp_deg=0.4)
        k = cap.intrinsics
        flows = []
        for fm_a, fm_b in zip(cap.frames[:6], cap.frames[1:7]):
            fwd, _ = analytic_flow(cap.timeline, fm_a, fm_b, k, grid=(64, 48))
            flows.append(fwd)
        seeds = np.array([[320.0, 240.0], [200.0, 150.0], [420.0, 300.0]])
        tracks = chain_trajectories(flows, seeds)
        for seed, track in zip(seeds, tracks):
            assert len(track) == 7
            p = seed.copy()
            for fm_a, fm_b in zip(cap.frames[:6], cap.frames[1:7]):
                qa = query_rotation(cap.timeline, fm_a.t_start)
                qb = query_rotation(cap.timeline, fm_b.t_start)
                hom = k.k_matrix() @ (qb.conj() * qa).to_matrix() @ k.k_inverse()
                v = hom @ np.array([p[0], p[1], 1.0])
                p = v[:2] / v[2]
            assert np.max(np.abs(track[-1] - p)) < 0.1


class TestRenderSynthetic:
    def test_static_camera_identical_frames(self):
        cap = small_capture(shake_amp_deg=0.0, readout_ns=25_000_000, width=160, height=120)
        a = render_synthetic_frame(cap.timeline, cap.frames[0], cap.intrinsics)
        b = render_synthetic_frame(cap.timeline, cap.frames[5], cap.intrinsics)
        np.testing.assert_array_equal(a.pixels, b.pixels)

    def test_rolling_shutter_skew_present(self):
        spec = dict(
            duration=0.5,
            fps=25.0,
            width=160,
            height=120,
            base="panning",
            pan_rate_deg=45.0,
            shake_amp_deg=0.0,
            seed=2,
        )
        rs = generate_capture(ShakeSpec(readout_ns=25_000_000, **spec))
        gs = generate_capture(ShakeSpec(readout_ns=0, **spec))
        img_rs = render_synthetic_frame(rs.timeline, rs.frames[3], rs.intrinsics)
        img_gs = render_synthetic_frame(gs.timeline, gs.frames[3], gs.intrinsics)
        assert np.abs(img_rs.pixels.astype(int) - img_gs.pixels.astype(int)).max() > 10

    def test_rs_correction_recovers_global_shutter_reference(self):
        # 3 deg/frame rotation, 25 ms readout; warp with mid-frame pose
        fps = 30.0
        spec = dict(
            duration=0.5,
            fps=fps,
            width=640,
            height=360,
            base="panning",
            pan_rate_deg=3.0 * fps,
            shake_amp_deg=0.0,
            seed=4,
        )
        cap = generate_capture(ShakeSpec(readout_ns=25_000_000, **spec))
        fm = cap.frames[4]
        k = cap.intrinsics
        rs_frame = render_synthetic_frame(cap.timeline, fm, k)
        t_mid = fm.t_start + fm.readout // 2
        q_mid = query_rotation(cap.timeline, t_mid)
        mesh = build_mesh(fm, cap.timeline, CameraPose(q_mid), k)
        corrected, mask = render(mesh, rs_frame)
        gs_meta = type(fm)(fm.index, t_mid, 0, fm.width, fm.height)
        reference = render_synthetic_frame(cap.timeline, gs_meta, k)
        interior = (slice(36, 324), slice(64, 576))
        assert mask[interior].all()
        diff = corrected.pixels[interior].astype(float) - reference.pixels[interior].astype(float)
        rmse = math.sqrt(np.mean(diff * diff))
        assert rmse < 2.0

    def test_texture_range(self):
        a, b = np.meshgrid(np.linspace(-0.5, 0.5, 50), np.linspace(-0.5, 0.5, 50))
        vals = plaid_texture(a, b)
        assert vals.min() >= 0.0 and vals.max() <= 255.0
