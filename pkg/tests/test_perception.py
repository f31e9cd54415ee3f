import math

import numpy as np
import pytest

from sandshaper.heightfield import HEIGHT_MAX, HeightMap
from sandshaper.perception import (ReconstructionState, default_camera,
                                   depth_to_pgm, look_at_camera,
                                   reconstruct, render_depth)
from sandshaper.world import EndEffectorState

CELL = 0.01


def orthographic_like_camera(height=400.0, width=64):
    # far away, narrow field of view: rays nearly parallel
    fov = 2 * math.degrees(math.atan(0.17 / height))
    return look_at_camera((0.16, 0.16, height), (0.16, 0.16, 0.0),
                          width=width, height=width, fov_deg=fov)


class TestRenderDepth:
    def test_flat_bed_top_down(self):
        cam = orthographic_like_camera()
        img = render_depth(HeightMap.flat(32, 32, 0.06, CELL), None, cam)
        d = img.depth[np.isfinite(img.depth)]
        assert d.size > 0
        assert np.abs(d - (400.0 - 0.06)).max() <= 1e-4

    def test_tool_occludes_bed(self):
        cam = default_camera()
        hm = HeightMap.flat(32, 32, 0.06, CELL)
        ee = EndEffectorState(position=(0.16, 0.16, 0.10),
                              previous_position=(0.16, 0.16, 0.10))
        bare = render_depth(hm, None, cam)
        with_ee = render_depth(hm, ee, cam)
        closer = with_ee.depth < bare.depth - 1e-9
        assert closer.any()
        # every tool hit is strictly in front of the bed it hides
        assert np.all(with_ee.depth[closer] < bare.depth[closer])

    def test_ramp_against_ray_plane_oracle(self):
        # analytic plane: h(x, y) = 0.03 + 0.25 * x; bilinear sampling of a
        # plane is the plane itself away from the clamped border margin
        slope = 0.25
        xs = (np.arange(32) + 0.5) * CELL
        heights = 0.03 + slope * xs[None, :].repeat(32, axis=0)
        cam = default_camera()
        img = render_depth(HeightMap(heights, CELL), None, cam)

        dirs = cam.ray_directions().reshape(-1, 3)
        d = img.depth.reshape(-1)
        # closed form: o_z + t*d_z = 0.03 + slope * (o_x + t*d_x)
        denom = dirs[:, 2] - slope * dirs[:, 0]
        t_plane = (0.03 + slope * cam.position[0] - cam.position[2]) / denom
        pts = cam.position[None, :] + dirs * d[:, None]
        finite = np.isfinite(d)
        interior = (finite & (pts[:, 0] > 3 * CELL) & (pts[:, 0] < 0.32 - 3 * CELL)
                    & (pts[:, 1] > 3 * CELL) & (pts[:, 1] < 0.32 - 3 * CELL))
        assert interior.sum() > 1000
        assert np.abs(d[interior] - t_plane[interior]).max() <= CELL / 4

    def test_camera_below_surface_rejected(self):
        hm = HeightMap.flat(32, 32, 0.08, CELL)
        cam = look_at_camera((0.16, 0.16, 0.05), (0.16, 0.16, 0.0))
        with pytest.raises(ValueError):
            render_depth(hm, None, cam)

    def test_noise_is_seeded(self):
        cam = default_camera(width=64)
        hm = HeightMap.flat(32, 32, 0.06, CELL)
        a = render_depth(hm, None, cam, noise_std=0.001, rng=np.random.default_rng(3))
        b = render_depth(hm, None, cam, noise_std=0.001, rng=np.random.default_rng(3))
        assert np.array_equal(a.depth, b.depth)


class TestReconstruct:
    def test_flat_bed_identity(self):
        cam = default_camera()
        st = ReconstructionState.flat(32, 32, 0.06, CELL)
        rec = reconstruct(render_depth(HeightMap.flat(32, 32, 0.06, CELL), None, cam), st)
        assert np.abs(rec.heights - 0.06).max() <= 1e-3

    def test_relaxed_maps_within_tolerance(self, relaxed_maps):
        cam = default_camera()
        for m in relaxed_maps:
            st = ReconstructionState.flat(32, 32, 0.06, CELL)
            rec = reconstruct(render_depth(m, None, cam), st)
            err = np.abs(rec.heights - m.heights)
            assert err[st.observed].max() <= 2e-3
            assert err.mean() <= 5e-4

    def test_hold_last_bit_equal_under_occlusion(self):
        cam = default_camera()
        ee = EndEffectorState(position=(0.16, 0.16, 0.09),
                              previous_position=(0.16, 0.16, 0.09))
        st = ReconstructionState.flat(32, 32, 0.06, CELL)
        first = reconstruct(render_depth(HeightMap.flat(32, 32, 0.06, CELL), ee, cam), st, ee)
        occluded = ~st.observed
        assert occluded.any()
        held_values = first.heights[occluded].copy()
        # the bed changes, the occluded cells must not
        second = reconstruct(render_depth(HeightMap.flat(32, 32, 0.055, CELL), ee, cam), st, ee)
        still_occluded = occluded & ~st.observed
        assert still_occluded.any()
        assert np.array_equal(second.heights[still_occluded],
                              first.heights[still_occluded])
        assert np.array_equal(held_values[still_occluded[occluded]],
                              second.heights[still_occluded])

    def test_output_always_in_height_range(self):
        cam = default_camera(width=96)
        hm = HeightMap.flat(32, 32, 0.19, CELL)
        st = ReconstructionState.flat(32, 32, 0.06, CELL)
        img = render_depth(hm, None, cam, noise_std=0.05, rng=np.random.default_rng(0))
        rec = reconstruct(img, st)
        assert rec.heights.min() >= 0.0 and rec.heights.max() <= HEIGHT_MAX

    def test_geometry_mismatch_rejected(self):
        cam = default_camera(width=64)
        img = render_depth(HeightMap.flat(32, 32, 0.06, CELL), None, cam)
        img.depth = img.depth[:10]
        with pytest.raises(ValueError):
            reconstruct(img, ReconstructionState.flat(32, 32, 0.06, CELL))


class TestDepthExport:
    def test_pgm_in_millimeters(self, tmp_path):
        cam = orthographic_like_camera(height=30.0)
        img = render_depth(HeightMap.flat(32, 32, 0.06, CELL), None, cam)
        p = tmp_path / "d.pgm"
        depth_to_pgm(p, img)
        payload = p.read_bytes().split(b"65535\n", 1)[1]
        px = np.frombuffer(payload, dtype=">u2")
        finite = px[px > 0]
        assert np.abs(finite.astype(float) - 29940.0).max() <= 2.0
