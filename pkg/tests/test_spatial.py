"""Unit tests for region extraction, depth mapping and 3D fusion."""

import numpy as np
import pytest

from mocap_geom.core import (CameraExtrinsics, CameraIntrinsics, DepthFrame,
                             IrMask, ReflectorId)
from mocap_geom.errors import NoDepthError, SplitFailure, ValidationError
from mocap_geom.maps import ReflectorEstimate2D
from mocap_geom.spatial import (OpticalFrame, OpticalPoint, ViewObservation,
                                closest_points_on_normal_lines, find_regions,
                                fuse_patch, fuse_strap, fuse_strap_single_view,
                                observe, region_depth, split_merged_region)

INTR = CameraIntrinsics(fx=365.0, fy=365.0, cx=160.0, cy=120.0, width=320, height=240)


def _est(idx, x, y, conf=0.9):
    return ReflectorEstimate2D(ReflectorId(idx), (float(x), float(y)),
                               conf, 0.0, conf, 0)


def _obs(idx, point, conf=1.0, normal=None, view=0):
    return ViewObservation(ReflectorId(idx), view, np.asarray(point, dtype=float),
                           conf, None if normal is None else np.asarray(normal, dtype=float))


class TestFindRegions:
    def test_two_squares(self):
        bits = np.zeros((30, 30), dtype=bool)
        bits[5:8, 5:8] = True
        bits[20:23, 12:15] = True
        regions = find_regions(IrMask(bits))
        assert len(regions) == 2
        assert sorted(r.size for r in regions) == [9, 9]
        for r in regions:
            assert len(r.contour) == 8  # 3x3 square minus interior center
            # contour is a subset of the region's pixels
            pix = {tuple(p) for p in r.pixels}
            assert all(tuple(c) in pix for c in r.contour)

    def test_empty_mask(self):
        assert find_regions(IrMask(np.zeros((10, 10), dtype=bool))) == []

    def test_full_mask_single_region(self):
        regions = find_regions(IrMask(np.ones((8, 9), dtype=bool)))
        assert len(regions) == 1
        assert regions[0].size == 72
        assert regions[0].bbox == (0, 0, 8, 7)
        # boundary ring of an 8x9 image
        assert len(regions[0].contour) == 2 * 9 + 2 * 8 - 4

    def test_flood_fill_oracle_on_random_mask(self):
        rng = np.random.default_rng(3)
        bits = rng.random((20, 20)) < 0.3
        regions = find_regions(IrMask(bits))
        assert sum(r.size for r in regions) == int(bits.sum())
        # oracle: 8-connected flood fill component count
        seen = np.zeros_like(bits)
        count = 0
        for sy in range(20):
            for sx in range(20):
                if bits[sy, sx] and not seen[sy, sx]:
                    count += 1
                    stack = [(sx, sy)]
                    while stack:
                        x, y = stack.pop()
                        if not (0 <= x < 20 and 0 <= y < 20):
                            continue
                        if not bits[y, x] or seen[y, x]:
                            continue
                        seen[y, x] = True
                        for du in (-1, 0, 1):
                            for dv in (-1, 0, 1):
                                stack.append((x + du, y + dv))
        assert len(regions) == count


class TestRegionDepth:
    def test_median_skips_zeros(self):
        contour = np.array([[0, 0], [1, 0], [2, 0], [3, 0]])
        depth = DepthFrame(np.array([[1000, 1002, 0, 998]], dtype=np.uint16))
        # sort-nonzero oracle: {998, 1000, 1002} -> 1000
        assert region_depth(contour, depth) == 1000

    def test_single_value(self):
        depth = DepthFrame(np.full((4, 4), 1500, dtype=np.uint16))
        assert region_depth(np.array([[1, 1]]), depth) == 1500

    def test_all_zero_raises(self):
        depth = DepthFrame(np.zeros((4, 4), dtype=np.uint16))
        with pytest.raises(NoDepthError):
            region_depth(np.array([[1, 1], [2, 2]]), depth)

    def test_even_count_takes_lower_middle(self):
        depth = DepthFrame(np.array([[100, 200, 300, 400]], dtype=np.uint16))
        contour = np.array([[0, 0], [1, 0], [2, 0], [3, 0]])
        assert region_depth(contour, depth) == 200


def _disk_pixels(cx, cy, r):
    pts = []
    for y in range(cy - r, cy + r + 1):
        for x in range(cx - r, cx + r + 1):
            if (x - cx) ** 2 + (y - cy) ** 2 <= r * r:
                pts.append((x, y))
    return pts


class TestSplitMergedRegion:
    def _dumbbell(self):
        bits = np.zeros((60, 80), dtype=bool)
        depth = np.zeros((60, 80), dtype=np.uint16)
        left = _disk_pixels(30, 30, 7)
        right = _disk_pixels(43, 30, 7)
        for x, y in left:
            bits[y, x] = True
            depth[y, x] = 1000
        for x, y in right:
            bits[y, x] = True
            if depth[y, x] == 0:
                depth[y, x] = 1500
        regions = find_regions(IrMask(bits))
        assert len(regions) == 1
        return regions[0], DepthFrame(depth), set(left), set(right)

    def test_touching_disks_split_by_membership(self):
        region, depth, left, right = self._dumbbell()
        ests = [_est(1, 30, 30), _est(2, 43, 30)]
        clusters = split_merged_region(region, ests, depth)
        assert len(clusters) == 2
        got_left = {tuple(p) for p in clusters[0]}
        got_right = {tuple(p) for p in clusters[1]}
        correct = (sum(p in left for p in got_left)
                   + sum(p in right for p in got_right))
        total = len(got_left) + len(got_right)
        assert total > 0
        assert correct / total >= 0.95

    def test_well_separated_blobs_exact_recovery(self):
        bits = np.zeros((40, 90), dtype=bool)
        depth = np.zeros((40, 90), dtype=np.uint16)
        a = _disk_pixels(20, 20, 5)
        b = _disk_pixels(60, 20, 5)
        bridge = [(x, 20) for x in range(20, 61)]
        for x, y in a + b + bridge:
            bits[y, x] = True
            depth[y, x] = 1000 if x < 40 else 2000
        region = find_regions(IrMask(bits))[0]
        ests = [_est(1, 20, 20), _est(2, 60, 20)]
        clusters = split_merged_region(region, ests, DepthFrame(depth))
        for p in clusters[0]:
            assert p[0] <= 41
        for p in clusters[1]:
            assert p[0] >= 40

    def test_split_failure_when_too_few_pixels(self):
        bits = np.zeros((10, 10), dtype=bool)
        bits[5, 5] = True
        depth = np.zeros((10, 10), dtype=np.uint16)
        depth[5, 5] = 1000
        region = find_regions(IrMask(bits))[0]
        with pytest.raises(SplitFailure):
            split_merged_region(region, [_est(1, 5, 5), _est(2, 5, 6)],
                                DepthFrame(depth))

    def test_assignment_is_bijective(self):
        region, depth, _, _ = self._dumbbell()
        ests = [_est(1, 30, 30), _est(2, 43, 30)]
        clusters = split_merged_region(region, ests, depth)
        sets = [{tuple(p) for p in c} for c in clusters]
        assert not (sets[0] & sets[1])
        assert len(sets[0]) > 0 and len(sets[1]) > 0


class TestObserve:
    def test_flat_patch_on_optical_axis(self):
        bits = np.zeros((240, 320), dtype=bool)
        depth = np.full((240, 320), 1000, dtype=np.uint16)
        for x, y in _disk_pixels(160, 120, 4):
            bits[y, x] = True
            depth[y, x] = 0
        # restore depth on the contour ring (the IR blob blooms past the hole)
        region = find_regions(IrMask(bits))[0]
        for u, v in region.contour:
            depth[v, u] = 1000
        obs = observe(_est(1, 160, 120), region, region.contour,
                      DepthFrame(depth), INTR, CameraExtrinsics.identity(), view=0)
        np.testing.assert_allclose(obs.point_global, [0, 0, 1.0], atol=1e-6)
        assert obs.normal_global is None  # patches carry no normal

    def test_zero_depth_region_propagates_error(self):
        bits = np.zeros((240, 320), dtype=bool)
        bits[100:110, 100:110] = True
        region = find_regions(IrMask(bits))[0]
        with pytest.raises(NoDepthError):
            observe(_est(1, 105, 105), region, region.contour,
                    DepthFrame(np.zeros((240, 320), dtype=np.uint16)),
                    INTR, CameraExtrinsics.identity(), view=0)


class TestFusePatch:
    def test_equal_confidences_give_centroid(self):
        obs = [_obs(1, [0, 0, 1], 0.5), _obs(1, [1, 0, 1], 0.5, view=1)]
        fused = fuse_patch(obs)
        np.testing.assert_allclose(fused.position, [0.5, 0, 1])
        assert fused.confidence == pytest.approx(0.5)

    def test_zero_weight_view_ignored(self):
        obs = [_obs(1, [1, 2, 3], 1.0), _obs(1, [9, 9, 9], 0.0, view=1)]
        fused = fuse_patch(obs)
        np.testing.assert_allclose(fused.position, [1, 2, 3])

    def test_matches_scalar_expansion_oracle(self):
        pts = np.array([[0.1, 0.2, 1.0], [0.4, -0.1, 1.2], [-0.2, 0.3, 0.9]])
        conf = np.array([0.9, 0.6, 0.3])
        obs = [_obs(1, p, c, view=i) for i, (p, c) in enumerate(zip(pts, conf))]
        fused = fuse_patch(obs)
        expected = sum((conf[i] / conf.sum()) * pts[i] for i in range(3))
        np.testing.assert_allclose(fused.position, expected, atol=1e-12)
        assert fused.confidence == pytest.approx(conf.mean())

    def test_all_zero_confidence_falls_back_to_centroid(self):
        obs = [_obs(1, [0, 0, 0], 0.0), _obs(1, [2, 0, 0], 0.0, view=1)]
        fused = fuse_patch(obs)
        np.testing.assert_allclose(fused.position, [1, 0, 0])
        assert fused.confidence == 0.0

    def test_inside_convex_hull_and_scale_invariant(self):
        rng = np.random.default_rng(31)
        for _ in range(50):
            pts = rng.normal(size=(4, 3))
            conf = rng.random(4)
            obs = [_obs(1, p, c, view=i) for i, (p, c) in enumerate(zip(pts, conf))]
            fused = fuse_patch(obs).position
            lo = pts.min(axis=0) - 1e-12
            hi = pts.max(axis=0) + 1e-12
            assert np.all(fused >= lo) and np.all(fused <= hi)
            scaled = [_obs(1, p, 3.7 * c, view=i)
                      for i, (p, c) in enumerate(zip(pts, conf))]
            np.testing.assert_allclose(fuse_patch(scaled).position, fused, atol=1e-12)


class TestStrapFusion:
    def test_intersecting_normal_lines_recover_common_point(self):
        target = np.array([0.0, 0.0, 1.0])
        p1 = target + 0.03 * np.array([0.0, 0.0, -1.0])
        p2 = target + 0.03 * np.array([-1.0, 0.0, 0.0])
        obs = [_obs(11, p1, 1.0, normal=[0, 0, -1]),
               _obs(11, p2, 1.0, normal=[-1, 0, 0], view=1)]
        fused = fuse_strap(obs)
        np.testing.assert_allclose(fused.position, target, atol=1e-12)
        assert not fused.degraded

    def test_pair_order_invariance(self):
        rng = np.random.default_rng(12)
        p1, p2 = rng.normal(size=(2, 3))
        n1 = rng.normal(size=3)
        n1 /= np.linalg.norm(n1)
        n2 = rng.normal(size=3)
        n2 /= np.linalg.norm(n2)
        a1, a2, _ = closest_points_on_normal_lines(p1, n1, p2, n2)
        b2, b1, _ = closest_points_on_normal_lines(p2, n2, p1, n1)
        np.testing.assert_allclose(a1, b1, atol=1e-12)
        np.testing.assert_allclose(a2, b2, atol=1e-12)

    def test_parallel_normals_fall_back_degraded(self):
        obs = [_obs(11, [0, 0, 1], 1.0, normal=[0, 0, -1]),
               _obs(11, [0.1, 0, 1], 1.0, normal=[0, 0, -1], view=1)]
        fused = fuse_strap(obs)
        assert fused.degraded
        np.testing.assert_allclose(fused.position, [0.05, 0, 1], atol=1e-12)

    def test_requires_two_normals(self):
        with pytest.raises(ValidationError):
            fuse_strap([_obs(11, [0, 0, 1], 1.0, normal=[0, 0, -1])])


class TestStrapSingleView:
    def test_axis_offset(self):
        obs = _obs(11, [0, 0, 1.0], 1.0, normal=[0, 0, -1])
        fused = fuse_strap_single_view(obs, limb_radius=0.04)
        np.testing.assert_allclose(fused.position, [0, 0, 1.04])

    def test_zero_radius_keeps_surface_point(self):
        obs = _obs(11, [0.2, 0.1, 1.0], 1.0, normal=[0, 0, -1])
        fused = fuse_strap_single_view(obs, limb_radius=0.0)
        np.testing.assert_allclose(fused.position, [0.2, 0.1, 1.0])

    def test_missing_normal_rejected(self):
        with pytest.raises(ValidationError):
            fuse_strap_single_view(_obs(11, [0, 0, 1], 1.0), 0.04)


class TestOpticalFrame:
    def test_uniqueness_enforced(self):
        frame = OpticalFrame(frame=0)
        frame.add(OpticalPoint(ReflectorId(3), np.zeros(3), 0.5, 0))
        with pytest.raises(ValidationError):
            frame.add(OpticalPoint(ReflectorId(3), np.ones(3), 0.6, 0))


class TestMultiViewConsistency:
    def test_flat_patch_views_agree_within_quantization(self):
        # Two cameras observing the same flat patch hole: the per-view
        # global observations must agree within twice the millimeter depth
        # quantization before any fusion.
        from mocap_geom.core import to_camera, project

        wall_z = 1.5  # meters in front of camera A
        extr_a = CameraExtrinsics.identity()
        # camera B translated sideways, same orientation; baseline chosen so
        # the patch center projects onto exact pixel centers in both views
        extr_b = CameraExtrinsics(np.eye(3), np.array([0.3, 0.0, 0.0]))
        patch_global = np.array([1.5 * 37 / 365.0, 1.5 * 12 / 365.0, wall_z])

        observations = []
        for view, extr in enumerate((extr_a, extr_b)):
            depth = np.zeros((240, 320), dtype=np.uint16)
            cam_pt = to_camera(patch_global, extr)
            wall_mm = int(round(cam_pt[2] * 1000))
            depth[:, :] = wall_mm  # flat wall facing the camera
            u, v, _ = project(cam_pt, INTR)
            bits = np.zeros((240, 320), dtype=bool)
            for x, y in _disk_pixels(int(round(u)), int(round(v)), 4):
                bits[y, x] = True
                depth[y, x] = 0
            region = find_regions(IrMask(bits))[0]
            for cu, cv in region.contour:
                depth[cv, cu] = wall_mm  # hole rim keeps wall depth
            obs = observe(_est(1, u, v), region, region.contour,
                          DepthFrame(depth), INTR, extr, view)
            observations.append(obs.point_global)
        gap = np.linalg.norm(observations[0] - observations[1])
        assert gap <= 2e-3, f"views disagree by {gap * 1000:.2f} mm"
