import numpy as np
import pytest

from framefill.alignment import (AlignmentParams, CorrespondenceSet,
                                 estimate_alignment, fit_affine_ransac,
                                 fit_affine_wlsq, grid_loss,
                                 refine_affine_photometric,
                                 soft_argmax_correspondences)
from framefill.correspondence import normalize_channels
from framefill.errors import (DegenerateGeometryError, InsufficientOverlapError,
                              NoConsensusError)
from framefill.geometry import (AffineParams, affine_grid, base_grid,
                                bilinear_sample)
from framefill.rng import substream

from conftest import smooth_map


def apply_theta(theta, pts):
    m = theta.matrix
    return pts @ m[:, :2].T + m[:, 2]


def exact_correspondences(theta, n=12, seed=0, conf=1.0):
    gen = substream(seed, "exact-corr")
    tgt = gen.uniform(-0.8, 0.8, size=(n, 2))
    ref = apply_theta(theta, tgt)
    return CorrespondenceSet(ref, tgt, np.full(n, conf))


class TestSoftArgmax:
    def test_permutation_columns_recover_grid(self):
        n = 16
        cnorm = np.eye(n)[::-1]  # reversal permutation
        out = soft_argmax_correspondences(cnorm, np.ones(n, np.uint8), 4, 4)
        coords = base_grid(4, 4).reshape(-1, 2)
        assert np.allclose(out.tgt_pts, coords)
        assert np.allclose(out.ref_pts, coords[::-1])
        assert np.allclose(out.conf, 1.0)

    def test_uniform_column_gives_centroid(self):
        n = 9
        cnorm = np.zeros((n, n))
        rows = [0, 4, 8]
        for j in range(n):
            cnorm[rows, j] = 1 / 3
        out = soft_argmax_correspondences(cnorm, np.ones(n, np.uint8), 3, 3)
        coords = base_grid(3, 3).reshape(-1, 2)
        centroid = coords[rows].mean(axis=0)
        assert np.allclose(out.ref_pts, centroid)
        assert np.allclose(out.conf, 1 / 3)

    def test_matches_weighted_sum_oracle(self):
        gen = substream(21, "sa")
        n = 16
        raw = gen.uniform(size=(n, n))
        cnorm = raw / raw.sum(axis=0)
        colv = np.ones(n, np.uint8)
        out = soft_argmax_correspondences(cnorm, colv, 4, 4)
        coords = base_grid(4, 4).reshape(-1, 2)
        for j in range(n):
            want = (cnorm[:, j][:, None] * coords).sum(axis=0)
            assert np.allclose(out.ref_pts[j], want, atol=1e-6)

    def test_min_confidence_drops_columns(self):
        n = 4
        cnorm = np.full((n, n), 0.25)
        cnorm[:, 0] = [0.97, 0.01, 0.01, 0.01]
        out = soft_argmax_correspondences(cnorm, np.ones(n, np.uint8), 2, 2,
                                          min_confidence=0.5)
        assert len(out) == 1

    def test_empty_result_allowed(self):
        out = soft_argmax_correspondences(np.zeros((4, 4)),
                                          np.zeros(4, np.uint8), 2, 2)
        assert len(out) == 0


class TestWlsq:
    def test_recovers_exact_affine(self):
        theta = AffineParams(1.1, 0.0, 0.2, 0.0, 0.9, -0.1)
        corr = exact_correspondences(theta, n=5, seed=1)
        got, rms = fit_affine_wlsq(corr)
        assert np.abs(got.to_array() - theta.to_array()).max() < 1e-6
        assert rms < 1e-9

    def test_identity_correspondences(self):
        corr = exact_correspondences(AffineParams.identity(), n=6, seed=2)
        got, _ = fit_affine_wlsq(corr)
        assert np.abs(got.to_array()
                      - AffineParams.identity().to_array()).max() < 1e-9

    def test_collinear_points_rejected(self):
        tgt = np.array([[0.0, 0.0], [0.2, 0.2], [0.4, 0.4]])
        corr = CorrespondenceSet(tgt.copy(), tgt, np.ones(3))
        with pytest.raises(DegenerateGeometryError):
            fit_affine_wlsq(corr)

    def test_too_few_points_rejected(self):
        corr = exact_correspondences(AffineParams.identity(), n=2, seed=3)
        with pytest.raises(DegenerateGeometryError):
            fit_affine_wlsq(corr)


class TestRansac:
    def test_recovers_with_outliers(self):
        theta = AffineParams(1.05, 0.02, 0.1, -0.03, 0.95, -0.05)
        gen = substream(31, "outliers")
        good = exact_correspondences(theta, n=20, seed=4)
        bad_tgt = gen.uniform(-0.9, 0.9, size=(10, 2))
        bad_ref = gen.uniform(-0.9, 0.9, size=(10, 2))
        corr = CorrespondenceSet(
            np.vstack([good.ref_pts, bad_ref]),
            np.vstack([good.tgt_pts, bad_tgt]),
            np.ones(30))
        got, inl = fit_affine_ransac(corr, iters=256, inlier_thresh=0.02, seed=0)
        g, _ = grid_loss(got, theta, 16, 16)
        assert g < 1e-3
        assert inl.sum() >= 20

    def test_all_inliers_equals_wlsq(self):
        theta = AffineParams(0.95, 0.1, -0.2, 0.05, 1.1, 0.15)
        corr = exact_correspondences(theta, n=15, seed=5)
        got_r, inl = fit_affine_ransac(corr, seed=9)
        got_w, _ = fit_affine_wlsq(corr)
        assert inl.all()
        assert np.allclose(got_r.to_array(), got_w.to_array(), atol=1e-12)

    def test_minimal_sample_exact(self):
        theta = AffineParams(1.2, -0.1, 0.05, 0.08, 0.85, -0.02)
        corr = exact_correspondences(theta, n=3, seed=6)
        got, inl = fit_affine_ransac(corr, seed=1)
        assert inl.sum() == 3
        assert np.abs(got.to_array() - theta.to_array()).max() < 1e-9

    def test_deterministic_per_seed(self):
        theta = AffineParams(1.0, 0.05, 0.1, -0.05, 1.0, 0.0)
        gen = substream(33, "det")
        good = exact_correspondences(theta, n=10, seed=7)
        noise_ref = good.ref_pts + gen.normal(0, 0.01, good.ref_pts.shape)
        corr = CorrespondenceSet(noise_ref, good.tgt_pts, good.conf)
        a1 = fit_affine_ransac(corr, seed=42)
        a2 = fit_affine_ransac(corr, seed=42)
        assert np.array_equal(a1[0].to_array(), a2[0].to_array())
        assert np.array_equal(a1[1], a2[1])

    def test_no_consensus_error(self):
        # 5 points, every 3-subset collinear-free but residuals too large
        gen = substream(34, "nc")
        tgt = gen.uniform(-0.9, 0.9, size=(4, 2))
        ref = gen.uniform(-0.9, 0.9, size=(4, 2))
        corr = CorrespondenceSet(ref, tgt, np.ones(4))
        # with a tiny threshold, only the 3 sampled points ever fit;
        # count >= 3 means some hypothesis always "wins", so shrink to
        # an impossible threshold on a noisy overdetermined set instead
        with pytest.raises((NoConsensusError, DegenerateGeometryError)):
            fit_affine_ransac(CorrespondenceSet(ref[:3], tgt[:3] * 0
                                                + np.array([[0, 0], [0.1, 0.1],
                                                            [0.2, 0.2]]),
                                                np.ones(3)),
                              iters=8, inlier_thresh=1e-6, seed=0)


class TestRefine:
    def _pair(self, theta, seed=0, h=24, w=24):
        src = smooth_map(seed, c=2, h=h, w=w, coarse=5)
        tgt, _ = bilinear_sample(src, affine_grid(theta, h, w))
        full = np.ones((h, w), np.uint8)
        return src, tgt, full

    def test_already_optimal_returns_start(self):
        theta = AffineParams(1.0, 0.0, 0.1, 0.0, 1.0, 0.0)
        src, tgt, full = self._pair(theta, seed=1)
        got, info = refine_affine_photometric(theta, src, full, tgt, full)
        assert np.allclose(got.to_array(), theta.to_array(), atol=1e-9)

    def test_converges_from_perturbed_start(self):
        theta = AffineParams(1.0, 0.0, 0.08, 0.0, 1.0, -0.06)
        src, tgt, full = self._pair(theta, seed=2)
        theta0 = AffineParams(1.0, 0.0, 0.08 + 0.05, 0.0, 1.0, -0.06 + 0.05)
        got, info = refine_affine_photometric(theta0, src, full, tgt, full,
                                              max_iters=50)
        g, _ = grid_loss(got, theta, 24, 24)
        assert g < 1e-3

    def test_constant_image_returns_start(self):
        theta0 = AffineParams(1.0, 0.0, 0.05, 0.0, 1.0, 0.0)
        src = np.full((2, 16, 16), 0.5)
        full = np.ones((16, 16), np.uint8)
        got, info = refine_affine_photometric(theta0, src, full, src, full)
        assert np.array_equal(got.to_array(), theta0.to_array())

    def test_monotone_residual_history(self):
        theta = AffineParams(1.0, 0.0, 0.1, 0.0, 1.0, -0.05)
        src, tgt, full = self._pair(theta, seed=3)
        theta0 = AffineParams(1.0, 0.02, 0.16, -0.02, 1.0, 0.0)
        _, info = refine_affine_photometric(theta0, src, full, tgt, full)
        hist = info["residuals"]
        assert all(b < a for a, b in zip(hist, hist[1:]))

    def test_insufficient_overlap_raises(self):
        theta0 = AffineParams.identity()
        src = smooth_map(4, c=1, h=16, w=16)
        empty = np.zeros((16, 16), np.uint8)
        with pytest.raises(InsufficientOverlapError):
            refine_affine_photometric(theta0, src, empty, src, empty)

    def test_never_worse_than_start(self):
        gen = substream(35, "nw")
        for trial in range(5):
            theta = AffineParams.from_array(
                np.array([1, 0, 0, 0, 1, 0])
                + gen.uniform(-0.1, 0.1, 6))
            src, tgt, full = self._pair(theta, seed=trial + 10)
            theta0 = AffineParams.from_array(
                theta.to_array() + gen.uniform(-0.08, 0.08, 6))
            from framefill.alignment import _masked_objective
            rho0 = _masked_objective(theta0, src, full, tgt, full)[0]
            got, _ = refine_affine_photometric(theta0, src, full, tgt, full)
            rho1 = _masked_objective(got, src, full, tgt, full)[0]
            assert rho1 <= rho0 + 1e-15


class TestGridLoss:
    def test_identical_thetas_zero(self):
        t = AffineParams(1.1, 0.2, -0.3, 0.05, 0.9, 0.4)
        assert grid_loss(t, t, 8, 8) == (0.0, 0.0)

    def test_translation_closed_form(self):
        a = AffineParams(1, 0, 0.1, 0, 1, 0)
        b = AffineParams.identity()
        g, p = grid_loss(a, b, 8, 8)
        assert g == pytest.approx(0.1, abs=1e-12)
        assert p == pytest.approx(0.1, abs=1e-12)

    def test_matches_pointwise_oracle(self):
        gen = substream(41, "gl")
        for _ in range(5):
            a = AffineParams.from_array(gen.uniform(-1, 1, 6))
            b = AffineParams.from_array(gen.uniform(-1, 1, 6))
            g, p = grid_loss(a, b, 6, 9)
            ga = affine_grid(a, 6, 9)
            gb = affine_grid(b, 6, 9)
            want = float(np.mean([np.linalg.norm(ga[i, j] - gb[i, j])
                                  for i in range(6) for j in range(9)]))
            assert g == pytest.approx(want, abs=1e-6)
            assert p == pytest.approx(
                float(np.abs(a.to_array() - b.to_array()).sum()), abs=1e-12)


class TestEstimateAlignment:
    def test_full_chain_on_warped_texture(self):
        from framefill.datagen import make_texture, gen_affine_pair, AffineRange
        from framefill.features import (extract_features, pool_features,
                                        downsample_mask)
        from framefill.geometry import warp_mask
        img = make_texture(64, 64, seed=50)
        img_a, img_b, theta = gen_affine_pair(
            img, AffineRange(max_translation=0.15, max_rotation_deg=8,
                             scale_lo=0.9, scale_hi=1.1, max_shear=0.05),
            seed=3)
        valid_b = warp_mask(np.ones((64, 64), np.uint8),
                            affine_grid(theta, 64, 64))
        full = np.ones((64, 64), np.uint8)
        fr, mr = extract_features(img_a, full, 32, "convbank", 16, 7)
        ft, mt = extract_features(img_b, valid_b, 32, "convbank", 16, 7)
        stages = [
            (pool_features(img_a, 32), downsample_mask(full, 32),
             pool_features(img_b, 32), downsample_mask(valid_b, 32)),
            (np.ascontiguousarray(img_a.transpose(2, 0, 1)), full,
             np.ascontiguousarray(img_b.transpose(2, 0, 1)), valid_b),
        ]
        res = estimate_alignment(fr, mr, ft, mt, refine_stages=stages,
                                 params=AlignmentParams(seed=0))
        g, _ = grid_loss(res.theta, theta, 32, 32)
        assert g < 0.01
