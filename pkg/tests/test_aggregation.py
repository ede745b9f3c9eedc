import numpy as np
import pytest

from framefill.aggregation import (AlignedStack, TemporalWeights,
                                   align_references, alignment_weights,
                                   compose_coarse, temporal_aggregate)
from framefill.errors import ShapeMismatchError
from framefill.geometry import AffineParams, affine_grid, bilinear_sample, warp_mask
from framefill.rng import substream


def random_stack(seed, n=3, c=2, h=6, w=6, mask_p=0.3):
    gen = substream(seed, "stack")
    feats = gen.uniform(size=(n, c, h, w))
    masks = (gen.uniform(size=(n, h, w)) > mask_p).astype(np.uint8)
    return AlignedStack(feats, masks)


class TestAlignReferences:
    def test_identity_thetas_reproduce_inputs(self):
        gen = substream(1, "ar")
        refs = [gen.uniform(size=(2, 8, 8)) for _ in range(3)]
        masks = [(gen.uniform(size=(8, 8)) > 0.3).astype(np.uint8)
                 for _ in range(3)]
        thetas = [AffineParams.identity()] * 3
        stack = align_references(refs, masks, thetas)
        for i in range(3):
            assert np.abs(stack.feats[i] - refs[i]).max() < 1e-6
            assert np.array_equal(stack.masks[i], masks[i])

    def test_fully_translated_out_gives_empty_mask(self):
        refs = [np.ones((1, 8, 8))]
        masks = [np.ones((8, 8), np.uint8)]
        thetas = [AffineParams(1, 0, 5.0, 0, 1, 0)]
        stack = align_references(refs, masks, thetas)
        assert not stack.masks[0].any()

    def test_matches_direct_geometry_calls(self):
        gen = substream(2, "ar2")
        refs = [gen.uniform(size=(2, 6, 6)) for _ in range(2)]
        masks = [(gen.uniform(size=(6, 6)) > 0.2).astype(np.uint8)
                 for _ in range(2)]
        thetas = [AffineParams(0.9, 0.05, 0.1, -0.05, 1.1, -0.1),
                  AffineParams(1.05, -0.02, -0.2, 0.04, 0.95, 0.15)]
        stack = align_references(refs, masks, thetas)
        for i in range(2):
            grid = affine_grid(thetas[i], 6, 6)
            want_f, _ = bilinear_sample(refs[i], grid)
            want_m = warp_mask(masks[i], grid)
            assert np.array_equal(stack.feats[i], want_f)
            assert np.array_equal(stack.masks[i], want_m)

    def test_length_mismatch_rejected(self):
        with pytest.raises(ShapeMismatchError):
            align_references([np.ones((1, 4, 4))], [], [])


class TestAlignmentWeights:
    def test_perfect_single_reference(self):
        gen = substream(3, "aw")
        x_t = gen.uniform(size=(2, 6, 6))
        m_t = np.ones((6, 6), np.uint8)
        m_r = (gen.uniform(size=(6, 6)) > 0.3).astype(np.uint8)
        stack = AlignedStack(x_t[None].copy(), m_r[None].copy())
        tw = alignment_weights(x_t, m_t, stack)
        assert tw.frame_dist[0] == pytest.approx(1e-4)
        assert np.array_equal(tw.pixel[0], m_r.astype(float))

    def test_equal_distances_split_evenly(self):
        gen = substream(4, "aw2")
        x_t = gen.uniform(size=(1, 4, 4))
        m_t = np.ones((4, 4), np.uint8)
        offset = np.full((1, 4, 4), 0.1)
        stack = AlignedStack(np.stack([x_t + offset, x_t - offset]),
                             np.ones((2, 4, 4), np.uint8))
        tw = alignment_weights(x_t, m_t, stack)
        assert np.allclose(tw.pixel, 0.5)

    def test_matches_exp_sum_oracle(self):
        gen = substream(5, "aw3")
        x_t = gen.uniform(size=(2, 5, 5))
        m_t = (gen.uniform(size=(5, 5)) > 0.2).astype(np.uint8)
        stack = random_stack(6, n=3, c=2, h=5, w=5)
        tw = alignment_weights(x_t, m_t, stack)
        # oracle: per frame distance, then per-pixel exp/sum over valid frames
        for i in range(3):
            ov = (m_t > 0) & (stack.masks[i] > 0)
            if ov.sum() == 0:
                assert np.isinf(tw.frame_dist[i])
                continue
            d = np.linalg.norm((x_t - stack.feats[i])[:, ov])
            d /= np.sqrt(max(int(ov.sum()), 16))
            assert tw.frame_dist[i] == pytest.approx(max(d, 1e-4), rel=1e-12)
        for y in range(5):
            for x in range(5):
                vals = []
                for i in range(3):
                    if stack.masks[i, y, x] and np.isfinite(tw.frame_dist[i]):
                        vals.append((i, 1.0 / tw.frame_dist[i]))
                if not vals:
                    assert not tw.pixel[:, y, x].any()
                    continue
                mx = max(s for _, s in vals)
                es = {i: np.exp(s - mx) for i, s in vals}
                z = sum(es.values())
                for i in range(3):
                    want = es.get(i, 0.0) / z if i in es else 0.0
                    assert tw.pixel[i, y, x] == pytest.approx(want, abs=1e-6)

    def test_zero_overlap_frame_excluded_everywhere(self):
        gen = substream(7, "aw4")
        x_t = gen.uniform(size=(1, 4, 4))
        m_t = np.zeros((4, 4), np.uint8)
        m_t[0, 0] = 1
        masks = np.ones((2, 4, 4), np.uint8)
        masks[1, 0, 0] = 0  # frame 1 invalid exactly where target is visible
        stack = AlignedStack(gen.uniform(size=(2, 1, 4, 4)), masks)
        tw = alignment_weights(x_t, m_t, stack)
        assert np.isinf(tw.frame_dist[1])
        assert not tw.pixel[1].any()
        # frame 0 still votes where its mask is set
        assert tw.pixel[0].sum() > 0


class TestTemporalAggregate:
    def test_single_full_frame_identity(self):
        stack = random_stack(8, n=1, mask_p=-1)  # all-ones masks
        tw = alignment_weights(stack.feats[0], np.ones((6, 6), np.uint8), stack)
        out, union = temporal_aggregate(stack, tw)
        assert np.allclose(out, stack.feats[0])
        assert union.all()

    def test_identical_frames_fixed_point(self):
        gen = substream(9, "ta")
        f = gen.uniform(size=(2, 5, 5))
        stack = AlignedStack(np.stack([f, f]), np.ones((2, 5, 5), np.uint8))
        w = gen.uniform(size=(2, 5, 5))
        w /= w.sum(axis=0)
        out, _ = temporal_aggregate(stack, TemporalWeights(np.ones(2), w))
        assert np.allclose(out, f, atol=1e-12)

    def test_matches_weighted_sum_oracle(self):
        gen = substream(10, "ta2")
        stack = random_stack(11, n=4, c=3, h=4, w=4)
        w = gen.uniform(size=(4, 4, 4))
        tw = TemporalWeights(np.ones(4), w)
        out, union = temporal_aggregate(stack, tw)
        want = np.zeros((3, 4, 4))
        for i in range(4):
            want += w[i] * stack.feats[i]
        assert np.allclose(out, want, atol=1e-12)
        assert np.array_equal(union, (stack.masks.max(axis=0) > 0))


class TestComposeCoarse:
    def test_no_hole_passthrough(self):
        gen = substream(12, "cc")
        x_t = gen.uniform(size=(2, 4, 4))
        out = compose_coarse(x_t, np.ones((4, 4), np.uint8),
                             gen.uniform(size=(2, 4, 4)),
                             np.ones((4, 4), np.uint8))
        assert np.array_equal(out.features, x_t)
        assert not out.borrow_mask.any()
        assert not out.residual_hole.any()

    def test_full_borrow(self):
        gen = substream(13, "cc2")
        x_hat = gen.uniform(size=(2, 4, 4))
        out = compose_coarse(np.zeros((2, 4, 4)), np.zeros((4, 4), np.uint8),
                             x_hat, np.ones((4, 4), np.uint8))
        assert np.array_equal(out.features, x_hat)
        assert out.borrow_mask.all()
        assert not out.residual_hole.any()

    def test_mixed_case_split_oracle(self):
        gen = substream(14, "cc3")
        x_t = gen.uniform(size=(1, 4, 4))
        x_hat = gen.uniform(size=(1, 4, 4))
        m_t = (gen.uniform(size=(4, 4)) > 0.5).astype(np.uint8)
        union = (gen.uniform(size=(4, 4)) > 0.4).astype(np.uint8)
        out = compose_coarse(x_t, m_t, x_hat, union)
        for y in range(4):
            for x in range(4):
                if m_t[y, x]:
                    assert out.features[0, y, x] == x_t[0, y, x]
                    assert out.borrow_mask[y, x] == 0
                    assert out.residual_hole[y, x] == 0
                elif union[y, x]:
                    assert out.features[0, y, x] == x_hat[0, y, x]
                    assert out.borrow_mask[y, x] == 1
                    assert out.residual_hole[y, x] == 0
                else:
                    assert out.features[0, y, x] == 0.0
                    assert out.borrow_mask[y, x] == 0
                    assert out.residual_hole[y, x] == 1


class TestInvariants:
    def test_visible_pixels_bit_preserved(self):
        for seed in range(20):
            gen = substream(seed, "inv1")
            x_t = gen.uniform(size=(2, 5, 5))
            m_t = (gen.uniform(size=(5, 5)) > 0.4).astype(np.uint8)
            stack = random_stack(seed + 100, n=3, c=2, h=5, w=5)
            tw = alignment_weights(x_t, m_t, stack)
            out, union = temporal_aggregate(stack, tw)
            comp = compose_coarse(x_t, m_t, out, union)
            vis = m_t > 0
            assert np.array_equal(comp.features[:, vis], x_t[:, vis])

    def test_pixel_weights_convex_or_zero(self):
        for seed in range(20):
            gen = substream(seed, "inv2")
            x_t = gen.uniform(size=(2, 5, 5))
            m_t = (gen.uniform(size=(5, 5)) > 0.4).astype(np.uint8)
            stack = random_stack(seed + 200, n=4, c=2, h=5, w=5)
            tw = alignment_weights(x_t, m_t, stack)
            sums = tw.pixel.sum(axis=0)
            any_valid = (stack.masks > 0).any(axis=0) \
                & np.isfinite(tw.frame_dist).any()
            has = sums > 0
            assert np.all((np.abs(sums - 1) < 1e-6) | (sums == 0))
            assert (tw.pixel >= 0).all()

    def test_convex_hull_containment(self):
        for seed in range(10):
            gen = substream(seed, "inv3")
            x_t = gen.uniform(size=(2, 5, 5))
            m_t = (gen.uniform(size=(5, 5)) > 0.4).astype(np.uint8)
            stack = random_stack(seed + 300, n=3, c=2, h=5, w=5)
            tw = alignment_weights(x_t, m_t, stack)
            out, _ = temporal_aggregate(stack, tw)
            for y in range(5):
                for x in range(5):
                    sel = (stack.masks[:, y, x] > 0) \
                        & np.isfinite(tw.frame_dist)
                    if not sel.any():
                        continue
                    vals = stack.feats[sel, :, y, x]
                    lo = vals.min(axis=0) - 1e-9
                    hi = vals.max(axis=0) + 1e-9
                    got = out[:, y, x]
                    if tw.pixel[:, y, x].sum() > 0:
                        assert (got >= lo).all() and (got <= hi).all()

    def test_frame_order_equivariance(self):
        gen = substream(77, "inv4")
        x_t = gen.uniform(size=(2, 5, 5))
        m_t = (gen.uniform(size=(5, 5)) > 0.3).astype(np.uint8)
        stack = random_stack(400, n=4, c=2, h=5, w=5)
        tw = alignment_weights(x_t, m_t, stack)
        out, _ = temporal_aggregate(stack, tw)
        perm = [2, 0, 3, 1]
        stack_p = AlignedStack(stack.feats[perm], stack.masks[perm])
        tw_p = alignment_weights(x_t, m_t, stack_p)
        out_p, _ = temporal_aggregate(stack_p, tw_p)
        assert np.allclose(tw_p.pixel, tw.pixel[perm], atol=1e-12)
        assert np.allclose(out_p, out, atol=1e-12)

    def test_better_aligned_frame_never_loses_weight(self):
        gen = substream(88, "inv5")
        x_t = gen.uniform(size=(2, 5, 5))
        m_t = np.ones((5, 5), np.uint8)
        stack = random_stack(500, n=3, c=2, h=5, w=5, mask_p=0.2)
        tw = alignment_weights(x_t, m_t, stack)
        # replace frame 0 with a strictly better aligned copy (same mask)
        feats2 = stack.feats.copy()
        ov = stack.masks[0] > 0
        feats2[0][:, ov] = x_t[:, ov]  # perfect alignment on overlap
        stack2 = AlignedStack(feats2, stack.masks.copy())
        tw2 = alignment_weights(x_t, m_t, stack2)
        assert tw2.frame_dist[0] <= tw.frame_dist[0]
        shared = stack.masks[0] > 0
        assert (tw2.pixel[0][shared] >= tw.pixel[0][shared] - 1e-12).all()
