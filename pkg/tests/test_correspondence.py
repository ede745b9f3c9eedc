import numpy as np
import pytest

from framefill.correspondence import (center_features, masked_correlation,
                                      normalize_channels, softmax_normalize)
from framefill.errors import InvalidParameterError, ShapeMismatchError
from framefill.rng import substream


def brute_force_correlation(f_r, m_r, f_t, m_t):
    """Double-loop oracle, exact per spec."""
    c, h, w = f_r.shape
    fr = f_r.reshape(c, -1)
    ft = f_t.reshape(c, -1)
    mr = m_r.reshape(-1)
    mt = m_t.reshape(-1)
    n = h * w
    out = np.zeros((n, n))
    for i in range(n):
        for j in range(n):
            if mr[i] * mt[j] == 1:
                out[i, j] = float(np.dot(fr[:, i], ft[:, j]))
    return out


def brute_force_softmax(corr, m_r, temperature):
    n = corr.shape[1]
    out = np.zeros_like(corr)
    valid = np.where(m_r.reshape(-1) > 0)[0]
    col_ok = np.zeros(n, np.uint8)
    if valid.size == 0:
        return out, col_ok
    for j in range(n):
        e = np.exp(corr[valid, j] / temperature
                   - (corr[valid, j] / temperature).max())
        out[valid, j] = e / e.sum()
        col_ok[j] = 1
    return out, col_ok


class TestNormalizeChannels:
    def test_unit_vectors_unchanged(self):
        f = np.zeros((3, 2, 2))
        f[0] = 1.0
        assert np.allclose(normalize_channels(f), f)

    def test_zero_location_stays_zero(self):
        f = np.zeros((4, 3, 3))
        out = normalize_channels(f)
        assert not out.any()
        assert np.isfinite(out).all()

    def test_norms_unit_or_zero(self):
        gen = substream(5, "norm")
        f = gen.normal(size=(8, 6, 6))
        f[:, 0, 0] = 0.0
        out = normalize_channels(f)
        norms = np.sqrt((out * out).sum(axis=0))
        ok = (np.abs(norms - 1.0) < 1e-6) | (norms == 0.0)
        assert ok.all()


class TestMaskedCorrelation:
    def test_orthonormal_basis_gives_permutation(self):
        # one-hot channel basis per position
        f = np.eye(4).reshape(4, 2, 2)
        m = np.ones((2, 2), np.uint8)
        corr = masked_correlation(f, m, f, m)
        assert np.array_equal(corr, np.eye(4))

    def test_target_mask_annihilates(self):
        gen = substream(6, "mc")
        f = normalize_channels(gen.normal(size=(3, 4, 4)))
        corr = masked_correlation(f, np.ones((4, 4), np.uint8),
                                  f, np.zeros((4, 4), np.uint8))
        assert not corr.any()

    def test_matches_brute_force_exactly(self):
        gen = substream(7, "mc2")
        for trial in range(5):
            f_r = normalize_channels(gen.normal(size=(3, 2, 2)))
            f_t = normalize_channels(gen.normal(size=(3, 2, 2)))
            m_r = (gen.uniform(size=(2, 2)) > 0.3).astype(np.uint8)
            m_t = (gen.uniform(size=(2, 2)) > 0.3).astype(np.uint8)
            got = masked_correlation(f_r, m_r, f_t, m_t)
            want = brute_force_correlation(f_r, m_r, f_t, m_t)
            assert np.abs(got - want).max() < 1e-6
            # masked entries are exactly zero
            assert not got[m_r.reshape(-1) == 0, :].any()
            assert not got[:, m_t.reshape(-1) == 0].any()

    def test_entries_bounded_by_one(self):
        gen = substream(8, "mc3")
        f_r = normalize_channels(gen.normal(size=(5, 4, 4)))
        f_t = normalize_channels(gen.normal(size=(5, 4, 4)))
        m = np.ones((4, 4), np.uint8)
        corr = masked_correlation(f_r, m, f_t, m)
        assert np.abs(corr).max() <= 1 + 1e-6

    def test_shape_mismatch(self):
        with pytest.raises(ShapeMismatchError):
            masked_correlation(np.ones((2, 3, 3)), np.ones((3, 3)),
                               np.ones((2, 4, 4)), np.ones((4, 4)))


class TestSoftmaxNormalize:
    def test_single_valid_row_takes_all_weight(self):
        gen = substream(9, "sm")
        corr = gen.normal(size=(9, 9))
        m_r = np.zeros((3, 3), np.uint8)
        m_r[1, 2] = 1
        out, col_ok = softmax_normalize(corr, m_r, 1.0)
        assert col_ok.all()
        row = 1 * 3 + 2
        assert np.allclose(out[row], 1.0)
        out[row] = 0
        assert not out.any()

    def test_uniform_scores_give_equal_weights(self):
        corr = np.zeros((4, 4))
        m_r = np.array([1, 1, 0, 1], np.uint8).reshape(2, 2)
        out, _ = softmax_normalize(corr, m_r, 2.0)
        assert np.allclose(out[m_r.reshape(-1) == 1, :], 1 / 3)
        assert not out[2].any()

    def test_matches_exp_sum_oracle(self):
        gen = substream(10, "sm2")
        corr = gen.normal(size=(16, 16))
        m_r = (gen.uniform(size=(4, 4)) > 0.4).astype(np.uint8)
        got, got_ok = softmax_normalize(corr, m_r, 1.0)
        want, want_ok = brute_force_softmax(corr, m_r, 1.0)
        assert np.abs(got - want).max() < 1e-6
        assert np.array_equal(got_ok, want_ok)
        sums = got[m_r.reshape(-1) == 1, :].sum(axis=0)
        assert np.abs(sums - 1).max() < 1e-6

    def test_no_valid_rows_flags_cleared(self):
        out, col_ok = softmax_normalize(np.ones((4, 4)),
                                        np.zeros((2, 2), np.uint8), 1.0)
        assert not out.any()
        assert not col_ok.any()

    def test_nonpositive_temperature_rejected(self):
        with pytest.raises(InvalidParameterError):
            softmax_normalize(np.ones((4, 4)), np.ones((2, 2), np.uint8), 0.0)
        with pytest.raises(InvalidParameterError):
            softmax_normalize(np.ones((4, 4)), np.ones((2, 2), np.uint8), -1.0)


class TestCenterFeatures:
    def test_centered_mean_zero_over_visible(self):
        gen = substream(11, "cf")
        f = gen.normal(size=(4, 5, 5)) + 3.0
        m = (gen.uniform(size=(5, 5)) > 0.3).astype(np.uint8)
        out = center_features(f, m)
        vis = m.reshape(-1) > 0
        assert np.abs(out.reshape(4, -1)[:, vis].mean(axis=1)).max() < 1e-12

    def test_all_hole_mask_is_noop(self):
        f = np.ones((2, 3, 3))
        out = center_features(f, np.zeros((3, 3)))
        assert np.array_equal(out, f)
