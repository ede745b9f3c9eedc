"""Affine transform estimation from normalized correlation maps.

The chain is: soft-argmax the correlation columns into weighted point
correspondences, fit a confidence-weighted affine by least squares inside a
deterministic RANSAC loop, then polish photometrically with damped
Gauss-Newton on masked feature maps.  ``grid_loss`` scores an estimate
against a known transform by the mean displacement between their sampling
grids plus the L1 gap of the raw parameters.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .correspondence import (center_features, masked_correlation,
                             normalize_channels, softmax_normalize)
from .errors import (AlignmentError, DegenerateGeometryError,
                     InsufficientOverlapError, NoConsensusError)
from .geometry import (AffineParams, affine_grid, base_grid, bilinear_sample,
                       sample_jacobian_theta, warp_mask)
from .rng import substream

MAX_CONDITION = 1e8


@dataclass
class CorrespondenceSet:
    """Weighted point matches in normalized coordinates (tgt -> ref)."""

    ref_pts: np.ndarray   # (k, 2) x,y in the reference frame
    tgt_pts: np.ndarray   # (k, 2) x,y in the target frame
    conf: np.ndarray      # (k,) nonnegative weights

    def __len__(self) -> int:
        return self.ref_pts.shape[0]

    def subset(self, idx) -> "CorrespondenceSet":
        return CorrespondenceSet(self.ref_pts[idx], self.tgt_pts[idx],
                                 self.conf[idx])


def soft_argmax_correspondences(cnorm: np.ndarray, col_valid: np.ndarray,
                                h: int, w: int,
                                min_confidence: float = 0.0) -> CorrespondenceSet:
    """Collapse each valid correlation column into one weighted match.

    The reference point of target cell j is the weight-averaged reference
    coordinate under column j; its confidence is the column's peak weight.
    Columns below ``min_confidence`` (and invalid columns) are dropped.
    """
    coords = base_grid(h, w).reshape(-1, 2)
    conf = cnorm.max(axis=0)
    keep = (np.asarray(col_valid).astype(bool)) & (conf >= min_confidence)
    if not keep.any():
        return CorrespondenceSet(np.empty((0, 2)), np.empty((0, 2)), np.empty(0))
    ref_pts = cnorm[:, keep].T @ coords
    return CorrespondenceSet(ref_pts, coords[keep], conf[keep])


def _weighted_normal_fit(corr: CorrespondenceSet):
    """Solve the confidence-weighted normal equations; returns (theta, rms)."""
    x = np.column_stack([corr.tgt_pts, np.ones(len(corr))])   # (k,3)
    wgt = corr.conf
    a = x.T @ (x * wgt[:, None])
    cond = np.linalg.cond(a)
    if not np.isfinite(cond) or cond >= MAX_CONDITION:
        raise DegenerateGeometryError(
            f"correspondence geometry is degenerate (cond={cond:.3g})")
    bx = x.T @ (wgt * corr.ref_pts[:, 0])
    by = x.T @ (wgt * corr.ref_pts[:, 1])
    rx = np.linalg.solve(a, bx)
    ry = np.linalg.solve(a, by)
    theta = AffineParams(rx[0], rx[1], rx[2], ry[0], ry[1], ry[2])
    res = _residuals(theta, corr)
    wsum = wgt.sum()
    rms = float(np.sqrt((wgt * res ** 2).sum() / wsum)) if wsum > 0 else 0.0
    return theta, rms


def _residuals(theta: AffineParams, corr: CorrespondenceSet) -> np.ndarray:
    """Euclidean distance between predicted and observed reference points."""
    m = theta.matrix
    pred = corr.tgt_pts @ m[:, :2].T + m[:, 2]
    return np.sqrt(((pred - corr.ref_pts) ** 2).sum(axis=1))


def fit_affine_wlsq(corr: CorrespondenceSet):
    """Confidence-weighted least-squares affine fit (tgt -> ref).

    Needs >= 3 non-collinear correspondences; returns (theta, residual_rms).
    """
    if len(corr) < 3:
        raise DegenerateGeometryError(
            f"need at least 3 correspondences, got {len(corr)}")
    return _weighted_normal_fit(corr)


def _exact_affine(corr: CorrespondenceSet, idx: np.ndarray) -> AffineParams | None:
    """Interpolating affine through exactly 3 points; None if collinear."""
    x = np.column_stack([corr.tgt_pts[idx], np.ones(3)])
    det = np.linalg.det(x)
    if abs(det) < 1e-12:
        return None
    rx = np.linalg.solve(x, corr.ref_pts[idx, 0])
    ry = np.linalg.solve(x, corr.ref_pts[idx, 1])
    return AffineParams(rx[0], rx[1], rx[2], ry[0], ry[1], ry[2])


def fit_affine_ransac(corr: CorrespondenceSet, iters: int = 256,
                      inlier_thresh: float = 0.02, seed: int = 0):
    """RANSAC affine fit, deterministic for a fixed seed.

    The best hypothesis by inlier count (ties: lower inlier RMS, then lower
    iteration index) is refit on its inliers with the weighted least-squares
    solver.  Returns (theta, inlier_flags (k,) uint8).
    """
    k = len(corr)
    if k < 3:
        raise DegenerateGeometryError(f"need at least 3 correspondences, got {k}")
    gen = substream(seed, "ransac")
    best_count = 0
    best_rms = np.inf
    best_inliers = None
    for _ in range(iters):
        idx = gen.choice(k, size=3, replace=False)
        theta = _exact_affine(corr, idx)
        if theta is None:
            continue
        res = _residuals(theta, corr)
        inliers = res < inlier_thresh
        count = int(inliers.sum())
        if count < 3:
            continue
        rms = float(np.sqrt((res[inliers] ** 2).mean()))
        if count > best_count or (count == best_count and rms < best_rms):
            best_count, best_rms, best_inliers = count, rms, inliers
    if best_inliers is None:
        raise NoConsensusError(
            f"no affine hypothesis reached 3 inliers in {iters} iterations")
    theta, _ = fit_affine_wlsq(corr.subset(best_inliers))
    return theta, best_inliers.astype(np.uint8)


def _masked_objective(theta: AffineParams, f_r, m_r, f_t, m_t):
    """Mean squared masked residual of warp(f_r, theta) against f_t.

    Returns (rho, valid, warped); rho is normalized per valid pixel-channel
    so values are comparable across iterates with different overlap.
    """
    h, w = f_t.shape[1:]
    grid = affine_grid(theta, h, w)
    warped, _ = bilinear_sample(f_r, grid)
    wm = warp_mask(m_r, grid)
    valid = (np.asarray(m_t) > 0) & (wm > 0)
    count = int(valid.sum())
    if count == 0:
        return np.inf, valid, warped
    diff = warped[:, valid] - f_t[:, valid]
    rho = float((diff * diff).sum() / diff.size)
    return rho, valid, warped


def refine_affine_photometric(theta0: AffineParams, f_r: np.ndarray,
                              m_r: np.ndarray, f_t: np.ndarray,
                              m_t: np.ndarray, max_iters: int = 50,
                              tol: float = 1e-6, min_overlap: int = 16):
    """Damped Gauss-Newton descent on the masked photometric residual.

    Starts at theta0 and accepts only steps that strictly decrease the mean
    masked residual (lambda starts at 1e-3, x10 on a rejected step, /10 on an
    accepted one).  Stops when an accepted step's norm drops below ``tol`` or
    after ``max_iters`` solve attempts.  Returns (theta, info) where info
    records the residual after each accepted step; the returned theta never
    has a higher masked residual than theta0.
    """
    f_r = np.asarray(f_r, np.float64)
    f_t = np.asarray(f_t, np.float64)
    rho, valid, _ = _masked_objective(theta0, f_r, m_r, f_t, m_t)
    if int(valid.sum()) < min_overlap:
        raise InsufficientOverlapError(
            f"masked overlap {int(valid.sum())} below minimum {min_overlap}")
    theta = theta0
    lam = 1e-3
    history = [rho]
    h, w = f_t.shape[1:]
    linearize = True
    g = hess = diag = None
    for _ in range(max_iters):
        if linearize:
            warped, jac, _ = sample_jacobian_theta(f_r, theta, h=h, w=w)
            _, valid, _ = _masked_objective(theta, f_r, m_r, f_t, m_t)
            r = (warped - f_t)[:, valid].ravel()
            j = jac[:, valid, :].reshape(-1, 6)
            g = j.T @ r
            hess = j.T @ j
            diag = np.diag(hess).copy()
            linearize = False
        if not diag.any():
            break  # zero image gradient everywhere (constant map)
        try:
            step = np.linalg.solve(hess + lam * np.diag(diag)
                                   + 1e-12 * np.eye(6), -g)
        except np.linalg.LinAlgError:
            break
        cand = AffineParams.from_array(theta.to_array() + step)
        rho_c, valid_c, _ = _masked_objective(cand, f_r, m_r, f_t, m_t)
        if int(valid_c.sum()) >= min_overlap and rho_c < rho:
            theta, rho = cand, rho_c
            lam = max(lam / 10.0, 1e-12)
            history.append(rho)
            linearize = True
            if float(np.linalg.norm(step)) < tol:
                break
        else:
            lam *= 10.0
            if lam > 1e8:
                break
    info = {"residuals": history, "accepted_steps": len(history) - 1}
    return theta, info


def grid_loss(theta: AffineParams, theta_star: AffineParams, h: int, w: int):
    """Alignment quality against a known transform.

    Returns (grid_term, param_term): the mean Euclidean displacement between
    the two sampling grids over all h*w cells, and the L1 distance between
    the parameter sixtuples.
    """
    ga = affine_grid(theta, h, w)
    gb = affine_grid(theta_star, h, w)
    grid_term = float(np.sqrt(((ga - gb) ** 2).sum(axis=-1)).mean())
    param_term = float(np.abs(theta.to_array() - theta_star.to_array()).sum())
    return grid_term, param_term


@dataclass
class AlignmentParams:
    """Knobs for the full chain; defaults suit 32x32 feature grids."""

    corr_temperature: float = 0.002
    min_confidence: float = 0.1
    ransac_iters: int = 256
    inlier_thresh: float = 0.02
    refine_iters: int = 50
    refine_tol: float = 1e-6
    min_overlap: int = 16
    seed: int = 0


@dataclass
class AlignmentResult:
    theta: AffineParams
    n_correspondences: int
    n_inliers: int
    refined: bool
    notes: list = field(default_factory=list)


def estimate_alignment(f_r, m_r, f_t, m_t, refine_stages=None,
                       params: AlignmentParams | None = None) -> AlignmentResult:
    """Correlation -> soft-argmax -> RANSAC -> Gauss-Newton, end to end.

    f_r/f_t are matching feature maps with masks at feature resolution;
    features are mean-centered over visible cells before the cosine
    correlation.  refine_stages is an optional list of (f_r, m_r, f_t, m_t)
    operand tuples polished photometrically in order (coarse to fine);
    stages with too little overlap are skipped with a note.  Raises
    AlignmentError when no usable transform can be produced.
    """
    p = params or AlignmentParams()
    h, w = f_t.shape[1:]
    fr = normalize_channels(center_features(f_r, m_r))
    ft = normalize_channels(center_features(f_t, m_t))
    corr = masked_correlation(fr, m_r, ft, m_t)
    cnorm, col_valid = softmax_normalize(corr, m_r, p.corr_temperature)
    # hole target cells carry no evidence: drop their columns entirely
    tgt_visible = np.asarray(m_t).reshape(-1) > 0
    col_valid = (col_valid.astype(bool) & tgt_visible).astype(np.uint8)
    cnorm = cnorm * tgt_visible[None, :]

    matches = soft_argmax_correspondences(cnorm, col_valid, h, w,
                                          p.min_confidence)
    if len(matches) < 3:
        raise AlignmentError(
            f"only {len(matches)} confident correspondences (need 3)")
    try:
        theta, inliers = fit_affine_ransac(matches, p.ransac_iters,
                                           p.inlier_thresh, p.seed)
    except (NoConsensusError, DegenerateGeometryError) as exc:
        raise AlignmentError(str(exc)) from exc

    result = AlignmentResult(theta, len(matches), int(inliers.sum()), False)
    for stage, (rr, rmr, rt, rmt) in enumerate(refine_stages or []):
        try:
            theta_ref, _ = refine_affine_photometric(
                result.theta, rr, rmr, rt, rmt, p.refine_iters, p.refine_tol,
                p.min_overlap)
            result.theta = theta_ref
            result.refined = True
        except InsufficientOverlapError as exc:
            result.notes.append(f"refine stage {stage} skipped: {exc}")
    return result
