"""RANSAC-style keypoint voting from a vector field.

Hypotheses are intersections of the direction rays of sampled pixel
pairs; each is scored by the number of masked pixels whose direction
agrees with it (cosine above a threshold). The winner is optionally
refined as the least-squares intersection of its inlier rays.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InsufficientSupportError, NoValidHypothesisError
from .geometry import EPS_NORM, EPS_PARALLEL, pixel_centers


@dataclass(frozen=True)
class VotingConfig:
    num_samples: int = 512
    inlier_cos_threshold: float = 0.99
    refine: bool = True
    rng_seed: int = 0

    def __post_init__(self):
        if self.num_samples < 1:
            raise ValueError("num_samples must be >= 1")
        if not (0.0 < self.inlier_cos_threshold < 1.0):
            raise ValueError("inlier_cos_threshold must be in (0, 1)")


@dataclass
class Hypothesis:
    location: np.ndarray  # (2,) pixels
    votes: int = 0


def _masked_pixels(field, mask):
    field = np.asarray(field, dtype=float)
    mask = np.asarray(mask, dtype=bool)
    h, w = mask.shape
    ctr = pixel_centers(h, w)
    pts = ctr[mask]  # (M, 2)
    dirs = field[mask]  # (M, 2)
    return pts, dirs


def _hypothesis_locations(field, mask, cfg: VotingConfig) -> np.ndarray:
    pts, dirs = _masked_pixels(field, mask)
    m = len(pts)
    if m < 2:
        raise InsufficientSupportError(f"need >= 2 masked pixels, got {m}")
    rng = np.random.default_rng(cfg.rng_seed)
    ia = rng.integers(0, m, cfg.num_samples)
    ib = rng.integers(0, m, cfg.num_samples)
    keep = ia != ib
    p1, v1 = pts[ia[keep]], dirs[ia[keep]]
    p2, v2 = pts[ib[keep]], dirs[ib[keep]]

    cross = v1[:, 0] * v2[:, 1] - v1[:, 1] * v2[:, 0]
    n1 = np.hypot(v1[:, 0], v1[:, 1])
    n2 = np.hypot(v2[:, 0], v2[:, 1])
    ok = (n1 >= EPS_NORM) & (n2 >= EPS_NORM)
    with np.errstate(divide="ignore", invalid="ignore"):
        ok &= np.abs(cross) >= EPS_PARALLEL * n1 * n2
    if not np.any(ok):
        return np.empty((0, 2))
    p1, v1, p2, v2, cross = p1[ok], v1[ok], p2[ok], v2[ok], cross[ok]
    d = p2 - p1
    t1 = (d[:, 0] * v2[:, 1] - d[:, 1] * v2[:, 0]) / cross
    return p1 + t1[:, None] * v1


def generate_hypotheses(field, mask, cfg: VotingConfig) -> list[Hypothesis]:
    """Sample pixel pairs and intersect their rays. Deterministic per seed."""
    locs = _hypothesis_locations(field, mask, cfg)
    return [Hypothesis(location=loc.copy()) for loc in locs]


def _vote_matrix(hyps, pts, dirs, threshold):
    """(n_hyp, M) bool inlier matrix for hypothesis locations vs pixels."""
    diff = hyps[:, None, :] - pts[None, :, :]  # (n, M, 2)
    dist = np.hypot(diff[..., 0], diff[..., 1])
    nv = np.hypot(dirs[:, 0], dirs[:, 1])
    usable = (dist >= 0.5) & (nv[None, :] >= EPS_NORM)
    dot = diff[..., 0] * dirs[None, :, 0] + diff[..., 1] * dirs[None, :, 1]
    with np.errstate(divide="ignore", invalid="ignore"):
        cos = dot / (dist * nv[None, :])
    return usable & (cos >= threshold)


def count_inliers(h, field, mask, threshold) -> int:
    """Masked pixels whose direction points at h within the cosine threshold.

    Pixels closer than 0.5 px to h or with near-zero direction are excluded.
    """
    pts, dirs = _masked_pixels(field, mask)
    h = np.asarray(h, dtype=float).reshape(1, 2)
    return int(np.count_nonzero(_vote_matrix(h, pts, dirs, threshold)))


def _refine_location(best, pts, dirs, inliers):
    """Least-squares intersection of inlier rays via 2x2 normal equations."""
    p = pts[inliers]
    v = dirs[inliers]
    n = v / np.hypot(v[:, 0], v[:, 1])[:, None]
    # sum of (I - n n^T) per inlier
    nx, ny = n[:, 0], n[:, 1]
    A = np.array(
        [
            [np.sum(1.0 - nx * nx), np.sum(-nx * ny)],
            [np.sum(-nx * ny), np.sum(1.0 - ny * ny)],
        ]
    )
    b = np.stack([(1.0 - nx * nx) * p[:, 0] - nx * ny * p[:, 1],
                  -nx * ny * p[:, 0] + (1.0 - ny * ny) * p[:, 1]], axis=-1).sum(axis=0)
    if np.linalg.cond(A) > 1e8:
        return best
    x = np.linalg.solve(A, b)

    def cost(q):
        dpx = q[None, 0] - p[:, 0]
        dpy = q[None, 1] - p[:, 1]
        cr = nx * dpy - ny * dpx
        return float(np.sum(cr * cr))

    return x if cost(x) <= cost(best) else best


def vote_keypoint(field, mask, cfg: VotingConfig):
    """Best-voted keypoint location and its vote count.

    Ties go to the lexicographically smallest (x, y) location. With
    cfg.refine the winner is re-estimated from its inlier rays.
    """
    locs = _hypothesis_locations(field, mask, cfg)
    if len(locs) == 0:
        raise NoValidHypothesisError("all sampled pixel pairs were parallel")
    pts, dirs = _masked_pixels(field, mask)
    votes_mat = _vote_matrix(locs, pts, dirs, cfg.inlier_cos_threshold)
    votes = votes_mat.sum(axis=1)
    best_votes = votes.max()
    cand = np.flatnonzero(votes == best_votes)
    # lexicographic (x, y) tie-break
    order = np.lexsort((locs[cand, 1], locs[cand, 0]))
    idx = cand[order[0]]
    best = locs[idx]
    if cfg.refine:
        best = _refine_location(best, pts, dirs, votes_mat[idx])
    return np.asarray(best, dtype=float), int(best_votes)
