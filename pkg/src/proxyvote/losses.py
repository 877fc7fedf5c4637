"""Loss terms for vector-field keypoint regression with analytic gradients.

Fields are (H, W, 2) float arrays of per-pixel (vx, vy); masks are (H, W)
bools. All sums run over masked pixels only; gradients are zero outside
the mask. Values are sums (not means); any per-pixel normalization is
the caller's business.

The proxy-voting loss penalizes the perpendicular distance between a
keypoint and the line each pixel's direction vector defines; the distance
is normalized by the vector's length, so the loss is invariant both to
positive rescaling and to negation of any direction vector.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionMismatchError
from .geometry import EPS_NORM, pixel_centers


@dataclass
class LossReport:
    """Scalar loss plus the per-pixel gradient w.r.t. the estimated field."""

    value: float
    grad: np.ndarray  # (H, W, 2), zero outside the mask
    skipped: int = 0  # masked pixels dropped for near-zero direction


@dataclass(frozen=True)
class WeightSchedule:
    """Per-epoch growth schedule for the segmentation / proxy-loss weights."""

    alpha0: float = 1.0
    alpha_factor: float = 1.1
    alpha_cap: float = 10.0
    beta0: float = 1e-3
    beta_factor: float = 1.5
    beta_cap: float = 1e-2

    def __post_init__(self):
        if self.alpha_factor < 1 or self.beta_factor < 1:
            raise ValueError("schedule factors must be >= 1")
        if self.alpha_cap < self.alpha0 or self.beta_cap < self.beta0:
            raise ValueError("caps must be >= initial values")


DEFAULT_SCHEDULE = WeightSchedule()


def _check_dims(a, b, what):
    if a.shape[:2] != b.shape[:2]:
        raise DimensionMismatchError(f"{what}: {a.shape} vs {b.shape}")


def smooth_l1(a):
    """Smooth-L1 of a (elementwise): value and derivative.

    0.5 a^2 on |a| < 1, |a| - 0.5 otherwise; derivative a resp. sign(a).
    """
    a = np.asarray(a, dtype=float)
    quad = np.abs(a) < 1.0
    value = np.where(quad, 0.5 * a * a, np.abs(a) - 0.5)
    deriv = np.where(quad, a, np.sign(a))
    return value, deriv


def vf_loss(est, gt, mask) -> LossReport:
    """Smooth-L1 regression of the field against ground truth.

    Per masked pixel the residual is the L1 norm |du| + |dv| fed through
    one smooth-L1 evaluation (not per-component).
    """
    est = np.asarray(est, dtype=float)
    gt = np.asarray(gt, dtype=float)
    mask = np.asarray(mask, dtype=bool)
    _check_dims(est, gt, "est vs gt")
    _check_dims(est, mask[..., None], "est vs mask")

    r = est - gt
    a = np.abs(r[..., 0]) + np.abs(r[..., 1])
    val, dval = smooth_l1(a)
    value = float(np.sum(val[mask]))
    grad = dval[..., None] * np.sign(r)
    grad = np.where(mask[..., None], grad, 0.0)
    return LossReport(value=value, grad=grad)


def proxy_distances(est, mask, k):
    """Normalized point-to-line distance d(p) per pixel, plus validity mask.

    Returns (d, valid, skipped): d is (H, W) with zeros where invalid;
    valid marks masked pixels with usable direction norms.
    """
    est = np.asarray(est, dtype=float)
    mask = np.asarray(mask, dtype=bool)
    k = np.asarray(k, dtype=float)
    h, w = mask.shape
    ctr = pixel_centers(h, w)
    n = np.hypot(est[..., 0], est[..., 1])
    valid = mask & (n >= EPS_NORM)
    skipped = int(np.count_nonzero(mask & ~valid))
    ax = k[1] - ctr[..., 1]  # k^y - p^y
    bx = k[0] - ctr[..., 0]  # k^x - p^x
    cross = est[..., 0] * ax - est[..., 1] * bx
    with np.errstate(divide="ignore", invalid="ignore"):
        d = np.where(valid, np.abs(cross) / np.where(valid, n, 1.0), 0.0)
    return d, valid, skipped


def dpvl(est, mask, k) -> LossReport:
    """Proxy-voting loss: smooth-L1 of the keypoint-to-line distance.

    Gradient is the analytic derivative through the |cross| / ||v||
    quotient, including the normalization term.
    """
    est = np.asarray(est, dtype=float)
    mask = np.asarray(mask, dtype=bool)
    k = np.asarray(k, dtype=float)
    _check_dims(est, mask[..., None], "est vs mask")
    h, w = mask.shape
    ctr = pixel_centers(h, w)

    n = np.hypot(est[..., 0], est[..., 1])
    valid = mask & (n >= EPS_NORM)
    skipped = int(np.count_nonzero(mask & ~valid))

    ax = k[1] - ctr[..., 1]
    bx = k[0] - ctr[..., 0]
    cross = est[..., 0] * ax - est[..., 1] * bx
    nsafe = np.where(valid, n, 1.0)
    d = np.abs(cross) / nsafe
    val, dval = smooth_l1(d)
    value = float(np.sum(val[valid]))

    s = np.sign(cross)
    n3 = nsafe ** 3
    dd_dvx = s * ax / nsafe - np.abs(cross) * est[..., 0] / n3
    dd_dvy = -s * bx / nsafe - np.abs(cross) * est[..., 1] / n3
    grad = np.stack([dval * dd_dvx, dval * dd_dvy], axis=-1)
    grad = np.where(valid[..., None], grad, 0.0)
    return LossReport(value=value, grad=grad, skipped=skipped)


def seg_loss(scores, mask, include_background=False, floor=1e-7):
    """Negative log-likelihood of foreground scores over the mask.

    Scores are clamped to [floor, 1 - floor] before the log. With
    include_background, a -log(1 - s) term over background pixels is
    added (two-class cross entropy); off by default.
    """
    scores = np.asarray(scores, dtype=float)
    mask = np.asarray(mask, dtype=bool)
    if scores.shape != mask.shape:
        raise DimensionMismatchError(f"scores {scores.shape} vs mask {mask.shape}")
    s = np.clip(scores, floor, 1.0 - floor)
    value = float(-np.sum(np.log(s[mask])))
    if include_background:
        value += float(-np.sum(np.log(1.0 - s[~mask])))
    return value


def total_loss(seg, vf, pv, alpha, beta):
    """Weighted objective: alpha * seg + vf + beta * pv."""
    return alpha * seg + vf + beta * pv


def schedule_weights(epoch: int, sched: WeightSchedule = DEFAULT_SCHEDULE):
    """(alpha, beta) for a given epoch: geometric growth up to the caps."""
    if epoch < 0:
        raise ValueError("epoch must be >= 0")
    alpha = min(sched.alpha0 * sched.alpha_factor ** epoch, sched.alpha_cap)
    beta = min(sched.beta0 * sched.beta_factor ** epoch, sched.beta_cap)
    return alpha, beta
