"""EPnP pose solving from 2D-3D correspondences, with optional
Levenberg-damped reprojection refinement.

Object points are expressed in barycentric coordinates of 4 control
points (centroid + principal directions); the projection constraints
give a 2n x 12 linear system whose null-space basis is combined with
scale coefficients recovered from control-point distance preservation.
Near-coplanar clouds fall back to the 3-control-point planar variant.
"""

from __future__ import annotations

import itertools

import numpy as np

from .errors import DegenerateConfigurationError, TooFewPointsError
from .geometry import Intrinsics, Pose, project

# eigenvalue ratio below which the cloud is treated as planar
_PLANAR_EIG_RATIO = 1e-8


def umeyama(src, dst):
    """Rigid alignment (no scale): R, t with dst ~= R @ src + t.

    Rotation from the SVD of the cross-covariance with determinant
    correction, translation from the centroids.
    """
    src = np.asarray(src, dtype=float)
    dst = np.asarray(dst, dtype=float)
    mu_s = src.mean(axis=0)
    mu_d = dst.mean(axis=0)
    H = (src - mu_s).T @ (dst - mu_d)
    U, _, Vt = np.linalg.svd(H)
    d = np.sign(np.linalg.det(Vt.T @ U.T))
    S = np.diag([1.0, 1.0, d])
    R = Vt.T @ S @ U.T
    t = mu_d - R @ mu_s
    return R, t


def reprojection_rmse(pose: Pose, object_points, image_points, intr: Intrinsics):
    """Root-mean-square reprojection distance in pixels."""
    proj = project(pose, intr, object_points)
    d2 = np.sum((proj - np.asarray(image_points, dtype=float)) ** 2, axis=-1)
    return float(np.sqrt(np.mean(d2)))


def _control_points(Pw):
    c0 = Pw.mean(axis=0)
    centered = Pw - c0
    cov = centered.T @ centered / len(Pw)
    evals, evecs = np.linalg.eigh(cov)  # ascending
    if evals[-1] <= 0:
        raise DegenerateConfigurationError("all object points coincide")
    planar = evals[0] < _PLANAR_EIG_RATIO * evals[-1]
    if planar:
        axes = evecs[:, [2, 1]]
        scales = np.sqrt(evals[[2, 1]])
        C = np.vstack([c0, c0 + scales[0] * axes[:, 0], c0 + scales[1] * axes[:, 1]])
    else:
        axes = evecs[:, ::-1]
        scales = np.sqrt(evals[::-1])
        C = np.vstack([c0] + [c0 + scales[i] * axes[:, i] for i in range(3)])
    return C  # (3 or 4, 3)


def _barycentric(Pw, C):
    basis = (C[1:] - C[0]).T  # (3, nc-1)
    rhs = (Pw - C[0]).T  # (3, n)
    coef, *_ = np.linalg.lstsq(basis, rhs, rcond=None)
    a_rest = coef.T  # (n, nc-1)
    a0 = 1.0 - a_rest.sum(axis=1)
    return np.column_stack([a0, a_rest])  # (n, nc)


def _build_M(alphas, U, intr):
    n, nc = alphas.shape
    M = np.zeros((2 * n, 3 * nc))
    du = intr.cx - U[:, 0]
    dv = intr.cy - U[:, 1]
    for j in range(nc):
        a = alphas[:, j]
        M[0::2, 3 * j] = a * intr.fx
        M[0::2, 3 * j + 2] = a * du
        M[1::2, 3 * j + 1] = a * intr.fy
        M[1::2, 3 * j + 2] = a * dv
    return M


def _betas_from_products(y, m):
    """Extract (b1..bm) from the stacked products [b1b1, b1b2, ..]."""
    b1sq = y[0]
    b1 = np.sqrt(abs(b1sq))
    if b1 < 1e-12:
        return None
    betas = [b1]
    for a in range(1, m):
        betas.append(y[a] / b1)
    return np.array(betas)


def _product_rows(dv_stack, m):
    """Rows of the distance system over beta products for m basis vectors.

    dv_stack: (m, n_pairs, 3) control-point difference vectors per basis.
    Product order: (0,0), (0,1), ..., (0,m-1), (1,1), (1,2), ..., (m-1,m-1).
    """
    cols = []
    for a, b in itertools.combinations_with_replacement(range(m), 2):
        dot = np.sum(dv_stack[a] * dv_stack[b], axis=-1)
        cols.append(dot if a == b else 2.0 * dot)
    return np.column_stack(cols)


def solve_epnp(object_points, image_points, intr: Intrinsics) -> Pose:
    """Recover a pose from N >= 4 correspondences.

    Tries the 1-, 2- and 3-basis-vector scale cases and keeps the one
    with the lowest reprojection error.
    """
    Pw = np.asarray(object_points, dtype=float).reshape(-1, 3)
    U = np.asarray(image_points, dtype=float).reshape(-1, 2)
    if len(Pw) != len(U):
        raise TooFewPointsError("mismatched correspondence counts")
    if len(Pw) < 4:
        raise TooFewPointsError(f"need >= 4 correspondences, got {len(Pw)}")

    C = _control_points(Pw)
    nc = len(C)
    alphas = _barycentric(Pw, C)
    M = _build_M(alphas, U, intr)
    _, svals, Vt = np.linalg.svd(M, full_matrices=False)
    if svals[0] <= 0:
        raise DegenerateConfigurationError("projection system is all-zero")
    # basis of the (approximate) null space, most-null first
    n_basis = 4 if nc == 4 else 3
    basis = Vt[::-1][:n_basis]  # (n_basis, 3*nc)
    W = basis.reshape(n_basis, nc, 3)

    pairs = list(itertools.combinations(range(nc), 2))
    dw = np.array([np.linalg.norm(C[i] - C[j]) for i, j in pairs])
    dv_stack = np.stack([[W[a, i] - W[a, j] for i, j in pairs] for a in range(n_basis)])

    max_case = 3 if nc == 4 else 2
    best = None
    for m in range(1, max_case + 1):
        if m == 1:
            norms = np.linalg.norm(dv_stack[0], axis=-1)
            denom = float(np.sum(norms * norms))
            if denom <= 0:
                continue
            betas = np.array([float(np.sum(norms * dw)) / denom])
        else:
            L = _product_rows(dv_stack[:m], m)
            y, *_ = np.linalg.lstsq(L, dw * dw, rcond=None)
            betas = _betas_from_products(y, m)
            if betas is None:
                continue
        Cc = np.tensordot(betas, W[:m], axes=1)  # (nc, 3)
        Pc = alphas @ Cc
        if np.mean(Pc[:, 2]) < 0:
            Pc = -Pc
        if np.any(Pc[:, 2] <= 0):
            continue
        R, t = umeyama(Pw, Pc)
        pose = Pose(R, t)
        err = reprojection_rmse(pose, Pw, U, intr)
        if best is None or err < best[0]:
            best = (err, pose)

    if best is None:
        raise DegenerateConfigurationError("no valid scale case produced a pose")
    return best[1]


def _rodrigues(w):
    theta = np.linalg.norm(w)
    if theta < 1e-12:
        W = _skew(w)
        return np.eye(3) + W
    k = w / theta
    K = _skew(k)
    return np.eye(3) + np.sin(theta) * K + (1 - np.cos(theta)) * (K @ K)


def _skew(w):
    return np.array([[0, -w[2], w[1]], [w[2], 0, -w[0]], [-w[1], w[0], 0.0]])


def _apply_delta(pose: Pose, delta):
    R = _rodrigues(delta[:3]) @ pose.rotation
    # re-orthonormalize to keep the Pose invariant tight
    Uq, _, Vtq = np.linalg.svd(R)
    R = Uq @ Vtq
    if np.linalg.det(R) < 0:
        R = Uq @ np.diag([1.0, 1.0, -1.0]) @ Vtq
    return Pose(R, pose.translation + delta[3:])


def refine_pose(init: Pose, object_points, image_points, intr: Intrinsics, iters=10) -> Pose:
    """Levenberg-damped Gauss-Newton on reprojection residuals.

    Never returns a pose with higher RMSE than init; iters=0 is a no-op.
    """
    Pw = np.asarray(object_points, dtype=float).reshape(-1, 3)
    U = np.asarray(image_points, dtype=float).reshape(-1, 2)

    def residuals(pose):
        return (project(pose, intr, Pw) - U).ravel()

    best = init
    best_err = reprojection_rmse(init, Pw, U, intr)
    lam = 1e-3
    h = 1e-6
    for _ in range(iters):
        r0 = residuals(best)
        J = np.zeros((len(r0), 6))
        for j in range(6):
            dp = np.zeros(6)
            dp[j] = h
            try:
                J[:, j] = (residuals(_apply_delta(best, dp)) - residuals(_apply_delta(best, -dp))) / (2 * h)
            except Exception:
                J[:, j] = 0.0
        A = J.T @ J
        g = J.T @ r0
        improved = False
        for _ in range(8):
            try:
                delta = np.linalg.solve(A + lam * np.eye(6), -g)
                cand = _apply_delta(best, delta)
                err = reprojection_rmse(cand, Pw, U, intr)
            except Exception:
                err = np.inf
            if err < best_err:
                best, best_err = cand, err
                lam = max(lam / 3.0, 1e-12)
                improved = True
                break
            lam *= 10.0
        if not improved:
            break
        if best_err < 1e-12:
            break
    return best
