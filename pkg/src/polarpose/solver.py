"""Pose recovery from dense 2D-3D correspondences.

EPnP on minimal 4-point samples inside RANSAC, followed by Levenberg-Marquardt
refinement of the reprojection error on the inlier set.
"""
import itertools
import math
import time
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidInputError, NoPoseFoundError
from .posemath import Pose, exp_so3, nocs_decode, nearest_rotation, skew

PLANAR_RATIO = 1e-4


@dataclass
class Correspondences:
    """Parallel arrays of model points (meters) and pixel coordinates (u, v)."""

    model_points: np.ndarray
    pixels: np.ndarray

    def __post_init__(self):
        self.model_points = np.asarray(self.model_points, dtype=np.float64).reshape(-1, 3)
        self.pixels = np.asarray(self.pixels, dtype=np.float64).reshape(-1, 2)
        if len(self.model_points) != len(self.pixels):
            raise InvalidInputError("model_points and pixels differ in length")

    def __len__(self):
        return len(self.pixels)

    def subset(self, index):
        return Correspondences(self.model_points[index], self.pixels[index])


@dataclass
class RansacParams:
    max_iterations: int = 1000
    inlier_threshold: float = 2.0
    min_inliers: int = 12
    seed: int = 0
    confidence: float = 0.999

    def __post_init__(self):
        if self.inlier_threshold <= 0:
            raise InvalidInputError("inlier_threshold must be positive")
        if self.max_iterations < 1:
            raise InvalidInputError("max_iterations must be at least 1")
        if not 0.0 < self.confidence < 1.0:
            raise InvalidInputError("confidence must lie in (0, 1)")


@dataclass
class LMResult:
    pose: Pose
    cost_before: float
    cost_after: float
    iterations: int
    improved: bool
    converged: bool


@dataclass
class RansacResult:
    pose: Pose
    inliers: np.ndarray
    stats: dict = field(default_factory=dict)


def extract_correspondences(nocs, stride=1):
    """One correspondence per masked pixel on a ``stride`` grid."""
    stride = int(stride)
    if stride < 1:
        raise InvalidInputError("stride must be at least 1")
    grid = np.zeros_like(nocs.mask)
    grid[::stride, ::stride] = True
    ii, jj = np.nonzero(nocs.mask & grid)
    pts = nocs_decode(nocs.coords[ii, jj], nocs.diameter, nocs.center_offset)
    return Correspondences(pts, np.stack([jj, ii], axis=1).astype(np.float64))


def project(R, t, points, intrinsics):
    """Pixel coordinates and depths of model points under ``(R, t)``."""
    P = points @ R.T + t
    z = P[:, 2]
    with np.errstate(divide="ignore", invalid="ignore"):
        uv = np.stack([intrinsics.fx * P[:, 0] / z + intrinsics.cx,
                       intrinsics.fy * P[:, 1] / z + intrinsics.cy], axis=1)
    return uv, z


def reprojection_errors(R, t, corr, intrinsics):
    uv, z = project(R, t, corr.model_points, intrinsics)
    err = np.linalg.norm(uv - corr.pixels, axis=1)
    return np.where(z > 0, err, np.inf)


# ---------------------------------------------------------------------------
# EPnP
# ---------------------------------------------------------------------------

def _procrustes(X, Y):
    """Rigid (R, t) minimizing ||R X + t - Y||."""
    cx, cy = X.mean(axis=0), Y.mean(axis=0)
    H = (X - cx).T @ (Y - cy)
    U, _, Vt = np.linalg.svd(H)
    d = np.sign(np.linalg.det(Vt.T @ U.T))
    R = Vt.T @ np.diag([1.0, 1.0, d]) @ U.T
    return R, cy - R @ cx


def _control_points(X):
    centroid = X.mean(axis=0)
    A = X - centroid
    _, s, Vt = np.linalg.svd(A, full_matrices=False)
    n = len(X)
    planar = s[2] <= PLANAR_RATIO * s[0]
    k = 2 if planar else 3
    ctrl = [centroid] + [centroid + s[i] / math.sqrt(n) * Vt[i] for i in range(k)]
    return np.array(ctrl), planar


def _barycentric(X, ctrl):
    # X = alphas @ ctrl with sum(alphas) = 1
    C_h = np.vstack([ctrl.T, np.ones(len(ctrl))])
    X_h = np.vstack([X.T, np.ones(len(X))])
    alphas, *_ = np.linalg.lstsq(C_h, X_h, rcond=None)
    return alphas.T


def _gauss_newton_betas(betas, dv, d2, iterations=10):
    # dv: (pairs, N, 3) kernel differences, d2: (pairs,) squared distances
    betas = betas.copy()
    for _ in range(iterations):
        diff = np.einsum("k,pkj->pj", betas, dv)
        r = (diff * diff).sum(axis=1) - d2
        J = 2.0 * np.einsum("pj,pkj->pk", diff, dv)
        step, *_ = np.linalg.lstsq(J, -r, rcond=None)
        betas += step
        if np.linalg.norm(step) <= 1e-14 * max(1.0, np.linalg.norm(betas)):
            break
    return betas


def _initial_betas(N, dv, d2):
    pairs = dv.shape[0]
    idx = [(a, b) for a in range(N) for b in range(a, N)]
    if len(idx) > pairs:
        return None
    L = np.empty((pairs, len(idx)))
    for c, (a, b) in enumerate(idx):
        dot = (dv[:, a] * dv[:, b]).sum(axis=1)
        L[:, c] = dot if a == b else 2.0 * dot
    prods, *_ = np.linalg.lstsq(L, d2, rcond=None)
    betas = np.zeros(N)
    betas[0] = math.sqrt(abs(prods[idx.index((0, 0))]))
    for k in range(1, N):
        bkk = prods[idx.index((k, k))]
        b0k = prods[idx.index((0, k))]
        betas[k] = math.copysign(math.sqrt(abs(bkk)), b0k)
    return betas


def _epnp_candidates(X, uv, intrinsics):
    ctrl, planar = _control_points(X)
    nc = len(ctrl)
    alphas = _barycentric(X, ctrl)
    n = len(X)
    M = np.zeros((2 * n, 3 * nc))
    du = intrinsics.cx - uv[:, 0]
    dv_ = intrinsics.cy - uv[:, 1]
    for j in range(nc):
        a = alphas[:, j]
        M[0::2, 3 * j] = a * intrinsics.fx
        M[0::2, 3 * j + 2] = a * du
        M[1::2, 3 * j + 1] = a * intrinsics.fy
        M[1::2, 3 * j + 2] = a * dv_
    _, vecs = np.linalg.eigh(M.T @ M)
    pairs = list(itertools.combinations(range(nc), 2))
    d2 = np.array([((ctrl[a] - ctrl[b]) ** 2).sum() for a, b in pairs])

    out = []
    max_n = 4 if nc == 4 else 2
    for N in range(1, max_n + 1):
        kernel = vecs[:, :N].T.reshape(N, nc, 3)
        dv = np.stack([kernel[:, a] - kernel[:, b] for a, b in pairs])
        init = _initial_betas(N, dv, d2)
        if init is None:
            if len(out) < 3:
                continue
            # extend the three-coefficient estimate with a zero
            init = np.append(out[-1][2], 0.0)
        betas = _gauss_newton_betas(init, dv, d2)
        cam_ctrl = np.einsum("k,kcj->cj", betas, kernel)
        Xc = alphas @ cam_ctrl
        if Xc[:, 2].mean() < 0:
            Xc = -Xc
            betas = -betas
        R, t = _procrustes(X, Xc)
        out.append((R, t, betas))
    return out


def _p3p_grunert(X, uv, intrinsics):
    """Grunert's three-point solution; up to four (R, t) pairs."""
    rays = np.column_stack([(uv[:, 0] - intrinsics.cx) / intrinsics.fx,
                            (uv[:, 1] - intrinsics.cy) / intrinsics.fy,
                            np.ones(3)])
    j = rays / np.linalg.norm(rays, axis=1, keepdims=True)
    a2 = ((X[1] - X[2]) ** 2).sum()
    b2 = ((X[0] - X[2]) ** 2).sum()
    c2 = ((X[0] - X[1]) ** 2).sum()
    ca, cb, cg = j[1] @ j[2], j[0] @ j[2], j[0] @ j[1]
    amc = (a2 - c2) / b2
    apc = (a2 + c2) / b2
    A4 = (amc - 1.0) ** 2 - 4.0 * c2 / b2 * ca * ca
    A3 = 4.0 * (amc * (1.0 - amc) * cb - (1.0 - apc) * ca * cg + 2.0 * c2 / b2 * ca * ca * cb)
    A2 = 2.0 * (amc * amc - 1.0 + 2.0 * amc * amc * cb * cb + 2.0 * (b2 - c2) / b2 * ca * ca
                - 4.0 * apc * ca * cb * cg + 2.0 * (b2 - a2) / b2 * cg * cg)
    A1 = 4.0 * (-amc * (1.0 + amc) * cb + 2.0 * a2 / b2 * cg * cg * cb - (1.0 - apc) * ca * cg)
    A0 = (1.0 + amc) ** 2 - 4.0 * a2 / b2 * cg * cg
    coeffs = np.array([A4, A3, A2, A1, A0])
    if not np.all(np.isfinite(coeffs)) or np.abs(coeffs).max() == 0:
        return []
    roots = np.roots(coeffs)
    dpoly = np.polyder(coeffs)
    out = []
    for root in roots:
        if abs(root.imag) > 1e-6 * max(1.0, abs(root.real)):
            continue
        v = root.real
        for _ in range(3):
            d = np.polyval(dpoly, v)
            if d == 0:
                break
            v -= np.polyval(coeffs, v) / d
        den = 2.0 * (cg - v * ca)
        if abs(den) < 1e-14:
            continue
        u = ((-1.0 + amc) * v * v - 2.0 * amc * cb * v + 1.0 + amc) / den
        q = 1.0 + u * u - 2.0 * u * cg
        if q <= 0:
            continue
        s1 = math.sqrt(c2 / q)
        dist = np.array([s1, u * s1, v * s1])
        if np.any(dist <= 0):
            continue
        R, t = _procrustes(X, j * dist[:, None])
        out.append((R, t, dist))
    return out


def _collinear_triplet(X, rel_tol=1e-9):
    scale = max(np.ptp(X, axis=0).max(), 1e-300)
    for a, b, c in itertools.combinations(range(len(X)), 3):
        area = np.linalg.norm(np.cross(X[b] - X[a], X[c] - X[a]))
        if area <= rel_tol * scale * scale:
            return True
    return False


def pnp_minimal(sample, intrinsics):
    """Candidate poses explaining four correspondences.

    Candidates with any sample point behind the camera are dropped; the
    rest are returned best-first by sample reprojection error. A degenerate
    sample (three collinear model points) gives an empty list.
    """
    X = sample.model_points
    if len(X) != 4:
        raise InvalidInputError("pnp_minimal expects exactly 4 correspondences")
    if not (np.all(np.isfinite(X)) and np.all(np.isfinite(sample.pixels))):
        return []
    if _collinear_triplet(X):
        return []
    return [Pose(R, t) for R, t in _minimal_raw(X, sample.pixels, intrinsics)]


def _minimal_raw(X, uv, intrinsics):
    try:
        cands = _epnp_candidates(X, uv, intrinsics)
        if not _control_points(X)[1]:
            # four non-coplanar points leave a 4-D EPnP kernel; add the
            # three-point solutions, ranked below by the fourth point
            cands = cands + _p3p_grunert(X[:3], uv[:3], intrinsics)
    except np.linalg.LinAlgError:
        return []
    scored = []
    for R, t, _ in cands:
        if not np.all(np.isfinite(R)) or not np.all(np.isfinite(t)):
            continue
        proj, z = project(R, t, X, intrinsics)
        if np.any(z <= 0):
            continue
        R, t = _polish(R, t, X, uv, intrinsics)
        r, _ = _residuals(R, t, X, uv, intrinsics)
        err = float(np.sqrt(2.0 * _cost(r, len(X))))
        scored.append((err, R, t))
    scored.sort(key=lambda s: s[0])
    if not scored:
        return []
    best = scored[0][0]
    kept = []
    for err, R, t in scored:
        if err > max(2.0 * best, best + 1e-6):
            continue
        if any(np.abs(R - R2).max() < 1e-9 and np.abs(t - t2).max() < 1e-9 for R2, t2 in kept):
            continue
        kept.append((R, t))
    return kept


# ---------------------------------------------------------------------------
# Levenberg-Marquardt
# ---------------------------------------------------------------------------

def _residuals(R, t, X, uv, intrinsics):
    proj, z = project(R, t, X, intrinsics)
    return (proj - uv).reshape(-1), z


def _cost(r, n):
    return float(r @ r) / n


def _jacobian(R, t, X, intrinsics):
    RX = X @ R.T
    P = RX + t
    x, y, z = P[:, 0], P[:, 1], P[:, 2]
    n = len(X)
    dproj = np.zeros((n, 2, 3))
    dproj[:, 0, 0] = intrinsics.fx / z
    dproj[:, 0, 2] = -intrinsics.fx * x / z ** 2
    dproj[:, 1, 1] = intrinsics.fy / z
    dproj[:, 1, 2] = -intrinsics.fy * y / z ** 2
    # d(exp(w) R X)/dw at w=0 is -[R X]_x
    dP_dw = np.zeros((n, 3, 3))
    dP_dw[:, 0, 1] = RX[:, 2]
    dP_dw[:, 0, 2] = -RX[:, 1]
    dP_dw[:, 1, 0] = -RX[:, 2]
    dP_dw[:, 1, 2] = RX[:, 0]
    dP_dw[:, 2, 0] = RX[:, 1]
    dP_dw[:, 2, 1] = -RX[:, 0]
    J = np.empty((n, 2, 6))
    J[:, :, :3] = dproj @ dP_dw
    J[:, :, 3:] = dproj
    return J.reshape(2 * n, 6)


def _polish(R, t, X, uv, intrinsics, iterations=5):
    """A few damped Gauss-Newton steps on a small sample."""
    R = nearest_rotation(R)
    r, _ = _residuals(R, t, X, uv, intrinsics)
    cost = r @ r
    for _ in range(iterations):
        if cost < 1e-24:
            break
        J = _jacobian(R, t, X, intrinsics)
        A = J.T @ J
        try:
            delta = np.linalg.solve(A + 1e-9 * np.diag(np.maximum(np.diag(A), 1e-12)), -J.T @ r)
        except np.linalg.LinAlgError:
            break
        R_new = exp_so3(delta[:3]) @ R
        t_new = t + delta[3:]
        r_new, z = _residuals(R_new, t_new, X, uv, intrinsics)
        c_new = r_new @ r_new
        if not (np.all(z > 0) and c_new < cost):
            break
        R, t, r, cost = R_new, t_new, r_new, c_new
    return R, t


def refine_lm(initial, corr, intrinsics, max_iterations=100, grad_tol=1e-10,
              step_tol=1e-12):
    """Minimize the mean squared reprojection error starting at ``initial``.

    Rotation steps are exponential-map increments composed on the left;
    translation steps are additive. Only cost-decreasing steps are taken.
    """
    X, uv = corr.model_points, corr.pixels
    n = len(X)
    if n < 3:
        raise InvalidInputError("refine_lm needs at least 3 correspondences")
    R, t = initial.rotation, initial.translation
    r, z = _residuals(R, t, X, uv, intrinsics)
    if np.any(z <= 0):
        raise InvalidInputError("initial pose puts correspondences behind the camera")
    cost0 = cost = _cost(r, n)
    lam = 1e-3
    accepted = 0
    converged = False
    it = 0
    for it in range(1, max_iterations + 1):
        J = _jacobian(R, t, X, intrinsics)
        g = J.T @ r
        if 2.0 * np.linalg.norm(g) / n < grad_tol:
            converged = True
            it -= 1
            break
        A = J.T @ J
        diag = np.maximum(np.diag(A), 1e-12)
        stepped = False
        while lam < 1e16:
            try:
                delta = np.linalg.solve(A + lam * np.diag(diag), -g)
            except np.linalg.LinAlgError:
                lam *= 10.0
                continue
            R_new = exp_so3(delta[:3]) @ R
            t_new = t + delta[3:]
            r_new, z_new = _residuals(R_new, t_new, X, uv, intrinsics)
            cost_new = _cost(r_new, n) if np.all(z_new > 0) else np.inf
            if cost_new < cost:
                R, t, r, cost = R_new, t_new, r_new, cost_new
                lam = max(lam / 10.0, 1e-12)
                stepped = True
                accepted += 1
                break
            lam *= 10.0
        if not stepped:
            converged = accepted > 0 or cost == 0.0
            break
        if np.linalg.norm(delta) < step_tol:
            converged = True
            break
    if accepted == 0 and not converged:
        return LMResult(initial, cost0, cost0, it, improved=False, converged=False)
    pose = Pose(nearest_rotation(R), t) if accepted else initial
    return LMResult(pose, cost0, cost if accepted else cost0, it,
                    improved=accepted > 0, converged=converged)


# ---------------------------------------------------------------------------
# RANSAC
# ---------------------------------------------------------------------------

def _required_iterations(inlier_ratio, confidence, sample_size=4):
    w = inlier_ratio ** sample_size
    if w >= 1.0:
        return 0
    if w <= 0.0:
        return math.inf
    return math.ceil(math.log(1.0 - confidence) / math.log(1.0 - w))


def pnp_ransac(corr, intrinsics, params=None):
    """Robust pose from correspondences.

    The hypothesis with the most inliers wins (ties go to the earliest), is
    refined on its inliers, and the inlier set is recomputed once more under
    the refined pose before a final refinement. Results depend only on the
    inputs and ``params.seed``.
    """
    params = params or RansacParams()
    t0 = time.perf_counter()
    n = len(corr)
    stats = {"correspondences": n, "iterations": 0, "inlier_count": 0, "inlier_ratio": 0.0}
    if n < 6:
        raise NoPoseFoundError(f"need at least 6 correspondences, got {n}", stats)
    rng = np.random.default_rng(params.seed)
    thr = params.inlier_threshold
    best = None
    best_count = -1
    needed = params.max_iterations
    it = 0
    X, uv = corr.model_points, corr.pixels
    while it < min(needed, params.max_iterations):
        it += 1
        idx = rng.choice(n, size=4, replace=False)
        Xs = X[idx]
        if _collinear_triplet(Xs):
            continue
        for R, t in _minimal_raw(Xs, uv[idx], intrinsics):
            inl = reprojection_errors(R, t, corr, intrinsics) < thr
            count = int(inl.sum())
            if count > best_count:
                best, best_count = (R, t, inl), count
                needed = _required_iterations(count / n, params.confidence)
    stats["iterations"] = it
    if best is None or best_count < params.min_inliers:
        stats["inlier_count"] = max(best_count, 0)
        stats["inlier_ratio"] = max(best_count, 0) / n
        raise NoPoseFoundError(
            f"best hypothesis has {max(best_count, 0)} inliers, need {params.min_inliers}", stats)

    R, t, inl = best
    pose = Pose(nearest_rotation(R), t)
    for _ in range(2):
        res = refine_lm(pose, corr.subset(inl), intrinsics)
        pose = res.pose
        new_inl = reprojection_errors(pose.rotation, pose.translation, corr, intrinsics) < thr
        if new_inl.sum() < params.min_inliers or np.array_equal(new_inl, inl):
            break
        inl = new_inl
    err = reprojection_errors(pose.rotation, pose.translation, corr, intrinsics)
    stats.update({
        "inlier_count": int(inl.sum()),
        "inlier_ratio": float(inl.sum()) / n,
        "rmse_px": float(np.sqrt(np.mean(err[inl] ** 2))),
        "time_ms": (time.perf_counter() - t0) * 1e3,
    })
    return RansacResult(pose=pose, inliers=inl, stats=stats)
