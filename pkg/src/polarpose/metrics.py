"""Pose and surface-normal error metrics, plus the training losses as plain
scalar functions."""
from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from . import kernels
from .errors import InvalidInputError
from .posemath import symmetry_rotations

EXACT_NN_LIMIT = 5000
LOSS_SUBSAMPLE = 1024


def _model_vertices(model):
    v = np.asarray(getattr(model, "vertices", model), dtype=np.float64).reshape(-1, 3)
    if len(v) == 0:
        raise InvalidInputError("model has no vertices")
    return v


def _transform(pose, pts):
    return pts @ pose.rotation.T + pose.translation


def add(pose_a, pose_b, model):
    """Mean distance between corresponding model vertices under two poses."""
    pts = _model_vertices(model)
    d = _transform(pose_a, pts) - _transform(pose_b, pts)
    return float(np.sqrt((d * d).sum(axis=1)).mean())


def add_s(pose_a, pose_b, model):
    """Mean distance from each vertex under ``pose_a`` to the closest vertex
    under ``pose_b``."""
    pts = _model_vertices(model)
    a = _transform(pose_a, pts)
    b = _transform(pose_b, pts)
    if len(pts) <= EXACT_NN_LIMIT:
        return float(kernels.nearest_distances(a, b).mean())
    dist, _ = cKDTree(b).query(a, k=1)
    return float(dist.mean())


def add_recall(pose_pairs, model, threshold_fraction=0.1, symmetric=False):
    """Percentage of ``(pred, gt)`` pairs whose ADD(-S) is below
    ``threshold_fraction`` times the model diameter."""
    pose_pairs = list(pose_pairs)
    if not pose_pairs:
        raise InvalidInputError("no pose pairs given")
    if threshold_fraction <= 0:
        raise InvalidInputError("threshold_fraction must be positive")
    limit = threshold_fraction * model.diameter
    metric = add_s if symmetric else add
    hits = sum(metric(p, g, model) < limit for p, g in pose_pairs)
    return 100.0 * hits / len(pose_pairs)


@dataclass
class NormalMetrics:
    mean_deg: float
    median_deg: float
    pct_11_25: float
    pct_22_5: float
    pct_30: float

    def to_dict(self):
        return {"mean_deg": self.mean_deg, "median_deg": self.median_deg,
                "pct_11_25": self.pct_11_25, "pct_22_5": self.pct_22_5,
                "pct_30": self.pct_30}


def angular_errors(pred, gt):
    """Per-pixel angle in degrees between two normal images."""
    dot = np.clip((np.asarray(pred) * np.asarray(gt)).sum(axis=-1), -1.0, 1.0)
    return np.degrees(np.arccos(dot))


def ambiguous_angular_errors(pred, gt):
    """Angle to ``gt`` after choosing the better of the two azimuths a
    polarization prior cannot tell apart (``alpha`` and ``alpha + pi``)."""
    pred = np.asarray(pred, dtype=np.float64)
    flipped = pred * np.array([-1.0, -1.0, 1.0])
    return np.minimum(angular_errors(pred, gt), angular_errors(flipped, gt))


def summarize_angles(err):
    err = np.asarray(err, dtype=np.float64)
    if err.size == 0:
        raise InvalidInputError("no pixels to evaluate")
    return NormalMetrics(
        mean_deg=float(err.mean()),
        median_deg=float(np.median(err)),
        pct_11_25=float(100.0 * np.mean(err < 11.25)),
        pct_22_5=float(100.0 * np.mean(err < 22.5)),
        pct_30=float(100.0 * np.mean(err < 30.0)),
    )


def normal_metrics(pred, gt, mask):
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    mask = np.asarray(mask, dtype=bool)
    if pred.shape != gt.shape or pred.shape[:-1] != mask.shape:
        raise InvalidInputError("normal images and mask must share dimensions")
    if not mask.any():
        raise InvalidInputError("mask is empty")
    return summarize_angles(angular_errors(pred[mask], gt[mask]))


# ---------------------------------------------------------------------------
# losses
# ---------------------------------------------------------------------------

def loss_vertices(model, n_max=LOSS_SUBSAMPLE, seed=0):
    """Vertices used by the rotation loss; large meshes are reduced to a
    deterministic farthest-point subsample."""
    pts = _model_vertices(model)
    if len(pts) <= n_max:
        return pts
    start = int(np.random.default_rng(seed).integers(len(pts)))
    return pts[kernels.farthest_point_indices(pts, n_max, start)]


def loss_rotation_sym(R_pred, R_gt, sym_group, model, n_max=LOSS_SUBSAMPLE, seed=0):
    """Mean L1 distance of rotated model points, minimized over the
    symmetry group applied to the ground truth."""
    rots = symmetry_rotations(sym_group)
    if not rots:
        raise InvalidInputError("symmetry group is empty")
    pts = loss_vertices(model, n_max, seed)
    pred = pts @ np.asarray(R_pred, dtype=np.float64).T
    R_gt = np.asarray(R_gt, dtype=np.float64)
    best = np.inf
    for S in rots:
        val = np.abs(pts @ (R_gt @ S).T - pred).sum(axis=1).mean()
        best = min(best, val)
    return float(best)


def _site_vec(site):
    if hasattr(site, "as_array"):
        return site.as_array()
    return np.asarray(site, dtype=np.float64).reshape(3)


def loss_center(site_pred, site_gt):
    d = _site_vec(site_pred) - _site_vec(site_gt)
    return float(abs(d[0]) + abs(d[1]))


def loss_z(site_pred, site_gt):
    return float(abs(_site_vec(site_pred)[2] - _site_vec(site_gt)[2]))


def _same_shape(a, b, what):
    if a.shape != b.shape:
        raise InvalidInputError(f"{what}: shape {a.shape} does not match {b.shape}")


def loss_mask(m_pred, m_gt):
    m_pred = np.asarray(m_pred, dtype=np.float64)
    m_gt = np.asarray(m_gt, dtype=np.float64)
    _same_shape(m_pred, m_gt, "mask loss")
    return float(np.abs(m_pred - m_gt).mean())


def loss_xyz(nocs_pred, nocs_gt, m_gt):
    """L1 over the three coordinate channels, averaged over mask pixels."""
    p = np.asarray(nocs_pred, dtype=np.float64)
    g = np.asarray(nocs_gt, dtype=np.float64)
    m = np.asarray(m_gt, dtype=np.float64)
    _same_shape(p, g, "xyz loss")
    if p.shape[:-1] != m.shape:
        raise InvalidInputError("xyz loss: mask does not match the coordinate maps")
    population = m.sum()
    if population == 0:
        return 0.0
    return float((m * np.abs(p - g).sum(axis=-1)).sum() / population)


def loss_normal(n_pred, n_gt, mask):
    """Mean of ``1 - <n_pred, n_gt>`` over the mask."""
    p = np.asarray(n_pred, dtype=np.float64)
    g = np.asarray(n_gt, dtype=np.float64)
    m = np.asarray(mask, dtype=bool)
    _same_shape(p, g, "normal loss")
    if p.shape[:-1] != m.shape:
        raise InvalidInputError("normal loss: mask does not match the normal maps")
    if not m.any():
        return 0.0
    return float((1.0 - (p[m] * g[m]).sum(axis=-1)).mean())
