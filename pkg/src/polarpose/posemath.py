"""Pose parametrizations, frame conversions and ROI/NOCS geometry.

Camera frame convention: x right, y down, z along the optical axis (pinhole
model, object in front of the camera has t_z > 0).
"""
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidInputError

ROT_TOL = 1e-6
DEFAULT_S_OUT = 256


def is_rotation(R, tol=ROT_TOL):
    R = np.asarray(R, dtype=np.float64)
    if R.shape != (3, 3) or not np.all(np.isfinite(R)):
        return False
    return (np.abs(R.T @ R - np.eye(3)).max() <= tol
            and abs(np.linalg.det(R) - 1.0) <= tol)


def nearest_rotation(M):
    """Closest rotation to ``M`` in Frobenius norm."""
    U, _, Vt = np.linalg.svd(np.asarray(M, dtype=np.float64))
    d = np.sign(np.linalg.det(U @ Vt))
    return U @ np.diag([1.0, 1.0, d]) @ Vt


def skew(w):
    return np.array([[0.0, -w[2], w[1]], [w[2], 0.0, -w[0]], [-w[1], w[0], 0.0]])


def exp_so3(w):
    """Rodrigues exponential map of a rotation vector."""
    w = np.asarray(w, dtype=np.float64)
    angle = np.linalg.norm(w)
    K = skew(w)
    if angle < 1e-8:
        return np.eye(3) + K + 0.5 * K @ K
    return (np.eye(3) + np.sin(angle) / angle * K
            + (1.0 - np.cos(angle)) / angle ** 2 * K @ K)


def log_so3(R):
    R = np.asarray(R, dtype=np.float64)
    cos = np.clip((np.trace(R) - 1.0) / 2.0, -1.0, 1.0)
    angle = np.arccos(cos)
    v = np.array([R[2, 1] - R[1, 2], R[0, 2] - R[2, 0], R[1, 0] - R[0, 1]])
    if angle < 1e-8:
        return 0.5 * v
    if np.pi - angle < 1e-6:
        # near pi: axis from the symmetric part
        B = (R + np.eye(3)) / 2.0
        axis = B[np.argmax(np.diag(B))]
        axis = axis / np.linalg.norm(axis)
        if np.dot(axis, v) < 0:
            axis = -axis
        return angle * axis
    return angle / (2.0 * np.sin(angle)) * v


def axis_angle(axis, angle):
    axis = np.asarray(axis, dtype=np.float64)
    n = np.linalg.norm(axis)
    if n == 0:
        raise InvalidInputError("rotation axis must be nonzero")
    return exp_so3(axis / n * angle)


def rotation_error(R_a, R_b):
    """Geodesic angle between two rotations, radians."""
    cos = (np.trace(np.asarray(R_a).T @ np.asarray(R_b)) - 1.0) / 2.0
    return float(np.arccos(np.clip(cos, -1.0, 1.0)))


def random_rotation(rng):
    q = rng.normal(size=4)
    q /= np.linalg.norm(q)
    w, x, y, z = q
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - z * w), 2 * (x * z + y * w)],
        [2 * (x * y + z * w), 1 - 2 * (x * x + z * z), 2 * (y * z - x * w)],
        [2 * (x * z - y * w), 2 * (y * z + x * w), 1 - 2 * (x * x + y * y)],
    ])


@dataclass
class Pose:
    """Rigid transform taking object coordinates into the camera frame."""

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        self.rotation = np.asarray(self.rotation, dtype=np.float64).reshape(3, 3)
        self.translation = np.asarray(self.translation, dtype=np.float64).reshape(3)
        if not is_rotation(self.rotation):
            raise InvalidInputError("pose rotation is not in SO(3)")
        if not np.all(np.isfinite(self.translation)):
            raise InvalidInputError("pose translation must be finite")

    @classmethod
    def identity(cls):
        return cls(np.eye(3), np.zeros(3))

    def apply(self, points):
        return np.asarray(points, dtype=np.float64) @ self.rotation.T + self.translation

    def matrix(self):
        T = np.eye(4)
        T[:3, :3] = self.rotation
        T[:3, 3] = self.translation
        return T

    def inverse(self):
        return Pose(self.rotation.T, -self.rotation.T @ self.translation)

    def compose(self, other):
        """``self ∘ other``: apply ``other`` first."""
        return Pose(self.rotation @ other.rotation,
                    self.rotation @ other.translation + self.translation)


@dataclass
class CameraIntrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise InvalidInputError("focal lengths must be positive")
        if self.width <= 0 or self.height <= 0:
            raise InvalidInputError("image size must be positive")
        if not (0 <= self.cx <= self.width and 0 <= self.cy <= self.height):
            raise InvalidInputError("principal point must lie inside the image")

    @property
    def K(self):
        return np.array([[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]])

    def project(self, points):
        """Pinhole projection of camera-frame points, shape (..., 2)."""
        p = np.asarray(points, dtype=np.float64)
        z = p[..., 2]
        return np.stack([self.fx * p[..., 0] / z + self.cx,
                         self.fy * p[..., 1] / z + self.cy], axis=-1)

    def backproject(self, pixels, depth):
        px = np.asarray(pixels, dtype=np.float64)
        depth = np.asarray(depth, dtype=np.float64)
        x = (px[..., 0] - self.cx) / self.fx * depth
        y = (px[..., 1] - self.cy) / self.fy * depth
        return np.stack([x, y, np.broadcast_to(depth, x.shape)], axis=-1)

    def scaled(self, k):
        return CameraIntrinsics(self.fx * k, self.fy * k, self.cx * k, self.cy * k,
                                max(1, int(round(self.width * k))),
                                max(1, int(round(self.height * k))))

    def to_dict(self):
        return {"fx": self.fx, "fy": self.fy, "cx": self.cx, "cy": self.cy,
                "width": self.width, "height": self.height}

    @classmethod
    def from_dict(cls, d):
        return cls(float(d["fx"]), float(d["fy"]), float(d["cx"]), float(d["cy"]),
                   int(d["width"]), int(d["height"]))


@dataclass
class Roi:
    bx: float
    by: float
    bw: float
    bh: float
    s_out: float = DEFAULT_S_OUT

    def __post_init__(self):
        if not (self.bw > 0 and self.bh > 0):
            raise InvalidInputError("bbox width and height must be positive")
        if not self.s_out > 0:
            raise InvalidInputError("s_out must be positive")

    @property
    def s_in(self):
        return max(self.bw, self.bh)

    @property
    def zoom(self):
        return self.s_out / self.s_in

    def to_dict(self):
        return {"bx": self.bx, "by": self.by, "bw": self.bw, "bh": self.bh, "s_out": self.s_out}

    @classmethod
    def from_dict(cls, d):
        return cls(float(d["bx"]), float(d["by"]), float(d["bw"]), float(d["bh"]),
                   float(d.get("s_out", DEFAULT_S_OUT)))


@dataclass
class SiteTranslation:
    dx: float
    dy: float
    dz: float

    def as_array(self):
        return np.array([self.dx, self.dy, self.dz])


# ---------------------------------------------------------------------------
# 6D rotation encoding
# ---------------------------------------------------------------------------

def rot6d_encode(R):
    """First two columns of ``R``, concatenated."""
    R = np.asarray(R, dtype=np.float64)
    if not is_rotation(R):
        raise InvalidInputError("rot6d_encode expects a rotation matrix")
    return np.concatenate([R[:, 0], R[:, 1]])


def rot6d_decode(v, eps=1e-12):
    """Gram-Schmidt a 6-vector back into a rotation matrix."""
    v = np.asarray(v, dtype=np.float64).reshape(6)
    a1, a2 = v[:3], v[3:]
    n1 = np.linalg.norm(a1)
    if not np.isfinite(n1) or n1 < eps:
        raise InvalidInputError("first 3-vector of the 6D encoding is zero")
    c1 = a1 / n1
    cross = np.cross(c1, a2)
    n3 = np.linalg.norm(cross)
    if not np.isfinite(n3) or n3 < eps * max(1.0, np.linalg.norm(a2)):
        raise InvalidInputError("6D encoding has parallel or zero columns")
    c3 = cross / n3
    c2 = np.cross(c3, c1)
    return np.stack([c1, c2, c3], axis=1)


# ---------------------------------------------------------------------------
# allocentric <-> egocentric
# ---------------------------------------------------------------------------

def viewing_rotation(t, eps=1e-12):
    """Minimal rotation taking the optical axis onto the ray through ``t``."""
    t = np.asarray(t, dtype=np.float64).reshape(3)
    norm = np.linalg.norm(t)
    if not np.isfinite(norm) or norm < eps:
        raise InvalidInputError("translation must be nonzero")
    d = t / norm
    c = d[2]
    if 1.0 + c < eps:
        raise InvalidInputError("translation is antiparallel to the optical axis")
    # rotation about axis z×d, written without normalizing the axis
    v = np.array([-d[1], d[0], 0.0])
    K = skew(v)
    return np.eye(3) + K + K @ K / (1.0 + c)


def ego_to_allo(pose):
    R_v = viewing_rotation(pose.translation)
    return R_v.T @ pose.rotation


def allo_to_ego(R_allo, t):
    return viewing_rotation(t) @ np.asarray(R_allo, dtype=np.float64)


# ---------------------------------------------------------------------------
# scale-invariant translation
# ---------------------------------------------------------------------------

def site_encode(t, roi, intrinsics):
    t = np.asarray(t, dtype=np.float64).reshape(3)
    if not t[2] > 0:
        raise InvalidInputError("object must be in front of the camera (t_z > 0)")
    ox, oy = intrinsics.project(t)
    return SiteTranslation(dx=(ox - roi.bx) / roi.bw,
                           dy=(oy - roi.by) / roi.bh,
                           dz=t[2] / roi.zoom)


def site_decode(site, roi, intrinsics):
    vals = np.array([site.dx, site.dy, site.dz], dtype=np.float64)
    if not np.all(np.isfinite(vals)):
        raise InvalidInputError("SITE values must be finite")
    tz = site.dz * roi.zoom
    if not tz > 0:
        raise InvalidInputError("decoded depth is not positive")
    ox = site.dx * roi.bw + roi.bx
    oy = site.dy * roi.bh + roi.by
    return intrinsics.backproject(np.array([ox, oy]), tz)


# ---------------------------------------------------------------------------
# ROI zoom
# ---------------------------------------------------------------------------

@dataclass
class RoiAffine:
    """Aspect-preserving map of the square ROI onto ``[0, s_out)^2``."""

    scale: float
    origin: np.ndarray

    @classmethod
    def from_roi(cls, roi):
        s_in = roi.s_in
        return cls(scale=roi.s_out / s_in,
                   origin=np.array([roi.bx - s_in / 2.0, roi.by - s_in / 2.0]))

    @property
    def matrix(self):
        s = self.scale
        return np.array([[s, 0.0, -s * self.origin[0]], [0.0, s, -s * self.origin[1]]])

    def forward(self, points):
        return (np.asarray(points, dtype=np.float64) - self.origin) * self.scale

    def inverse(self, points):
        return np.asarray(points, dtype=np.float64) / self.scale + self.origin


def roi_affine(roi):
    return RoiAffine.from_roi(roi)


# ---------------------------------------------------------------------------
# NOCS
# ---------------------------------------------------------------------------

@dataclass
class NocsMap:
    coords: np.ndarray
    mask: np.ndarray
    diameter: float
    center_offset: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        self.coords = np.asarray(self.coords, dtype=np.float64)
        self.mask = np.asarray(self.mask, dtype=bool)
        self.center_offset = np.asarray(self.center_offset, dtype=np.float64).reshape(3)
        if not self.diameter > 0:
            raise InvalidInputError("NOCS diameter must be positive")


def nocs_encode(points, diameter, center_offset, tol=1e-6):
    """Map model points (meters) into the unit cube."""
    if not diameter > 0:
        raise InvalidInputError("diameter must be positive")
    p = np.asarray(points, dtype=np.float64)
    c = (p - np.asarray(center_offset, dtype=np.float64)) / diameter + 0.5
    if not np.all(np.isfinite(c)) or np.any(c < -tol) or np.any(c > 1.0 + tol):
        raise InvalidInputError("point lies outside the normalized object cube")
    return np.clip(c, 0.0, 1.0)


def nocs_decode(coords, diameter, center_offset):
    c = np.asarray(coords, dtype=np.float64)
    return (c - 0.5) * diameter + np.asarray(center_offset, dtype=np.float64)


# ---------------------------------------------------------------------------
# symmetry
# ---------------------------------------------------------------------------

@dataclass
class SymmetryGroup:
    """``kind`` is one of ``none``, ``discrete`` or ``revolution``."""

    kind: str = "none"
    rotations: tuple = ()
    axis: tuple = (0.0, 0.0, 1.0)
    n_samples: int = 360

    def __post_init__(self):
        if self.kind not in ("none", "discrete", "revolution"):
            raise InvalidInputError(f"unknown symmetry kind {self.kind!r}")
        if self.kind == "discrete":
            rots = tuple(np.asarray(r, dtype=np.float64).reshape(3, 3) for r in self.rotations)
            for r in rots:
                if not is_rotation(r):
                    raise InvalidInputError("symmetry group member is not a rotation")
            self.rotations = rots
        if self.kind == "revolution" and np.linalg.norm(self.axis) == 0:
            raise InvalidInputError("revolution axis must be nonzero")

    @classmethod
    def revolution(cls, axis=(0.0, 0.0, 1.0), n_samples=360):
        return cls(kind="revolution", axis=tuple(axis), n_samples=n_samples)

    @classmethod
    def discrete(cls, rotations):
        return cls(kind="discrete", rotations=tuple(rotations))

    def to_dict(self):
        if self.kind == "none":
            return {"kind": "none"}
        if self.kind == "discrete":
            return {"kind": "discrete",
                    "rotations": [r.reshape(-1).tolist() for r in self.rotations]}
        return {"kind": "revolution", "axis": list(map(float, self.axis)),
                "n_samples": int(self.n_samples)}

    @classmethod
    def from_dict(cls, d):
        kind = d.get("kind", "none")
        if kind == "discrete":
            return cls.discrete([np.reshape(r, (3, 3)) for r in d["rotations"]])
        if kind == "revolution":
            return cls.revolution(d.get("axis", (0, 0, 1)), int(d.get("n_samples", 360)))
        return cls(kind=kind)


def symmetry_rotations(group):
    """Explicit list of rotations in the group, identity first."""
    if group.kind == "none":
        return [np.eye(3)]
    if group.kind == "discrete":
        rots = [np.eye(3)]
        for r in group.rotations:
            if np.abs(r - np.eye(3)).max() > 1e-12:
                rots.append(r)
        return rots
    if group.n_samples < 1:
        raise InvalidInputError("revolution symmetry needs n_samples >= 1")
    return [axis_angle(group.axis, 2.0 * np.pi * k / group.n_samples)
            for k in range(group.n_samples)]
