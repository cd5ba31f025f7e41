"""Triangle meshes and a few procedural shapes used as fixtures."""
from dataclasses import dataclass

import numpy as np
from scipy.spatial import ConvexHull, QhullError

from .errors import InvalidInputError


def max_pairwise_distance(points):
    """Largest distance between any two points (exact)."""
    pts = np.asarray(points, dtype=np.float64)
    if pts.shape[0] < 2:
        return 0.0
    if pts.shape[0] > 64:
        try:
            pts = pts[ConvexHull(pts).vertices]
        except (QhullError, ValueError):
            pass
    best = 0.0
    for i in range(pts.shape[0] - 1):
        d = np.sqrt(((pts[i + 1:] - pts[i]) ** 2).sum(axis=1)).max()
        best = max(best, d)
    return float(best)


@dataclass
class MeshModel:
    vertices: np.ndarray
    faces: np.ndarray
    diameter: float = None

    def __post_init__(self):
        self.vertices = np.asarray(self.vertices, dtype=np.float64).reshape(-1, 3)
        self.faces = np.asarray(self.faces, dtype=np.int64).reshape(-1, 3)
        if not np.all(np.isfinite(self.vertices)):
            raise InvalidInputError("mesh vertices must be finite")
        if self.faces.size and (self.faces.min() < 0 or self.faces.max() >= len(self.vertices)):
            raise InvalidInputError("face index out of range")
        if self.diameter is None:
            self.diameter = max_pairwise_distance(self.vertices)

    @property
    def bbox_min(self):
        return self.vertices.min(axis=0)

    @property
    def bbox_max(self):
        return self.vertices.max(axis=0)

    @property
    def bbox_center(self):
        return 0.5 * (self.bbox_min + self.bbox_max)

    @property
    def bbox_diagonal(self):
        return float(np.linalg.norm(self.bbox_max - self.bbox_min))

    def check_pose_metric_ready(self):
        if len(self.vertices) < 4:
            raise InvalidInputError("pose metrics need at least 4 vertices")
        if np.linalg.matrix_rank(self.vertices - self.vertices.mean(axis=0), tol=1e-12) < 3:
            raise InvalidInputError("pose metrics need non-coplanar vertices")
        if not self.diameter > 0:
            raise InvalidInputError("mesh diameter must be positive")

    def face_normals(self):
        v = self.vertices[self.faces]
        n = np.cross(v[:, 1] - v[:, 0], v[:, 2] - v[:, 0])
        norm = np.linalg.norm(n, axis=1, keepdims=True)
        return np.divide(n, norm, out=np.zeros_like(n), where=norm > 0)

    def scaled(self, k):
        return MeshModel(self.vertices * k, self.faces.copy())


def box(size=(1.0, 1.0, 1.0), center=(0.0, 0.0, 0.0)):
    """Axis-aligned box with outward-wound triangles."""
    sx, sy, sz = np.asarray(size, dtype=np.float64) / 2.0
    corners = np.array([[x, y, z] for x in (-sx, sx) for y in (-sy, sy) for z in (-sz, sz)])
    corners += np.asarray(center, dtype=np.float64)
    quads = [(0, 1, 3, 2), (4, 6, 7, 5), (0, 4, 5, 1), (2, 3, 7, 6), (0, 2, 6, 4), (1, 5, 7, 3)]
    faces = []
    for a, b, c, d in quads:
        faces += [(a, b, c), (a, c, d)]
    return MeshModel(corners, np.array(faces))


def icosphere(radius=1.0, subdivisions=3, center=(0.0, 0.0, 0.0)):
    t = (1.0 + 5 ** 0.5) / 2.0
    verts = [(-1, t, 0), (1, t, 0), (-1, -t, 0), (1, -t, 0), (0, -1, t), (0, 1, t),
             (0, -1, -t), (0, 1, -t), (t, 0, -1), (t, 0, 1), (-t, 0, -1), (-t, 0, 1)]
    verts = [np.array(v, dtype=np.float64) / np.linalg.norm(v) for v in verts]
    faces = [(0, 11, 5), (0, 5, 1), (0, 1, 7), (0, 7, 10), (0, 10, 11), (1, 5, 9), (5, 11, 4),
             (11, 10, 2), (10, 7, 6), (7, 1, 8), (3, 9, 4), (3, 4, 2), (3, 2, 6), (3, 6, 8),
             (3, 8, 9), (4, 9, 5), (2, 4, 11), (6, 2, 10), (8, 6, 7), (9, 8, 1)]
    for _ in range(subdivisions):
        cache = {}

        def midpoint(a, b):
            key = (min(a, b), max(a, b))
            if key not in cache:
                m = verts[a] + verts[b]
                verts.append(m / np.linalg.norm(m))
                cache[key] = len(verts) - 1
            return cache[key]

        new = []
        for a, b, c in faces:
            ab, bc, ca = midpoint(a, b), midpoint(b, c), midpoint(c, a)
            new += [(a, ab, ca), (b, bc, ab), (c, ca, bc), (ab, bc, ca)]
        faces = new
    v = np.array(verts) * radius + np.asarray(center, dtype=np.float64)
    return MeshModel(v, np.array(faces))


def cylinder(radius=0.5, height=1.0, segments=64):
    """Closed cylinder along z, revolution-symmetric about the z axis."""
    ang = 2 * np.pi * np.arange(segments) / segments
    ring = np.stack([radius * np.cos(ang), radius * np.sin(ang)], axis=1)
    bottom = np.column_stack([ring, np.full(segments, -height / 2)])
    top = np.column_stack([ring, np.full(segments, height / 2)])
    verts = np.vstack([bottom, top, [[0, 0, -height / 2], [0, 0, height / 2]]])
    cb, ct = 2 * segments, 2 * segments + 1
    faces = []
    for i in range(segments):
        j = (i + 1) % segments
        faces += [(i, j, segments + j), (i, segments + j, segments + i)]
        faces += [(cb, j, i), (ct, segments + i, segments + j)]
    return MeshModel(verts, np.array(faces))


def ring_points(radius=0.5, n=360, heights=(-0.25, 0.0, 0.25)):
    """Vertices spaced uniformly on circles about z; faces left empty."""
    ang = 2 * np.pi * np.arange(n) / n
    pts = [np.column_stack([radius * np.cos(ang), radius * np.sin(ang), np.full(n, h)])
           for h in heights]
    return MeshModel(np.vstack(pts), np.zeros((0, 3), dtype=np.int64))
