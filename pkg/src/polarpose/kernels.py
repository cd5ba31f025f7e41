"""Hot inner loops with a numba implementation and a numpy fallback.

Each public function dispatches on :func:`polarpose._accel.backend`. Both
paths evaluate the same floating-point expressions in the same order, so
they agree bit for bit on ordinary inputs.
"""
import numpy as np

from ._accel import backend, njit

# Triangles with a vertex closer than this (meters) are not rasterized.
NEAR_PLANE = 1e-6
_NN_CHUNK_BYTES = 32 * 1024 * 1024


# --------------------------------------------------------------------------
# z-buffer rasterization
# --------------------------------------------------------------------------

@njit
def _raster_numba(verts, faces, fx, fy, cx, cy, height, width):
    depth = np.full((height, width), np.inf)
    face_id = np.full((height, width), -1, dtype=np.int64)
    bary = np.zeros((height, width, 3))
    for f in range(faces.shape[0]):
        i0 = faces[f, 0]
        i1 = faces[f, 1]
        i2 = faces[f, 2]
        z0 = verts[i0, 2]
        z1 = verts[i1, 2]
        z2 = verts[i2, 2]
        if z0 <= NEAR_PLANE or z1 <= NEAR_PLANE or z2 <= NEAR_PLANE:
            continue
        u0 = fx * verts[i0, 0] / z0 + cx
        v0 = fy * verts[i0, 1] / z0 + cy
        u1 = fx * verts[i1, 0] / z1 + cx
        v1 = fy * verts[i1, 1] / z1 + cy
        u2 = fx * verts[i2, 0] / z2 + cx
        v2 = fy * verts[i2, 1] / z2 + cy
        area = (u1 - u0) * (v2 - v0) - (v1 - v0) * (u2 - u0)
        if abs(area) < 1e-12:
            continue
        jmin = max(int(np.ceil(min(u0, u1, u2))), 0)
        jmax = min(int(np.floor(max(u0, u1, u2))), width - 1)
        imin = max(int(np.ceil(min(v0, v1, v2))), 0)
        imax = min(int(np.floor(max(v0, v1, v2))), height - 1)
        for i in range(imin, imax + 1):
            py = float(i)
            for j in range(jmin, jmax + 1):
                px = float(j)
                b0 = ((u2 - u1) * (py - v1) - (v2 - v1) * (px - u1)) / area
                b1 = ((u0 - u2) * (py - v2) - (v0 - v2) * (px - u2)) / area
                b2 = ((u1 - u0) * (py - v0) - (v1 - v0) * (px - u0)) / area
                if b0 < 0.0 or b1 < 0.0 or b2 < 0.0:
                    continue
                q0 = b0 / z0
                q1 = b1 / z1
                q2 = b2 / z2
                z = 1.0 / (q0 + q1 + q2)
                if z < depth[i, j]:
                    depth[i, j] = z
                    face_id[i, j] = f
                    bary[i, j, 0] = q0 * z
                    bary[i, j, 1] = q1 * z
                    bary[i, j, 2] = q2 * z
    return depth, face_id, bary


def _raster_numpy(verts, faces, fx, fy, cx, cy, height, width):
    depth = np.full((height, width), np.inf)
    face_id = np.full((height, width), -1, dtype=np.int64)
    bary = np.zeros((height, width, 3))
    z = verts[:, 2]
    with np.errstate(divide="ignore", invalid="ignore"):
        u = fx * verts[:, 0] / z + cx
        v = fy * verts[:, 1] / z + cy
    for f, (i0, i1, i2) in enumerate(faces):
        z0, z1, z2 = z[i0], z[i1], z[i2]
        if z0 <= NEAR_PLANE or z1 <= NEAR_PLANE or z2 <= NEAR_PLANE:
            continue
        u0, u1, u2 = u[i0], u[i1], u[i2]
        v0, v1, v2 = v[i0], v[i1], v[i2]
        area = (u1 - u0) * (v2 - v0) - (v1 - v0) * (u2 - u0)
        if abs(area) < 1e-12:
            continue
        jmin = max(int(np.ceil(min(u0, u1, u2))), 0)
        jmax = min(int(np.floor(max(u0, u1, u2))), width - 1)
        imin = max(int(np.ceil(min(v0, v1, v2))), 0)
        imax = min(int(np.floor(max(v0, v1, v2))), height - 1)
        if jmin > jmax or imin > imax:
            continue
        py, px = np.mgrid[imin:imax + 1, jmin:jmax + 1].astype(np.float64)
        b0 = ((u2 - u1) * (py - v1) - (v2 - v1) * (px - u1)) / area
        b1 = ((u0 - u2) * (py - v2) - (v0 - v2) * (px - u2)) / area
        b2 = ((u1 - u0) * (py - v0) - (v1 - v0) * (px - u0)) / area
        inside = (b0 >= 0.0) & (b1 >= 0.0) & (b2 >= 0.0)
        if not inside.any():
            continue
        q0, q1, q2 = b0 / z0, b1 / z1, b2 / z2
        zz = 1.0 / (q0 + q1 + q2)
        window = depth[imin:imax + 1, jmin:jmax + 1]
        win = inside & (zz < window)
        window[win] = zz[win]
        face_id[imin:imax + 1, jmin:jmax + 1][win] = f
        bwin = bary[imin:imax + 1, jmin:jmax + 1]
        bwin[win, 0] = (q0 * zz)[win]
        bwin[win, 1] = (q1 * zz)[win]
        bwin[win, 2] = (q2 * zz)[win]
    return depth, face_id, bary


def rasterize_triangles(verts_cam, faces, fx, fy, cx, cy, height, width):
    """Perspective z-buffer over camera-frame triangles.

    Pixel ``(i, j)`` samples the ray through image point ``u=j, v=i``.

    Returns
    -------
    depth : (H, W) float array
        Camera z of the nearest hit, ``inf`` where nothing was hit.
    face_id : (H, W) int array
        Index of the winning triangle, -1 for background.
    bary : (H, W, 3) float array
        Perspective-correct barycentric weights of the hit point.
    """
    verts_cam = np.ascontiguousarray(verts_cam, dtype=np.float64)
    faces = np.ascontiguousarray(faces, dtype=np.int64)
    args = (verts_cam, faces, float(fx), float(fy), float(cx), float(cy),
            int(height), int(width))
    if backend() == "numba":
        return _raster_numba(*args)
    return _raster_numpy(*args)


# --------------------------------------------------------------------------
# nearest-neighbor distances (ADD-S)
# --------------------------------------------------------------------------

@njit
def _nn_numba(a, b):
    out = np.empty(a.shape[0])
    for i in range(a.shape[0]):
        best = np.inf
        for j in range(b.shape[0]):
            dx = a[i, 0] - b[j, 0]
            dy = a[i, 1] - b[j, 1]
            dz = a[i, 2] - b[j, 2]
            d = dx * dx + dy * dy + dz * dz
            if d < best:
                best = d
        out[i] = np.sqrt(best)
    return out


def _nn_numpy(a, b):
    out = np.empty(a.shape[0])
    chunk = max(1, _NN_CHUNK_BYTES // (24 * max(b.shape[0], 1)))
    for start in range(0, a.shape[0], chunk):
        diff = a[start:start + chunk, None, :] - b[None, :, :]
        sq = diff[..., 0] * diff[..., 0] + diff[..., 1] * diff[..., 1] + diff[..., 2] * diff[..., 2]
        out[start:start + chunk] = np.sqrt(sq.min(axis=1))
    return out


def nearest_distances(a, b):
    """Exact distance from every row of ``a`` to its nearest row of ``b``."""
    a = np.ascontiguousarray(a, dtype=np.float64)
    b = np.ascontiguousarray(b, dtype=np.float64)
    if backend() == "numba":
        return _nn_numba(a, b)
    return _nn_numpy(a, b)


# --------------------------------------------------------------------------
# farthest-point subsampling
# --------------------------------------------------------------------------

@njit
def _fps_numba(points, k, start):
    n = points.shape[0]
    chosen = np.empty(k, dtype=np.int64)
    dist = np.full(n, np.inf)
    current = start
    for c in range(k):
        chosen[c] = current
        best = -1.0
        best_idx = 0
        for i in range(n):
            dx = points[i, 0] - points[current, 0]
            dy = points[i, 1] - points[current, 1]
            dz = points[i, 2] - points[current, 2]
            d = dx * dx + dy * dy + dz * dz
            if d < dist[i]:
                dist[i] = d
            if dist[i] > best:
                best = dist[i]
                best_idx = i
        current = best_idx
    return chosen


def _fps_numpy(points, k, start):
    chosen = np.empty(k, dtype=np.int64)
    dist = np.full(points.shape[0], np.inf)
    current = start
    for c in range(k):
        chosen[c] = current
        diff = points - points[current]
        d = diff[:, 0] * diff[:, 0] + diff[:, 1] * diff[:, 1] + diff[:, 2] * diff[:, 2]
        np.minimum(dist, d, out=dist)
        current = int(np.argmax(dist))
    return chosen


def farthest_point_indices(points, k, start=0):
    """Greedy farthest-point subsample of ``k`` indices starting at ``start``."""
    points = np.ascontiguousarray(points, dtype=np.float64)
    k = int(min(k, points.shape[0]))
    if backend() == "numba":
        return _fps_numba(points, k, int(start))
    return _fps_numpy(points, k, int(start))
