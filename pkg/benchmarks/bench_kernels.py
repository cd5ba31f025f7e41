"""Time the compiled kernels against their numpy fallbacks.

    python3 benchmarks/bench_kernels.py [--repeats 5]

Both backends run in the same process; the first numba call is excluded
because it includes compilation (or cache loading).
"""
import argparse
import statistics
import time

import numpy as np

from polarpose import _accel, kernels, mesh
from polarpose.posemath import CameraIntrinsics, Pose, axis_angle


def _cases():
    cam = CameraIntrinsics(600.0, 600.0, 320.0, 240.0, 640, 480)
    sphere = mesh.icosphere(0.1, 4)
    verts = Pose(axis_angle([1, 1, 0], 0.4), [0.0, 0.0, 0.6]).apply(sphere.vertices)
    rng = np.random.default_rng(0)
    a, b = rng.normal(size=(3000, 3)), rng.normal(size=(3000, 3))
    cloud = rng.normal(size=(20000, 3))
    return {
        f"rasterize 640x480, {len(sphere.faces)} faces": lambda: kernels.rasterize_triangles(
            verts, sphere.faces, cam.fx, cam.fy, cam.cx, cam.cy, cam.height, cam.width),
        "nearest distances 3000 x 3000": lambda: kernels.nearest_distances(a, b),
        "farthest points 20000 -> 1024": lambda: kernels.farthest_point_indices(cloud, 1024),
    }


def _median_ms(fn, repeats):
    fn()  # warm-up
    times = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        times.append((time.perf_counter() - t0) * 1e3)
    return statistics.median(times)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeats", type=int, default=5)
    args = ap.parse_args()
    backends = ["numpy"] + (["numba"] if _accel.HAVE_NUMBA else [])
    results = {}
    for name in backends:
        with _accel.use_backend(name):
            for label, fn in _cases().items():
                results[(label, name)] = _median_ms(fn, args.repeats)
    labels = list(_cases())
    width = max(map(len, labels))
    print(f"{'kernel':<{width}}  " + "  ".join(f"{b:>10}" for b in backends) + "   speedup")
    for label in labels:
        row = [results[(label, b)] for b in backends]
        speed = f"{row[0] / row[-1]:8.1f}x" if len(row) > 1 else ""
        print(f"{label:<{width}}  " + "  ".join(f"{t:8.1f}ms" for t in row) + f"  {speed}")
    if not _accel.HAVE_NUMBA:
        print("numba is not installed; only the numpy backend was timed")


if __name__ == "__main__":
    main()
