import numpy as np
import pytest

from polarpose import _accel, mesh
from polarpose.posemath import CameraIntrinsics, Pose, random_rotation


@pytest.fixture
def intrinsics():
    return CameraIntrinsics(fx=600.0, fy=600.0, cx=320.0, cy=240.0, width=640, height=480)


@pytest.fixture
def small_intrinsics():
    return CameraIntrinsics(fx=300.0, fy=300.0, cx=80.0, cy=60.0, width=160, height=120)


@pytest.fixture(scope="session")
def sphere():
    return mesh.icosphere(radius=0.1, subdivisions=4)


@pytest.fixture(scope="session")
def cube():
    return mesh.box((0.1, 0.1, 0.1))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def random_pose(rng, depth=(0.5, 0.9), lateral=0.05):
    t = np.array([rng.uniform(-lateral, lateral), rng.uniform(-lateral, lateral),
                  rng.uniform(*depth)])
    return Pose(random_rotation(rng), t)


BACKENDS = ["numpy"] + (["numba"] if _accel.HAVE_NUMBA else [])


@pytest.fixture(params=BACKENDS)
def each_backend(request):
    with _accel.use_backend(request.param):
        yield request.param


_ACCEPTANCE_LINES = []


@pytest.fixture
def verdict():
    """Record a one-line PASS/FAIL verdict, then assert it."""
    def record(label, ok, detail):
        line = f"{'PASS' if ok else 'FAIL'}  {label}: {detail}"
        _ACCEPTANCE_LINES.append(line)
        print(line)
        assert ok, line
    return record


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_ACCEPTANCE_LINES, key=lambda s: int(s.split()[1][1:].rstrip(":"))):
            terminalreporter.write_line(line)
