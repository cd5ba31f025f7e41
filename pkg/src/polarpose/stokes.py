"""Linear polarization decomposition of polarizer-filtered intensity images.

Behind a linear polarizer at angle ``a`` the sensor records::

    I(a) = I_un * (1 + rho * cos(2 * (phi - a)))

which is linear in ``x = (I_un, I_un*rho*cos 2phi, I_un*rho*sin 2phi)``.
Decoding solves for ``x`` per pixel by least squares and reports ``rho`` as
a ratio to ``I_un`` so that it stays in [0, 1].
"""
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidInputError

CANONICAL_ANGLES = (0.0, np.pi / 4, np.pi / 2, 3 * np.pi / 4)
EPS_RHO = 1e-3
EPS_INTENSITY = 1e-6


@dataclass
class PolarQuadruplet:
    """Co-registered intensity planes, one per polarizer angle.

    ``planes`` has shape ``(n_angles, height, width)`` and holds linear
    intensities normalized to [0, 1].
    """

    planes: np.ndarray
    angles: tuple = CANONICAL_ANGLES
    saturation_level: float = 1.0

    def __post_init__(self):
        self.planes = np.asarray(self.planes, dtype=np.float64)
        self.angles = tuple(float(a) for a in self.angles)
        if self.planes.ndim != 3:
            raise InvalidInputError(
                f"planes must have shape (n_angles, H, W), got {self.planes.shape}")
        if self.planes.shape[0] != len(self.angles):
            raise InvalidInputError(
                f"{self.planes.shape[0]} planes for {len(self.angles)} angles")
        _check_angles(self.angles)
        if not 0.0 < self.saturation_level <= 1.0:
            raise InvalidInputError("saturation_level must lie in (0, 1]")

    @property
    def height(self):
        return self.planes.shape[1]

    @property
    def width(self):
        return self.planes.shape[2]


@dataclass
class PolarDecomposition:
    i_un: np.ndarray
    dolp: np.ndarray
    aolp: np.ndarray
    valid: np.ndarray = field(default=None)

    def __post_init__(self):
        if self.valid is None:
            self.valid = np.ones(np.shape(self.i_un), dtype=bool)


def _check_angles(angles):
    if len(angles) < 3:
        raise InvalidInputError(f"need at least 3 polarizer angles, got {len(angles)}")
    wrapped = np.mod(np.asarray(angles, dtype=np.float64), np.pi)
    diffs = np.abs(wrapped[:, None] - wrapped[None, :])
    diffs = np.minimum(diffs, np.pi - diffs)
    np.fill_diagonal(diffs, np.inf)
    if diffs.min() < 1e-9:
        raise InvalidInputError("polarizer angles must be pairwise distinct modulo pi")


def design_matrix(angles):
    """Rows ``(1, cos 2a, sin 2a)`` for each polarizer angle ``a``."""
    a = np.asarray(angles, dtype=np.float64)
    return np.stack([np.ones_like(a), np.cos(2 * a), np.sin(2 * a)], axis=1)


def _solver_matrix(angles):
    _check_angles(angles)
    beta_t = design_matrix(angles)
    if np.linalg.matrix_rank(beta_t) < 3:
        raise InvalidInputError("polarizer angles give a rank-deficient system")
    return np.linalg.pinv(beta_t)


def _decode(stack, pinv, eps_rho, eps_intensity):
    # stack: (n_angles, ...). Elementwise accumulation keeps results
    # independent of how callers tile the image.
    x1 = pinv[0, 0] * stack[0]
    x2 = pinv[1, 0] * stack[0]
    x3 = pinv[2, 0] * stack[0]
    for k in range(1, stack.shape[0]):
        x1 = x1 + pinv[0, k] * stack[k]
        x2 = x2 + pinv[1, k] * stack[k]
        x3 = x3 + pinv[2, k] * stack[k]
    i_un = np.maximum(x1, 0.0)
    amp = np.hypot(x2, x3)
    with np.errstate(divide="ignore", invalid="ignore"):
        rho = np.where(i_un > 0.0, amp / i_un, 0.0)
    rho = np.clip(rho, 0.0, 1.0)
    phi = np.mod(0.5 * np.arctan2(x3, x2), np.pi)
    phi = np.where(phi >= np.pi, 0.0, phi)
    valid = (i_un >= eps_intensity) & (rho >= eps_rho)
    phi = np.where(valid, phi, 0.0)
    return i_un, rho, phi, valid


def decode_pixel(intensities, angles=CANONICAL_ANGLES, eps_rho=EPS_RHO,
                 eps_intensity=EPS_INTENSITY):
    """Least-squares decomposition of one pixel's polarizer readings.

    Returns
    -------
    tuple
        ``(i_un, rho, phi, valid)``; ``phi`` is in [0, pi) and is reported
        as 0 when the pixel is not valid.
    """
    intensities = np.asarray(intensities, dtype=np.float64)
    if intensities.ndim != 1 or intensities.shape[0] != len(angles):
        raise InvalidInputError("need exactly one intensity per angle")
    if np.any(intensities < 0):
        raise InvalidInputError("intensities must be non-negative")
    pinv = _solver_matrix(tuple(angles))
    i_un, rho, phi, valid = _decode(intensities, pinv, eps_rho, eps_intensity)
    return float(i_un), float(rho), float(phi), bool(valid)


def decode_arrays(stack, angles=CANONICAL_ANGLES, eps_rho=EPS_RHO,
                  eps_intensity=EPS_INTENSITY):
    """Vectorized :func:`decode_pixel` over the trailing axes of ``stack``."""
    stack = np.asarray(stack, dtype=np.float64)
    if stack.shape[0] != len(angles):
        raise InvalidInputError("first axis of stack must match the angles")
    return _decode(stack, _solver_matrix(tuple(angles)), eps_rho, eps_intensity)


def decode_image(quad, tile_rows=None, workers=None):
    """Per-pixel decomposition of a quadruplet.

    Pixels where any plane reaches ``saturation_level`` are marked invalid.
    ``tile_rows``/``workers`` split the work over row tiles; the output does
    not depend on the split.
    """
    pinv = _solver_matrix(quad.angles)
    h = quad.height
    i_un = np.empty((h, quad.width))
    rho = np.empty_like(i_un)
    phi = np.empty_like(i_un)
    valid = np.empty(i_un.shape, dtype=bool)

    def work(r0, r1):
        sub = quad.planes[:, r0:r1]
        a, b, c, v = _decode(sub, pinv, EPS_RHO, EPS_INTENSITY)
        saturated = np.any(sub >= quad.saturation_level, axis=0)
        i_un[r0:r1], rho[r0:r1], phi[r0:r1] = a, b, c
        valid[r0:r1] = v & ~saturated

    step = h if not tile_rows else max(1, int(tile_rows))
    spans = [(r, min(r + step, h)) for r in range(0, h, step)]
    if workers and workers > 1 and len(spans) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            list(pool.map(lambda s: work(*s), spans))
    else:
        for span in spans:
            work(*span)
    phi = np.where(valid, phi, 0.0)
    return PolarDecomposition(i_un=i_un, dolp=rho, aolp=phi, valid=valid)


def forward_pixel(i_un, rho, phi, angle_pol):
    """Intensity seen behind a polarizer at ``angle_pol``; broadcasts."""
    out = np.asarray(i_un) * (1.0 + np.asarray(rho) * np.cos(2.0 * (np.asarray(phi) - angle_pol)))
    return float(out) if np.ndim(out) == 0 else out


def forward_image(i_un, rho, phi, angles=CANONICAL_ANGLES, saturation_level=1.0):
    """Synthesize a :class:`PolarQuadruplet` from per-pixel parameters."""
    planes = np.stack([forward_pixel(i_un, rho, phi, a) for a in angles])
    return PolarQuadruplet(planes=planes, angles=tuple(angles),
                           saturation_level=saturation_level)
