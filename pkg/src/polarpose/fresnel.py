"""Fresnel DOLP models and the per-pixel surface-normal priors built on them.

Normals are expressed in the viewing frame used for polarization: x to the
image right, y to the image top, z toward the camera. Zenith is measured from
+z and azimuth counter-clockwise from +x.
"""
import functools
import os
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .errors import InvalidInputError

DEFAULT_ETA = 1.5
DEFAULT_LUT_SIZE = 2048
HALF_PI = np.pi / 2

# Per-object material indices.
REFRACTIVE_INDEX = {
    "teapot": 1.54,
    "can": 1.35,
    "fork": 2.75,
    "knife": 2.75,
    "bottle": 1.52,
    "cup": 1.50,
}

DIFFUSE = "diffuse"
SPECULAR = "specular"


def refractive_index(object_id=None):
    """Table value for a known object, 1.5 otherwise."""
    if object_id is None:
        return DEFAULT_ETA
    return REFRACTIVE_INDEX.get(str(object_id).lower(), DEFAULT_ETA)


def default_lut_size():
    raw = os.environ.get("POLARPOSE_LUT_SIZE")
    if not raw:
        return DEFAULT_LUT_SIZE
    try:
        n = int(raw)
    except ValueError:
        raise InvalidInputError(f"POLARPOSE_LUT_SIZE must be an integer, got {raw!r}")
    return n


def _check_eta(eta):
    eta = float(eta)
    if not 1.0 < eta <= 4.0:
        raise InvalidInputError(f"refractive index must lie in (1, 4], got {eta}")
    return eta


def _check_theta(theta):
    theta = np.asarray(theta, dtype=np.float64)
    if np.any(~np.isfinite(theta)) or np.any(theta < -1e-12) or np.any(theta > HALF_PI + 1e-12):
        raise InvalidInputError("zenith angle must lie in [0, pi/2]")
    return np.clip(theta, 0.0, HALF_PI)


def _scalar_or_array(x):
    return float(x) if np.ndim(x) == 0 else x


def dolp_diffuse(theta, eta):
    """Degree of polarization of diffusely reflected light at zenith ``theta``."""
    theta = _check_theta(theta)
    eta = _check_eta(eta)
    s = np.sin(theta)
    s2 = s * s
    num = (eta - 1.0 / eta) ** 2 * s2
    den = (2.0 + 2.0 * eta ** 2 - (eta + 1.0 / eta) ** 2 * s2
           + 4.0 * np.cos(theta) * np.sqrt(eta ** 2 - s2))
    return _scalar_or_array(num / den)


def dolp_specular(theta, eta):
    """Degree of polarization of specularly reflected light at zenith ``theta``."""
    theta = _check_theta(theta)
    eta = _check_eta(eta)
    s = np.sin(theta)
    s2 = s * s
    num = 2.0 * s2 * np.cos(theta) * np.sqrt(eta ** 2 - s2)
    den = eta ** 2 - s2 - eta ** 2 * s2 + 2.0 * s2 * s2
    return _scalar_or_array(num / den)


def brewster_angle(eta):
    return float(np.arctan(_check_eta(eta)))


@dataclass(frozen=True)
class ZenithLut:
    """Sampled ``rho(theta)`` on a uniform grid over [0, pi/2]."""

    eta: float
    model: str
    theta: np.ndarray
    rho: np.ndarray
    peak_index: int

    @property
    def size(self):
        return self.theta.shape[0]


@functools.lru_cache(maxsize=64)
def _cached_lut(eta, model, n_lut):
    theta = np.linspace(0.0, HALF_PI, n_lut)
    if model == DIFFUSE:
        rho = dolp_diffuse(theta, eta)
    else:
        rho = dolp_specular(theta, eta)
    theta.setflags(write=False)
    rho.setflags(write=False)
    return ZenithLut(eta=eta, model=model, theta=theta, rho=rho,
                     peak_index=int(np.argmax(rho)))


def build_zenith_lut(eta, model=DIFFUSE, n_lut=None):
    """Tabulate the DOLP model for inversion.

    For the specular model ``peak_index`` marks the sample closest to
    Brewster's angle, which splits the curve into two monotone branches.
    LUTs are cached and read-only.
    """
    if model not in (DIFFUSE, SPECULAR):
        raise InvalidInputError(f"unknown reflection model {model!r}")
    n_lut = default_lut_size() if n_lut is None else int(n_lut)
    if n_lut < 64:
        raise InvalidInputError(f"n_lut must be at least 64, got {n_lut}")
    return _cached_lut(_check_eta(eta), model, n_lut)


class ZenithCandidates(NamedTuple):
    """Zenith solutions for a DOLP value.

    ``thetas`` holds one array for the diffuse model and two (lower and
    upper branch) for the specular model.
    """

    thetas: tuple
    clamped: np.ndarray


def _invert_branch(rho, rho_branch, theta_branch):
    # rho_branch must be increasing.
    top = rho_branch[-1]
    clamped = rho > top
    theta = np.interp(rho, rho_branch, theta_branch)
    return theta, clamped


def invert_dolp(rho, lut):
    """Zenith angle(s) that produce ``rho`` under the LUT's model.

    Values above the attainable maximum are clamped to the arg-max angle and
    flagged in ``clamped`` instead of raising.
    """
    rho = np.clip(np.asarray(rho, dtype=np.float64), 0.0, 1.0)
    if lut.model == DIFFUSE:
        theta, clamped = _invert_branch(rho, lut.rho, lut.theta)
        return ZenithCandidates((_scalar_or_array(theta),), _scalar_or_array(clamped))
    p = lut.peak_index
    lo, c1 = _invert_branch(rho, lut.rho[:p + 1], lut.theta[:p + 1])
    hi, c2 = _invert_branch(rho, lut.rho[p:][::-1], lut.theta[p:][::-1])
    return ZenithCandidates((_scalar_or_array(lo), _scalar_or_array(hi)),
                            _scalar_or_array(c1 | c2))


def normal_from_angles(alpha, theta):
    """Unit normal with azimuth ``alpha`` and zenith ``theta``; shape (..., 3)."""
    alpha = np.asarray(alpha, dtype=np.float64)
    theta = np.asarray(theta, dtype=np.float64)
    st = np.sin(theta)
    return np.stack(np.broadcast_arrays(np.cos(alpha) * st, np.sin(alpha) * st,
                                        np.cos(theta)), axis=-1)


@dataclass
class NormalPriorTriplet:
    n_d: np.ndarray
    n_s1: np.ndarray
    n_s2: np.ndarray
    valid: np.ndarray
    clamped_d: np.ndarray = None
    clamped_s: np.ndarray = None

    def as_stack(self):
        return np.stack([self.n_d, self.n_s1, self.n_s2])


def compute_priors(decomp, eta=DEFAULT_ETA, n_lut=None):
    """Diffuse and specular normal candidates for every valid pixel.

    The diffuse azimuth equals the AOLP; the specular azimuth is the AOLP
    plus pi/2. Of the two azimuths allowed by the pi-ambiguity this keeps
    the one computed directly, so every output normal points toward the
    camera (n_z > 0).
    """
    lut_d = build_zenith_lut(eta, DIFFUSE, n_lut)
    lut_s = build_zenith_lut(eta, SPECULAR, n_lut)
    valid = np.asarray(decomp.valid, dtype=bool)
    rho = np.where(valid, decomp.dolp, 0.0)
    phi = np.where(valid, decomp.aolp, 0.0)

    (theta_d,), clamped_d = invert_dolp(rho, lut_d)
    (theta_s1, theta_s2), clamped_s = invert_dolp(rho, lut_s)
    alpha_d = phi
    alpha_s = phi + HALF_PI

    keep = valid[..., None]
    n_d = np.where(keep, normal_from_angles(alpha_d, theta_d), 0.0)
    n_s1 = np.where(keep, normal_from_angles(alpha_s, theta_s1), 0.0)
    n_s2 = np.where(keep, normal_from_angles(alpha_s, theta_s2), 0.0)
    return NormalPriorTriplet(n_d=n_d, n_s1=n_s1, n_s2=n_s2, valid=valid,
                              clamped_d=np.asarray(clamped_d) & valid,
                              clamped_s=np.asarray(clamped_s) & valid)
