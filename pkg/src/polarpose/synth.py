"""Synthetic renders that serve as ground truth for the rest of the package.

A mesh is rasterized under a pose into depth, normal, mask and NOCS maps;
the normals then drive the forward polarization model to produce a
quadruplet whose decomposition is known exactly.
"""
from dataclasses import dataclass, field

import numpy as np

from . import fresnel, kernels
from .errors import InvalidInputError
from .posemath import NocsMap, nocs_encode
from .stokes import (CANONICAL_ANGLES, EPS_INTENSITY, EPS_RHO, PolarDecomposition,
                     PolarQuadruplet, forward_image)

AMBIENT = 0.05

# Camera (x right, y down, z forward) -> viewing frame (x right, y up, z toward camera).
CV_TO_VIEW = np.diag([1.0, -1.0, -1.0])


@dataclass
class SynthConfig:
    eta: float = fresnel.DEFAULT_ETA
    reflection_mode: str = fresnel.DIFFUSE
    albedo: float = 0.4
    light_dir: tuple = (0.0, 0.0, 1.0)
    noise_sigma: float = 0.0
    bit_depth: object = "float"
    background: float = 0.1
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.albedo <= 1.0:
            raise InvalidInputError("albedo must lie in [0, 1]")
        if self.noise_sigma < 0:
            raise InvalidInputError("noise_sigma must be non-negative")
        if self.reflection_mode not in (fresnel.DIFFUSE, fresnel.SPECULAR):
            raise InvalidInputError(f"unknown reflection mode {self.reflection_mode!r}")
        if self.bit_depth not in (8, 16, "float"):
            raise InvalidInputError("bit_depth must be 8, 16 or 'float'")
        light = np.asarray(self.light_dir, dtype=np.float64)
        n = np.linalg.norm(light)
        if n == 0:
            raise InvalidInputError("light_dir must be nonzero")
        self.light_dir = tuple(light / n)

    def to_dict(self):
        return {"eta": self.eta, "reflection_mode": self.reflection_mode,
                "albedo": self.albedo, "light_dir": list(self.light_dir),
                "noise_sigma": self.noise_sigma, "bit_depth": self.bit_depth,
                "background": self.background, "seed": self.seed}

    @classmethod
    def from_dict(cls, d):
        bd = d.get("bit_depth", "float")
        return cls(eta=float(d.get("eta", fresnel.DEFAULT_ETA)),
                   reflection_mode=d.get("reflection_mode", fresnel.DIFFUSE),
                   albedo=float(d.get("albedo", 0.4)),
                   light_dir=tuple(d.get("light_dir", (0.0, 0.0, 1.0))),
                   noise_sigma=float(d.get("noise_sigma", 0.0)),
                   bit_depth=bd if bd == "float" else int(bd),
                   background=float(d.get("background", 0.1)),
                   seed=int(d.get("seed", 0)))


@dataclass
class RasterOutput:
    depth: np.ndarray
    normals: np.ndarray
    mask: np.ndarray
    nocs: NocsMap
    face_id: np.ndarray = field(repr=False, default=None)


@dataclass
class RenderOutput:
    depth: np.ndarray
    normals: np.ndarray
    mask: np.ndarray
    nocs: NocsMap
    quadruplet: PolarQuadruplet
    gt_decomposition: PolarDecomposition
    clean_quadruplet: PolarQuadruplet = field(repr=False, default=None)


def rasterize(mesh, pose, intrinsics, size=None):
    """Render ``mesh`` under ``pose``.

    Normals are face normals, expressed in the viewing frame and flipped to
    face the camera. NOCS stores the perspective-correct hit point on the
    model, normalized by the model's bounding box.
    """
    height, width = size if size is not None else (intrinsics.height, intrinsics.width)
    verts_cam = pose.apply(mesh.vertices)
    depth, face_id, bary = kernels.rasterize_triangles(
        verts_cam, mesh.faces, intrinsics.fx, intrinsics.fy, intrinsics.cx, intrinsics.cy,
        height, width)
    mask = face_id >= 0
    depth = np.where(mask, depth, 0.0)

    normals = np.zeros((height, width, 3))
    coords = np.zeros((height, width, 3))
    diameter = mesh.bbox_diagonal if len(mesh.vertices) else 1.0
    center = mesh.bbox_center if len(mesh.vertices) else np.zeros(3)
    if mask.any():
        fid = face_id[mask]
        n_cam = mesh.face_normals()[fid] @ pose.rotation.T
        ii, jj = np.nonzero(mask)
        rays = np.stack([(jj - intrinsics.cx) / intrinsics.fx,
                         (ii - intrinsics.cy) / intrinsics.fy,
                         np.ones(len(ii))], axis=1)
        flip = np.einsum("ij,ij->i", n_cam, rays) > 0
        n_cam[flip] *= -1
        normals[mask] = n_cam @ CV_TO_VIEW

        tri = mesh.vertices[mesh.faces[fid]]
        w = bary[mask]
        model_pts = (w[:, 0:1] * tri[:, 0] + w[:, 1:2] * tri[:, 1] + w[:, 2:3] * tri[:, 2])
        coords[mask] = nocs_encode(model_pts, diameter, center)
    nocs = NocsMap(coords=coords, mask=mask.copy(), diameter=diameter, center_offset=center)
    return RasterOutput(depth=depth, normals=normals, mask=mask, nocs=nocs, face_id=face_id)


def polarization_parameters(normals, mask, config):
    """Ground-truth ``(i_un, rho, phi)`` images for the given normal map."""
    n = np.asarray(normals, dtype=np.float64)
    nz = np.clip(n[..., 2], 0.0, 1.0)
    theta = np.arccos(nz)
    alpha = np.arctan2(n[..., 1], n[..., 0])
    if config.reflection_mode == fresnel.DIFFUSE:
        rho = fresnel.dolp_diffuse(theta, config.eta)
        phi = np.mod(alpha, np.pi)
    else:
        rho = fresnel.dolp_specular(theta, config.eta)
        phi = np.mod(alpha - np.pi / 2, np.pi)
    phi = np.where(phi >= np.pi, 0.0, phi)
    shade = np.maximum(0.0, n @ np.asarray(config.light_dir))
    i_un = config.albedo * shade + AMBIENT
    i_un = np.where(mask, i_un, config.background)
    rho = np.where(mask, rho, 0.0)
    phi = np.where(mask, phi, 0.0)
    return i_un, rho, phi


def polarize(normals, mask, config, intrinsics=None):
    """Forward polarization model over a normal map.

    Zenith comes from ``n_z`` (orthographic viewing direction), so
    ``intrinsics`` is accepted for interface symmetry only.

    Returns
    -------
    (PolarQuadruplet, PolarDecomposition)
    """
    mask = np.asarray(mask, dtype=bool)
    i_un, rho, phi = polarization_parameters(normals, mask, config)
    quad = forward_image(i_un, rho, phi, CANONICAL_ANGLES)
    valid = mask & (rho >= EPS_RHO) & (i_un >= EPS_INTENSITY)
    gt = PolarDecomposition(i_un=i_un, dolp=rho, aolp=np.where(valid, phi, 0.0), valid=valid)
    return quad, gt


def quantize(x, bit_depth):
    if bit_depth == "float":
        return x
    levels = float(2 ** int(bit_depth) - 1)
    return np.round(x * levels) / levels


def degrade(quad, noise_sigma=0.0, bit_depth="float", seed=0):
    """Seeded Gaussian noise, clamping to [0, 1] and quantization."""
    if noise_sigma < 0:
        raise InvalidInputError("noise_sigma must be non-negative")
    planes = quad.planes
    if noise_sigma > 0:
        rng = np.random.default_rng(seed)
        planes = planes + rng.normal(0.0, noise_sigma, size=planes.shape)
    if noise_sigma > 0 or bit_depth != "float":
        planes = np.clip(planes, 0.0, 1.0)
    planes = quantize(planes, bit_depth)
    return PolarQuadruplet(planes=planes, angles=quad.angles,
                           saturation_level=quad.saturation_level)


def render(mesh, pose, intrinsics, config=None):
    config = config or SynthConfig()
    raster = rasterize(mesh, pose, intrinsics)
    clean, gt = polarize(raster.normals, raster.mask, config, intrinsics)
    quad = degrade(clean, config.noise_sigma, config.bit_depth, config.seed)
    return RenderOutput(depth=raster.depth, normals=raster.normals, mask=raster.mask,
                        nocs=raster.nocs, quadruplet=quad, gt_decomposition=gt,
                        clean_quadruplet=clean)
