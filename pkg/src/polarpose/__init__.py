"""Polarization physics, pose encodings and a RANSAC-PnP solver for
recovering object pose from polarization-camera frames."""
from . import dataio, fresnel, metrics, posemath, solver, stokes, synth
from ._accel import backend, set_backend, use_backend
from .errors import (AnnotationError, DataError, InvalidInputError, MeshParseError,
                     NoPoseFoundError, PolarPoseError)

__version__ = "0.1.0"
