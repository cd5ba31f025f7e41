"""On-disk formats: polarization frames, image maps, meshes and annotations.

Frame layout::

    scene/<frame_id>/I000.png I045.png I090.png I135.png meta.json ann.json
                     [gt_normals.png gt_nocs.png mask.png depth.png]

Maps are PNG files (16-bit unless noted) with a JSON sidecar describing the
affine value mapping.
"""
import json
import math
import os
from dataclasses import dataclass, field
from pathlib import Path

import cv2
import numpy as np

from .errors import AnnotationError, DataError, InvalidInputError, MeshParseError
from .mesh import MeshModel
from .posemath import (CameraIntrinsics, NocsMap, Pose, Roi, SymmetryGroup,
                       nearest_rotation)
from .stokes import CANONICAL_ANGLES, PolarQuadruplet

LUMA = (0.2126, 0.7152, 0.0722)
U16 = 65535

# kind -> (low, high, channels, dtype); values map affinely onto [0, max]
MAP_KINDS = {
    "normals": (-1.0, 1.0, 3, np.uint16),
    "nocs": (0.0, 1.0, 3, np.uint16),
    "dolp": (0.0, 1.0, 1, np.uint16),
    "aolp": (0.0, math.pi, 1, np.uint16),
    "intensity": (0.0, 1.0, 1, np.uint16),
    "depth": (0.0, U16 / 1000.0, 1, np.uint16),
    "mask": (0.0, 1.0, 1, np.uint8),
}


def plane_filename(angle):
    return f"I{int(round(math.degrees(angle))):03d}.png"


# ---------------------------------------------------------------------------
# PNG helpers
# ---------------------------------------------------------------------------

def _write_png(path, arr):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    if arr.ndim == 3:
        arr = arr[..., ::-1]  # RGB -> BGR for OpenCV
    if not cv2.imwrite(str(path), np.ascontiguousarray(arr)):
        raise DataError("could not write image", path=path)


def _read_png(path):
    path = Path(path)
    if not path.is_file():
        raise DataError("file not found", path=path)
    img = cv2.imread(str(path), cv2.IMREAD_UNCHANGED)
    if img is None:
        raise DataError("could not decode image", path=path)
    if img.ndim == 3:
        if img.shape[2] == 4:
            img = img[..., :3]
        img = img[..., ::-1]
    return img


def _to_unit(img, path):
    if img.dtype == np.uint8:
        return img.astype(np.float64) / 255.0
    if img.dtype == np.uint16:
        return img.astype(np.float64) / U16
    raise DataError(f"unsupported pixel type {img.dtype}", path=path)


def _read_json(path, error=DataError):
    path = Path(path)
    if not path.is_file():
        raise error("file not found", path=path)
    try:
        text = path.read_text(encoding="utf-8")
    except (OSError, UnicodeDecodeError) as exc:
        raise error(f"unreadable: {exc}", path=path) from None
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise error(f"invalid JSON: {exc.msg}", path=path, line=exc.lineno) from None


def _write_json(path, obj):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8")


# ---------------------------------------------------------------------------
# quadruplets
# ---------------------------------------------------------------------------

def save_quadruplet(quad, path, bit_depth=16, extra_meta=None):
    """Write the planes as PNGs plus ``meta.json``."""
    if bit_depth not in (8, 16):
        raise DataError("bit_depth must be 8 or 16", path=path)
    path = Path(path)
    levels = 2 ** bit_depth - 1
    dtype = np.uint8 if bit_depth == 8 else np.uint16
    planes = quad.planes
    if np.any(planes < 0) or np.any(planes > 1.0):
        planes = np.clip(planes, 0.0, 1.0)
    for angle, plane in zip(quad.angles, planes):
        _write_png(path / plane_filename(angle), np.round(plane * levels).astype(dtype))
    meta = {} if extra_meta is None else dict(extra_meta)
    meta.update({
        "angles_deg": [math.degrees(a) for a in quad.angles],
        "saturation_level": quad.saturation_level,
        "bit_depth": bit_depth,
    })
    _write_json(path / "meta.json", meta)


def load_meta(path):
    meta = _read_json(Path(path) / "meta.json")
    if not isinstance(meta, dict):
        raise DataError("meta.json must hold an object", path=Path(path) / "meta.json")
    return meta


def load_quadruplet(path, per_channel=False):
    """Load a frame's planes, normalized to [0, 1].

    RGB planes are reduced to luminance unless ``per_channel`` is set, in
    which case a tuple of three quadruplets (R, G, B) is returned.
    """
    path = Path(path)
    default_files = [plane_filename(a) for a in CANONICAL_ANGLES]
    if not (path / "meta.json").is_file():
        missing = ["meta.json"] + [f for f in default_files if not (path / f).is_file()]
        raise DataError("missing files: " + ", ".join(missing), path=path)
    meta = load_meta(path)
    meta_path = path / "meta.json"
    try:
        angles = tuple(math.radians(float(a)) for a in meta.get("angles_deg", [0, 45, 90, 135]))
        saturation = float(meta.get("saturation_level", 1.0))
    except (TypeError, ValueError) as exc:
        raise DataError(f"malformed meta: {exc}", path=meta_path) from None
    files = [plane_filename(a) for a in angles]
    missing = [f for f in files if not (path / f).is_file()]
    if missing:
        raise DataError("missing files: " + ", ".join(missing), path=path)
    images = [_read_png(path / f) for f in files]
    shapes = {img.shape for img in images}
    if len(shapes) != 1:
        raise DataError(f"plane dimensions differ: {sorted(shapes)}", path=path)
    planes = np.stack([_to_unit(img, path / f) for img, f in zip(images, files)])
    try:
        if planes.ndim == 4:
            if per_channel:
                return tuple(PolarQuadruplet(planes[..., c], angles, saturation) for c in range(3))
            planes = planes @ np.asarray(LUMA)
        elif per_channel:
            raise DataError("per-channel mode needs RGB planes", path=path)
        return PolarQuadruplet(planes, angles, saturation)
    except InvalidInputError as exc:
        raise DataError(f"malformed meta: {exc}", path=meta_path) from None


# ---------------------------------------------------------------------------
# maps
# ---------------------------------------------------------------------------

def save_map(path, image, kind, extra=None):
    """Quantize ``image`` into a PNG according to ``kind`` and write a sidecar."""
    if kind not in MAP_KINDS:
        raise DataError(f"unknown map kind {kind!r}", path=path)
    lo, hi, channels, dtype = MAP_KINDS[kind]
    arr = np.asarray(image)
    if kind == "mask":
        data = np.where(arr.astype(bool), 255, 0).astype(np.uint8)
    else:
        arr = arr.astype(np.float64)
        if channels == 3 and (arr.ndim != 3 or arr.shape[2] != 3):
            raise DataError(f"{kind} map needs 3 channels", path=path)
        if channels == 1 and arr.ndim != 2:
            raise DataError(f"{kind} map needs a single channel", path=path)
        tol = 1e-9 * max(1.0, abs(hi))
        if not np.all(np.isfinite(arr)) or arr.min(initial=lo) < lo - tol or arr.max(initial=hi) > hi + tol:
            raise DataError(f"{kind} values outside [{lo}, {hi}]", path=path)
        if kind == "depth":
            data = np.round(arr * 1000.0)
        else:
            data = np.round((np.clip(arr, lo, hi) - lo) / (hi - lo) * U16)
        data = np.clip(data, 0, U16).astype(np.uint16)
    _write_png(path, data)
    sidecar = {"kind": kind, "low": lo, "high": hi,
               "max_code": 255 if dtype == np.uint8 else U16}
    if kind == "depth":
        sidecar.update({"units": "millimeters", "low": 0.0, "high": U16 / 1000.0})
    if extra:
        sidecar.update(extra)
    _write_json(Path(path).with_suffix(".json"), sidecar)


def load_map(path, kind):
    if kind not in MAP_KINDS:
        raise DataError(f"unknown map kind {kind!r}", path=path)
    lo, hi, channels, _ = MAP_KINDS[kind]
    img = _read_png(path)
    if (img.ndim == 3) != (channels == 3):
        raise DataError(f"{kind} map has {img.shape} layout", path=path)
    if kind == "mask":
        return img > 127
    if kind == "depth":
        return img.astype(np.float64) / 1000.0
    out = img.astype(np.float64) / U16 * (hi - lo) + lo
    if kind == "normals":
        norm = np.linalg.norm(out, axis=-1, keepdims=True)
        out = np.where(norm > 0.5, out / np.where(norm > 0, norm, 1.0), 0.0)
    return out


def save_nocs(path, nocs):
    save_map(path, np.where(nocs.mask[..., None], nocs.coords, 0.0), "nocs",
             extra={"diameter": float(nocs.diameter),
                    "center_offset": [float(c) for c in nocs.center_offset]})


def load_nocs(path, mask):
    path = Path(path)
    coords = load_map(path, "nocs")
    side = _read_json(path.with_suffix(".json"))
    try:
        diameter = float(side["diameter"])
        center = np.asarray(side["center_offset"], dtype=np.float64).reshape(3)
        return NocsMap(coords=coords, mask=np.asarray(mask, dtype=bool),
                       diameter=diameter, center_offset=center)
    except (KeyError, TypeError, ValueError) as exc:
        raise DataError(f"malformed NOCS sidecar: {exc}", path=path.with_suffix(".json")) from None


# ---------------------------------------------------------------------------
# meshes
# ---------------------------------------------------------------------------

def _finite_floats(tokens, lineno):
    try:
        vals = [float(t) for t in tokens]
    except ValueError:
        raise MeshParseError(f"bad number in {' '.join(tokens)!r}", line=lineno) from None
    if not all(math.isfinite(v) for v in vals):
        raise MeshParseError("non-finite vertex coordinate", line=lineno)
    return vals


def _parse_int(token, lineno, what):
    try:
        return int(token)
    except ValueError:
        raise MeshParseError(f"bad {what} {token!r}", line=lineno) from None


def _fan(indices):
    return [(indices[0], indices[k], indices[k + 1]) for k in range(1, len(indices) - 1)]


def parse_ply(text):
    """Parse an ASCII PLY document into ``(vertices, faces)``."""
    lines = text.splitlines()
    if not lines or lines[0].strip() != "ply":
        raise MeshParseError("missing 'ply' magic", line=1)
    elements = []
    pos = 1
    fmt_seen = False
    while True:
        if pos >= len(lines):
            raise MeshParseError("header not terminated by end_header", line=pos)
        tokens = lines[pos].split()
        pos += 1
        if not tokens or tokens[0] in ("comment", "obj_info"):
            continue
        key = tokens[0]
        if key == "end_header":
            break
        if key == "format":
            if len(tokens) < 2 or tokens[1] != "ascii":
                raise MeshParseError(f"unsupported format {' '.join(tokens[1:])!r}", line=pos)
            fmt_seen = True
        elif key == "element":
            if len(tokens) != 3:
                raise MeshParseError("malformed element line", line=pos)
            count = _parse_int(tokens[2], pos, "element count")
            if count < 0:
                raise MeshParseError("negative element count", line=pos)
            if tokens[1] not in ("vertex", "face"):
                raise MeshParseError(f"unsupported element {tokens[1]!r}", line=pos)
            elements.append([tokens[1], count, []])
        elif key == "property":
            if not elements:
                raise MeshParseError("property before any element", line=pos)
            if len(tokens) == 5 and tokens[1] == "list":
                elements[-1][2].append(("list", tokens[4]))
            elif len(tokens) == 3:
                elements[-1][2].append(("scalar", tokens[2]))
            else:
                raise MeshParseError("malformed property line", line=pos)
        else:
            raise MeshParseError(f"unknown header keyword {key!r}", line=pos)
    if not fmt_seen:
        raise MeshParseError("missing format line", line=pos)

    vertices = []
    faces = []
    body = [(i + 1, ln) for i, ln in enumerate(lines) if i >= pos]
    body = [(n, ln) for n, ln in body if ln.strip()]
    cursor = 0
    for name, count, props in elements:
        if count > len(body) - cursor:
            raise MeshParseError(f"file ends before {count} {name} records", line=len(lines))
        if name == "vertex":
            names = [p[1] for p in props]
            if any(kind == "list" for kind, _ in props) or not {"x", "y", "z"} <= set(names):
                raise MeshParseError("vertex element needs scalar x, y, z", line=pos)
            ix, iy, iz = names.index("x"), names.index("y"), names.index("z")
            for lineno, ln in body[cursor:cursor + count]:
                tokens = ln.split()
                if len(tokens) != len(props):
                    raise MeshParseError(f"expected {len(props)} values, got {len(tokens)}", line=lineno)
                vals = _finite_floats([tokens[ix], tokens[iy], tokens[iz]], lineno)
                _finite_floats(tokens, lineno)
                vertices.append(vals)
        else:
            if len(props) != 1 or props[0][0] != "list":
                raise MeshParseError("face element needs a single list property", line=pos)
            for lineno, ln in body[cursor:cursor + count]:
                tokens = ln.split()
                n = _parse_int(tokens[0], lineno, "face size") if tokens else -1
                if n < 3 or len(tokens) != n + 1:
                    raise MeshParseError("malformed face record", line=lineno)
                idx = [_parse_int(t, lineno, "vertex index") for t in tokens[1:]]
                faces.extend((tri, lineno) for tri in _fan(idx))
        cursor += count
    return _finish(vertices, faces)


def parse_obj(text):
    """Parse a Wavefront OBJ document into ``(vertices, faces)``."""
    vertices = []
    faces = []
    for lineno, ln in enumerate(text.splitlines(), start=1):
        tokens = ln.split()
        if not tokens or tokens[0].startswith("#"):
            continue
        if tokens[0] == "v":
            if len(tokens) not in (4, 5, 7):
                raise MeshParseError("vertex needs 3 coordinates", line=lineno)
            vertices.append(_finite_floats(tokens[1:4], lineno))
        elif tokens[0] == "f":
            if len(tokens) < 4:
                raise MeshParseError("face needs at least 3 vertices", line=lineno)
            idx = []
            for tok in tokens[1:]:
                i = _parse_int(tok.split("/")[0], lineno, "vertex index")
                if i == 0:
                    raise MeshParseError("OBJ indices are 1-based", line=lineno)
                idx.append(i - 1 if i > 0 else len(vertices) + i)
            faces.extend((tri, lineno) for tri in _fan(idx))
    return _finish(vertices, faces)


def _finish(vertices, faces):
    n = len(vertices)
    for tri, lineno in faces:
        if min(tri) < 0 or max(tri) >= n:
            raise MeshParseError(f"face index out of range (have {n} vertices)", line=lineno)
    v = np.asarray(vertices, dtype=np.float64).reshape(-1, 3)
    f = np.asarray([tri for tri, _ in faces], dtype=np.int64).reshape(-1, 3)
    return v, f


def load_mesh(path, scale=1.0):
    """Read an ASCII PLY or OBJ mesh; ``scale`` converts file units to meters."""
    path = Path(path)
    try:
        text = path.read_bytes().decode("utf-8")
    except OSError as exc:
        raise MeshParseError(f"cannot read: {exc.strerror}", path=path) from None
    except UnicodeDecodeError as exc:
        raise MeshParseError(f"not an ASCII mesh (byte {exc.start})", path=path) from None
    suffix = path.suffix.lower()
    try:
        if suffix == ".ply":
            v, f = parse_ply(text)
        elif suffix == ".obj":
            v, f = parse_obj(text)
        else:
            raise MeshParseError(f"unsupported mesh extension {suffix!r}")
    except MeshParseError as exc:
        raise MeshParseError(str(exc), path=path) from None
    return MeshModel(v * scale, f)


def save_ply(path, mesh):
    lines = ["ply", "format ascii 1.0", f"element vertex {len(mesh.vertices)}",
             "property double x", "property double y", "property double z",
             f"element face {len(mesh.faces)}", "property list uchar int vertex_indices",
             "end_header"]
    lines += [" ".join(repr(float(c)) for c in v) for v in mesh.vertices]
    lines += ["3 " + " ".join(str(int(i)) for i in f) for f in mesh.faces]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


# ---------------------------------------------------------------------------
# poses and annotations
# ---------------------------------------------------------------------------

def rotation_from_list(values, error=AnnotationError, path=None):
    try:
        R = np.asarray(values, dtype=np.float64).reshape(3, 3)
    except (TypeError, ValueError):
        raise error("rotation must be 9 numbers (row-major)", path=path) from None
    if not np.all(np.isfinite(R)):
        raise error("rotation has non-finite entries", path=path)
    if np.linalg.det(R) < 0:
        raise error("rotation has negative determinant", path=path)
    drift = np.abs(R.T @ R - np.eye(3)).max()
    if drift > 1e-3:
        raise error(f"rotation is not orthonormal (drift {drift:.2e})", path=path)
    if drift > 1e-12:
        R = nearest_rotation(R)
    return R


def pose_to_dict(pose):
    return {"rotation": [float(x) for x in pose.rotation.reshape(-1)],
            "translation": [float(x) for x in pose.translation]}


def pose_from_dict(d, error=AnnotationError, path=None):
    if not isinstance(d, dict):
        raise error("pose must be an object", path=path)
    if "rotation" not in d or "translation" not in d:
        raise error("pose needs 'rotation' and 'translation'", path=path)
    R = rotation_from_list(d["rotation"], error, path)
    try:
        t = np.asarray(d["translation"], dtype=np.float64).reshape(3)
    except (TypeError, ValueError):
        raise error("translation must be 3 numbers", path=path) from None
    if not np.all(np.isfinite(t)):
        raise error("translation has non-finite entries", path=path)
    return Pose(R, t)


@dataclass
class SceneAnnotation:
    object_id: str
    pose: Pose
    bbox: Roi = None
    eta: float = None
    symmetry: SymmetryGroup = field(default_factory=SymmetryGroup)
    mesh_path: str = None

    def to_dict(self):
        d = {"object_id": self.object_id, "pose": pose_to_dict(self.pose),
             "symmetry": self.symmetry.to_dict()}
        if self.bbox is not None:
            d["bbox"] = self.bbox.to_dict()
        if self.eta is not None:
            d["eta"] = float(self.eta)
        if self.mesh_path is not None:
            d["mesh_path"] = str(self.mesh_path)
        return d


def parse_annotation(obj, path=None, base_dir=None):
    """Validate a decoded annotation object."""
    if not isinstance(obj, dict):
        raise AnnotationError("annotation must be a JSON object", path=path)
    try:
        object_id = str(obj.get("object_id", ""))
        pose = pose_from_dict(obj.get("pose"), AnnotationError, path)
        bbox = Roi.from_dict(obj["bbox"]) if obj.get("bbox") is not None else None
        eta = obj.get("eta")
        if eta is not None:
            eta = float(eta)
            if not 1.0 < eta <= 4.0:
                raise AnnotationError(f"eta {eta} outside (1, 4]", path=path)
        sym = obj.get("symmetry") or {"kind": "none"}
        if not isinstance(sym, dict):
            raise AnnotationError("symmetry must be an object", path=path)
        symmetry = SymmetryGroup.from_dict(sym)
        if symmetry.kind == "revolution" and symmetry.n_samples < 1:
            raise AnnotationError("revolution symmetry needs n_samples >= 1", path=path)
        mesh_path = obj.get("mesh_path")
        if mesh_path is not None:
            mesh_path = str(mesh_path)
            if base_dir is not None and not (Path(base_dir) / mesh_path).is_file():
                raise AnnotationError(f"mesh file {mesh_path!r} does not exist", path=path)
    except AnnotationError:
        raise
    except (KeyError, TypeError, ValueError, AttributeError, OverflowError) as exc:
        raise AnnotationError(f"malformed annotation: {exc!r}", path=path) from None
    return SceneAnnotation(object_id, pose, bbox, eta, symmetry, mesh_path)


def parse_annotation_text(text, path=None, base_dir=None):
    try:
        obj = json.loads(text)
    except json.JSONDecodeError as exc:
        raise AnnotationError(f"invalid JSON: {exc.msg}", path=path, line=exc.lineno) from None
    except RecursionError:
        raise AnnotationError("JSON nested too deeply", path=path) from None
    return parse_annotation(obj, path=path, base_dir=base_dir)


def load_annotation(path, check_files=True):
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise AnnotationError(f"cannot read: {exc.strerror}", path=path) from None
    except UnicodeDecodeError:
        raise AnnotationError("not UTF-8 text", path=path) from None
    return parse_annotation_text(text, path=path,
                                 base_dir=path.parent if check_files else None)


def save_annotation(path, ann):
    _write_json(path, ann.to_dict())


def save_pose(path, pose, stats=None):
    d = pose_to_dict(pose)
    if stats is not None:
        d["stats"] = stats
    _write_json(path, d)


def load_pose(path):
    obj = _read_json(path, AnnotationError)
    return pose_from_dict(obj, AnnotationError, Path(path)), (obj.get("stats") or {})


def load_intrinsics(frame_dir):
    meta = load_meta(frame_dir)
    if "intrinsics" not in meta:
        raise DataError("meta.json has no intrinsics", path=Path(frame_dir) / "meta.json")
    try:
        return CameraIntrinsics.from_dict(meta["intrinsics"])
    except (KeyError, TypeError, ValueError) as exc:
        raise DataError(f"malformed intrinsics: {exc}", path=Path(frame_dir) / "meta.json") from None


# ---------------------------------------------------------------------------
# dataset layout
# ---------------------------------------------------------------------------

def is_frame_dir(path):
    path = Path(path)
    return (path / "meta.json").is_file() or (path / plane_filename(0.0)).is_file()


def frame_dirs(root):
    """``[root]`` for a single frame, otherwise its frame subdirectories."""
    root = Path(root)
    if is_frame_dir(root):
        return [root]
    if not root.is_dir():
        return []
    return sorted(p for p in root.iterdir() if p.is_dir() and is_frame_dir(p))


def save_frame(path, render, intrinsics, annotation=None, bit_depth=16, config=None):
    """Write a synthetic render in the frame layout."""
    path = Path(path)
    extra = {"intrinsics": intrinsics.to_dict()}
    if config is not None:
        extra["synth"] = config.to_dict()
    save_quadruplet(render.quadruplet, path, bit_depth=bit_depth, extra_meta=extra)
    save_map(path / "gt_normals.png", np.where(render.mask[..., None], render.normals, 0.0), "normals")
    save_nocs(path / "gt_nocs.png", render.nocs)
    save_map(path / "mask.png", render.mask, "mask")
    save_map(path / "depth.png", render.depth, "depth")
    if annotation is not None:
        save_annotation(path / "ann.json", annotation)


def _relpath(target, start):
    try:
        return os.path.relpath(target, start)
    except ValueError:
        return str(target)
