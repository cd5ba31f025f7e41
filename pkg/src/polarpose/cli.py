"""Command-line front end: ``polarpose decode|priors|synth|solve|eval``.

Exit codes: 0 success, 1 usage error, 2 data error, 3 no solution.
"""
import argparse
import json
import logging
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import dataio, fresnel, metrics, solver, synth
from .errors import DataError, InvalidInputError, NoPoseFoundError
from .posemath import CameraIntrinsics, Roi, SymmetryGroup, rotation_error
from .stokes import decode_image

logger = logging.getLogger("polarpose")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NO_SOLUTION = 0, 1, 2, 3
SCHEMA_VERSION = 1
DEFAULT_INTRINSICS = {"fx": 600.0, "fy": 600.0, "cx": 320.0, "cy": 240.0,
                      "width": 640, "height": 480}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _run_frames(func, jobs, items):
    """Map ``func`` over ``items`` in order, optionally in worker processes."""
    if jobs and jobs > 1 and len(items) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            return list(pool.map(func, items))
    return [func(item) for item in items]


def _frames_or_fail(path):
    frames = dataio.frame_dirs(path)
    if not frames:
        p = Path(path)
        if p.is_dir():
            expected = ["meta.json"] + [dataio.plane_filename(a) for a in (0, np.pi / 4, np.pi / 2, 3 * np.pi / 4)]
            raise DataError("no frame found; missing files: " + ", ".join(expected), path=p)
        raise DataError("input directory does not exist", path=p)
    return frames


def _out_dir(output, frame, n_frames):
    return Path(output) if n_frames == 1 else Path(output) / frame.name


# ---------------------------------------------------------------------------
# decode
# ---------------------------------------------------------------------------

def _write_decomposition(out, dec, suffix=""):
    dataio.save_map(out / f"i_un{suffix}.png", np.clip(dec.i_un, 0.0, 1.0), "intensity")
    dataio.save_map(out / f"dolp{suffix}.png", dec.dolp, "dolp")
    dataio.save_map(out / f"aolp{suffix}.png", dec.aolp, "aolp")
    dataio.save_map(out / f"valid{suffix}.png", dec.valid, "mask")


def _decode_frame(args):
    frame, out, per_channel = args
    try:
        if per_channel:
            quads = dataio.load_quadruplet(frame, per_channel=True)
            for name, quad in zip("rgb", quads):
                _write_decomposition(out, decode_image(quad), f"_{name}")
        else:
            _write_decomposition(out, decode_image(dataio.load_quadruplet(frame)))
        return frame.name, EXIT_OK, ""
    except (DataError, InvalidInputError) as exc:
        return frame.name, EXIT_DATA, str(exc)


def cmd_decode(ns):
    frames = _frames_or_fail(ns.input)
    items = [(f, _out_dir(ns.output, f, len(frames)), ns.per_channel) for f in frames]
    return _report_frames(_run_frames(_decode_frame, ns.jobs, items))


def _report_frames(results):
    code = EXIT_OK
    for name, status, message in results:
        if status != EXIT_OK:
            print(f"{name}: {message}", file=sys.stderr)
            code = max(code, status)
    return code


# ---------------------------------------------------------------------------
# priors
# ---------------------------------------------------------------------------

def resolve_eta(flag_eta, frame):
    """Refractive index by precedence: flag, annotation, object table, 1.5."""
    if flag_eta is not None:
        return float(flag_eta)
    ann_path = Path(frame) / "ann.json"
    if not ann_path.is_file():
        return None
    ann = dataio.load_annotation(ann_path, check_files=False)
    if ann.eta is not None:
        return ann.eta
    return fresnel.refractive_index(ann.object_id or None)


def _load_or_decode(frame):
    frame = Path(frame)
    names = ("i_un.png", "dolp.png", "aolp.png", "valid.png")
    if all((frame / n).is_file() for n in names):
        from .stokes import PolarDecomposition
        return PolarDecomposition(
            i_un=dataio.load_map(frame / "i_un.png", "intensity"),
            dolp=dataio.load_map(frame / "dolp.png", "dolp"),
            aolp=dataio.load_map(frame / "aolp.png", "aolp"),
            valid=dataio.load_map(frame / "valid.png", "mask"))
    return decode_image(dataio.load_quadruplet(frame))


def _priors_frame(args):
    frame, out, eta_flag = args
    try:
        eta = resolve_eta(eta_flag, frame)
        if eta is None:
            return frame.name, EXIT_USAGE, "no refractive index: pass --eta or provide ann.json"
        priors = fresnel.compute_priors(_load_or_decode(frame), eta)
        for name in ("n_d", "n_s1", "n_s2"):
            dataio.save_map(out / f"{name}.png", getattr(priors, name), "normals",
                            extra={"eta": eta})
        dataio.save_map(out / "prior_valid.png", priors.valid, "mask")
        return frame.name, EXIT_OK, ""
    except (DataError, InvalidInputError) as exc:
        return frame.name, EXIT_DATA, str(exc)


def cmd_priors(ns):
    frames = _frames_or_fail(ns.input)
    items = [(f, _out_dir(ns.output, f, len(frames)), ns.eta) for f in frames]
    return _report_frames(_run_frames(_priors_frame, ns.jobs, items))


# ---------------------------------------------------------------------------
# synth
# ---------------------------------------------------------------------------

def _load_json_arg(path, what):
    try:
        return json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, UnicodeDecodeError) as exc:
        raise DataError(f"cannot read {what}: {exc}", path=path) from None
    except json.JSONDecodeError as exc:
        raise DataError(f"invalid JSON in {what}: {exc.msg}", path=path, line=exc.lineno) from None


def _bbox_roi(mask):
    ii, jj = np.nonzero(mask)
    if len(ii) == 0:
        return None
    x0, x1, y0, y1 = jj.min(), jj.max() + 1, ii.min(), ii.max() + 1
    return Roi(bx=(x0 + x1 - 1) / 2.0, by=(y0 + y1 - 1) / 2.0, bw=float(x1 - x0), bh=float(y1 - y0))


def cmd_synth(ns):
    mesh = dataio.load_mesh(ns.mesh, scale=ns.mesh_scale)
    pose_obj = _load_json_arg(ns.pose, "pose")
    if isinstance(pose_obj, dict) and "pose" in pose_obj:
        pose_obj = pose_obj["pose"]
    pose = dataio.pose_from_dict(pose_obj, DataError, ns.pose)
    cfg_dict = _load_json_arg(ns.config, "config") if ns.config else {}
    for key, val in (("eta", ns.eta), ("reflection_mode", ns.mode), ("albedo", ns.albedo),
                     ("noise_sigma", ns.noise), ("seed", ns.seed), ("bit_depth", ns.bit_depth)):
        if val is not None:
            cfg_dict[key] = val
    try:
        config = synth.SynthConfig.from_dict(cfg_dict)
        intr_dict = _load_json_arg(ns.intrinsics, "intrinsics") if ns.intrinsics else DEFAULT_INTRINSICS
        intrinsics = CameraIntrinsics.from_dict(intr_dict)
    except (KeyError, TypeError, ValueError) as exc:
        raise DataError(f"bad synth configuration: {exc}") from None

    render = synth.render(mesh, pose, intrinsics, config)
    if not render.mask.any():
        in_front = (pose.apply(mesh.vertices)[:, 2] > 0).any()
        if in_front:
            raise DataError("pose places the mesh outside the image")
        logger.warning("mesh is behind the camera; writing an empty-mask frame")

    out = Path(ns.output)
    out.mkdir(parents=True, exist_ok=True)
    mesh_path = dataio._relpath(Path(ns.mesh).resolve(), out.resolve())
    symmetry = SymmetryGroup.from_dict(json.loads(ns.symmetry)) if ns.symmetry else SymmetryGroup()
    ann = dataio.SceneAnnotation(object_id=ns.object_id or Path(ns.mesh).stem, pose=pose,
                                 bbox=_bbox_roi(render.mask), eta=config.eta,
                                 symmetry=symmetry, mesh_path=mesh_path)
    bit_depth = 8 if config.bit_depth == 8 else 16
    dataio.save_frame(out, render, intrinsics, annotation=ann, bit_depth=bit_depth, config=config)
    print(f"wrote {out} ({int(render.mask.sum())} object pixels)")
    return EXIT_OK


# ---------------------------------------------------------------------------
# solve
# ---------------------------------------------------------------------------

def _solve_frame(args):
    frame, output, params, stride, nocs_name = args
    t0 = time.perf_counter()
    try:
        intrinsics = dataio.load_intrinsics(frame)
        mask = dataio.load_map(frame / "mask.png", "mask")
        nocs = dataio.load_nocs(frame / nocs_name, mask)
    except (DataError, InvalidInputError) as exc:
        return frame.name, EXIT_DATA, str(exc)
    corr = solver.extract_correspondences(nocs, stride)
    try:
        result = solver.pnp_ransac(corr, intrinsics, params)
    except NoPoseFoundError as exc:
        return frame.name, EXIT_NO_SOLUTION, f"{exc} stats={json.dumps(exc.stats)}"
    stats = dict(result.stats)
    stats["total_ms"] = (time.perf_counter() - t0) * 1e3
    stats["stride"] = stride
    stats["seed"] = params.seed
    dataio.save_pose(output, result.pose, stats)
    return frame.name, EXIT_OK, ""


def cmd_solve(ns):
    frames = _frames_or_fail(ns.frame)
    params = solver.RansacParams(max_iterations=ns.max_iterations,
                                 inlier_threshold=ns.threshold,
                                 min_inliers=ns.min_inliers, seed=ns.seed)
    single = len(frames) == 1
    items = [(f, Path(ns.output) if single else Path(ns.output) / f"{f.name}.json",
              params, ns.stride, ns.nocs) for f in frames]
    return _report_frames(_run_frames(_solve_frame, ns.jobs, items))


# ---------------------------------------------------------------------------
# eval
# ---------------------------------------------------------------------------

@dataclass
class RunReport:
    records: list = field(default_factory=list)
    aggregates: dict = field(default_factory=dict)
    schema_version: int = SCHEMA_VERSION

    def to_dict(self):
        return {"schema_version": self.schema_version, "records": self.records,
                "aggregates": self.aggregates}


def aggregate(records, threshold, diameter, normal_errors=None):
    limit = threshold * diameter
    n = len(records)
    agg = {
        "frames": n,
        "threshold_fraction": threshold,
        "add_recall": 100.0 * sum(r["add"] < limit for r in records) / n,
        "add_s_recall": 100.0 * sum(r["add_s"] < limit for r in records) / n,
        "mean_add": float(np.mean([r["add"] for r in records])),
        "mean_add_s": float(np.mean([r["add_s"] for r in records])),
        "mean_rotation_error_deg": float(np.mean([r["rotation_error_deg"] for r in records])),
        "mean_translation_error_m": float(np.mean([r["translation_error_m"] for r in records])),
    }
    if normal_errors is not None and len(normal_errors):
        agg["normals"] = metrics.summarize_angles(normal_errors).to_dict()
    return agg


def evaluate(pred_dir, gt_root, mesh, threshold=0.1, symmetric=False):
    pred_dir, gt_root = Path(pred_dir), Path(gt_root)
    # JSON files next to a same-named PNG are map sidecars, not predictions
    preds = {p.stem: p for p in pred_dir.glob("*.json") if not p.with_suffix(".png").exists()}
    gts = {f.name: f for f in dataio.frame_dirs(gt_root) if (f / "ann.json").is_file()}
    if len(gts) == 1 and len(preds) == 1 and set(gts) != set(preds):
        # a single frame evaluated against a single prediction file
        preds = {next(iter(gts)): next(iter(preds.values()))}
    unmatched = sorted(set(preds) ^ set(gts))
    if unmatched or not gts:
        raise DataError("unmatched frames: " + (", ".join(unmatched) or "none found"))
    records = []
    normal_errors = []
    for fid in sorted(gts):
        pred_pose, stats = dataio.load_pose(preds[fid])
        gt_pose = dataio.load_annotation(gts[fid] / "ann.json", check_files=False).pose
        rec = {
            "frame_id": fid,
            "add": metrics.add(pred_pose, gt_pose, mesh),
            "add_s": metrics.add_s(pred_pose, gt_pose, mesh),
            "rotation_error_deg": float(np.degrees(rotation_error(pred_pose.rotation, gt_pose.rotation))),
            "translation_error_m": float(np.linalg.norm(pred_pose.translation - gt_pose.translation)),
        }
        if "inlier_ratio" in stats:
            rec["inlier_ratio"] = stats["inlier_ratio"]
        if "total_ms" in stats:
            rec["timings_ms"] = {"solve": stats["total_ms"]}
        records.append(rec)
        pred_normals = pred_dir / f"{fid}_normals.png"
        if pred_normals.is_file() and (gts[fid] / "gt_normals.png").is_file():
            mask = dataio.load_map(gts[fid] / "mask.png", "mask")
            pn = dataio.load_map(pred_normals, "normals")
            gn = dataio.load_map(gts[fid] / "gt_normals.png", "normals")
            normal_errors.append(metrics.angular_errors(pn[mask], gn[mask]))
    errs = np.concatenate(normal_errors) if normal_errors else None
    agg = aggregate(records, threshold, mesh.diameter, errs)
    agg["recall"] = agg["add_s_recall"] if symmetric else agg["add_recall"]
    agg["metric"] = "ADD-S" if symmetric else "ADD"
    return RunReport(records=records, aggregates=agg)


def cmd_eval(ns):
    mesh = dataio.load_mesh(ns.mesh, scale=ns.mesh_scale)
    report = evaluate(ns.pred, ns.gt, mesh, ns.threshold, ns.symmetric)
    agg = report.aggregates
    print(f"{agg['metric']} recall @ {ns.threshold:g}d: {agg['recall']:.1f}% "
          f"over {agg['frames']} frames")
    if "normals" in agg:
        nm = agg["normals"]
        print(f"normals: mean {nm['mean_deg']:.2f} deg, median {nm['median_deg']:.2f} deg")
    if ns.report:
        dataio._write_json(ns.report, report.to_dict())
    return EXIT_OK


# ---------------------------------------------------------------------------

def build_parser():
    p = _Parser(prog="polarpose", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    d = sub.add_parser("decode", help="decompose polarization frames into I_un/DOLP/AOLP maps")
    d.add_argument("input", help="frame directory or scene directory of frames")
    d.add_argument("output", help="output directory")
    d.add_argument("--per-channel", action="store_true",
                   help="decompose R, G and B separately instead of luminance")
    d.add_argument("--jobs", type=int, default=1, help="frames processed in parallel")
    d.set_defaults(func=cmd_decode)

    pr = sub.add_parser("priors", help="compute diffuse/specular normal priors")
    pr.add_argument("input", help="frame directory (quadruplet or decoded maps)")
    pr.add_argument("output", help="output directory")
    pr.add_argument("--eta", type=float, default=None,
                    help="refractive index; defaults to ann.json, then the object table")
    pr.add_argument("--jobs", type=int, default=1, help="frames processed in parallel")
    pr.set_defaults(func=cmd_priors)

    s = sub.add_parser("synth", help="render a synthetic polarization frame")
    s.add_argument("mesh", help="PLY or OBJ mesh")
    s.add_argument("pose", help="pose JSON (rotation row-major, translation in meters)")
    s.add_argument("output", help="frame directory to write")
    s.add_argument("--config", help="synth config JSON")
    s.add_argument("--intrinsics", help="intrinsics JSON (fx, fy, cx, cy, width, height)")
    s.add_argument("--eta", type=float, help="refractive index")
    s.add_argument("--mode", choices=["diffuse", "specular"], help="reflection model")
    s.add_argument("--albedo", type=float, help="surface albedo in [0, 1]")
    s.add_argument("--noise", type=float, help="Gaussian noise sigma (intensity units)")
    s.add_argument("--seed", type=int, help="noise seed")
    s.add_argument("--bit-depth", choices=["8", "16", "float"], help="sensor quantization")
    s.add_argument("--object-id", help="object id stored in ann.json")
    s.add_argument("--symmetry", help='symmetry JSON, e.g. \'{"kind": "revolution"}\'')
    s.add_argument("--mesh-scale", type=float, default=1.0, help="mesh units to meters")
    s.set_defaults(func=cmd_synth)

    so = sub.add_parser("solve", help="RANSAC-PnP pose from a NOCS map")
    so.add_argument("frame", help="frame directory or scene directory")
    so.add_argument("output", help="pose JSON (single frame) or directory (scene)")
    so.add_argument("--stride", type=int, default=2, help="pixel sampling stride")
    so.add_argument("--seed", type=int, default=0, help="RANSAC seed")
    so.add_argument("--threshold", type=float, default=2.0, help="inlier threshold, pixels")
    so.add_argument("--max-iterations", type=int, default=1000, help="RANSAC iteration cap")
    so.add_argument("--min-inliers", type=int, default=12, help="minimum inlier support")
    so.add_argument("--nocs", default="gt_nocs.png", help="NOCS map file inside the frame")
    so.add_argument("--jobs", type=int, default=1, help="frames processed in parallel")
    so.set_defaults(func=cmd_solve)

    e = sub.add_parser("eval", help="ADD(-S) recall and normal metrics")
    e.add_argument("--pred", required=True, help="directory of <frame_id>.json poses")
    e.add_argument("--gt", required=True, help="scene or frame directory with ann.json")
    e.add_argument("--mesh", required=True, help="object mesh")
    e.add_argument("--symmetric", action="store_true", help="use ADD-S for the recall")
    e.add_argument("--threshold", type=float, default=0.1, help="fraction of the diameter")
    e.add_argument("--report", help="write the JSON report here")
    e.add_argument("--mesh-scale", type=float, default=1.0, help="mesh units to meters")
    e.set_defaults(func=cmd_eval)
    return p


def main(argv=None):
    parser = build_parser()
    ns = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if ns.verbose else logging.WARNING,
                        format="%(levelname)s: %(message)s")
    if getattr(ns, "bit_depth", None) in ("8", "16"):
        ns.bit_depth = int(ns.bit_depth)
    try:
        return ns.func(ns)
    except (DataError, InvalidInputError) as exc:
        print(f"polarpose: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NoPoseFoundError as exc:
        print(f"polarpose: {exc}", file=sys.stderr)
        return EXIT_NO_SOLUTION


if __name__ == "__main__":
    sys.exit(main())
