"""silcarve command line: synth -> nrsfm -> learn-proto / learn-basis ->
infer-proto / fit -> mesh -> eval.

Every command writes a run manifest next to its outputs holding the
resolved configuration, the seed and SHA-256 hashes of the artifacts.
Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical
failure. Diagnostics go to standard error.

All randomness flows from the seed in the resolved config; the
--threads flag (or SILCARVE_THREADS) is accepted and recorded nowhere
in the manifest because results do not depend on it: execution uses
deterministic fixed-order reductions throughout.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import os
import sys
from pathlib import Path

import numpy as np

from . import config as configmod, fileio, synthetic
from .basis import BasisConfig, FitConfig, fit_instance, learn_basis
from .cloud import PointCloud, TriMesh, sample_mesh_surface
from .errors import DataError, NumericalError, SilcarveError, UsageError
from .evaluation import hausdorff_norm, render_depth, silhouette_iou, zmae
from .instance import Instance
from .nrsfm import NrsfmConfig, fit_nrsfm
from .prototype import PrototypeCluster, PrototypeModel, cluster_instances, infer_dense_shape, learn_prototype, view_weights
from .volume import cube_grid, extract_isosurface, points_to_volume


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _build_parser() -> _Parser:
    parser = _Parser(prog="silcarve", description="category shape models from silhouettes")
    parser.add_argument("--threads", type=int, default=None, help="worker threads (results are identical for any value)")
    sub = parser.add_subparsers(dest="command")

    p = sub.add_parser("synth", parents=[], description="generate a synthetic dataset")
    p.add_argument("--spec", required=True, help="scene spec JSON")
    p.add_argument("--out", required=True, help="output dataset directory")
    p.add_argument("--config", default=None)
    p.add_argument("--seed", type=int, default=None)

    p = sub.add_parser("nrsfm", description="estimate cameras and a sparse shape basis")
    p.add_argument("--input", required=True, help="dataset directory with keypoint annotations")
    p.add_argument("--bases", type=int, default=None, help="deformation basis count")
    p.add_argument("--out", required=True, help="output model JSON")
    p.add_argument("--mask-penalty", dest="mask_penalty", type=float, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--config", default=None)

    p = sub.add_parser("learn-proto", description="learn visual-cluster TSDF prototypes")
    p.add_argument("--data", required=True, help="dataset directory with masks")
    p.add_argument("--model", required=True, help="nrsfm model JSON (cameras + coefficients)")
    p.add_argument("-K", dest="K", type=int, default=None, help="visual cluster count")
    p.add_argument("--neg-trunc", dest="neg_trunc", type=float, default=None)
    p.add_argument("--view-thresh", dest="view_thresh", type=float, default=None)
    p.add_argument("--out", required=True, help="output prototype directory")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--config", default=None)

    p = sub.add_parser("infer-proto", description="dense shape from one silhouette + prototype")
    p.add_argument("--mask", required=True)
    p.add_argument("--camera", required=True)
    p.add_argument("--alpha", required=True, help='JSON {"alpha": [...]}')
    p.add_argument("--model", required=True, help="prototype directory")
    p.add_argument("--out", required=True, help="output volume file")
    p.add_argument("--config", default=None)
    p.add_argument("--neg-trunc", dest="neg_trunc", type=float, default=None)

    p = sub.add_parser("learn-basis", description="learn a deformable point-cloud model")
    p.add_argument("--data", required=True)
    p.add_argument("-K", dest="K", type=int, default=None, help="deformation basis count")
    p.add_argument("--points", type=int, default=None)
    p.add_argument("--iters", type=int, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--nrsfm", default=None, help="optional nrsfm model for cameras + 3D keypoints")
    p.add_argument("--out", required=True, help="output model JSON")
    p.add_argument("--config", default=None)

    p = sub.add_parser("fit", description="fit coefficients and camera to a novel silhouette")
    p.add_argument("--mask", required=True)
    p.add_argument("--camera", required=True, help="initial camera JSON")
    p.add_argument("--model", required=True, help="basis model JSON")
    p.add_argument("--out", required=True, help="output fit JSON")
    p.add_argument("--mesh", default=None, help="optional shape export path (OBJ)")
    p.add_argument("--export", choices=("points", "mesh"), default=None)
    p.add_argument("--config", default=None)

    p = sub.add_parser("mesh", description="extract an isosurface mesh from a volume")
    p.add_argument("volume", help="volume file")
    p.add_argument("--iso", type=float, default=None)
    p.add_argument("--out", required=True)
    p.add_argument("--config", default=None)

    p = sub.add_parser("eval", description="compare a predicted shape against ground truth")
    p.add_argument("--pred", required=True, help="predicted OBJ")
    p.add_argument("--gt", required=True, help="ground-truth OBJ")
    p.add_argument("--camera", required=True)
    p.add_argument("--metrics", default=None)
    p.add_argument("--out", required=True, help="output CSV")
    p.add_argument("--id", dest="instance_id", default=None)
    p.add_argument("--config", default=None)
    p.add_argument("--seed", type=int, default=None)

    return parser


def _sha256(path: Path) -> str:
    h = hashlib.sha256()
    h.update(Path(path).read_bytes())
    return h.hexdigest()


def _strip_threads(argv) -> list:
    out = []
    skip = False
    for a in argv:
        if skip:
            skip = False
            continue
        if a == "--threads":
            skip = True
            continue
        if a.startswith("--threads="):
            continue
        out.append(a)
    return out


def _write_manifest(anchor: Path, command: str, cfg: configmod.RunConfig, artifacts, argv) -> None:
    """Manifest next to the outputs: inside directories, alongside files.

    Holds the command line (minus --threads, which cannot affect
    results), the resolved config and artifact hashes: enough to re-run
    and to verify the outputs byte for byte.
    """
    if anchor.is_dir():
        path = anchor / "manifest.json"
    else:
        path = Path(str(anchor) + ".manifest.json")
    fileio.dump_json(
        path,
        {
            "command": command,
            "args": _strip_threads(argv),
            "config": cfg.to_json_dict(),
            "artifacts": {Path(a).name: _sha256(a) for a in sorted(set(map(str, artifacts)))},
        },
    )


def _scene_spec_from_json(d: dict) -> synthetic.SceneSpec:
    known = {
        "family", "param_ranges", "n_instances", "image_size", "camera",
        "sigma_kp_px", "camera_jitter_deg", "tessellation", "frame_fill",
        "seed", "keypoint_template", "mirror_pairs",
    }
    unknown = set(d) - known
    if unknown:
        raise UsageError(f"unknown scene spec keys: {sorted(unknown)}")
    for req in ("family", "param_ranges", "n_instances"):
        if req not in d:
            raise UsageError(f"scene spec is missing {req!r}")
    cam = d.get("camera", {})
    unknown_cam = set(cam) - {"kind", "dominant_fraction", "spread_deg"}
    if unknown_cam:
        raise UsageError(f"unknown camera law keys: {sorted(unknown_cam)}")
    law = synthetic.CameraLaw(
        kind=cam.get("kind", "uniform"),
        dominant_fraction=float(cam.get("dominant_fraction", 0.9)),
        spread_deg=float(cam.get("spread_deg", 5.0)),
    )
    kwargs = {}
    if "keypoint_template" in d:
        kwargs["keypoint_template"] = {k: tuple(v) for k, v in d["keypoint_template"].items()}
    if "mirror_pairs" in d:
        kwargs["mirror_pairs"] = tuple(tuple(p) for p in d["mirror_pairs"])
    return synthetic.SceneSpec(
        family=d["family"],
        param_ranges={k: (float(v[0]), float(v[1])) for k, v in d["param_ranges"].items()},
        n_instances=int(d["n_instances"]),
        image_size=tuple(d.get("image_size", (128, 128))),
        camera_law=law,
        sigma_kp_px=float(d.get("sigma_kp_px", 0.0)),
        camera_jitter_deg=float(d.get("camera_jitter_deg", 0.0)),
        tessellation=int(d.get("tessellation", 3)),
        frame_fill=float(d.get("frame_fill", 0.7)),
        seed=int(d.get("seed", 0)),
        **kwargs,
    )


# ---------------------------------------------------------------------------
# Subcommand bodies


def _cmd_synth(args) -> int:
    cfg = configmod.resolve("synth", args.config, {"seed": args.seed})
    spec_dict = fileio.load_json(args.spec)
    spec = _scene_spec_from_json(spec_dict)
    if cfg["seed"] is not None:
        from dataclasses import replace

        spec = replace(spec, seed=int(cfg["seed"]))
    gts = synthetic.make_dataset(spec)
    out = Path(args.out)
    written = fileio.write_dataset(out, gts)
    cfg = configmod.RunConfig("synth", {**cfg.values, "spec": spec_dict, "seed": spec.seed})
    _write_manifest(out, "synth", cfg, written, args.raw_argv)
    return 0


def _require_keypoint_instances(instances):
    missing = [i.instance_id for i in instances if i.keypoints is None]
    if missing:
        raise DataError(f"instances without keypoints: {missing[:5]}")
    return instances


def _cmd_nrsfm(args) -> int:
    cfg = configmod.resolve(
        "nrsfm",
        args.config,
        {"bases": args.bases, "mask_penalty": args.mask_penalty, "seed": args.seed},
    )
    instances = _require_keypoint_instances(fileio.load_instances(args.input))
    ncfg = NrsfmConfig(
        mask_penalty=cfg["mask_penalty"],
        max_iters=cfg["max_iters"],
        rel_tol=cfg["tol"],
        mirror=cfg["mirror"],
        seed=cfg["seed"],
    )
    model = fit_nrsfm(instances, cfg["bases"], ncfg)
    for w in model.warnings:
        print(f"warning: {w}", file=sys.stderr)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    fileio.write_nrsfm_model(out, model)
    _write_manifest(out, "nrsfm", cfg, [out], args.raw_argv)
    return 0


def _cmd_learn_proto(args) -> int:
    cfg = configmod.resolve(
        "learn-proto",
        args.config,
        {"K": args.K, "neg_trunc": args.neg_trunc, "view_thresh": args.view_thresh, "seed": args.seed},
    )
    model = fileio.read_nrsfm_model(args.model)
    by_id = {i.instance_id: i for i in fileio.load_instances(args.data)}

    masks, cams, alphas, ids = [], [], [], []
    for n, iid in enumerate(model.instance_ids):
        base = iid[:-2] if iid.endswith("~m") else iid
        if base not in by_id:
            raise DataError(f"nrsfm instance {iid!r} has no mask under {args.data}")
        mask = by_id[base].mask
        if iid.endswith("~m"):
            mask = mask.mirrored()
        masks.append(mask)
        cams.append(model.cameras[n])
        alphas.append(model.z[n])
        ids.append(iid)
    alphas = np.array(alphas).reshape(len(ids), -1)

    diam = float(np.linalg.norm(model.mean_shape.max(axis=0) - model.mean_shape.min(axis=0)))
    grid = cube_grid(cfg["grid_margin"] * diam, cfg["grid_resolution"])
    lo = cfg["neg_trunc"] if cfg["neg_trunc"] is not None else -2.0 * grid.voxel_size
    if lo > 0:
        raise UsageError("neg_trunc must be <= 0")

    assign, centers = cluster_instances(alphas, cfg["K"], cfg["seed"])
    clusters = []
    for j in range(cfg["K"]):
        member_idx = np.flatnonzero(assign == j)
        members = [(masks[i], cams[i]) for i in member_idx]
        weights = view_weights([cams[i] for i in member_idx], cfg["view_thresh"])
        vol = learn_prototype(members, weights, grid, lo, np.inf)
        clusters.append(
            PrototypeCluster(vol, centers[j], tuple(ids[i] for i in member_idx))
        )
    proto = PrototypeModel(tuple(clusters), cfg["blend"])
    out = Path(args.out)
    written = fileio.write_prototype_model(out, proto)
    _write_manifest(out, "learn-proto", cfg, written, args.raw_argv)
    return 0


def _cmd_infer_proto(args) -> int:
    cfg = configmod.resolve("infer-proto", args.config, {"neg_trunc": args.neg_trunc})
    model = fileio.read_prototype_model(args.model)
    mask = fileio.read_mask_pgm(args.mask)
    cam = fileio.read_camera_json(args.camera)
    alpha = np.array(fileio.load_json(args.alpha)["alpha"], dtype=float)
    lo = cfg["neg_trunc"] if cfg["neg_trunc"] is not None else -2.0 * model.grid.voxel_size
    vol = infer_dense_shape(mask, cam, alpha, model, lo, np.inf)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    fileio.write_volume(out, vol)
    _write_manifest(out, "infer-proto", cfg, [out, Path(str(out) + ".json")], args.raw_argv)
    return 0


def _cmd_learn_basis(args) -> int:
    cfg = configmod.resolve(
        "learn-basis",
        args.config,
        {"K": args.K, "points": args.points, "iters": args.iters, "seed": args.seed},
    )
    instances = fileio.load_instances(args.data)
    if args.nrsfm is not None:
        model = fileio.read_nrsfm_model(args.nrsfm)
        lifted = model.lifted_keypoints()
        by_id = {model.instance_ids[n]: n for n in range(model.n_instances)}
        patched = []
        for inst in instances:
            if inst.instance_id in by_id:
                n = by_id[inst.instance_id]
                patched.append(
                    Instance(
                        mask=inst.mask,
                        camera=model.cameras[n],
                        keypoints=inst.keypoints,
                        keypoints3d=lifted[n],
                        mirror_pairs=inst.mirror_pairs,
                        instance_id=inst.instance_id,
                    )
                )
            else:
                patched.append(inst)
        instances = patched
    missing_cam = [i.instance_id for i in instances if i.camera is None]
    if missing_cam:
        raise DataError(f"instances without cameras: {missing_cam[:5]}")
    bcfg = BasisConfig(
        n_points=cfg["points"],
        m_cover=cfg["m_cover"],
        w_sil=cfg["w_sil"],
        w_cover=cfg["w_cover"],
        w_keypoint=cfg["w_keypoint"],
        w_local=cfg["w_local"],
        w_normal=cfg["w_normal"],
        w_reg=cfg["w_reg"],
        outer_iters=cfg["iters"],
        inner_steps=cfg["inner_steps"],
        grid_resolution=cfg["grid_resolution"],
        seed=cfg["seed"],
    )
    model, alphas, history = learn_basis(instances, cfg["K"], bcfg)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    fileio.write_basis_model(out, model, cfg.to_json_dict())
    alphas_path = Path(str(out) + ".alphas.json")
    fileio.dump_json(
        alphas_path,
        {
            "alphas": {
                instances[i].instance_id: alphas[i].tolist() for i in range(len(instances))
            },
            "history": history,
        },
    )
    _write_manifest(out, "learn-basis", cfg, [out, alphas_path], args.raw_argv)
    return 0


def _cmd_fit(args) -> int:
    cfg = configmod.resolve("fit", args.config, {"export": args.export})
    model = fileio.read_basis_model(args.model)
    mask = fileio.read_mask_pgm(args.mask)
    cam = fileio.read_camera_json(args.camera)
    fcfg = FitConfig(
        m_cover=cfg["m_cover"],
        w_sil=cfg["w_sil"],
        w_cover=cfg["w_cover"],
        w_normal=cfg["w_normal"],
        w_reg=cfg["w_reg"],
        outer_iters=cfg["iters"],
        camera_steps=cfg["camera_steps"],
        fit_scale=cfg["fit_scale"],
        fit_rotation=cfg["fit_rotation"],
        fit_translation=cfg["fit_translation"],
    )
    fit = fit_instance(mask, cam, model, fcfg)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    fileio.dump_json(
        out,
        {
            "alpha": fit.alpha.tolist(),
            "camera": fit.camera.to_json_dict(),
            "energy": fit.energy,
        },
    )
    artifacts = [out]
    if args.mesh is not None:
        shape = fit.shape
        if cfg["export"] == "points":
            fileio.write_obj(args.mesh, TriMesh(shape, np.zeros((0, 3), dtype=np.intp)))
        else:
            side = 1.3 * float(np.linalg.norm(shape.max(axis=0) - shape.min(axis=0)))
            grid = cube_grid(side, 64, center=shape.mean(axis=0))
            mesh = extract_isosurface(points_to_volume(shape, grid), 0.0)
            fileio.write_obj(args.mesh, mesh)
        artifacts.append(Path(args.mesh))
    _write_manifest(out, "fit", cfg, artifacts, args.raw_argv)
    return 0


def _cmd_mesh(args) -> int:
    cfg = configmod.resolve("mesh", args.config, {"iso": args.iso})
    vol = fileio.read_volume(args.volume)
    mesh = extract_isosurface(vol, cfg["iso"])
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    fileio.write_obj(out, mesh)
    _write_manifest(out, "mesh", cfg, [out], args.raw_argv)
    return 0


def _surface_samples(mesh: TriMesh, n: int, seed: int) -> np.ndarray:
    if mesh.is_empty:
        return mesh.vertices
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed)))
    return sample_mesh_surface(mesh, n, rng)


def _cmd_eval(args) -> int:
    cfg = configmod.resolve("eval", args.config, {"metrics": args.metrics, "seed": args.seed})
    pred = fileio.read_obj(args.pred)
    gt = fileio.read_obj(args.gt)
    cam = fileio.read_camera_json(args.camera)
    metrics = [m.strip() for m in cfg["metrics"].split(",") if m.strip()]
    unknown = set(metrics) - {"hausdorff", "zmae", "iou"}
    if unknown:
        raise UsageError(f"unknown metrics: {sorted(unknown)}")
    instance_id = args.instance_id or Path(args.pred).stem
    width, height = cfg["width"], cfg["height"]

    rows = []
    if "hausdorff" in metrics:
        a = _surface_samples(pred, cfg["samples"], cfg["seed"])
        b = _surface_samples(gt, cfg["samples"], cfg["seed"] + 1)
        rows.append((instance_id, "hausdorff", hausdorff_norm(a, b, gt.bbox_diagonal())))
    if "zmae" in metrics or "iou" in metrics:
        def _render(mesh):
            if mesh.is_empty:
                return render_depth(PointCloud(mesh.vertices), cam, width, height,
                                    splat_radius_px=cfg["splat"])
            return render_depth(mesh, cam, width, height)

        dm_pred = _render(pred)
        dm_gt = _render(gt)
        if "zmae" in metrics:
            rows.append((instance_id, "zmae", zmae(dm_pred, dm_gt, gt.bbox_diagonal())))
        if "iou" in metrics:
            rows.append((instance_id, "iou", silhouette_iou(dm_pred.valid, dm_gt.valid)))

    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    with out.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["instance_id", "metric", "value"])
        for row in rows:
            writer.writerow([row[0], row[1], repr(float(row[2]))])
    _write_manifest(out, "eval", cfg, [out], args.raw_argv)
    return 0


_COMMANDS = {
    "synth": _cmd_synth,
    "nrsfm": _cmd_nrsfm,
    "learn-proto": _cmd_learn_proto,
    "infer-proto": _cmd_infer_proto,
    "learn-basis": _cmd_learn_basis,
    "fit": _cmd_fit,
    "mesh": _cmd_mesh,
    "eval": _cmd_eval,
}


def dispatch(argv) -> int:
    """Parse argv (without the program name) and run one subcommand."""
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse exits directly for --help
        return int(exc.code or 0)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    if args.command is None:
        parser.print_usage(sys.stderr)
        return 1
    threads = args.threads
    if threads is None:
        threads = int(os.environ.get("SILCARVE_THREADS", "1") or 1)
    if threads < 1:
        print("usage error: --threads must be >= 1", file=sys.stderr)
        return 1
    args.raw_argv = list(argv)
    try:
        return _COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 2
    except (NumericalError, np.linalg.LinAlgError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 3
    except SilcarveError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except FileNotFoundError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 2


def main() -> None:
    sys.exit(dispatch(sys.argv[1:]))


if __name__ == "__main__":
    main()
