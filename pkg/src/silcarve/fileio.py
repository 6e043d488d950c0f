"""On-disk formats.

Masks are binary PGM (P5, 255 foreground). Meshes are Wavefront OBJ
restricted to vertices and triangular faces. Cameras are small JSON
objects. Volumes are a JSON sidecar header (same path + ".json") plus
raw little-endian float32, x fastest, then y, then z; depth maps reuse
the container with dims [w, h, 1] and +inf for background. JSON output
is key-sorted so artifacts are byte-stable.
"""

from __future__ import annotations

import json
import re
from pathlib import Path

import numpy as np

from .camera import OrthoCamera
from .cloud import TriMesh
from .errors import DataError
from .evaluation import DepthMap
from .instance import Instance, KeypointSet
from .silhouette import SilhouetteMask
from .volume import GridSpec, TsdfVolume


def dump_json(path, obj) -> None:
    Path(path).write_text(json.dumps(obj, sort_keys=True, indent=2) + "\n")


def load_json(path):
    try:
        return json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise DataError(f"invalid JSON in {path}: {exc}") from exc


# ---------------------------------------------------------------------------
# PGM masks


def write_mask_pgm(path, mask: SilhouetteMask) -> None:
    raster = np.where(mask.occupancy, 255, 0).astype(np.uint8)
    header = f"P5\n{mask.width} {mask.height}\n255\n".encode("ascii")
    Path(path).write_bytes(header + raster.tobytes())


def read_mask_pgm(path) -> SilhouetteMask:
    data = Path(path).read_bytes()
    m = re.match(rb"^P5\s+(?:#[^\n]*\n\s*)?(\d+)\s+(\d+)\s+(\d+)\s", data)
    if not m:
        raise DataError(f"{path} is not a binary PGM (P5) file")
    width, height, maxval = (int(g) for g in m.groups())
    if maxval > 255:
        raise DataError("16-bit PGM masks are not supported")
    raster = np.frombuffer(data[m.end() :], dtype=np.uint8, count=width * height)
    occ = raster.reshape(height, width) >= 128
    return SilhouetteMask(occ)


# ---------------------------------------------------------------------------
# OBJ meshes


def write_obj(path, mesh: TriMesh) -> None:
    lines = []
    for v in mesh.vertices:
        lines.append(f"v {float(v[0])!r} {float(v[1])!r} {float(v[2])!r}")
    for f in mesh.faces:
        lines.append(f"f {f[0] + 1} {f[1] + 1} {f[2] + 1}")
    Path(path).write_text("\n".join(lines) + "\n")


def read_obj(path) -> TriMesh:
    verts = []
    faces = []
    for line in Path(path).read_text().splitlines():
        parts = line.split()
        if not parts:
            continue
        if parts[0] == "v":
            verts.append([float(x) for x in parts[1:4]])
        elif parts[0] == "f":
            idx = [int(p.split("/")[0]) - 1 for p in parts[1:]]
            if len(idx) != 3:
                raise DataError(f"{path}: only triangular faces are supported")
            faces.append(idx)
    if not verts:
        raise DataError(f"{path}: no vertices")
    return TriMesh(np.array(verts), np.array(faces, dtype=np.intp).reshape(-1, 3))


# ---------------------------------------------------------------------------
# Cameras and keypoints


def write_camera_json(path, cam: OrthoCamera) -> None:
    dump_json(path, cam.to_json_dict())


def read_camera_json(path) -> OrthoCamera:
    return OrthoCamera.from_json_dict(load_json(path))


def write_keypoints_json(path, kps: KeypointSet, mask_path: str, mirror_pairs) -> None:
    dump_json(
        path,
        {
            "keypoints": [
                {
                    "name": name,
                    "u": float(kps.uv[i, 0]),
                    "v": float(kps.uv[i, 1]),
                    "visible": bool(kps.visible[i]),
                }
                for i, name in enumerate(kps.names)
            ],
            "mask": mask_path,
            "mirror_pairs": [list(p) for p in mirror_pairs],
        },
    )


def read_keypoints_json(path):
    d = load_json(path)
    entries = d.get("keypoints")
    if not entries:
        raise DataError(f"{path}: no keypoints")
    names = tuple(e["name"] for e in entries)
    uv = np.array([[e["u"], e["v"]] for e in entries], dtype=float)
    vis = np.array([bool(e["visible"]) for e in entries])
    pairs = tuple(tuple(p) for p in d.get("mirror_pairs", []))
    return KeypointSet(names, uv, vis), d.get("mask"), pairs


# ---------------------------------------------------------------------------
# Volume container (also used for depth maps)


def _sidecar(path) -> Path:
    return Path(str(path) + ".json")


def write_volume(path, vol: TsdfVolume) -> None:
    header = {
        "dims": list(vol.grid.dims),
        "origin": vol.grid.origin.tolist(),
        "voxel_size": vol.grid.voxel_size,
        "min_trunc": vol.min_trunc if np.isfinite(vol.min_trunc) else None,
        "max_trunc": vol.max_trunc if np.isfinite(vol.max_trunc) else None,
    }
    dump_json(_sidecar(path), header)
    # x fastest, then y, then z
    raw = np.ascontiguousarray(vol.values.transpose(2, 1, 0), dtype="<f4")
    Path(path).write_bytes(raw.tobytes())


def read_volume(path) -> TsdfVolume:
    header = load_json(_sidecar(path))
    dims = tuple(header["dims"])
    grid = GridSpec(dims, np.array(header["origin"], float), float(header["voxel_size"]))
    raw = np.frombuffer(Path(path).read_bytes(), dtype="<f4")
    if raw.size != int(np.prod(dims)):
        raise DataError(f"{path}: expected {np.prod(dims)} floats, found {raw.size}")
    values = raw.reshape(dims[2], dims[1], dims[0]).transpose(2, 1, 0).astype(float)
    lo = header.get("min_trunc")
    hi = header.get("max_trunc")
    lo = float(lo) if lo is not None else float(values.min())
    hi = float(hi) if hi is not None else float(values.max())
    return TsdfVolume(grid, values, min(lo, float(values.min())), max(hi, float(values.max())))


def write_depth(path, dm: DepthMap) -> None:
    header = {
        "dims": [dm.width, dm.height, 1],
        "origin": [0.0, 0.0, 0.0],
        "voxel_size": 1.0,
        "min_trunc": None,
        "max_trunc": None,
    }
    dump_json(_sidecar(path), header)
    raw = np.ascontiguousarray(dm.depth, dtype="<f4")  # row-major = u fastest
    Path(path).write_bytes(raw.tobytes())


def read_depth(path) -> DepthMap:
    header = load_json(_sidecar(path))
    w, h, one = header["dims"]
    if one != 1:
        raise DataError(f"{path}: not a depth map container")
    raw = np.frombuffer(Path(path).read_bytes(), dtype="<f4")
    if raw.size != w * h:
        raise DataError(f"{path}: expected {w * h} floats, found {raw.size}")
    return DepthMap(raw.reshape(h, w).astype(float))


# ---------------------------------------------------------------------------
# Learned models


def write_nrsfm_model(path, model) -> None:
    dump_json(
        path,
        {
            "mean_shape": model.mean_shape.tolist(),
            "basis": model.basis.tolist(),
            "sigma2": model.sigma2,
            "keypoint_names": list(model.keypoint_names),
            "instances": [
                {
                    "id": model.instance_ids[n],
                    "camera": model.cameras[n].to_json_dict(),
                    "z": model.z[n].tolist(),
                    "mirrored": bool(model.mirrored[n]),
                }
                for n in range(model.n_instances)
            ],
            "warnings": list(model.warnings),
        },
    )


def read_nrsfm_model(path):
    from .nrsfm import NrsfmModel

    d = load_json(path)
    instances = d["instances"]
    return NrsfmModel(
        mean_shape=np.array(d["mean_shape"], float),
        basis=np.array(d["basis"], float).reshape(-1, len(d["mean_shape"]), 3),
        sigma2=float(d["sigma2"]),
        cameras=tuple(OrthoCamera.from_json_dict(e["camera"]) for e in instances),
        z=np.array([e["z"] for e in instances], float).reshape(len(instances), -1),
        keypoint_names=tuple(d["keypoint_names"]),
        instance_ids=tuple(e["id"] for e in instances),
        mirrored=np.array([e["mirrored"] for e in instances], bool),
        warnings=tuple(d.get("warnings", [])),
    )


def write_basis_model(path, model, config_dict=None) -> None:
    dump_json(
        path,
        {
            "mean": model.mean.tolist(),
            "bases": model.bases.tolist(),
            "basis_norm": model.basis_norm,
            "delta": model.delta,
            "neighbors": [list(row) for row in model.neighbors],
            "config": config_dict or {},
        },
    )


def read_basis_model(path):
    from .basis import BasisShapeModel

    d = load_json(path)
    mean = np.array(d["mean"], float)
    return BasisShapeModel(
        mean=mean,
        bases=np.array(d["bases"], float).reshape(-1, len(mean), 3),
        basis_norm=float(d["basis_norm"]),
        delta=float(d["delta"]),
        neighbors=tuple(tuple(row) for row in d["neighbors"]),
    )


def write_prototype_model(model_dir, model) -> list:
    """Prototype directory: cluster volumes plus an index JSON."""
    out = Path(model_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    entries = []
    for j, cluster in enumerate(model.clusters):
        name = f"cluster_{j:02d}.bin"
        write_volume(out / name, cluster.volume)
        written += [out / name, out / (name + ".json")]
        entries.append(
            {
                "volume": name,
                "alpha": cluster.alpha.tolist(),
                "members": list(cluster.members),
            }
        )
    index = {
        "clusters": entries,
        "blend_weight": model.blend_weight,
        "grid": model.grid.to_json_dict(),
    }
    dump_json(out / "index.json", index)
    written.append(out / "index.json")
    return written


def read_prototype_model(model_dir):
    from .prototype import PrototypeCluster, PrototypeModel

    root = Path(model_dir)
    index = load_json(root / "index.json")
    clusters = []
    for entry in index["clusters"]:
        vol = read_volume(root / entry["volume"])
        clusters.append(
            PrototypeCluster(
                volume=vol,
                alpha=np.array(entry["alpha"], float),
                members=tuple(entry["members"]),
            )
        )
    blend = index.get("blend_weight")
    return PrototypeModel(tuple(clusters), None if blend is None else float(blend))


# ---------------------------------------------------------------------------
# Dataset directories


def write_dataset(out_dir, gts, spec_json=None) -> list:
    """NNN_mask.pgm / NNN_camera.json / NNN_keypoints.json / NNN_depth.bin
    / NNN_gt.obj per instance; returns the written paths."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    for gt in gts:
        stem = gt.instance_id
        mask_path = out / f"{stem}_mask.pgm"
        write_mask_pgm(mask_path, gt.mask)
        write_camera_json(out / f"{stem}_camera.json", gt.camera_noisy)
        kps = KeypointSet(gt.keypoint_names, gt.keypoints_uv_noisy, gt.keypoints_visible)
        write_keypoints_json(
            out / f"{stem}_keypoints.json", kps, f"{stem}_mask.pgm", gt.mirror_pairs
        )
        write_depth(out / f"{stem}_depth.bin", gt.depth)
        write_obj(out / f"{stem}_gt.obj", gt.mesh)
        written += [
            out / f"{stem}_mask.pgm",
            out / f"{stem}_camera.json",
            out / f"{stem}_keypoints.json",
            out / f"{stem}_depth.bin",
            out / f"{stem}_depth.bin.json",
            out / f"{stem}_gt.obj",
        ]
    return written


def load_instances(data_dir) -> list:
    """Instances from a dataset directory, ordered by id.

    Prefers keypoint annotation files (which carry the mask path);
    falls back to mask + camera pairs.
    """
    root = Path(data_dir)
    if not root.is_dir():
        raise DataError(f"{data_dir} is not a directory")
    instances = []
    kp_files = sorted(root.glob("*_keypoints.json"))
    if kp_files:
        for path in kp_files:
            stem = path.name[: -len("_keypoints.json")]
            kps, mask_rel, pairs = read_keypoints_json(path)
            mask = read_mask_pgm(root / mask_rel) if mask_rel else None
            cam_path = root / f"{stem}_camera.json"
            cam = read_camera_json(cam_path) if cam_path.exists() else None
            instances.append(
                Instance(mask=mask, camera=cam, keypoints=kps, mirror_pairs=pairs, instance_id=stem)
            )
        return instances
    for path in sorted(root.glob("*_mask.pgm")):
        stem = path.name[: -len("_mask.pgm")]
        cam_path = root / f"{stem}_camera.json"
        cam = read_camera_json(cam_path) if cam_path.exists() else None
        instances.append(Instance(mask=read_mask_pgm(path), camera=cam, instance_id=stem))
    if not instances:
        raise DataError(f"no instances found under {data_dir}")
    return instances
