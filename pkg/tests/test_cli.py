import json
from pathlib import Path

import numpy as np
import pytest

from silcarve.cli import dispatch
from silcarve.config import check_values, resolve, validate_config
from silcarve.errors import UsageError


SPEC = {
    "family": "ellipsoid",
    "param_ranges": {"a": [0.9, 1.15], "b": [0.9, 1.15], "c": [1.0, 1.0]},
    "n_instances": 10,
    "image_size": [64, 64],
    "tessellation": 2,
    "seed": 3,
}


def write_spec(tmp_path, **overrides):
    spec = {**SPEC, **overrides}
    path = tmp_path / "spec.json"
    path.write_text(json.dumps(spec))
    return path


# ---------------------------------------------------------------------------
# config validation


def test_empty_config_materializes_defaults(tmp_path):
    p = tmp_path / "c.json"
    p.write_text("{}")
    cfg = validate_config(p, "learn-proto")
    assert cfg["K"] == 4
    assert cfg["view_thresh"] == 20.0


def test_bad_value_names_key(tmp_path):
    p = tmp_path / "c.json"
    p.write_text('{"K": -1}')
    with pytest.raises(UsageError, match="K"):
        validate_config(p, "learn-proto")


def test_unknown_key_is_hard_error(tmp_path):
    p = tmp_path / "c.json"
    p.write_text('{"clusterz": 3}')
    with pytest.raises(UsageError, match="clusterz"):
        validate_config(p, "learn-proto")


def test_type_mismatch_rejected():
    with pytest.raises(UsageError, match="learn-proto.K"):
        check_values("learn-proto", {"K": "four"})
    with pytest.raises(UsageError, match="mirror"):
        check_values("nrsfm", {"mirror": 1})


def test_config_roundtrip_is_identity(tmp_path):
    p = tmp_path / "c.json"
    p.write_text('{"K": 3, "view_thresh": 15.0}')
    cfg = validate_config(p, "learn-proto")
    p2 = tmp_path / "c2.json"
    p2.write_text(json.dumps(cfg.to_json_dict()))
    cfg2 = validate_config(p2, "learn-proto")
    assert cfg2.values == cfg.values


def test_flags_override_file(tmp_path):
    p = tmp_path / "c.json"
    p.write_text('{"K": 3}')
    cfg = resolve("learn-proto", p, {"K": 7, "view_thresh": None})
    assert cfg["K"] == 7
    assert cfg["view_thresh"] == 20.0


# ---------------------------------------------------------------------------
# dispatch and exit codes


def test_help_exits_zero(capsys):
    assert dispatch(["--help"]) == 0
    assert "silcarve" in capsys.readouterr().out


def test_unknown_flag_exits_one(capsys):
    assert dispatch(["synth", "--bogus", "x"]) == 1


def test_no_command_exits_one():
    assert dispatch([]) == 1


def test_missing_input_is_data_error(tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    rc = dispatch(["nrsfm", "--input", "nope", "--bases", "1", "--out", "m.json"])
    assert rc == 2


def test_corrupt_mask_is_data_error(tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    (tmp_path / "bad.pgm").write_bytes(b"P6 not a mask")
    (tmp_path / "cam.json").write_text(
        json.dumps({"scale": 1.0, "rotation": np.eye(3).tolist(), "translation": [0, 0]})
    )
    rc = dispatch(
        ["infer-proto", "--mask", "bad.pgm", "--camera", "cam.json", "--alpha", "cam.json",
         "--model", "nope", "--out", "v.bin"]
    )
    assert rc == 2


def test_bad_config_value_via_flag_exits_one(tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    spec = write_spec(tmp_path)
    rc = dispatch(["synth", "--spec", str(spec), "--out", "d", "--seed", "-4"])
    assert rc == 1


def test_unknown_scene_spec_key_exits_one(tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    spec = write_spec(tmp_path, extra_knob=1)
    rc = dispatch(["synth", "--spec", str(spec), "--out", "d"])
    assert rc == 1


@pytest.fixture(scope="module")
def pipeline_dir(tmp_path_factory):
    """One small synth dataset + nrsfm model reused by CLI tests."""
    root = tmp_path_factory.mktemp("pipeline")
    (root / "spec.json").write_text(json.dumps(SPEC))
    assert dispatch(["synth", "--spec", str(root / "spec.json"), "--out", str(root / "data")]) == 0
    assert (
        dispatch(
            ["nrsfm", "--input", str(root / "data"), "--bases", "1",
             "--out", str(root / "nrsfm.json"), "--mask-penalty", "0", "--seed", "1"]
        )
        == 0
    )
    return root


def test_synth_writes_manifest_and_layout(pipeline_dir):
    data = pipeline_dir / "data"
    manifest = json.loads((data / "manifest.json").read_text())
    assert manifest["command"] == "synth"
    assert "000_mask.pgm" in manifest["artifacts"]
    for stem in ("000", "005"):
        for suffix in ("_mask.pgm", "_camera.json", "_keypoints.json", "_depth.bin", "_gt.obj"):
            assert (data / f"{stem}{suffix}").exists()


def test_nrsfm_model_file_schema(pipeline_dir):
    model = json.loads((pipeline_dir / "nrsfm.json").read_text())
    assert set(model) >= {"mean_shape", "basis", "sigma2", "instances", "keypoint_names"}
    inst = model["instances"][0]
    assert set(inst) >= {"id", "camera", "z", "mirrored"}
    # mirrored copies double the instance list
    assert len(model["instances"]) % 2 == 0


def test_learn_proto_infer_mesh_eval_chain(pipeline_dir, tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    rc = dispatch(
        ["learn-proto", "--data", str(pipeline_dir / "data"), "--model",
         str(pipeline_dir / "nrsfm.json"), "-K", "2", "--out", "proto"]
    )
    assert rc == 0
    index = json.loads(Path("proto/index.json").read_text())
    assert len(index["clusters"]) == 2
    model = json.loads((pipeline_dir / "nrsfm.json").read_text())
    Path("alpha.json").write_text(json.dumps({"alpha": model["instances"][0]["z"]}))
    rc = dispatch(
        ["infer-proto", "--mask", str(pipeline_dir / "data/000_mask.pgm"), "--camera",
         str(pipeline_dir / "data/000_camera.json"), "--alpha", "alpha.json",
         "--model", "proto", "--out", "vol.bin"]
    )
    assert rc == 0
    assert Path("vol.bin").exists() and Path("vol.bin.json").exists()
    rc = dispatch(["mesh", "vol.bin", "--iso", "0", "--out", "shape.obj"])
    assert rc == 0
    rc = dispatch(
        ["eval", "--pred", "shape.obj", "--gt", str(pipeline_dir / "data/000_gt.obj"),
         "--camera", str(pipeline_dir / "data/000_camera.json"),
         "--metrics", "hausdorff,iou", "--out", "report.csv"]
    )
    assert rc == 0
    lines = Path("report.csv").read_text().strip().splitlines()
    assert lines[0] == "instance_id,metric,value"
    metrics = {line.split(",")[1] for line in lines[1:]}
    assert metrics == {"hausdorff", "iou"}


def test_learn_basis_and_fit_chain(pipeline_dir, tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    rc = dispatch(
        ["learn-basis", "--data", str(pipeline_dir / "data"), "-K", "1", "--points", "200",
         "--iters", "3", "--seed", "0", "--out", "basis.json"]
    )
    assert rc == 0
    model = json.loads(Path("basis.json").read_text())
    assert set(model) >= {"mean", "bases", "basis_norm", "delta", "neighbors", "config"}
    rc = dispatch(
        ["fit", "--mask", str(pipeline_dir / "data/001_mask.pgm"), "--camera",
         str(pipeline_dir / "data/001_camera.json"), "--model", "basis.json",
         "--out", "fit.json", "--mesh", "pts.obj", "--export", "points"]
    )
    assert rc == 0
    fit = json.loads(Path("fit.json").read_text())
    assert set(fit) >= {"alpha", "camera", "energy"}
    assert Path("pts.obj").exists()
    assert Path("fit.json.manifest.json").exists()


def test_threads_env_fallback(tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    monkeypatch.setenv("SILCARVE_THREADS", "0")
    assert dispatch(["mesh", "missing.bin", "--out", "m.obj"]) == 1  # rejected before running
    monkeypatch.setenv("SILCARVE_THREADS", "2")
    assert dispatch(["mesh", "missing.bin", "--out", "m.obj"]) == 2  # now a data error


def test_manifest_records_args_without_threads(pipeline_dir):
    manifest = json.loads((pipeline_dir / "nrsfm.json.manifest.json").read_text())
    assert "--input" in manifest["args"]
    assert "--threads" not in manifest["args"]
    assert manifest["config"]["bases"] == 1


def test_eval_unknown_metric_exits_one(pipeline_dir, tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    rc = dispatch(
        ["eval", "--pred", str(pipeline_dir / "data/000_gt.obj"), "--gt",
         str(pipeline_dir / "data/000_gt.obj"), "--camera",
         str(pipeline_dir / "data/000_camera.json"), "--metrics", "dice", "--out", "r.csv"]
    )
    assert rc == 1
