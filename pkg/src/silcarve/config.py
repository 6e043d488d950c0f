"""Run configuration: schema-checked key/value configs per subcommand.

Unknown keys are a hard error so typos cannot silently fall back to
defaults. Precedence is flags > config file > defaults; the resolved
values are echoed into the run manifest.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

from .errors import UsageError
from .fileio import load_json


@dataclass(frozen=True)
class Field:
    type: type
    default: object = None
    check: object = None
    describe: str = ""


def _positive(x):
    return x > 0


def _non_negative(x):
    return x >= 0


SCHEMAS = {
    "synth": {
        "seed": Field(int, None, _non_negative, "override the spec seed"),
    },
    "nrsfm": {
        "bases": Field(int, 2, _non_negative, "deformation basis count"),
        "mask_penalty": Field(float, 10.0, _non_negative, "in-mask hinge weight"),
        "max_iters": Field(int, 300, _positive, "EM iteration cap"),
        "tol": Field(float, 1e-6, _positive, "relative log-likelihood tolerance"),
        "mirror": Field(bool, True, None, "augment with mirrored instances"),
        "seed": Field(int, 0, _non_negative, "basis initialization seed"),
    },
    "learn-proto": {
        "K": Field(int, 4, _positive, "visual cluster count"),
        "neg_trunc": Field(float, None, None, "lower truncation (default -2 voxels)"),
        "view_thresh": Field(float, 20.0, _non_negative, "view grouping angle, degrees"),
        "grid_resolution": Field(int, 64, lambda x: x >= 2, "voxels per axis"),
        "grid_margin": Field(float, 2.2, _positive, "grid side over shape diameter"),
        "blend": Field(float, None, _positive, "fixed blend weight (default 1/cluster size)"),
        "seed": Field(int, 0, _non_negative, "clustering seed"),
    },
    "infer-proto": {
        "neg_trunc": Field(float, None, None, "lower truncation (default -2 voxels)"),
    },
    "learn-basis": {
        "K": Field(int, 2, _non_negative, "deformation basis count"),
        "points": Field(int, 1500, lambda x: x >= 4, "model point count"),
        "iters": Field(int, 40, _positive, "outer iterations"),
        "inner_steps": Field(int, 4, _positive, "subgradient steps per outer iteration"),
        "m_cover": Field(int, 4, _positive, "neighbor count in coverage terms"),
        "w_sil": Field(float, 1.0, _non_negative, "silhouette consistency weight"),
        "w_cover": Field(float, 1.0, _non_negative, "silhouette coverage weight"),
        "w_keypoint": Field(float, 1.0, _non_negative, "keypoint consistency weight"),
        "w_local": Field(float, 0.5, _non_negative, "local rigidity weight"),
        "w_normal": Field(float, 0.1, _non_negative, "normal smoothness weight"),
        "w_reg": Field(float, 0.01, _non_negative, "deformation magnitude weight"),
        "grid_resolution": Field(int, 64, lambda x: x >= 2, "hull init voxels per axis"),
        "seed": Field(int, 0, _non_negative, "initialization seed"),
    },
    "fit": {
        "iters": Field(int, 25, _positive, "fit iterations"),
        "camera_steps": Field(int, 4, _non_negative, "camera steps per iteration"),
        "m_cover": Field(int, 4, _positive, "neighbor count in coverage terms"),
        "w_sil": Field(float, 1.0, _non_negative, "silhouette consistency weight"),
        "w_cover": Field(float, 1.0, _non_negative, "silhouette coverage weight"),
        "w_normal": Field(float, 0.1, _non_negative, "normal smoothness weight"),
        "w_reg": Field(float, 0.01, _non_negative, "deformation magnitude weight"),
        "fit_scale": Field(bool, True, None, "refine camera scale"),
        "fit_rotation": Field(bool, True, None, "refine camera rotation"),
        "fit_translation": Field(bool, True, None, "refine camera translation"),
        "export": Field(str, "points", lambda x: x in ("points", "mesh"), "mesh export mode"),
    },
    "mesh": {
        "iso": Field(float, 0.0, None, "level set to extract"),
    },
    "eval": {
        "metrics": Field(str, "hausdorff,zmae,iou", None, "comma-separated metric list"),
        "samples": Field(int, 10000, lambda x: x >= 100, "surface samples per mesh"),
        "width": Field(int, 128, lambda x: x >= 8, "render width for depth metrics"),
        "height": Field(int, 128, lambda x: x >= 8, "render height for depth metrics"),
        "splat": Field(float, None, _positive, "point splat radius, pixels"),
        "seed": Field(int, 0, _non_negative, "surface sampling seed"),
    },
}


@dataclass(frozen=True)
class RunConfig:
    command: str
    values: dict

    def __getitem__(self, key):
        return self.values[key]

    def to_json_dict(self) -> dict:
        return dict(self.values)


def check_values(command: str, raw: dict, partial: bool = False) -> dict:
    """Validate a raw key/value mapping against a subcommand schema."""
    if command not in SCHEMAS:
        raise UsageError(f"unknown subcommand {command!r}")
    schema = SCHEMAS[command]
    out = {}
    for key, value in raw.items():
        if key not in schema:
            raise UsageError(f"unknown config key: {command}.{key}")
        field = schema[key]
        if value is None:
            out[key] = None
            continue
        if field.type is float and isinstance(value, int) and not isinstance(value, bool):
            value = float(value)
        if field.type is bool and not isinstance(value, bool):
            raise UsageError(f"config key {command}.{key} must be a boolean")
        if not isinstance(value, field.type) or isinstance(value, bool) and field.type is not bool:
            raise UsageError(
                f"config key {command}.{key} must be {field.type.__name__}, "
                f"got {type(value).__name__}"
            )
        if field.check is not None and not field.check(value):
            raise UsageError(f"config key {command}.{key} is out of range: {value!r}")
        out[key] = value
    if partial:
        return out
    resolved = {key: field.default for key, field in schema.items()}
    resolved.update(out)
    return resolved


def validate_config(path, command: str) -> RunConfig:
    """Schema-check a JSON config file and materialize all defaults."""
    file = Path(path)
    if not file.exists():
        raise UsageError(f"config file {path} does not exist")
    raw = load_json(file)
    if not isinstance(raw, dict):
        raise UsageError(f"config file {path} must hold a JSON object")
    return RunConfig(command, check_values(command, raw))


def resolve(command: str, file_path=None, overrides=None) -> RunConfig:
    """Defaults, overlaid by a config file, overlaid by flag overrides."""
    values = {key: field.default for key, field in SCHEMAS[command].items()}
    if file_path is not None:
        file = Path(file_path)
        if not file.exists():
            raise UsageError(f"config file {file_path} does not exist")
        raw = load_json(file)
        if not isinstance(raw, dict):
            raise UsageError(f"config file {file_path} must hold a JSON object")
        values.update(check_values(command, raw, partial=True))
    if overrides:
        clean = {k: v for k, v in overrides.items() if v is not None}
        values.update(check_values(command, clean, partial=True))
    return RunConfig(command, values)
