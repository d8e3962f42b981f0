"""Structured text documents for scenes, states, configs and reports.

Documents are JSON objects carrying ``format_version: 1`` and a ``kind``.
Arrays are stored as ``{"dtype", "shape", "data"}`` with ``data`` flattened
in C order; reals are written with 17 significant digits so they read back
bit-for-bit. Output is deterministic: the same object always produces the
same bytes.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, fields
from pathlib import Path

import numpy as np

from .bev import BevFeatureGrid
from .depth import CategoricalDepthMap, DepthBinSpec, GroundTruthDepthMap
from .errors import DomainError, FormatError
from .fit import FitConfig
from .geometry import BevSpec, Box3D, CameraModel, PointCloud
from .losses import LossWeights
from .synthetic import Scene, SceneSpec, StudentState

FORMAT_VERSION = 1


# -- writing --------------------------------------------------------------


def _float(x: float) -> str:
    if math.isnan(x):
        return "NaN"
    if math.isinf(x):
        return "Infinity" if x > 0 else "-Infinity"
    s = format(x, ".17g")
    return s if any(ch in s for ch in ".en") else s + ".0"


def _scalar(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return "true" if x else "false"
    if x is None:
        return "null"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return _float(float(x))
    if isinstance(x, str):
        return json.dumps(x)
    raise TypeError(f"cannot serialize {type(x).__name__}")


def _array_doc(arr: np.ndarray) -> dict:
    arr = np.asarray(arr)
    if arr.dtype == bool:
        dtype, data = "bool", [int(v) for v in arr.ravel()]
    elif np.issubdtype(arr.dtype, np.integer):
        dtype, data = "int64", [int(v) for v in arr.ravel()]
    else:
        dtype, data = "float64", [float(v) for v in arr.astype(np.float64).ravel()]
    return {"dtype": dtype, "shape": list(arr.shape), "data": data}


def _emit(obj, level: int) -> str:
    pad, inner = " " * level, " " * (level + 1)
    if isinstance(obj, np.ndarray):
        obj = _array_doc(obj)
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = [f"{inner}{json.dumps(str(k))}: {_emit(v, level + 1)}" for k, v in obj.items()]
        return "{\n" + ",\n".join(items) + "\n" + pad + "}"
    if isinstance(obj, (list, tuple)):
        if all(not isinstance(v, (dict, list, tuple, np.ndarray)) for v in obj):
            return "[" + ", ".join(_scalar(v) for v in obj) + "]"
        items = [inner + _emit(v, level + 1) for v in obj]
        return "[\n" + ",\n".join(items) + "\n" + pad + "]"
    return _scalar(obj)


def dumps(doc: dict) -> str:
    return _emit(doc, 0) + "\n"


def write_document(path, kind: str, body: dict) -> Path:
    doc = {"format_version": FORMAT_VERSION, "kind": kind, **body}
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(dumps(doc), encoding="utf-8")
    return path


# -- reading --------------------------------------------------------------


def read_document(path, kind: str | None = None) -> dict:
    path = Path(path)
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise FormatError(f"file not found: {path}", field=str(path)) from None
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: invalid document ({exc.msg} at line {exc.lineno})", field="<document>") from None
    if not isinstance(doc, dict):
        raise FormatError(f"{path}: top level must be an object", field="<document>")
    if doc.get("format_version") != FORMAT_VERSION:
        raise FormatError(f"{path}: unsupported format_version {doc.get('format_version')!r}", field="format_version")
    if kind is not None and doc.get("kind") != kind:
        raise FormatError(f"{path}: expected kind {kind!r}, got {doc.get('kind')!r}", field="kind")
    return doc


def _get(doc, key, path):
    if not isinstance(doc, dict) or key not in doc:
        raise FormatError(f"missing field {path}{key}", field=f"{path}{key}")
    return doc[key]


def _array(doc, key, path="") -> np.ndarray:
    node = _get(doc, key, path)
    where = f"{path}{key}"
    try:
        dtype = {"float64": np.float64, "int64": np.int64, "bool": bool}[node["dtype"]]
        shape = tuple(int(s) for s in node["shape"])
        arr = np.array(node["data"], dtype=np.float64 if dtype is bool else dtype)
        return arr.reshape(shape).astype(dtype)
    except (KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"malformed array {where}: {exc}", field=where) from None


def _number(doc, key, path="", cast=float):
    value = _get(doc, key, path)
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise FormatError(f"field {path}{key} must be a number", field=f"{path}{key}")
    return cast(value)


def _build(cls, doc, path, nested=None):
    """Instantiate a dataclass from ``doc``; absent keys keep their defaults."""
    if not isinstance(doc, dict):
        raise FormatError(f"{path or 'document'} must be an object", field=path.rstrip(".") or "<document>")
    known = {f.name: f for f in fields(cls)}
    kwargs = {}
    for key, value in doc.items():
        if key in ("format_version", "kind"):
            continue
        if key not in known:
            raise FormatError(f"unknown field {path}{key}", field=f"{path}{key}")
        if nested and key in nested:
            value = nested[key](value, f"{path}{key}.")
        elif isinstance(value, list):
            value = tuple(value)
        kwargs[key] = value
    try:
        return cls(**kwargs)
    except TypeError as exc:
        raise FormatError(f"{path or 'document'}: {exc}", field=path.rstrip(".") or "<document>") from None


# -- specs and configs ----------------------------------------------------


def scene_spec_to_doc(spec: SceneSpec) -> dict:
    body = asdict(spec)
    body["bins"] = asdict(spec.bins)
    body["bev"] = asdict(spec.bev)
    return {k: list(v) if isinstance(v, tuple) else v for k, v in body.items()}


def scene_spec_from_doc(doc, path="") -> SceneSpec:
    return _build(SceneSpec, doc, path, {
        "bins": lambda d, p: _build(DepthBinSpec, d, p),
        "bev": lambda d, p: _build(BevSpec, d, p),
    })


def fit_config_to_doc(cfg: FitConfig) -> dict:
    return asdict(cfg)


def fit_config_from_doc(doc, path="") -> FitConfig:
    return _build(FitConfig, doc, path, {"weights": lambda d, p: _build(LossWeights, d, p)})


# -- scenes and states ----------------------------------------------------


def scene_to_doc(scene: Scene) -> dict:
    return {
        "spec": scene_spec_to_doc(scene.spec),
        "boxes": [{"center": b.center, "size": b.size, "yaw": b.yaw} for b in scene.boxes],
        "cameras": [
            {"fx": c.fx, "fy": c.fy, "cx": c.cx, "cy": c.cy, "rotation": c.rotation,
             "translation": c.translation, "width": c.width, "height": c.height}
            for c in scene.cameras
        ],
        "cloud": scene.cloud.points,
        "teacher_bev": scene.teacher_bev.values,
        "gt_maps": [{"depth": g.depth, "valid": g.valid} for g in scene.gt_maps],
    }


def _list(doc, key, path=""):
    value = _get(doc, key, path)
    if not isinstance(value, list):
        raise FormatError(f"field {path}{key} must be a list", field=f"{path}{key}")
    return value


def scene_from_doc(doc) -> Scene:
    spec = scene_spec_from_doc(_get(doc, "spec", ""), "spec.")
    boxes, cameras, gt_maps = [], [], []
    for i, b in enumerate(_list(doc, "boxes")):
        p = f"boxes[{i}]."
        boxes.append(Box3D(_array(b, "center", p), _array(b, "size", p), _number(b, "yaw", p)))
    for i, c in enumerate(_list(doc, "cameras")):
        p = f"cameras[{i}]."
        cameras.append(CameraModel(
            _number(c, "fx", p), _number(c, "fy", p), _number(c, "cx", p), _number(c, "cy", p),
            _array(c, "rotation", p), _array(c, "translation", p),
            _number(c, "width", p, int), _number(c, "height", p, int),
        ))
    for i, g in enumerate(_list(doc, "gt_maps")):
        p = f"gt_maps[{i}]."
        gt_maps.append(GroundTruthDepthMap(_array(g, "depth", p), _array(g, "valid", p)))
    if len(gt_maps) != len(cameras):
        raise FormatError("gt_maps and cameras differ in length", field="gt_maps")
    teacher = BevFeatureGrid(spec.bev, _array(doc, "teacher_bev"))
    return Scene(spec, tuple(boxes), PointCloud(_array(doc, "cloud")), tuple(cameras), teacher, tuple(gt_maps))


def state_to_doc(state: StudentState) -> dict:
    return {"depth_maps": [m.probs for m in state.depth_maps], "bev": state.bev.values}


def state_from_doc(doc, bev_spec: BevSpec) -> StudentState:
    maps = []
    for i, node in enumerate(_list(doc, "depth_maps")):
        probs = _array({"m": node}, "m", f"depth_maps[{i}]")
        maps.append(CategoricalDepthMap(probs))
    return StudentState(tuple(maps), BevFeatureGrid(bev_spec, _array(doc, "bev")))


# -- convenience wrappers -------------------------------------------------


def save_scene(path, scene):
    return write_document(path, "scene", scene_to_doc(scene))


def load_scene(path) -> Scene:
    return _checked(lambda: scene_from_doc(read_document(path, "scene")), path)


def save_state(path, state):
    return write_document(path, "student_state", state_to_doc(state))


def load_state(path, bev_spec: BevSpec) -> StudentState:
    return _checked(lambda: state_from_doc(read_document(path, "student_state"), bev_spec), path)


def load_scene_spec(path) -> SceneSpec:
    return _checked(lambda: scene_spec_from_doc(read_document(path, "scene_spec")), path)


def load_fit_config(path) -> FitConfig:
    return _checked(lambda: fit_config_from_doc(read_document(path, "fit_config")), path)


def load_depth_values(path):
    """``(depth, valid)`` arrays from a ``depth_values`` document."""
    def read():
        doc = read_document(path, "depth_values")
        depth = _array(doc, "depth")
        valid = _array(doc, "valid") if "valid" in doc else np.ones(depth.shape, dtype=bool)
        if valid.shape != depth.shape:
            raise FormatError("valid mask shape differs from depth", field="valid")
        return depth, valid.astype(bool)

    return _checked(read, path)


def _checked(fn, path):
    """Values rejected by the domain types become format errors of the file."""
    try:
        return fn()
    except DomainError as exc:
        raise FormatError(f"{path}: {exc}", field="<document>") from None
