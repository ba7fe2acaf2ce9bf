"""JSON-lines scene serialization with lossless round-tripping.

One scene per line:

    {"id": ..., "camera"?: ..., "boxes": [...], "gts": [...], ...}

Box objects carry the rectangle corners (x1, y1, x2, y2), the cuboid center
and dimensions (cx, cy, cz, w, h, l, yaw; omitted when there is no cuboid),
the score, and optional class_conf / pred_conf. Keys the reader does not know
are preserved on the record and written back after the known ones, in their
original order, so files survive a read-write cycle unchanged. Floats are
written with the shortest representation that parses back to the same value
(Python's default), and NaN or infinite values are rejected.
"""

from __future__ import annotations

import json
import os
from typing import Iterable, Iterator

from .boxes import DetectionBox, GroundTruth, Scene
from .geometry import Cuboid3D, Rect2D

__all__ = [
    "box_from_dict",
    "box_to_dict",
    "gt_from_dict",
    "gt_to_dict",
    "iter_scenes_jsonl",
    "read_scenes_jsonl",
    "scene_from_dict",
    "scene_to_dict",
    "write_scenes_jsonl",
]

_RECT_KEYS = ("x1", "y1", "x2", "y2")
_CUBOID_KEYS = ("cx", "cy", "cz", "w", "h", "l", "yaw")


def _cuboid_to_items(cuboid: Cuboid3D | None) -> dict:
    if cuboid is None:
        return {}
    return {key: getattr(cuboid, key) for key in _CUBOID_KEYS}


def _geometry_from_dict(data: dict, where: str) -> tuple[Rect2D, Cuboid3D | None]:
    try:
        rect = Rect2D(*(float(data.pop(k)) for k in _RECT_KEYS))
    except KeyError as exc:
        raise ValueError(f"{where}: missing rectangle key {exc}") from None
    cuboid = None
    if all(k in data for k in _CUBOID_KEYS):
        cuboid = Cuboid3D(**{k: float(data.pop(k)) for k in _CUBOID_KEYS})
    return rect, cuboid


def box_to_dict(box: DetectionBox) -> dict:
    out: dict = {k: getattr(box.rect, k) for k in _RECT_KEYS}
    out.update(_cuboid_to_items(box.cuboid))
    out["score"] = box.score
    if box.class_conf is not None:
        out["class_conf"] = box.class_conf
    if box.pred_conf is not None:
        out["pred_conf"] = box.pred_conf
    out["label"] = box.label
    if box.truncation != 0.0:
        out["truncation"] = box.truncation
    if box.occlusion != 0:
        out["occlusion"] = box.occlusion
    if box.alpha != 0.0:
        out["alpha"] = box.alpha
    if box.dontcare:
        out["dontcare"] = True
    out.update(box.extra)
    return out


def box_from_dict(data: dict, where: str = "box") -> DetectionBox:
    data = dict(data)
    rect, cuboid = _geometry_from_dict(data, where)
    return DetectionBox(
        rect=rect,
        cuboid=cuboid,
        score=float(data.pop("score", 0.0)),
        class_conf=_opt_float(data.pop("class_conf", None)),
        pred_conf=_opt_float(data.pop("pred_conf", None)),
        label=str(data.pop("label", "Car")),
        truncation=float(data.pop("truncation", 0.0)),
        occlusion=int(data.pop("occlusion", 0)),
        alpha=float(data.pop("alpha", 0.0)),
        dontcare=bool(data.pop("dontcare", False)),
        extra=data,
    )


def gt_to_dict(gt: GroundTruth) -> dict:
    out: dict = {k: getattr(gt.rect, k) for k in _RECT_KEYS}
    out.update(_cuboid_to_items(gt.cuboid))
    out["label"] = gt.label
    if gt.truncation != 0.0:
        out["truncation"] = gt.truncation
    if gt.occlusion != 0:
        out["occlusion"] = gt.occlusion
    if gt.alpha != 0.0:
        out["alpha"] = gt.alpha
    if gt.dontcare:
        out["dontcare"] = True
    out.update(gt.extra)
    return out


def gt_from_dict(data: dict, where: str = "gt") -> GroundTruth:
    data = dict(data)
    rect, cuboid = _geometry_from_dict(data, where)
    return GroundTruth(
        rect=rect,
        cuboid=cuboid,
        label=str(data.pop("label", "Car")),
        truncation=float(data.pop("truncation", 0.0)),
        occlusion=int(data.pop("occlusion", 0)),
        alpha=float(data.pop("alpha", 0.0)),
        dontcare=bool(data.pop("dontcare", False)),
        extra=data,
    )


def _opt_float(value) -> float | None:
    return None if value is None else float(value)


def scene_to_dict(scene: Scene) -> dict:
    out: dict = {"id": scene.scene_id}
    if scene.camera is not None:
        out["camera"] = scene.camera
    out["boxes"] = [box_to_dict(b) for b in scene.boxes]
    out["gts"] = [gt_to_dict(g) for g in scene.gts]
    out.update(scene.extra)
    return out


def scene_from_dict(data: dict, where: str = "scene") -> Scene:
    data = dict(data)
    if "id" not in data:
        raise ValueError(f"{where}: missing scene id")
    scene_id = str(data.pop("id"))
    camera = data.pop("camera", None)
    boxes_raw = data.pop("boxes", [])
    gts_raw = data.pop("gts", [])
    if not isinstance(boxes_raw, list) or not isinstance(gts_raw, list):
        raise ValueError(f"{where}: boxes and gts must be arrays")
    boxes = [box_from_dict(b, f"{where} box {i}") for i, b in enumerate(boxes_raw)]
    gts = [gt_from_dict(g, f"{where} gt {i}") for i, g in enumerate(gts_raw)]
    return Scene(scene_id=scene_id, boxes=boxes, gts=gts, camera=camera, extra=data)


def iter_scenes_jsonl(path: str | os.PathLike) -> Iterator[Scene]:
    """Yield scenes from a JSON-lines file; malformed lines raise with their number."""
    with open(path, "r", encoding="utf-8") as handle:
        for number, line in enumerate(handle, start=1):
            if not line.strip():
                continue
            try:
                data = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ValueError(f"line {number}: invalid JSON: {exc}") from None
            if not isinstance(data, dict):
                raise ValueError(f"line {number}: expected a JSON object")
            yield scene_from_dict(data, where=f"line {number}")


def read_scenes_jsonl(path: str | os.PathLike) -> list[Scene]:
    return list(iter_scenes_jsonl(path))


def write_scenes_jsonl(path: str | os.PathLike, scenes: Iterable[Scene]) -> None:
    """Write scenes one JSON object per line; NaN and infinities are rejected."""
    with open(path, "w", encoding="utf-8", newline="\n") as handle:
        for scene in scenes:
            handle.write(json.dumps(scene_to_dict(scene), allow_nan=False, separators=(",", ":")))
            handle.write("\n")
