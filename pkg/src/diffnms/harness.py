"""Scene-level pipelines: rescoring, oracle scores, correlation, comparison.

These helpers connect the box records to the array-level NMS engine. Scenes
are processed independently, so the CLI may fan them out over a thread pool;
the NMS_THREADS environment variable caps the worker count (1 forces serial
processing) and results always come back in input order.
"""

from __future__ import annotations

import dataclasses
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, Iterable, Sequence, TypeVar

import numpy as np

from .boxes import DetectionBox, Scene
from .geometry import iou2d, iou3d, iou3d_axis_aligned, overlap_matrix
from .nms import NmsConfig, NmsVariant, RescoreResult, run_nms
from .ranking import DifficultyRule, eval_ap_r40

__all__ = [
    "ComparisonReport",
    "SCORE_MODES",
    "build_comparison",
    "combine_scores",
    "effective_scores",
    "map_scenes",
    "oracle_scores",
    "rescore_scene",
    "rescored_boxes",
    "score_iou_correlation",
    "thread_count",
]

SCORE_MODES = ("product", "class", "pred")

_T = TypeVar("_T")


def combine_scores(class_conf: float | None, pred_conf: float | None, mode: str = "product") -> float:
    """Fold the optional classification and localization confidences into one score.

    product: the product when both are present, otherwise whichever exists.
    class: the classification confidence alone. pred: the localization
    confidence alone. Asking for a missing confidence is an error.
    """
    if mode not in SCORE_MODES:
        raise ValueError(f"unknown score mode {mode!r}, expected one of {SCORE_MODES}")
    if mode == "class":
        if class_conf is None:
            raise ValueError("score mode 'class' requires class_conf")
        return float(class_conf)
    if mode == "pred":
        if pred_conf is None:
            raise ValueError("score mode 'pred' requires pred_conf")
        return float(pred_conf)
    if class_conf is not None and pred_conf is not None:
        return float(class_conf) * float(pred_conf)
    if class_conf is not None:
        return float(class_conf)
    if pred_conf is not None:
        return float(pred_conf)
    raise ValueError("score mode 'product' requires at least one confidence")


def effective_scores(boxes: Sequence[DetectionBox], score_mode: str | None) -> np.ndarray:
    """Per-box scores fed to NMS; boxes without confidences keep their raw score."""
    if score_mode is None:
        return np.array([b.score for b in boxes], dtype=float)
    values = []
    for b in boxes:
        if b.class_conf is None and b.pred_conf is None:
            values.append(b.score)
        else:
            values.append(combine_scores(b.class_conf, b.pred_conf, score_mode))
    return np.array(values, dtype=float)


def thread_count() -> int:
    """Worker count for scene fan-out, capped by the NMS_THREADS env var."""
    cap = os.environ.get("NMS_THREADS", "").strip()
    default = min(4, os.cpu_count() or 1)
    if not cap:
        return default
    try:
        value = int(cap)
    except ValueError:
        raise ValueError(f"NMS_THREADS must be an integer, got {cap!r}") from None
    if value < 1:
        raise ValueError(f"NMS_THREADS must be at least 1, got {value}")
    return min(value, default) if value <= default else value


def map_scenes(fn: Callable[[Scene], _T], scenes: Sequence[Scene]) -> list[_T]:
    """Apply fn to every scene, in parallel when allowed, preserving order."""
    workers = thread_count()
    if workers <= 1 or len(scenes) <= 1:
        return [fn(scene) for scene in scenes]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, scenes))


def rescore_scene(
    scene: Scene,
    cfg: NmsConfig,
    variant: NmsVariant,
    score_mode: str | None = None,
) -> tuple[RescoreResult, list[int]]:
    """Run one NMS variant over a scene's non-DontCare boxes.

    Returns the rescore result (indices relative to the filtered box list)
    plus the map from filtered positions back to scene.boxes positions.
    """
    index_map = [i for i, b in enumerate(scene.boxes) if not b.dontcare]
    boxes = [scene.boxes[i] for i in index_map]
    scores = effective_scores(boxes, score_mode)
    overlaps = overlap_matrix([b.rect for b in boxes])
    return run_nms(scores, overlaps, cfg, variant), index_map


def _with_score(box: DetectionBox, score: float) -> DetectionBox:
    # Keep the raw KITTI tail intact except for the score column.
    raw = box.raw_fields
    if raw is not None and len(raw) == 15:
        raw = raw[:14] + (float(score),)
    else:
        raw = None
    return dataclasses.replace(box, score=float(score), raw_fields=raw)


def rescored_boxes(
    scene: Scene,
    result: RescoreResult,
    index_map: Sequence[int],
    kept_only: bool = True,
) -> list[DetectionBox]:
    """Materialize rescored detections; by default only the surviving ones."""
    positions = result.kept if kept_only else range(len(index_map))
    return [
        _with_score(scene.boxes[index_map[int(k)]], float(result.rescores[int(k)]))
        for k in positions
    ]


def oracle_scores(scene: Scene, mode: str = "iou3d") -> Scene:
    """Replace every detection score with its best overlap against the ground truth.

    mode iou2d uses rectangle IoU, mode iou3d the rotated cuboid IoU. Scenes
    without usable ground truths get all-zero scores; DontCare ground truths
    never count.
    """
    if mode not in ("iou2d", "iou3d"):
        raise ValueError(f"unknown oracle mode {mode!r}, expected 'iou2d' or 'iou3d'")
    gts = [g for g in scene.gts if not g.dontcare]
    boxes = []
    for box in scene.boxes:
        best = 0.0
        for gt in gts:
            if mode == "iou2d":
                value = iou2d(box.rect, gt.rect)
            elif box.cuboid is None or gt.cuboid is None:
                continue
            else:
                value = iou3d(box.cuboid, gt.cuboid)
            best = max(best, value)
        boxes.append(_with_score(box, best))
    return dataclasses.replace(scene, boxes=boxes)


@dataclass(frozen=True)
class CorrelationRow:
    scene_id: str
    box_index: int
    rescore: float
    iou3d_rotated: float
    iou3d_axis_aligned: float


@dataclass(frozen=True)
class CorrelationResult:
    """Pearson correlation between kept rescores and matched-gt 3D IoU.

    coefficient is None when fewer than two usable rows exist or either
    column has zero variance. Rows carry both the rotated and the
    axis-aligned IoU against the same matched ground truth; the coefficient
    is computed on the rotated column.
    """

    coefficient: float | None
    rows: list[CorrelationRow]


def _pearson(x: np.ndarray, y: np.ndarray) -> float | None:
    if x.size < 2:
        return None
    dx = x - x.mean()
    dy = y - y.mean()
    denom = float(np.sqrt(np.dot(dx, dx) * np.dot(dy, dy)))
    if denom == 0.0:
        return None
    return float(np.dot(dx, dy) / denom)


def score_iou_correlation(
    scenes: Sequence[Scene],
    cfg: NmsConfig,
    variant: NmsVariant,
    score_mode: str | None = None,
) -> CorrelationResult:
    """Correlate post-NMS rescores with each kept box's best ground-truth IoU3D.

    Kept boxes are matched to the ground truth with the highest rotated 3D
    IoU; boxes in scenes without usable ground truths (or without a cuboid)
    are excluded since they have nothing to match.
    """

    def one_scene(scene: Scene) -> list[CorrelationRow]:
        gts = [g for g in scene.gts if not g.dontcare and g.cuboid is not None]
        if not gts:
            return []
        result, index_map = rescore_scene(scene, cfg, variant, score_mode)
        rows = []
        for k in result.kept:
            box = scene.boxes[index_map[int(k)]]
            if box.cuboid is None:
                continue
            values = [iou3d(box.cuboid, gt.cuboid) for gt in gts]
            best = int(np.argmax(values))
            rows.append(
                CorrelationRow(
                    scene_id=scene.scene_id,
                    box_index=index_map[int(k)],
                    rescore=float(result.rescores[int(k)]),
                    iou3d_rotated=float(values[best]),
                    iou3d_axis_aligned=iou3d_axis_aligned(box.cuboid, gts[best].cuboid),
                )
            )
        return rows

    rows = [row for chunk in map_scenes(one_scene, scenes) for row in chunk]
    coefficient = _pearson(
        np.array([r.rescore for r in rows]), np.array([r.iou3d_rotated for r in rows])
    )
    return CorrelationResult(coefficient, rows)


@dataclass(frozen=True)
class ComparisonReport:
    """Side-by-side summary of several NMS variants over the same scenes.

    kept_mean and seconds_per_scene are keyed by variant value; ap_r40 is the
    unfiltered AP|R40 at the report's IoU threshold (None without ground
    truths); jaccard holds the mean per-scene kept-set agreement for each
    variant pair.
    """

    variants: tuple[str, ...]
    scenes: int
    iou_threshold: float
    kept_mean: dict[str, float]
    seconds_per_scene: dict[str, float]
    ap_r40: dict[str, float | None]
    jaccard: dict[tuple[str, str], float]

    def rows(self) -> list[list[str]]:
        out: list[list[str]] = [["kind", "name", "value", "detail"]]
        for v in self.variants:
            ap = self.ap_r40[v]
            out.append(["kept_mean", v, f"{self.kept_mean[v]:.6g}", ""])
            out.append(["seconds_per_scene", v, f"{self.seconds_per_scene[v]:.6g}", ""])
            out.append(["ap_r40", v, "" if ap is None else f"{ap:.6f}", f"iou={self.iou_threshold:g}"])
        for (a, b), value in self.jaccard.items():
            out.append(["jaccard", f"{a}|{b}", f"{value:.6f}", ""])
        return out

    def table(self) -> str:
        lines = [f"variants compared over {self.scenes} scenes (IoU {self.iou_threshold:g})"]
        for v in self.variants:
            ap = self.ap_r40[v]
            ap_text = "n/a" if ap is None else f"{ap:.2f}"
            lines.append(
                f"  {v:<16} kept/scene {self.kept_mean[v]:8.2f}   "
                f"ms/scene {1000.0 * self.seconds_per_scene[v]:8.3f}   AP|R40 {ap_text}"
            )
        for (a, b), value in self.jaccard.items():
            lines.append(f"  agreement {a} vs {b}: {value:.4f}")
        return "\n".join(lines)


def _jaccard(a: set[int], b: set[int]) -> float:
    if not a and not b:
        return 1.0
    return len(a & b) / len(a | b)


def build_comparison(
    scenes: Sequence[Scene],
    cfg: NmsConfig,
    variants: Sequence[NmsVariant],
    score_mode: str | None = None,
    iou_threshold: float = 0.7,
    rule: DifficultyRule | None = None,
) -> ComparisonReport:
    """Run every variant over every scene and summarize the differences."""
    names = [NmsVariant(v).value for v in variants]
    kept_sets: dict[str, list[set[int]]] = {name: [] for name in names}
    kept_boxes: dict[str, list[tuple[list[DetectionBox], list]]] = {name: [] for name in names}
    seconds: dict[str, float] = {name: 0.0 for name in names}
    for scene in scenes:
        for variant, name in zip(variants, names):
            start = time.perf_counter()
            result, index_map = rescore_scene(scene, cfg, variant, score_mode)
            seconds[name] += time.perf_counter() - start
            kept_sets[name].append({index_map[int(k)] for k in result.kept})
            kept_boxes[name].append((rescored_boxes(scene, result, index_map), scene.gts))
    n = max(len(scenes), 1)
    kept_mean = {name: float(np.mean([len(s) for s in kept_sets[name]])) if scenes else 0.0 for name in names}
    ap = {name: eval_ap_r40(kept_boxes[name], iou_threshold, rule) for name in names}
    jaccard: dict[tuple[str, str], float] = {}
    for i, a in enumerate(names):
        for b in names[i + 1 :]:
            pairs = zip(kept_sets[a], kept_sets[b])
            jaccard[(a, b)] = float(np.mean([_jaccard(x, y) for x, y in pairs])) if scenes else 1.0
    return ComparisonReport(
        variants=tuple(names),
        scenes=len(scenes),
        iou_threshold=iou_threshold,
        kept_mean=kept_mean,
        seconds_per_scene={name: seconds[name] / n for name in names},
        ap_r40=ap,
        jaccard=jaccard,
    )
