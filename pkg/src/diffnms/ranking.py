"""Best-box target assignment, the imagewise ranking loss, and AP evaluation."""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import Iterable, Sequence

import numpy as np

from .boxes import DetectionBox, GroundTruth
from .geometry import iou2d, iou3d, giou3d

__all__ = [
    "DEFAULT_DIFFICULTY_RULES",
    "Difficulty",
    "DifficultyRule",
    "ImagewiseApLoss",
    "TargetAssignment",
    "ap_loss_gradient",
    "assign_targets",
    "average_precision",
    "eval_ap_r40",
    "filter_gts",
    "imagewise_ap_loss",
    "q_match",
]

DEFAULT_BETA = 0.3


def q_match(box: DetectionBox, gt: GroundTruth) -> float:
    """Match quality between a box and a ground truth.

    2D IoU weighted by the generalized 3D IoU shifted into [0, 1]:
    q = iou2d * (1 + giou3d) / 2. Pairs without usable cuboids score 0.
    """
    if box.cuboid is None or gt.cuboid is None:
        return 0.0
    return iou2d(box.rect, gt.rect) * (1.0 + giou3d(box.cuboid, gt.cuboid)) / 2.0


@dataclass(frozen=True, eq=False)
class TargetAssignment:
    """Binary targets over boxes plus the supporting match information.

    targets[i] is 1 when box i is the best box of at least one ground truth
    and that match quality reaches beta. matched_gt[i] is the index of the
    first ground truth that selected box i, or -1. quality is the full
    (n_boxes, n_gts) match-quality matrix; DontCare columns are zero.
    """

    targets: np.ndarray
    matched_gt: np.ndarray
    quality: np.ndarray


def assign_targets(
    boxes: Sequence[DetectionBox], gts: Sequence[GroundTruth], beta: float = DEFAULT_BETA
) -> TargetAssignment:
    """Mark, per ground truth, the single best-matching box as positive.

    Each non-DontCare ground truth selects its highest-quality box (ties go to
    the lower box index); the box becomes a positive only when the quality
    reaches beta. A box maximal for several ground truths is still one
    positive and records the first ground truth that chose it.
    """
    n_boxes, n_gts = len(boxes), len(gts)
    quality = np.zeros((n_boxes, n_gts))
    for col, gt in enumerate(gts):
        if gt.dontcare:
            continue
        for row, box in enumerate(boxes):
            quality[row, col] = q_match(box, gt)
    targets = np.zeros(n_boxes, dtype=int)
    matched = np.full(n_boxes, -1, dtype=int)
    for col, gt in enumerate(gts):
        if gt.dontcare or n_boxes == 0:
            continue
        best = int(np.argmax(quality[:, col]))
        if quality[best, col] >= beta:
            targets[best] = 1
            if matched[best] < 0:
                matched[best] = col
    return TargetAssignment(targets, matched, quality)


def average_precision(rescores, targets) -> float | None:
    """AP of one image: mean precision at each positive's rank.

    Boxes are ranked by descending rescore with ties broken by the lower
    index. Returns None when the image has no positives, so callers can
    exclude it instead of counting it as zero.
    """
    r = np.asarray(rescores, dtype=float)
    t = np.asarray(targets)
    if r.shape != t.shape or r.ndim != 1:
        raise ValueError(f"rescores and targets must be matching 1-d arrays, got {r.shape} and {t.shape}")
    order = np.argsort(-r, kind="stable")
    ranked = t[order].astype(bool)
    if not ranked.any():
        return None
    cumulative = np.cumsum(ranked)
    ranks = np.flatnonzero(ranked) + 1
    return float(np.mean(cumulative[ranked] / ranks))


@dataclass(frozen=True)
class ImagewiseApLoss:
    """Value of the imagewise ranking loss plus how many images drove it."""

    value: float
    images_with_positives: int
    total_images: int

    @property
    def no_signal(self) -> bool:
        """True when every image was positive-free and the loss carries no signal."""
        return self.images_with_positives == 0


def imagewise_ap_loss(batch: Iterable[tuple[Sequence[float], Sequence[int]]]) -> ImagewiseApLoss:
    """Mean of (1 - AP) over images that contain at least one positive.

    batch yields (rescores, targets) pairs, one per image. Images without
    positives contribute nothing to the mean; if no image has positives the
    loss is 0 and the result is flagged via no_signal.
    """
    losses = []
    total = 0
    for rescores, targets in batch:
        total += 1
        ap = average_precision(rescores, targets)
        if ap is not None:
            losses.append(1.0 - ap)
    if total == 0:
        raise ValueError("at least one image is required")
    value = float(np.mean(losses)) if losses else 0.0
    return ImagewiseApLoss(value, len(losses), total)


def ap_loss_gradient(rescores, targets, margin: float = 0.0) -> np.ndarray:
    """Descent direction for the ranking loss of one image.

    Every (positive i, negative j) pair violating the margin (rescore_j +
    margin >= rescore_i) pushes i up and j down by 1 / (number of violating
    pairs), so the total update budget per image is constant. At a perfect
    ranking the gradient is exactly zero.
    """
    r = np.asarray(rescores, dtype=float)
    t = np.asarray(targets).astype(bool)
    if r.shape != t.shape or r.ndim != 1:
        raise ValueError(f"rescores and targets must be matching 1-d arrays, got {r.shape} and {t.shape}")
    grad = np.zeros(r.size)
    pos = np.flatnonzero(t)
    neg = np.flatnonzero(~t)
    if pos.size == 0 or neg.size == 0:
        return grad
    violating = r[neg][None, :] + margin >= r[pos][:, None]
    count = int(violating.sum())
    if count == 0:
        return grad
    weight = 1.0 / count
    grad[pos] -= violating.sum(axis=1) * weight
    grad[neg] += violating.sum(axis=0) * weight
    return grad


class Difficulty(str, Enum):
    EASY = "easy"
    MODERATE = "moderate"
    HARD = "hard"


@dataclass(frozen=True)
class DifficultyRule:
    """Ground-truth selection bounds: minimum pixel height, maximum occlusion
    level, and maximum truncation fraction."""

    min_height: float
    max_occlusion: int
    max_truncation: float


DEFAULT_DIFFICULTY_RULES: dict[Difficulty, DifficultyRule] = {
    Difficulty.EASY: DifficultyRule(40.0, 0, 0.15),
    Difficulty.MODERATE: DifficultyRule(25.0, 1, 0.30),
    Difficulty.HARD: DifficultyRule(25.0, 2, 0.50),
}


def filter_gts(gts: Sequence[GroundTruth], rule: DifficultyRule | None) -> list[GroundTruth]:
    """Evaluable ground truths: never DontCare, must have a cuboid, and must
    satisfy the difficulty rule when one is given."""
    out = []
    for gt in gts:
        if gt.dontcare or gt.cuboid is None:
            continue
        if rule is not None and (
            gt.height < rule.min_height
            or gt.occlusion > rule.max_occlusion
            or gt.truncation > rule.max_truncation
        ):
            continue
        out.append(gt)
    return out


_RECALL_POINTS = 40


def eval_ap_r40(
    scene_pairs: Iterable[tuple[Sequence[DetectionBox], Sequence[GroundTruth]]],
    iou_threshold: float = 0.7,
    rule: DifficultyRule | None = None,
) -> float | None:
    """AP interpolated at 40 equally spaced recall points, as a percentage.

    Within each scene, detections are matched greedily in descending-score
    order (ties to the lower index): a detection claims the unmatched ground
    truth with the highest rotated 3D IoU and is a true positive when that IoU
    reaches the threshold; each ground truth may be claimed once; everything
    else is a false positive. Precision is interpolated as the running best
    at recall >= r for r in {1/40, ..., 40/40}. Returns None when the
    difficulty filter leaves no ground truths, distinguishing "not evaluable"
    from an AP of zero.
    """
    records: list[tuple[float, bool, int, int]] = []
    total_gts = 0
    for scene_index, (dets, gts) in enumerate(scene_pairs):
        valid = filter_gts(gts, rule)
        total_gts += len(valid)
        usable = [d for d in dets if not d.dontcare]
        order = sorted(range(len(usable)), key=lambda k: (-usable[k].score, k))
        claimed = [False] * len(valid)
        for rank, k in enumerate(order):
            det = usable[k]
            best_iou, best_gt = 0.0, -1
            if det.cuboid is not None:
                for g, gt in enumerate(valid):
                    if claimed[g]:
                        continue
                    value = iou3d(det.cuboid, gt.cuboid)
                    if value > best_iou:
                        best_iou, best_gt = value, g
            hit = best_gt >= 0 and best_iou >= iou_threshold
            if hit:
                claimed[best_gt] = True
            records.append((det.score, hit, scene_index, rank))
    if total_gts == 0:
        return None
    records.sort(key=lambda rec: (-rec[0], rec[2], rec[3]))
    hits = np.array([rec[1] for rec in records], dtype=float)
    if hits.size == 0:
        return 0.0
    cumulative = np.cumsum(hits)
    ranks = np.arange(1, hits.size + 1)
    precision = cumulative / ranks
    recall = cumulative / total_gts
    total = 0.0
    for step in range(1, _RECALL_POINTS + 1):
        target = step / _RECALL_POINTS
        eligible = recall >= target
        if eligible.any():
            total += float(precision[eligible].max())
    return 100.0 * total / _RECALL_POINTS
