"""Seeded synthetic scenes: separated ground truths with jittered proposals.

Scenes are deterministic functions of the configuration; the per-scene
generator is seeded with (seed, scene index), so any scene can be regenerated
independently and two runs with the same configuration produce identical
streams.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .boxes import DetectionBox, GroundTruth, Scene
from .geometry import Cuboid3D, Rect2D, iou2d, iou3d, overlap_matrix

__all__ = ["SyntheticConfig", "generate_synthetic", "random_instance", "rect_from_cuboid"]


@dataclass(frozen=True)
class SyntheticConfig:
    """Knobs for the generator.

    Ground truths are placed so that no two image rectangles overlap above
    max_placement_iou and bird's-eye centers stay min_separation apart.
    Each object gets proposals_per_object proposals: jittered copies whose
    centers move by Normal(0, center_jitter) meters and whose dimensions
    scale by exp(Normal(0, size_jitter)). A proposal's score is its true
    rotated 3D IoU with its own ground truth plus Normal(0, score_noise),
    clamped to [0, 1]; with zero jitter and zero noise every proposal
    duplicates its ground truth with score 1. When exact_first is set the
    first proposal of each object is always the unjittered copy. Image
    rectangles are the rotated-footprint bounds mapped through image_scale.
    """

    seed: int = 0
    num_scenes: int = 1
    num_objects: int = 10
    proposals_per_object: int = 20
    center_jitter: float = 0.3
    size_jitter: float = 0.05
    score_noise: float = 0.0
    exact_first: bool = True
    image_scale: float = 10.0
    max_placement_iou: float = 0.0
    min_separation: float = 8.0
    placement_attempts: int = 500

    def __post_init__(self) -> None:
        if self.num_scenes < 0 or self.num_objects < 1 or self.proposals_per_object < 1:
            raise ValueError("num_scenes must be >= 0 and object/proposal counts >= 1")
        for name in ("center_jitter", "size_jitter", "score_noise"):
            if getattr(self, name) < 0.0:
                raise ValueError(f"{name} must be non-negative")
        if self.image_scale <= 0.0 or self.min_separation < 0.0 or self.placement_attempts < 1:
            raise ValueError("image_scale must be positive, min_separation >= 0, placement_attempts >= 1")
        if not 0.0 <= self.max_placement_iou < 1.0:
            raise ValueError(f"max_placement_iou must lie in [0, 1), got {self.max_placement_iou}")


def rect_from_cuboid(cuboid: Cuboid3D, image_scale: float = 10.0, x_offset: float = 40.0) -> Rect2D:
    """Image rectangle of a cuboid: rotated footprint bounds, shifted and scaled.

    The synthetic "camera" is a top view, so the rectangle tracks the true
    footprint and stays consistent with the 3D geometry under jitter.
    """
    xs = [p[0] for p in cuboid.bev_footprint().vertices]
    zs = [p[1] for p in cuboid.bev_footprint().vertices]
    return Rect2D(
        (min(xs) + x_offset) * image_scale,
        min(zs) * image_scale,
        (max(xs) + x_offset) * image_scale,
        max(zs) * image_scale,
    )


def _sample_gt_cuboid(rng: np.random.Generator) -> Cuboid3D:
    return Cuboid3D(
        cx=rng.uniform(-25.0, 25.0),
        cy=rng.uniform(0.6, 1.1),
        cz=rng.uniform(8.0, 55.0),
        w=rng.uniform(1.5, 1.9),
        h=rng.uniform(1.3, 1.8),
        l=rng.uniform(3.4, 4.6),
        yaw=rng.uniform(-math.pi, math.pi),
    )


def _place_ground_truths(rng: np.random.Generator, cfg: SyntheticConfig) -> list[Cuboid3D]:
    cuboids: list[Cuboid3D] = []
    rects: list[Rect2D] = []
    for index in range(cfg.num_objects):
        for _ in range(cfg.placement_attempts):
            cand = _sample_gt_cuboid(rng)
            rect = rect_from_cuboid(cand, cfg.image_scale)
            far_enough = all(
                math.hypot(cand.cx - c.cx, cand.cz - c.cz) >= cfg.min_separation for c in cuboids
            )
            if far_enough and all(iou2d(rect, r) <= cfg.max_placement_iou for r in rects):
                cuboids.append(cand)
                rects.append(rect)
                break
        else:
            raise ValueError(
                f"could not place object {index} after {cfg.placement_attempts} attempts; "
                "lower num_objects or min_separation"
            )
    return cuboids


def _jitter(rng: np.random.Generator, gt: Cuboid3D, cfg: SyntheticConfig) -> Cuboid3D:
    return Cuboid3D(
        cx=gt.cx + rng.normal(0.0, cfg.center_jitter),
        cy=gt.cy + rng.normal(0.0, cfg.center_jitter / 2.0),
        cz=gt.cz + rng.normal(0.0, cfg.center_jitter),
        w=gt.w * math.exp(rng.normal(0.0, cfg.size_jitter)),
        h=gt.h * math.exp(rng.normal(0.0, cfg.size_jitter)),
        l=gt.l * math.exp(rng.normal(0.0, cfg.size_jitter)),
        yaw=gt.yaw,
    )


def generate_synthetic(cfg: SyntheticConfig) -> list[Scene]:
    """Generate the configured number of scenes, deterministically."""
    scenes = []
    for index in range(cfg.num_scenes):
        rng = np.random.default_rng([cfg.seed, index])
        gt_cuboids = _place_ground_truths(rng, cfg)
        gts = [
            GroundTruth(rect=rect_from_cuboid(c, cfg.image_scale), cuboid=c)
            for c in gt_cuboids
        ]
        boxes: list[DetectionBox] = []
        for gt_cuboid in gt_cuboids:
            for j in range(cfg.proposals_per_object):
                if j == 0 and cfg.exact_first:
                    proposal = gt_cuboid
                else:
                    proposal = _jitter(rng, gt_cuboid, cfg)
                true_iou = iou3d(proposal, gt_cuboid)
                score = float(np.clip(true_iou + rng.normal(0.0, cfg.score_noise), 0.0, 1.0))
                boxes.append(
                    DetectionBox(
                        rect=rect_from_cuboid(proposal, cfg.image_scale),
                        cuboid=proposal,
                        score=score,
                    )
                )
        scenes.append(Scene(scene_id=f"synth-{cfg.seed}-{index:04d}", boxes=boxes, gts=gts))
    return scenes


def random_instance(rng: np.random.Generator, n_boxes: int) -> tuple[np.ndarray, np.ndarray]:
    """Random (scores, overlap matrix) pair with a realistic overlap spread.

    Rectangles are sampled around a few cluster centers so the matrix mixes
    heavy, partial, and zero overlaps; scores are uniform in [0.01, 0.99].
    """
    if n_boxes == 0:
        return np.zeros(0), np.zeros((0, 0))
    n_clusters = max(1, n_boxes // 4)
    centers = rng.uniform(0.0, 120.0, size=(n_clusters, 2))
    rects = []
    for _ in range(n_boxes):
        cx, cy = centers[rng.integers(n_clusters)] + rng.normal(0.0, 5.0, size=2)
        w, h = rng.uniform(8.0, 22.0, size=2)
        rects.append(Rect2D(cx - w / 2.0, cy - h / 2.0, cx + w / 2.0, cy + h / 2.0))
    scores = rng.uniform(0.01, 0.99, size=n_boxes)
    return scores, overlap_matrix(rects)
