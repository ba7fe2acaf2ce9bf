"""Overlap geometry for axis-aligned rectangles and upright 3D cuboids.

All measures are pure functions of immutable inputs. Generalized IoU variants
penalize the empty space inside the smallest enclosing (hull) region, so they
stay informative for non-intersecting boxes where plain IoU is zero.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

__all__ = [
    "ConvexPolygon",
    "Cuboid3D",
    "Rect2D",
    "clip_convex",
    "giou2d_bev",
    "giou3d",
    "iou2d",
    "iou3d",
    "iou3d_axis_aligned",
    "overlap_matrix",
    "rotated_bev_intersection_area",
]

# Clipped-polygon vertices closer than this are merged into one.
_VERTEX_MERGE_TOL = 1e-9


def _require_finite(obj: object, names: Sequence[str]) -> None:
    for name in names:
        value = getattr(obj, name)
        if not math.isfinite(value):
            raise ValueError(f"{type(obj).__name__}.{name} must be finite, got {value!r}")


@dataclass(frozen=True)
class Rect2D:
    """Axis-aligned rectangle with corners (x1, y1) and (x2, y2)."""

    x1: float
    y1: float
    x2: float
    y2: float

    def __post_init__(self) -> None:
        _require_finite(self, ("x1", "y1", "x2", "y2"))
        if self.x1 > self.x2 or self.y1 > self.y2:
            raise ValueError(
                "Rect2D corners must satisfy x1 <= x2 and y1 <= y2, got "
                f"({self.x1}, {self.y1}, {self.x2}, {self.y2})"
            )

    @property
    def width(self) -> float:
        return self.x2 - self.x1

    @property
    def height(self) -> float:
        return self.y2 - self.y1

    @property
    def area(self) -> float:
        return self.width * self.height


@dataclass(frozen=True)
class Cuboid3D:
    """Upright cuboid in camera coordinates.

    (cx, cy, cz) is the geometric center in meters. h is the vertical extent
    along y, while l and w span the footprint in the x-z ground plane; at
    yaw = 0 the l dimension runs along x and the w dimension along z. yaw
    rotates the footprint about the vertical axis and enters all rotated
    measures through its sine and cosine, so any finite value is accepted.

    Zero-sized (degenerate) cuboids are valid inputs; every overlap measure
    treats them as empty rather than raising.
    """

    cx: float
    cy: float
    cz: float
    w: float
    h: float
    l: float
    yaw: float

    def __post_init__(self) -> None:
        _require_finite(self, ("cx", "cy", "cz", "w", "h", "l", "yaw"))
        if self.w < 0 or self.h < 0 or self.l < 0:
            raise ValueError(f"Cuboid3D dimensions must be non-negative, got w={self.w}, h={self.h}, l={self.l}")

    @property
    def volume(self) -> float:
        return self.w * self.h * self.l

    @property
    def footprint_area(self) -> float:
        return self.w * self.l

    @property
    def vertical_extent(self) -> tuple[float, float]:
        half = self.h / 2.0
        return (self.cy - half, self.cy + half)

    def bev_footprint(self) -> "ConvexPolygon":
        """Yaw-rotated footprint in the x-z plane, counter-clockwise."""
        cos_y, sin_y = math.cos(self.yaw), math.sin(self.yaw)
        hl, hw = self.l / 2.0, self.w / 2.0
        corners = ((hl, hw), (-hl, hw), (-hl, -hw), (hl, -hw))
        return ConvexPolygon(
            tuple(
                (self.cx + cos_y * u - sin_y * v, self.cz + sin_y * u + cos_y * v)
                for u, v in corners
            )
        )

    def bev_aabb(self) -> tuple[float, float, float, float]:
        """Axis-aligned footprint extents (x1, z1, x2, z2) with the yaw discarded."""
        hl, hw = self.l / 2.0, self.w / 2.0
        return (self.cx - hl, self.cz - hw, self.cx + hl, self.cz + hw)


@dataclass(frozen=True)
class ConvexPolygon:
    """Convex polygon as an ordered counter-clockwise vertex tuple; may be empty."""

    vertices: tuple[tuple[float, float], ...] = ()

    @property
    def area(self) -> float:
        pts = self.vertices
        if len(pts) < 3:
            return 0.0
        acc = 0.0
        for i, (x1, y1) in enumerate(pts):
            x2, y2 = pts[(i + 1) % len(pts)]
            acc += x1 * y2 - x2 * y1
        # Rounding can push a sliver polygon marginally negative.
        return max(0.5 * acc, 0.0)


def _merge_close_vertices(points: list[tuple[float, float]]) -> tuple[tuple[float, float], ...]:
    out: list[tuple[float, float]] = []
    for pt in points:
        if out and abs(pt[0] - out[-1][0]) <= _VERTEX_MERGE_TOL and abs(pt[1] - out[-1][1]) <= _VERTEX_MERGE_TOL:
            continue
        out.append(pt)
    while len(out) > 1 and abs(out[0][0] - out[-1][0]) <= _VERTEX_MERGE_TOL and abs(out[0][1] - out[-1][1]) <= _VERTEX_MERGE_TOL:
        out.pop()
    return tuple(out)


def clip_convex(subject: ConvexPolygon, clip: ConvexPolygon) -> ConvexPolygon:
    """Intersection of two convex polygons by sequential half-plane clipping.

    Both polygons must wind counter-clockwise. Points on a clip edge count as
    inside, so clipping a polygon against itself is a no-op. An empty result
    is returned as a polygon with no vertices.
    """
    output = list(subject.vertices)
    clip_pts = clip.vertices
    if len(output) < 3 or len(clip_pts) < 3:
        return ConvexPolygon(())
    for k, (px, py) in enumerate(clip_pts):
        if len(output) < 3:
            return ConvexPolygon(())
        qx, qy = clip_pts[(k + 1) % len(clip_pts)]
        ex, ey = qx - px, qy - py
        incoming = output
        # cross(edge, point - edge start); >= 0 means on or left of the edge.
        sides = [ex * (y - py) - ey * (x - px) for x, y in incoming]
        output = []
        for i, start in enumerate(incoming):
            j = (i + 1) % len(incoming)
            end = incoming[j]
            s_val, t_val = sides[i], sides[j]
            if s_val >= 0.0:
                output.append(start)
            if (s_val >= 0.0) != (t_val >= 0.0):
                frac = s_val / (s_val - t_val)
                output.append(
                    (start[0] + frac * (end[0] - start[0]), start[1] + frac * (end[1] - start[1]))
                )
    merged = _merge_close_vertices(output)
    if len(merged) < 3:
        return ConvexPolygon(())
    return ConvexPolygon(merged)


def iou2d(a: Rect2D, b: Rect2D) -> float:
    """Intersection over union of two rectangles; 0.0 when disjoint or degenerate."""
    ix = min(a.x2, b.x2) - max(a.x1, b.x1)
    iy = min(a.y2, b.y2) - max(a.y1, b.y1)
    if ix <= 0.0 or iy <= 0.0:
        return 0.0
    inter = ix * iy
    union = a.area + b.area - inter
    if union <= 0.0:
        return 0.0
    return min(inter / union, 1.0)


def overlap_matrix(rects: Sequence[Rect2D]) -> np.ndarray:
    """Symmetric matrix of pairwise rectangle IoU values.

    The diagonal is 1 for every non-degenerate rectangle and 0 for degenerate
    ones, matching ``iou2d`` elementwise.
    """
    n = len(rects)
    if n == 0:
        return np.zeros((0, 0))
    arr = np.array([(r.x1, r.y1, r.x2, r.y2) for r in rects], dtype=float)
    x1, y1, x2, y2 = arr.T
    ix = np.minimum(x2[:, None], x2[None, :]) - np.maximum(x1[:, None], x1[None, :])
    iy = np.minimum(y2[:, None], y2[None, :]) - np.maximum(y1[:, None], y1[None, :])
    inter = np.clip(ix, 0.0, None) * np.clip(iy, 0.0, None)
    area = (x2 - x1) * (y2 - y1)
    union = area[:, None] + area[None, :] - inter
    safe = np.where(union > 0.0, union, 1.0)
    out = np.where(union > 0.0, inter / safe, 0.0)
    return np.clip(out, 0.0, 1.0)


def _aabb_iou_and_hull(
    ra: tuple[float, float, float, float], rb: tuple[float, float, float, float]
) -> tuple[float, float, float]:
    """(iou, union, hull area) for two axis-aligned footprints."""
    ix = min(ra[2], rb[2]) - max(ra[0], rb[0])
    iz = min(ra[3], rb[3]) - max(ra[1], rb[1])
    inter = max(ix, 0.0) * max(iz, 0.0)
    area_a = (ra[2] - ra[0]) * (ra[3] - ra[1])
    area_b = (rb[2] - rb[0]) * (rb[3] - rb[1])
    union = area_a + area_b - inter
    hull = (max(ra[2], rb[2]) - min(ra[0], rb[0])) * (max(ra[3], rb[3]) - min(ra[1], rb[1]))
    iou = min(inter / union, 1.0) if union > 0.0 else 0.0
    return iou, union, hull


def giou2d_bev(a: Cuboid3D, b: Cuboid3D) -> float:
    """Generalized IoU of the two footprints with the rotations discarded.

    Both cuboids are treated as axis-aligned in the ground plane. The result
    is plain IoU minus the hull-gap fraction (hull area not covered by the
    union, over hull area), so it falls in (-1, 1] and degrades smoothly as
    the boxes separate.
    """
    iou, union, hull = _aabb_iou_and_hull(a.bev_aabb(), b.bev_aabb())
    gap = max(hull - union, 0.0) / hull if hull > 0.0 else 0.0
    return iou - gap


def _canonical_pair(a: Cuboid3D, b: Cuboid3D) -> tuple[Cuboid3D, Cuboid3D]:
    # Fixes the operand order so both argument orders run identical arithmetic.
    ka = (a.cx, a.cy, a.cz, a.w, a.h, a.l, a.yaw)
    kb = (b.cx, b.cy, b.cz, b.w, b.h, b.l, b.yaw)
    return (a, b) if ka <= kb else (b, a)


def rotated_bev_intersection_area(a: Cuboid3D, b: Cuboid3D) -> float:
    """Intersection area of the two yaw-rotated footprints.

    Computed by clipping one footprint polygon against the other; the result
    is clamped to the smaller footprint area so rounding can never report an
    intersection larger than either box.
    """
    if a == b:
        return a.footprint_area
    a, b = _canonical_pair(a, b)
    poly = clip_convex(a.bev_footprint(), b.bev_footprint())
    return min(poly.area, a.footprint_area, b.footprint_area)


def _vertical_overlap(a: Cuboid3D, b: Cuboid3D) -> float:
    a_lo, a_hi = a.vertical_extent
    b_lo, b_hi = b.vertical_extent
    return max(min(a_hi, b_hi) - max(a_lo, b_lo), 0.0)


def _volume_iou(a: Cuboid3D, b: Cuboid3D, inter_area: float) -> tuple[float, float, float]:
    """(iou, intersection volume, union volume) given a footprint overlap area."""
    v_inter = inter_area * _vertical_overlap(a, b)
    v_union = a.volume + b.volume - v_inter
    iou = min(v_inter / v_union, 1.0) if v_union > 0.0 else 0.0
    return iou, v_inter, v_union


def iou3d(a: Cuboid3D, b: Cuboid3D) -> float:
    """Rotated 3D IoU: clipped footprint overlap times vertical overlap, over union."""
    if a == b:
        return 1.0 if a.volume > 0.0 else 0.0
    a, b = _canonical_pair(a, b)
    iou, _, _ = _volume_iou(a, b, rotated_bev_intersection_area(a, b))
    return iou


def iou3d_axis_aligned(a: Cuboid3D, b: Cuboid3D) -> float:
    """3D IoU with both yaws discarded, for axis-aligned comparison columns."""
    if a == b:
        return 1.0 if a.volume > 0.0 else 0.0
    a, b = _canonical_pair(a, b)
    ra, rb = a.bev_aabb(), b.bev_aabb()
    ix = max(min(ra[2], rb[2]) - max(ra[0], rb[0]), 0.0)
    iz = max(min(ra[3], rb[3]) - max(ra[1], rb[1]), 0.0)
    iou, _, _ = _volume_iou(a, b, ix * iz)
    return iou


def giou3d(a: Cuboid3D, b: Cuboid3D) -> float:
    """Generalized 3D IoU with a rotated intersection and an axis-aligned hull.

    The intersection volume uses the exact clipped footprint overlap. The
    enclosing hull is deliberately coarser: axis-aligned footprint hull (yaws
    discarded) times the vertical hull extent. The result is
    iou + union/hull - 1, which equals plain IoU for identical boxes and
    approaches -1 for distant ones.
    """
    if a == b and a.volume > 0.0:
        return 1.0
    a, b = _canonical_pair(a, b)
    iou, _, v_union = _volume_iou(a, b, rotated_bev_intersection_area(a, b))
    ra, rb = a.bev_aabb(), b.bev_aabb()
    hull_area = (max(ra[2], rb[2]) - min(ra[0], rb[0])) * (max(ra[3], rb[3]) - min(ra[1], rb[1]))
    a_lo, a_hi = a.vertical_extent
    b_lo, b_hi = b.vertical_extent
    v_hull = hull_area * (max(a_hi, b_hi) - min(a_lo, b_lo))
    enclosure = min(v_union / v_hull, 1.0) if v_hull > 0.0 else 0.0
    return iou + enclosure - 1.0
