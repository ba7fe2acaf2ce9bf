"""NMS rescoring: the greedy classical/soft loop and closed-form matrix variants.

Every rescorer maps raw scores plus a pairwise overlap matrix to per-box
rescores; a box survives when its rescore clears the validity threshold.
The matrix variants express suppression as a strictly-lower-triangular system
over score-sorted boxes. The masked variant additionally partitions boxes into
overlap groups and lets only each group's top box suppress its members, which
makes the system solvable in closed form and (with a soft pruning function)
differentiable; see :mod:`diffnms.gradients` for the backward pass.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

__all__ = [
    "GroupPartition",
    "NmsConfig",
    "NmsVariant",
    "Pruning",
    "RescoreResult",
    "build_mask",
    "classical_soft_nms",
    "clip01",
    "group_boxes",
    "masked_rescore",
    "prune",
    "prune_derivative",
    "prune_matrix",
    "rescore_full_inverse",
    "rescore_grouped_inverse",
    "rescore_product_oracle",
    "rescore_recursive_oracle",
    "run_nms",
    "solve_unit_lower",
    "sort_by_score",
]


class Pruning(str, Enum):
    """Overlap-to-suppression-weight mapping applied to the overlap matrix."""

    HARD = "hard"
    LINEAR = "linear"
    EXPONENTIAL = "exp"
    SIGMOIDAL = "sigmoid"


_DEFAULT_TAU = {Pruning.EXPONENTIAL: 0.5, Pruning.SIGMOIDAL: 0.1}


@dataclass(frozen=True)
class NmsConfig:
    """Suppression parameters shared by every NMS variant.

    nt is the overlap threshold used for grouping and hard pruning,
    valid_threshold is the rescore level a box must reach to survive, and
    max_group_size caps how many boxes one group may hold (None means
    unbounded). tau is the temperature of the exponential and sigmoidal
    pruning kinds; when left unset it defaults to 0.5 and 0.1 respectively.
    """

    nt: float = 0.4
    valid_threshold: float = 0.3
    max_group_size: int | None = 100
    pruning: Pruning = Pruning.HARD
    tau: float | None = None

    def __post_init__(self) -> None:
        if not 0.0 < self.nt < 1.0:
            raise ValueError(f"nt must lie strictly between 0 and 1, got {self.nt}")
        if not 0.0 <= self.valid_threshold <= 1.0:
            raise ValueError(f"valid_threshold must lie in [0, 1], got {self.valid_threshold}")
        if self.max_group_size is not None and self.max_group_size < 1:
            raise ValueError(f"max_group_size must be at least 1 or None, got {self.max_group_size}")
        if self.pruning in _DEFAULT_TAU:
            if self.tau is None:
                object.__setattr__(self, "tau", _DEFAULT_TAU[self.pruning])
            if not self.tau > 0.0:
                raise ValueError(f"tau must be positive for {self.pruning.value} pruning, got {self.tau}")


class NmsVariant(str, Enum):
    CLASSICAL = "classical"
    SOFT = "soft"
    MASKED = "masked"
    FULL_INVERSE = "full-inverse"
    GROUPED_INVERSE = "grouped-inverse"


@dataclass(frozen=True, eq=False)
class RescoreResult:
    """Rescores in original box order, the surviving indices, and pre-clip values.

    kept holds the (ascending) original indices whose rescore reaches the
    validity threshold. pre_clip carries the rescore before any clamping
    (it equals rescores for the greedy variants) and is what gradient gating
    inspects.
    """

    rescores: np.ndarray
    kept: np.ndarray
    pre_clip: np.ndarray


def clip01(x):
    """Clamp a scalar or array to [0, 1]."""
    if np.ndim(x) == 0:
        xf = float(x)
        return 0.0 if xf < 0.0 else 1.0 if xf > 1.0 else xf
    return np.clip(np.asarray(x, dtype=float), 0.0, 1.0)


def _sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def prune(overlap, cfg: NmsConfig):
    """Suppression weight for an overlap value, elementwise on arrays.

    Hard pruning is the step function 1[o > nt]; linear passes the overlap
    through; exponential is 1 - exp(-o^2 / tau); sigmoidal is the logistic
    function of (o - nt) / tau.
    """
    arr = np.asarray(overlap, dtype=float)
    kind = cfg.pruning
    if kind is Pruning.HARD:
        res = (arr > cfg.nt).astype(float)
    elif kind is Pruning.LINEAR:
        res = arr + 0.0
    elif kind is Pruning.EXPONENTIAL:
        res = 1.0 - np.exp(-np.square(arr) / cfg.tau)
    else:
        res = _sigmoid((arr - cfg.nt) / cfg.tau)
    return float(res) if np.ndim(overlap) == 0 else res


def prune_derivative(overlap, cfg: NmsConfig):
    """Derivative of :func:`prune` with respect to the overlap.

    Raises for hard pruning, which has no derivative.
    """
    if cfg.pruning is Pruning.HARD:
        raise ValueError("non-differentiable pruning: the hard threshold has no derivative")
    arr = np.asarray(overlap, dtype=float)
    kind = cfg.pruning
    if kind is Pruning.LINEAR:
        res = np.ones_like(arr)
    elif kind is Pruning.EXPONENTIAL:
        res = (2.0 * arr / cfg.tau) * np.exp(-np.square(arr) / cfg.tau)
    else:
        sig = _sigmoid((arr - cfg.nt) / cfg.tau)
        res = sig * (1.0 - sig) / cfg.tau
    return float(res) if np.ndim(overlap) == 0 else res


def _validate_scores(scores, upper: float | None = None) -> np.ndarray:
    s = np.asarray(scores, dtype=float)
    if s.ndim != 1:
        raise ValueError(f"scores must be a 1-d array, got shape {s.shape}")
    if not np.all(np.isfinite(s)):
        raise ValueError("scores must be finite")
    if np.any(s < 0.0):
        raise ValueError("scores must be non-negative")
    if upper is not None and np.any(s > upper):
        raise ValueError(f"scores must lie in [0, {upper:g}] for this rescorer")
    return s


def _validate_overlaps(overlaps, n: int) -> np.ndarray:
    o = np.asarray(overlaps, dtype=float)
    if o.shape != (n, n):
        raise ValueError(f"overlap matrix must have shape ({n}, {n}), got {o.shape}")
    if not np.all(np.isfinite(o)) or np.any(o < 0.0) or np.any(o > 1.0):
        raise ValueError("overlap values must be finite and lie in [0, 1]")
    return o


def sort_by_score(scores, overlaps) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Stable descending score sort with the overlap matrix permuted to match.

    Ties keep the lower original index first. Returns (sorted scores, sorted
    overlaps, permutation) where permutation[k] is the original index of the
    box at sorted rank k.
    """
    s = np.asarray(scores, dtype=float)
    o = np.asarray(overlaps, dtype=float)
    order = np.argsort(-s, kind="stable")
    return s[order], o[np.ix_(order, order)], order


def prune_matrix(sorted_overlaps, cfg: NmsConfig) -> np.ndarray:
    """Strictly-lower-triangular suppression weights over sorted overlaps.

    Entries on and above the diagonal are zero, so only higher-scored boxes
    ever suppress lower-scored ones.
    """
    o = np.asarray(sorted_overlaps, dtype=float)
    return np.tril(np.asarray(prune(o, cfg), dtype=float), k=-1)


@dataclass(frozen=True)
class GroupPartition:
    """Disjoint groups over score-sorted indices; each group leads with its top box.

    capped_out lists sorted indices dropped by the group-size cap; they take
    no further part in rescoring and end up with rescore 0.
    """

    groups: tuple[tuple[int, ...], ...]
    capped_out: tuple[int, ...]


def group_boxes(sorted_overlaps, cfg: NmsConfig) -> GroupPartition:
    """Partition score-sorted boxes into overlap groups.

    Each round the top remaining box absorbs every remaining box whose overlap
    with it exceeds nt, truncated to max_group_size (extra members are
    recorded as capped out); the rest carry over to the next round. Grouping
    always uses the hard nt comparison regardless of the pruning kind.
    """
    o = np.asarray(sorted_overlaps, dtype=float)
    n = o.shape[0]
    remaining = np.arange(n)
    groups: list[tuple[int, ...]] = []
    capped: list[int] = []
    cap = cfg.max_group_size
    while remaining.size:
        top = remaining[0]
        high = o[remaining, top] > cfg.nt
        # A degenerate box has zero self-overlap; it still anchors its group.
        high[0] = True
        members = remaining[high]
        if cap is not None and members.size > cap:
            groups.append(tuple(int(i) for i in members[:cap]))
            capped.extend(int(i) for i in members[cap:])
        else:
            groups.append(tuple(int(i) for i in members))
        remaining = remaining[~high]
    return GroupPartition(tuple(groups), tuple(capped))


def build_mask(size: int) -> np.ndarray:
    """Binary mask that keeps only the group-top column of a prune matrix."""
    if size < 1:
        raise ValueError(f"mask size must be at least 1, got {size}")
    mask = np.zeros((size, size))
    mask[:, 0] = 1.0
    return mask


def _masked_sorted_rescore(
    s_sorted: np.ndarray, o_sorted: np.ndarray, cfg: NmsConfig
) -> tuple[np.ndarray, np.ndarray, GroupPartition]:
    """Pre-clip and clipped rescores in sorted order plus the grouping used."""
    part = group_boxes(o_sorted, cfg)
    c = np.zeros(s_sorted.size)
    for group in part.groups:
        idx = np.array(group, dtype=int)
        top = group[0]
        weights = np.asarray(prune(o_sorted[idx, top], cfg), dtype=float)
        values = s_sorted[idx] - weights * s_sorted[top]
        values[0] = s_sorted[top]
        c[idx] = values
    # Capped-out boxes keep c = 0, i.e. they are suppressed outright.
    return c, np.clip(c, 0.0, 1.0), part


def masked_rescore(scores, overlaps, cfg: NmsConfig) -> RescoreResult:
    """Closed-form grouped NMS rescoring.

    After the stable score sort and grouping, each group's top box keeps its
    score and every other member i is rescored as
    clip(s_i - p(o_i,top) * s_top), equivalent to applying the group-top mask
    to the prune matrix and inverting the resulting unit triangular system.
    Boxes dropped by the group-size cap get rescore 0.
    """
    s = _validate_scores(scores, upper=1.0)
    o = _validate_overlaps(overlaps, s.size)
    if s.size == 0:
        empty = np.zeros(0)
        return RescoreResult(empty, np.zeros(0, dtype=int), empty.copy())
    s_sorted, o_sorted, order = sort_by_score(s, o)
    c_sorted, r_sorted, _ = _masked_sorted_rescore(s_sorted, o_sorted, cfg)
    rescores = np.empty_like(r_sorted)
    rescores[order] = r_sorted
    pre_clip = np.empty_like(c_sorted)
    pre_clip[order] = c_sorted
    return RescoreResult(rescores, np.flatnonzero(rescores >= cfg.valid_threshold), pre_clip)


def classical_soft_nms(scores, overlaps, cfg: NmsConfig) -> RescoreResult:
    """Greedy NMS: pick the top box, decay the rest, repeat.

    Every round the highest-rescored remaining box is finalized and each other
    remaining box i has its rescore multiplied by (1 - p(o_top,i)). Hard
    pruning zeroes overlapping boxes outright (classical NMS); soft pruning
    kinds decay them smoothly. Scores only need to be non-negative here.
    """
    s = _validate_scores(scores)
    o = _validate_overlaps(overlaps, s.size)
    r = s.copy()
    active = np.ones(s.size, dtype=bool)
    while active.any():
        top = int(np.argmax(np.where(active, r, -np.inf)))
        active[top] = False
        rest = np.flatnonzero(active)
        if rest.size:
            r[rest] *= 1.0 - np.asarray(prune(o[top, rest], cfg), dtype=float)
    return RescoreResult(r, np.flatnonzero(r >= cfg.valid_threshold), r.copy())


def solve_unit_lower(strict_lower: np.ndarray, rhs: np.ndarray) -> np.ndarray:
    """Solve (I + L) x = b for strictly-lower-triangular L by forward substitution."""
    L = np.asarray(strict_lower, dtype=float)
    b = np.asarray(rhs, dtype=float)
    x = np.zeros(b.size)
    for i in range(b.size):
        x[i] = b[i] - np.dot(L[i, :i], x[:i])
    return x


def _full_inverse_pre_clip(s_sorted: np.ndarray, o_sorted: np.ndarray, cfg: NmsConfig) -> np.ndarray:
    return solve_unit_lower(prune_matrix(o_sorted, cfg), s_sorted)


def _grouped_inverse_pre_clip(s_sorted: np.ndarray, o_sorted: np.ndarray, cfg: NmsConfig) -> np.ndarray:
    part = group_boxes(o_sorted, cfg)
    c = np.zeros(s_sorted.size)
    for group in part.groups:
        idx = np.array(group, dtype=int)
        block = prune_matrix(o_sorted[np.ix_(idx, idx)], cfg)
        c[idx] = solve_unit_lower(block, s_sorted[idx])
    return c


def rescore_full_inverse(sorted_scores, sorted_overlaps, cfg: NmsConfig) -> np.ndarray:
    """Clipped solution of the full rescore system on score-sorted inputs.

    The raw solution can overshoot a box's own score when an earlier box was
    suppressed below zero, so the result is clamped to [0, s_i]: suppression
    may only ever lower a score.
    """
    s = _validate_scores(sorted_scores, upper=1.0)
    o = _validate_overlaps(sorted_overlaps, s.size)
    return np.minimum(np.clip(_full_inverse_pre_clip(s, o, cfg), 0.0, 1.0), s)


def rescore_grouped_inverse(sorted_scores, sorted_overlaps, cfg: NmsConfig) -> np.ndarray:
    """Per-group rescore solves, clamped to [0, s_i]; capped-out boxes get 0."""
    s = _validate_scores(sorted_scores, upper=1.0)
    o = _validate_overlaps(sorted_overlaps, s.size)
    return np.minimum(np.clip(_grouped_inverse_pre_clip(s, o, cfg), 0.0, 1.0), s)


def rescore_recursive_oracle(sorted_scores, sorted_overlaps, cfg: NmsConfig) -> np.ndarray:
    """Exact fixpoint of the rescore recursion, flooring at zero every step.

    r_i = max(s_i - sum_j<i P_ij r_j, 0), evaluated in sorted order. This is
    the reference the closed-form variants approximate when clipping binds.
    """
    s = _validate_scores(sorted_scores, upper=1.0)
    P = prune_matrix(_validate_overlaps(sorted_overlaps, s.size), cfg)
    r = np.zeros(s.size)
    for i in range(s.size):
        r[i] = max(s[i] - np.dot(P[i, :i], r[:i]), 0.0)
    return r


def rescore_product_oracle(sorted_scores, sorted_overlaps, cfg: NmsConfig) -> np.ndarray:
    """Sequential product-form rescoring r_i = s_i * prod_j<i (1 - P_ij r_j).

    Agrees with the recursive oracle to first order when suppression weights
    are small.
    """
    s = _validate_scores(sorted_scores, upper=1.0)
    P = prune_matrix(_validate_overlaps(sorted_overlaps, s.size), cfg)
    r = np.zeros(s.size)
    for i in range(s.size):
        r[i] = s[i] * float(np.prod(1.0 - P[i, :i] * r[:i]))
    return r


def run_nms(scores, overlaps, cfg: NmsConfig, variant: NmsVariant) -> RescoreResult:
    """Run one NMS variant end to end: sort, rescore, restore order, threshold.

    The classical variant requires hard pruning and the soft variant requires
    a soft pruning kind; mixing them is a configuration error.
    """
    variant = NmsVariant(variant)
    if variant is NmsVariant.CLASSICAL:
        if cfg.pruning is not Pruning.HARD:
            raise ValueError("classical NMS requires hard pruning")
        return classical_soft_nms(scores, overlaps, cfg)
    if variant is NmsVariant.SOFT:
        if cfg.pruning is Pruning.HARD:
            raise ValueError("soft NMS requires a soft pruning kind (linear, exp, or sigmoid)")
        return classical_soft_nms(scores, overlaps, cfg)
    if variant is NmsVariant.MASKED:
        return masked_rescore(scores, overlaps, cfg)
    s = _validate_scores(scores, upper=1.0)
    o = _validate_overlaps(overlaps, s.size)
    if s.size == 0:
        empty = np.zeros(0)
        return RescoreResult(empty, np.zeros(0, dtype=int), empty.copy())
    s_sorted, o_sorted, order = sort_by_score(s, o)
    if variant is NmsVariant.FULL_INVERSE:
        c_sorted = _full_inverse_pre_clip(s_sorted, o_sorted, cfg)
    else:
        c_sorted = _grouped_inverse_pre_clip(s_sorted, o_sorted, cfg)
    # Suppression may only lower a score: clamp the clipped solve by s itself.
    r_sorted = np.minimum(np.clip(c_sorted, 0.0, 1.0), s_sorted)
    rescores = np.empty_like(r_sorted)
    rescores[order] = r_sorted
    pre_clip = np.empty_like(c_sorted)
    pre_clip[order] = c_sorted
    return RescoreResult(rescores, np.flatnonzero(rescores >= cfg.valid_threshold), pre_clip)
