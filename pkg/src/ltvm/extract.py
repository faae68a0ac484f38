"""Greedy local RANSAC line extraction with nonlinear segment refinement."""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from . import _kernels
from .core import STAGE_EXTRACT, CompositeScan, Config, child_rng

MAX_REFINE_ITERS = 100
REASSIGN_PASSES = 10
FIT_MAX_ITERS = 100
FIT_XTOL = 1e-7


class DegenerateFitError(ValueError):
    pass


def _as_point(p) -> np.ndarray:
    return np.asarray(p, dtype=float).reshape(2)


@dataclass(frozen=True, eq=False)
class LineFeature:
    """A long-term line feature.

    ``scatter`` is the second-moment matrix of the supporting points about
    ``centroid`` (not divided by the mass); ``q1``/``q2`` are the endpoint
    covariances in m^2.
    """

    p1: np.ndarray
    p2: np.ndarray
    q1: np.ndarray = field(default_factory=lambda: np.zeros((2, 2)))
    q2: np.ndarray = field(default_factory=lambda: np.zeros((2, 2)))
    centroid: np.ndarray = field(default_factory=lambda: np.zeros(2))
    mass: float = 0.0
    scatter: np.ndarray = field(default_factory=lambda: np.zeros((2, 2)))

    def __post_init__(self) -> None:
        for name, shape in (("p1", (2,)), ("p2", (2,)), ("centroid", (2,)),
                            ("q1", (2, 2)), ("q2", (2, 2)), ("scatter", (2, 2))):
            arr = np.array(getattr(self, name), dtype=float).reshape(shape)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        if not self.length > 0.0:
            raise ValueError("line endpoints coincide")

    @property
    def length(self) -> float:
        return float(np.hypot(*(self.p2 - self.p1)))

    @property
    def direction(self) -> np.ndarray:
        d = self.p2 - self.p1
        return d / np.hypot(*d)

    def replace(self, **changes) -> "LineFeature":
        return dataclasses.replace(self, **changes)


def canonical_order(p1: np.ndarray, p2: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Order endpoints so that ``p2 - p1`` has x >= 0 (ties: y >= 0)."""
    d = p2 - p1
    if d[0] < 0.0 or (d[0] == 0.0 and d[1] < 0.0):
        return p2, p1
    return p1, p2


def project_param_t(p, a, b) -> float:
    p, a, b = _as_point(p), _as_point(a), _as_point(b)
    v = b - a
    l2 = float(v @ v)
    if l2 == 0.0:
        raise DegenerateFitError("segment endpoints coincide")
    return float((p - a) @ v / l2)


def point_segment_distance(points: np.ndarray, a, b) -> np.ndarray:
    """Distance of each point to the closed segment ``ab``."""
    points = np.atleast_2d(np.asarray(points, dtype=float))
    a, b = _as_point(a), _as_point(b)
    v = b - a
    l2 = float(v @ v)
    if l2 == 0.0:
        raise DegenerateFitError("segment endpoints coincide")
    w = points - a
    t = w @ v / l2
    perp = np.abs(v[0] * w[:, 1] - v[1] * w[:, 0]) / math.sqrt(l2)
    d_a = np.hypot(w[:, 0], w[:, 1])
    d_b = np.hypot(points[:, 0] - b[0], points[:, 1] - b[1])
    return np.where(t < 0.0, d_a, np.where(t > 1.0, d_b, perp))


def segment_cost(p1, p2, inliers: np.ndarray, centroid) -> float:
    """Shrink term ``(|c - p1| + |c - p2|) / |I|`` plus squared segment residuals."""
    inliers = np.atleast_2d(np.asarray(inliers, dtype=float))
    if inliers.shape[0] == 0:
        raise ValueError("empty inlier set")
    p1, p2, c = _as_point(p1), _as_point(p2), _as_point(centroid)
    shrink = (np.hypot(*(c - p1)) + np.hypot(*(c - p2))) / inliers.shape[0]
    return float(shrink + np.sum(point_segment_distance(inliers, p1, p2) ** 2))


def inlier_mask(points: np.ndarray, p1, p2, t_r: float) -> np.ndarray:
    points = np.ascontiguousarray(np.atleast_2d(np.asarray(points, dtype=float)))
    p1, p2 = _as_point(p1), _as_point(p2)
    if points.shape[0] == 0:
        return np.zeros(0, dtype=bool)
    if p1[0] == p2[0] and p1[1] == p2[1]:
        raise DegenerateFitError("segment endpoints coincide")
    return _kernels.segment_distances(points, p1[0], p1[1], p2[0], p2[1]) < t_r


def find_inliers(points: np.ndarray, p1, p2, t_r: float) -> np.ndarray:
    """Points strictly closer than ``t_r`` to the segment ``p1 p2``."""
    points = np.atleast_2d(np.asarray(points, dtype=float))
    return points[inlier_mask(points, p1, p2, t_r)]


def fit_segment(inliers: np.ndarray, init_p1, init_p2) -> tuple[np.ndarray, np.ndarray]:
    """Endpoints locally minimizing :func:`segment_cost` from the given start.

    Damped Newton-type iteration with analytic derivatives; the result is
    returned in canonical order.
    """
    pts = np.ascontiguousarray(np.atleast_2d(np.asarray(inliers, dtype=float)))
    if pts.shape[0] < 2:
        raise DegenerateFitError("need at least two inliers")
    if np.all(pts == pts[0]):
        raise DegenerateFitError("inliers are coincident")
    a, b = _as_point(init_p1), _as_point(init_p2)
    if np.array_equal(a, b):
        raise DegenerateFitError("initial endpoints coincide")
    c, _ = _kernels.centroid_scatter(pts)
    x, _, _, _ = _kernels.lm_fit(pts, np.concatenate((a, b)), c[0], c[1], FIT_MAX_ITERS, FIT_XTOL,
                                 _kernels.LAM0)
    if not np.all(np.isfinite(x)):
        raise DegenerateFitError("solver diverged")
    return canonical_order(x[:2].copy(), x[2:].copy())


def principal_axis(points: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Centroid, scatter matrix about it, and the dominant eigenvector."""
    c, s = _kernels.centroid_scatter(np.ascontiguousarray(points, dtype=float))
    _, vecs = np.linalg.eigh(s)
    return c, s, vecs[:, 1]


def snap_to_axis(p1, p2, centroid, axis) -> tuple[np.ndarray, np.ndarray]:
    """Project both endpoints onto the line through ``centroid`` along ``axis``."""
    q1 = centroid + float((p1 - centroid) @ axis) * axis
    q2 = centroid + float((p2 - centroid) @ axis) * axis
    return canonical_order(q1, q2)


def fit_line(points: np.ndarray, init_p1, init_p2) -> tuple[np.ndarray, np.ndarray]:
    """:func:`fit_segment` followed by projection onto the points' principal axis.

    The emitted segment therefore lies on the orthogonal least-squares line
    of its support, which keeps it consistent with the stored scatter.
    """
    a, b = fit_segment(points, init_p1, init_p2)
    c, _, axis = principal_axis(np.asarray(points, dtype=float))
    p1, p2 = snap_to_axis(a, b, c, axis)
    if np.array_equal(p1, p2):
        raise DegenerateFitError("fitted segment collapsed")
    return p1, p2


def line_from_points(points: np.ndarray, p1, p2) -> LineFeature:
    c, s, _ = principal_axis(points)
    return LineFeature(p1=p1, p2=p2, centroid=c, mass=float(points.shape[0]), scatter=s)


@dataclass
class Extraction:
    """Lines with the index arrays (into the input scan) of their inliers."""

    lines: list[LineFeature]
    inliers: list[np.ndarray]
    unclaimed: np.ndarray


def _refine(points, idx_pool, p1, p2, t_r, t_c):
    """Alternate inlier search and refit until the endpoints move less than t_c."""
    sub = points[idx_pool]
    idx = idx_pool[inlier_mask(sub, p1, p2, t_r)]
    if idx.size < 2:
        return None
    try:
        n1, n2 = fit_segment(points[idx], p1, p2)
    except DegenerateFitError:
        return None
    for _ in range(MAX_REFINE_ITERS):
        # Keep orientation consistent with the previous iterate before measuring motion.
        if (n2 - n1) @ (p2 - p1) < 0.0:
            n1, n2 = n2, n1
        moved = np.hypot(*(n1 - p1)) + np.hypot(*(n2 - p2))
        if moved < t_c:
            break
        p1, p2 = n1, n2
        new_idx = idx_pool[inlier_mask(sub, p1, p2, t_r)]
        if new_idx.size < 2:
            break
        idx = new_idx
        try:
            n1, n2 = fit_segment(points[idx], p1, p2)
        except DegenerateFitError:
            return None
    return idx, n1, n2


def extract_segments(filtered: CompositeScan, config: Config, seed: int | None = None) -> Extraction:
    """Greedy sequential local RANSAC over the filtered scan.

    Each round proposes ``config.ransac_iters`` short hypotheses (a random
    point paired with a neighbour within ``config.ransac_radius``), keeps
    the one with most inliers, refines it and removes its inliers. Rounds
    stop when no hypothesis reaches ``config.min_inliers``.
    """
    n = len(filtered)
    if n == 0:
        return Extraction([], [], np.zeros(0, dtype=np.int64))
    rng = child_rng(config.rng_seed if seed is None else seed, STAGE_EXTRACT)
    points = np.ascontiguousarray(filtered.world_points())
    tree = cKDTree(points)
    remaining = np.ones(n, dtype=bool)
    seedable = np.ones(n, dtype=bool)
    radius, t_r = config.ransac_radius, config.t_r
    lines: list[LineFeature] = []
    claimed: list[np.ndarray] = []
    while True:
        pool = np.flatnonzero(remaining & seedable)
        if pool.size < config.min_inliers:
            break
        seeds = pool[rng.integers(0, pool.size, size=config.ransac_iters)]
        neighbourhoods = tree.query_ball_point(points[seeds], radius + t_r)
        best = None
        best_count = 0
        for s, nb in zip(seeds, neighbourhoods):
            nb = np.asarray(nb, dtype=np.int64)
            nb = nb[remaining[nb]]
            dist = np.hypot(*(points[nb] - points[s]).T)
            partners = nb[(dist >= t_r) & (dist <= radius)]
            if partners.size == 0:
                continue
            other = partners[rng.integers(0, partners.size)]
            count = int(np.count_nonzero(inlier_mask(points[nb], points[s], points[other], t_r)))
            if count > best_count:
                best_count, best = count, (s, other, nb)
        if best is None or best_count < config.min_inliers:
            break
        s, other, nb = best
        pool_idx = np.flatnonzero(remaining)
        result = _refine(points, pool_idx, points[s].copy(), points[other].copy(), t_r, config.t_c)
        if result is None or result[0].size < config.min_inliers:
            # Retire the hypothesis support from seeding; the points stay unclaimed.
            seedable[nb] = False
            seedable[s] = False
            continue
        idx, p1, p2 = result
        sup = points[idx]
        try:
            c, scat, axis = principal_axis(sup)
            q1, q2 = snap_to_axis(p1, p2, c, axis)
            line = LineFeature(p1=q1, p2=q2, centroid=c, mass=float(idx.size), scatter=scat)
        except ValueError:
            seedable[idx] = False
            continue
        lines.append(line)
        claimed.append(np.sort(idx))
        remaining[idx] = False
    lines, claimed = _reassign(points, lines, claimed, config)
    owned = np.zeros(n, dtype=bool)
    for idx in claimed:
        owned[idx] = True
    return Extraction(lines, claimed, np.flatnonzero(~owned))


def _reassign_rank(points, line, seg):
    """Segment distance plus distance to the supporting line.

    Inside the segment this is twice the perpendicular distance, so the
    ordering there is unchanged. Near a corner, both walls' segments are
    about equally far from the points where they meet, but only one
    supporting line runs through them.
    """
    d = line.direction
    perp = np.abs((points - line.p1) @ np.array([-d[1], d[0]]))
    return seg + perp


def _reassign(points, lines, claimed, config):
    """Hand each claimed point to its nearest line and refit until stable.

    Greedy claiming lets the first line near a corner absorb the first
    ``t_r`` of the perpendicular wall, which shortens the later line and
    tilts the earlier one. Points only move when another line is strictly
    closer (see :func:`_reassign_rank`), so the partition is preserved.
    """
    if len(lines) < 2:
        return lines, claimed
    idx_all = np.concatenate(claimed)
    pts = np.ascontiguousarray(points[idx_all])
    owner = np.concatenate([np.full(c.size, k) for k, c in enumerate(claimed)])
    alive = np.ones(len(lines), dtype=bool)
    for _ in range(REASSIGN_PASSES):
        dist = np.full((len(lines), pts.shape[0]), np.inf)
        rank = np.full((len(lines), pts.shape[0]), np.inf)
        for k, line in enumerate(lines):
            if alive[k]:
                dist[k] = _kernels.segment_distances(pts, line.p1[0], line.p1[1], line.p2[0], line.p2[1])
                rank[k] = _reassign_rank(pts, line, dist[k])
        cols = np.arange(owner.size)
        nearest = np.argmin(rank, axis=0)
        in_range = dist[nearest, cols] < config.t_r
        move = (rank[nearest, cols] < rank[owner, cols]) & in_range
        # Points whose owner was dropped go to the nearest live line in range, else nowhere.
        orphan = ~alive[owner]
        move |= orphan & in_range
        if not move.any() and not orphan.any():
            break
        changed = set(owner[move].tolist()) | set(nearest[move].tolist())
        owner = np.where(move, nearest, owner)
        keep = ~orphan | move
        idx_all, pts, owner = idx_all[keep], pts[keep], owner[keep]
        for k in sorted(changed):
            sel = owner == k
            if not alive[k]:
                continue
            if np.count_nonzero(sel) < config.min_inliers:
                alive[k] = False
                continue
            sup = pts[sel]
            try:
                p1, p2 = fit_line(sup, lines[k].p1, lines[k].p2)
                c, scat, _ = principal_axis(sup)
                lines[k] = LineFeature(p1=p1, p2=p2, centroid=c, mass=float(sup.shape[0]), scatter=scat)
            except ValueError:
                alive[k] = False
        if not move.any():
            break
    # A dropped line in the last pass can still leave orphans; release them.
    keep = alive[owner]
    idx_all, owner = idx_all[keep], owner[keep]
    out_lines, out_claimed = [], []
    for k, line in enumerate(lines):
        if alive[k]:
            out_lines.append(line)
            out_claimed.append(np.sort(idx_all[owner == k]))
    return out_lines, out_claimed


def extract_lines(filtered: CompositeScan, config: Config, seed: int | None = None) -> list[LineFeature]:
    return extract_segments(filtered, config, seed).lines
