"""Comparisons of a vector map against a synthetic environment's ground truth."""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np

from ._kernels import segment_distances
from .extract import LineFeature
from .scangen import EnvironmentSpec, realize_deployment, segment_segment_distance

# A map line belongs to a wall when it is nearly parallel and both of its
# endpoints sit within the inlier radius of the wall's infinite line.
MATCH_ANGLE = math.radians(5.0)


def _frame(a, b):
    a, b = np.asarray(a, float), np.asarray(b, float)
    length = float(np.hypot(*(b - a)))
    u = (b - a) / length
    return a, u, np.array((-u[1], u[0])), length


def collinear_extent(line: LineFeature, a, b, t_r: float) -> tuple[float, float] | None:
    """Interval (meters from ``a`` along ``a -> b``) covered by ``line``, or None if not collinear."""
    origin, u, n, _ = _frame(a, b)
    d = line.p2 - line.p1
    cos = abs(float(d @ u)) / float(np.hypot(*d))
    if cos < math.cos(MATCH_ANGLE):
        return None
    if max(abs(float((line.p1 - origin) @ n)), abs(float((line.p2 - origin) @ n))) >= t_r:
        return None
    s1, s2 = float((line.p1 - origin) @ u), float((line.p2 - origin) @ u)
    return min(s1, s2), max(s1, s2)


def _overlap(lo, hi, a, b) -> float:
    return max(0.0, min(hi, b) - max(lo, a))


def coverage(lines, a, b, t_r: float, lo: float = 0.0, hi: float | None = None) -> float:
    """Fraction of ``[lo, hi]`` along the wall ``a b`` covered by collinear map lines."""
    _, _, _, length = _frame(a, b)
    hi = length if hi is None else hi
    spans = sorted(e for e in (collinear_extent(l, a, b, t_r) for l in lines) if e is not None)
    covered, reach = 0.0, lo
    for s0, s1 in spans:
        s0, s1 = max(s0, reach), min(s1, hi)
        if s1 > s0:
            covered += s1 - s0
            reach = s1
    return covered / (hi - lo)


def match_walls(lines, walls, t_r: float) -> list[int | None]:
    """Index of the map line with the largest collinear overlap with each wall."""
    out = []
    for w in walls:
        best, best_len = None, 0.0
        for i, l in enumerate(lines):
            e = collinear_extent(l, w.a, w.b, t_r)
            if e is None:
                continue
            ov = _overlap(e[0], e[1], 0.0, w.length)
            if ov > best_len:
                best, best_len = i, ov
        out.append(best)
    return out


def pairwise_separation_error(lines, walls, t_r: float) -> float:
    """Mean over wall pairs of |map midpoint distance - true midpoint distance|.

    Each wall is represented by its best-matching map line; an unmatched
    wall makes the result infinite.
    """
    idx = match_walls(lines, walls, t_r)
    if any(i is None for i in idx):
        return math.inf
    mids = [0.5 * (lines[i].p1 + lines[i].p2) for i in idx]
    truth = [0.5 * (np.array(w.a) + np.array(w.b)) for w in walls]
    errs = [abs(float(np.hypot(*(mids[i] - mids[j]))) - float(np.hypot(*(truth[i] - truth[j]))))
            for i, j in itertools.combinations(range(len(walls)), 2)]
    return float(np.mean(errs))


def nearest_segment_sq_error(points: np.ndarray, lines) -> np.ndarray:
    """Squared distance from each point to its nearest map segment."""
    points = np.ascontiguousarray(points, dtype=float)
    if not lines:
        return np.full(points.shape[0], np.inf)
    d = np.min([segment_distances(points, *l.p1, *l.p2) for l in lines], axis=0)
    return d * d


def line_fit_mse(points: np.ndarray, lines, t_r: float) -> float:
    """Mean squared residual of points to their matched (nearest, within t_r) segments."""
    e = nearest_segment_sq_error(points, lines)
    matched = e < t_r * t_r
    return float(e[matched].mean()) if matched.any() else math.inf


@dataclass(frozen=True)
class DoorCheck:
    wall: int
    door: int
    intrusion: float
    flank_coverage: tuple[float, float]


def door_checks(lines, walls, t_r: float) -> list[DoorCheck]:
    """Per door: longest collinear map overlap with the door interval, and flank coverage.

    Flanks are the solid wall pieces immediately on either side of the door.
    """
    out = []
    for wi, w in enumerate(walls):
        pieces = w.solid_intervals()
        extents = [e for e in (collinear_extent(l, w.a, w.b, t_r) for l in lines) if e is not None]
        for di, d in enumerate(w.doors):
            intrusion = max((_overlap(e[0], e[1], d.start, d.end) for e in extents), default=0.0)
            left, right = pieces[di], pieces[di + 1]
            flanks = (coverage(lines, w.a, w.b, t_r, *left), coverage(lines, w.a, w.b, t_r, *right))
            out.append(DoorCheck(wi, di, intrusion, flanks))
    return out


def stf_edges_off_walls(env: EnvironmentSpec, deployments: int, clearance: float) -> list[np.ndarray]:
    """Realized obstacle edges over all deployments lying more than ``clearance`` from every wall."""
    edges = []
    for k in range(deployments):
        for poly in realize_deployment(env, k).stf_polygons:
            if poly is None:
                continue
            for i in range(len(poly)):
                e = np.array([poly[i], poly[(i + 1) % len(poly)]])
                if all(segment_segment_distance(e[0], e[1], np.array(w.a), np.array(w.b)) > clearance
                       for w in env.walls):
                    edges.append(e)
    return edges


def stf_violations(lines, edges, t_r: float) -> int:
    """Map lines passing within ``t_r`` of any of the given obstacle edges."""
    return sum(any(segment_segment_distance(l.p1, l.p2, e[0], e[1]) < t_r for e in edges) for l in lines)
