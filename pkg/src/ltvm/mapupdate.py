"""Long-term map maintenance: prune against the SDF, gate, merge."""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .core import STAGE_PRUNE, Config, SensorModel, child_seed
from .extract import DegenerateFitError, LineFeature, canonical_order
from .sdf import SdfGrid
from .uncertainty import endpoint_samples, sample_covariance

REGULARIZATION = 1e-12
ISOTROPY_TOL = 1e-9


class MergeRejected(ValueError):
    """The pooled scatter has no dominant direction."""


@dataclass(frozen=True, eq=False)
class VectorMap:
    lines: tuple[LineFeature, ...] = ()
    deployment_count: int = 0
    config_snapshot: Config = field(default_factory=Config)

    def __post_init__(self) -> None:
        object.__setattr__(self, "lines", tuple(self.lines))

    def __len__(self) -> int:
        return len(self.lines)

    @property
    def total_mass(self) -> float:
        return float(sum(l.mass for l in self.lines))

    def replace(self, **changes) -> "VectorMap":
        return dataclasses.replace(self, **changes)


@dataclass
class UpdateStats:
    kept: int = 0
    deleted: int = 0
    split: int = 0
    fragments: int = 0
    inserted: int = 0
    merged: int = 0
    fixpoint_merges: int = 0


# ---------------------------------------------------------------- pruning


def weight_profile(line: LineFeature, lt: SdfGrid) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Pixels crossed by the line: entry/exit parameters in [0, 1] and weights.

    Pixels outside the grid report weight 0.
    """
    g1 = lt.to_grid(line.p1) + 0.5
    g2 = lt.to_grid(line.p2) + 0.5
    rows, cols, t_in, t_out = _kernels.trace_pixels(g1[0], g1[1], g2[0], g2[1])
    inside = (rows >= 0) & (rows < lt.height) & (cols >= 0) & (cols < lt.width)
    w = np.zeros(rows.size)
    w[inside] = lt.weights[rows[inside], cols[inside]]
    return t_in, t_out, w


def surviving_spans(line: LineFeature, lt: SdfGrid, t2: float) -> list[tuple[float, float]]:
    """Maximal parameter intervals over which every crossed pixel has weight >= t2.

    Low-weight runs shorter than two pixels are bridged and surviving spans
    shorter than two pixels are discarded; both are discretization slivers.
    """
    t_in, t_out, w = weight_profile(line, lt)
    high = w >= t2
    min_t = 2.0 * lt.resolution / line.length
    runs: list[list] = []
    for a, b, h in zip(t_in, t_out, high):
        if b <= a:
            continue
        if runs and runs[-1][2] == h:
            runs[-1][1] = b
        else:
            runs.append([a, b, bool(h)])
    for r in runs:
        if not r[2] and r[1] - r[0] < min_t:
            r[2] = True
    spans: list[tuple[float, float]] = []
    for a, b, h in runs:
        if not h:
            continue
        if spans and spans[-1][1] == a:
            spans[-1] = (spans[-1][0], b)
        else:
            spans.append((a, b))
    return [(a, b) for a, b in spans if b - a >= min_t]


def regenerate_subline(line: LineFeature, ta: float, tb: float, config: Config,
                       sensor: SensorModel, seed: int) -> LineFeature | None:
    """Rebuild the part of ``line`` between parameters ``ta`` and ``tb``.

    The mass is scaled by the surviving length fraction. Endpoint
    covariances come from refitting ``mc_samples_k`` synthetic point sets
    spread uniformly along the span with perpendicular noise ``sigma_rho``.
    Returns None when fewer than two points would be regenerated.
    """
    p1 = line.p1 + ta * (line.p2 - line.p1)
    p2 = line.p1 + tb * (line.p2 - line.p1)
    mass = line.mass * (tb - ta)
    count = math.ceil(mass)
    if count < 2:
        return None
    u = line.direction
    n = np.array([-u[1], u[0]])
    sub = LineFeature(p1=p1, p2=p2)

    def draw(rng):
        s = rng.uniform(0.0, 1.0, count)
        e = rng.normal(0.0, sensor.sigma_rho, count)
        return p1 + s[:, None] * (p2 - p1) + e[:, None] * n

    try:
        e1, e2 = endpoint_samples(sub, draw, config.mc_samples_k, seed)
    except DegenerateFitError:
        return None
    length = float(np.hypot(*(p2 - p1)))
    perp = float(n @ line.scatter @ n) / line.mass if line.mass > 0 else 0.0
    scatter = mass * (length ** 2 / 12.0 * np.outer(u, u) + perp * np.outer(n, n))
    return LineFeature(p1=p1, p2=p2, q1=sample_covariance(e1), q2=sample_covariance(e2),
                       centroid=0.5 * (p1 + p2), mass=mass, scatter=scatter)


def prune_line(line: LineFeature, lt: SdfGrid, config: Config, sensor: SensorModel,
               seed: int) -> list[LineFeature]:
    spans = surviving_spans(line, lt, config.t2_stf)
    if not spans:
        return []
    if len(spans) == 1 and spans[0][0] <= 0.0 and spans[0][1] >= 1.0:
        return [line]
    out = []
    for k, (a, b) in enumerate(spans):
        sub = regenerate_subline(line, a, b, config, sensor, child_seed(seed, k))
        if sub is not None:
            out.append(sub)
    return out


def _prune(vmap: VectorMap, lt: SdfGrid, config: Config, sensor: SensorModel, seed: int,
           stats: UpdateStats) -> list[LineFeature]:
    if not lt.normalized:
        raise ValueError("pruning needs a normalized long-term grid")
    out: list[LineFeature] = []
    for i, line in enumerate(vmap.lines):
        parts = prune_line(line, lt, config, sensor, child_seed(seed, STAGE_PRUNE, i))
        if not parts:
            stats.deleted += 1
        elif len(parts) == 1 and parts[0] is line:
            stats.kept += 1
        else:
            stats.split += 1
            stats.fragments += len(parts)
        out.extend(parts)
    return out


def prune_against_sdf(vmap: VectorMap, lt: SdfGrid, config: Config, sensor: SensorModel,
                      seed: int) -> VectorMap:
    """Drop or shorten map lines that cross pixels with long-term weight below ``t2_stf``."""
    return vmap.replace(lines=_prune(vmap, lt, config, sensor, seed, UpdateStats()))


# ---------------------------------------------------------------- gating


def _projection(p, a, b):
    v = b - a
    t = float((p - a) @ v / (v @ v))
    return a + t * v, t


def chi_sq_statistics(new_line: LineFeature, map_line: LineFeature) -> tuple[float, float]:
    """Mahalanobis distances of the new endpoints from their projections on the map line."""
    a, b = map_line.p1, map_line.p2
    out = []
    for p, q_new in ((new_line.p1, new_line.q1), (new_line.p2, new_line.q2)):
        proj, t = _projection(p, a, b)
        u = min(max(t, 0.0), 1.0)
        q_int = (1.0 - u) * map_line.q1 + u * map_line.q2
        cov = q_int + q_new + REGULARIZATION * np.eye(2)
        d = p - proj
        out.append(float(d @ np.linalg.solve(cov, d)))
    return out[0], out[1]


def overlaps(new_line: LineFeature, map_line: LineFeature) -> bool:
    """Whether the new line's projection onto the map line overlaps it."""
    _, t1 = _projection(new_line.p1, map_line.p1, map_line.p2)
    _, t2 = _projection(new_line.p2, map_line.p1, map_line.p2)
    return min(max(t1, t2), 1.0) > max(min(t1, t2), 0.0)


def chi_sq_gate(new_line: LineFeature, map_line: LineFeature, t_chi: float) -> bool:
    """Both endpoint statistics below ``t_chi`` and the two lines overlap along their length.

    Projection is onto the infinite map line, so the statistic measures
    lateral disagreement only; the overlap condition keeps collinear but
    disjoint pieces (the two sides of a doorway) apart.
    """
    if not overlaps(new_line, map_line):
        return False
    c1, c2 = chi_sq_statistics(new_line, map_line)
    return c1 < t_chi and c2 < t_chi


def mutual_gate(a: LineFeature, b: LineFeature, t_chi: float) -> bool:
    return chi_sq_gate(a, b, t_chi) or chi_sq_gate(b, a, t_chi)


# ---------------------------------------------------------------- merging


def merge_lines(a: LineFeature, b: LineFeature) -> LineFeature:
    """Pool two lines through their decoupled scatter matrices.

    Raises :class:`MergeRejected` if the pooled scatter is isotropic.
    """
    mass = a.mass + b.mass
    if not mass > 0.0:
        raise MergeRejected("merged mass must be positive")
    centroid = (a.mass * a.centroid + b.mass * b.centroid) / mass
    d = a.centroid - b.centroid
    scatter = a.scatter + b.scatter + (a.mass * b.mass / mass) * np.outer(d, d)
    scatter = 0.5 * (scatter + scatter.T)
    vals, vecs = np.linalg.eigh(scatter)
    if not vals[1] - vals[0] > ISOTROPY_TOL * abs(vals[1]):
        raise MergeRejected("pooled scatter has no dominant direction")
    axis = vecs[:, 1]
    ends = np.array([a.p1, a.p2, b.p1, b.p2])
    covs = np.array([a.q1, a.q2, b.q1, b.q2])
    s = (ends - centroid) @ axis
    proj = centroid + s[:, None] * axis
    # Ties (for example a self-merge) go to the smaller covariance, then to
    # the lexicographically smaller point, so the result is order-independent.
    tr = np.trace(covs, axis1=1, axis2=2)
    lo = np.lexsort((ends[:, 1], ends[:, 0], tr, s))[0]
    hi = np.lexsort((ends[:, 1], ends[:, 0], tr, -s))[0]

    def inherited(k):
        disp = proj[k] - ends[k]
        return covs[k] + np.outer(disp, disp)

    p1, p2, q1, q2 = proj[lo], proj[hi], inherited(lo), inherited(hi)
    c1, c2 = canonical_order(p1, p2)
    if c1 is not p1:
        q1, q2 = q2, q1
    return LineFeature(p1=c1, p2=c2, q1=q1, q2=q2, centroid=centroid, mass=mass, scatter=scatter)


def _merge_into(lines: list[LineFeature], new: LineFeature, t_chi: float) -> bool:
    for j, old in enumerate(lines):
        if chi_sq_gate(new, old, t_chi):
            try:
                lines[j] = merge_lines(old, new)
            except MergeRejected:
                continue
            return True
    return False


def merge_to_fixpoint(lines: list[LineFeature], t_chi: float) -> tuple[list[LineFeature], int]:
    """Merge gated pairs until none remains; the lower index absorbs the higher."""
    lines = list(lines)
    merges = 0
    rejected: set[tuple[LineFeature, LineFeature]] = set()
    changed = True
    while changed:
        changed = False
        for i in range(len(lines)):
            for j in range(i + 1, len(lines)):
                key = (lines[i], lines[j])
                if key in rejected or not mutual_gate(lines[i], lines[j], t_chi):
                    continue
                try:
                    merged = merge_lines(lines[i], lines[j])
                except MergeRejected:
                    rejected.add(key)
                    continue
                lines[i] = merged
                del lines[j]
                merges += 1
                changed = True
                break
            if changed:
                break
    return lines, merges


def update_map_with_stats(new_lines, vmap: VectorMap, lt: SdfGrid, config: Config,
                          sensor: SensorModel, seed: int) -> tuple[VectorMap, UpdateStats]:
    stats = UpdateStats()
    lines = _prune(vmap, lt, config, sensor, seed, stats)
    for new in new_lines:
        if _merge_into(lines, new, config.t_chi):
            stats.merged += 1
        else:
            lines.append(new)
            stats.inserted += 1
    lines, stats.fixpoint_merges = merge_to_fixpoint(lines, config.t_chi)
    out = VectorMap(lines=tuple(lines), deployment_count=vmap.deployment_count + 1,
                    config_snapshot=config)
    return out, stats


def update_map(new_lines, vmap: VectorMap, lt: SdfGrid, config: Config, sensor: SensorModel,
               seed: int) -> VectorMap:
    """Prune the map, fold in the new lines, and merge to a fixpoint."""
    return update_map_with_stats(new_lines, vmap, lt, config, sensor, seed)[0]
