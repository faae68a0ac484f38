"""Short-term / long-term signed distance fields and observation filtering.

Sign convention: ``r > 0`` between the sensor and the hit, ``r < 0`` behind
it, so the value plane is positive in free space.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass

import numpy as np

from . import _kernels
from .core import CompositeScan, Config, SensorModel


class GridMismatchError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class SdfGrid:
    """Value/weight planes on a lattice of pitch ``resolution``.

    Pixel ``(i, j)`` (row, column) is centred at
    ``origin + (j * resolution, i * resolution)``. ``counts`` holds, per
    pixel, the number of deployments in which any ray reached the pixel;
    for a short-term grid it is the number of rays that touched it.
    """

    origin: tuple[float, float]
    resolution: float
    values: np.ndarray
    weights: np.ndarray
    counts: np.ndarray
    normalized: bool = False
    deployment_count: int = 0

    def __post_init__(self) -> None:
        if not (self.values.shape == self.weights.shape == self.counts.shape) or self.values.ndim != 2:
            raise ValueError("grid planes must be 2-D and share one shape")

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]

    @property
    def index_origin(self) -> tuple[int, int]:
        """Lattice index of pixel (0, 0) (column, row)."""
        q = self.resolution
        return round(self.origin[0] / q), round(self.origin[1] / q)

    def to_grid(self, points: np.ndarray) -> np.ndarray:
        """World points -> continuous (col, row) coordinates, pixel centres at integers."""
        points = np.asarray(points, dtype=float)
        return (points - np.asarray(self.origin)) / self.resolution

    def pixel_centers(self) -> tuple[np.ndarray, np.ndarray]:
        xs = self.origin[0] + np.arange(self.width) * self.resolution
        ys = self.origin[1] + np.arange(self.height) * self.resolution
        return xs, ys

    def replace(self, **changes) -> "SdfGrid":
        return dataclasses.replace(self, **changes)


def truncate_distance(r: float, delta: float) -> float:
    if r > delta:
        return delta
    if r < -delta:
        return -delta
    return r


def ray_weight(r: float, sensor: SensorModel, delta: float) -> float:
    a = abs(r)
    if a < sensor.epsilon:
        return 1.0
    if a <= delta:
        return math.exp(-sensor.sigma_w * (a - sensor.epsilon) ** 2)
    return 0.0


def _lattice_extent(xmin, ymin, xmax, ymax, q):
    i0 = math.floor(xmin / q)
    j0 = math.floor(ymin / q)
    i1 = math.ceil(xmax / q)
    j1 = math.ceil(ymax / q)
    return i0, j0, i1 - i0 + 1, j1 - j0 + 1


def empty_grid(index_origin: tuple[int, int], shape: tuple[int, int], q: float) -> SdfGrid:
    z = np.zeros(shape)
    return SdfGrid((index_origin[0] * q, index_origin[1] * q), q, z, z.copy(), z.copy())


def build_st_sdf(scan: CompositeScan, config: Config, sensor: SensorModel) -> SdfGrid:
    """Accumulate every ray of ``scan`` into a fresh short-term grid.

    Each pixel holds the weighted mean of the truncated distances of the
    rays that crossed it. Pixels crossed only by zero-weight (free space)
    segments take the value ``delta``; untouched pixels keep 0 and weight 0.
    """
    if len(scan) == 0:
        raise ValueError("cannot build an SDF from an empty scan")
    config.check_sensor(sensor)
    if np.any(scan.rho <= 0.0) or np.any(scan.rho > sensor.max_range):
        bad = int(np.flatnonzero((scan.rho <= 0.0) | (scan.rho > sensor.max_range))[0])
        raise ValueError(f"observation {bad} has range {scan.rho[bad]} outside (0, {sensor.max_range}]")
    q, delta = config.grid_resolution_q, config.delta
    beta = scan.bearings()
    ux, uy = np.cos(beta), np.sin(beta)
    far_x = scan.x + (scan.rho + delta) * ux
    far_y = scan.y + (scan.rho + delta) * uy
    margin = 3.0 * delta
    xmin = min(far_x.min(), scan.x.min()) - margin
    xmax = max(far_x.max(), scan.x.max()) + margin
    ymin = min(far_y.min(), scan.y.min()) - margin
    ymax = max(far_y.max(), scan.y.max()) + margin
    i0, j0, w, h = _lattice_extent(xmin, ymin, xmax, ymax, q)
    wsum = np.zeros((h, w))
    wdsum = np.zeros((h, w))
    touched = np.zeros((h, w))
    ox, oy = i0 * q, j0 * q
    _kernels.accumulate_rays(scan.x, scan.y, ux, uy, scan.rho, ox, oy, q, delta,
                             sensor.epsilon, sensor.sigma_w, wsum, wdsum, touched)
    values = np.zeros((h, w))
    pos = wsum > 0.0
    values[pos] = wdsum[pos] / wsum[pos]
    values[(~pos) & (touched > 0)] = delta
    return SdfGrid((ox, oy), q, values, wsum, touched)


def normalize_weights(grid: SdfGrid, t1_df: float) -> SdfGrid:
    """Binary weights: 1 where ``w / w_max > t1_df``, else 0."""
    if grid.normalized:
        raise ValueError("grid is already normalized")
    w_max = float(grid.weights.max()) if grid.weights.size else 0.0
    if not w_max > 0.0:
        raise ValueError("grid has no positive weight to normalize against")
    binary = (grid.weights / w_max > t1_df).astype(float)
    return grid.replace(weights=binary, counts=(grid.counts > 0).astype(float), normalized=True)


def embed(grid: SdfGrid, index_origin: tuple[int, int], shape: tuple[int, int]) -> SdfGrid:
    """Re-grid onto a larger lattice window; new pixels carry zero weight."""
    c0, r0 = grid.index_origin
    dc, dr = c0 - index_origin[0], r0 - index_origin[1]
    h, w = shape
    if dc < 0 or dr < 0 or dc + grid.width > w or dr + grid.height > h:
        raise ValueError("target window does not contain the grid")
    out = []
    for plane in (grid.values, grid.weights, grid.counts):
        big = np.zeros(shape)
        big[dr:dr + grid.height, dc:dc + grid.width] = plane
        out.append(big)
    q = grid.resolution
    return grid.replace(origin=(index_origin[0] * q, index_origin[1] * q),
                        values=out[0], weights=out[1], counts=out[2])


def _union_window(a: SdfGrid, b: SdfGrid):
    ac, ar = a.index_origin
    bc, br = b.index_origin
    c0, r0 = min(ac, bc), min(ar, br)
    c1 = max(ac + a.width, bc + b.width)
    r1 = max(ar + a.height, br + b.height)
    return (c0, r0), (r1 - r0, c1 - c0)


def update_lt_sdf(lt: SdfGrid | None, st: SdfGrid) -> SdfGrid:
    """Fuse a normalized short-term grid into the long-term grid.

    The long-term weight of a pixel is the fraction of the deployments that
    reached it in which it carried short-term weight 1; its value is the
    weight-weighted mean of the short-term values.
    """
    if not st.normalized:
        raise ValueError("short-term grid must be normalized first")
    if lt is None or lt.deployment_count == 0:
        return st.replace(deployment_count=1)
    if not math.isclose(lt.resolution, st.resolution, rel_tol=0.0, abs_tol=1e-12):
        raise GridMismatchError(f"resolution mismatch: {lt.resolution} vs {st.resolution}")
    origin, shape = _union_window(lt, st)
    lt = embed(lt, origin, shape)
    st = embed(st, origin, shape)
    seen = st.counts > 0
    lt_sum = lt.weights * lt.counts
    counts = lt.counts + seen
    wsum = lt_sum + st.weights
    weights = np.divide(wsum, counts, out=np.zeros(shape), where=counts > 0)
    values = lt.values.copy()
    pos = wsum > 0.0
    values[pos] = (lt_sum[pos] * lt.values[pos] + st.weights[pos] * st.values[pos]) / wsum[pos]
    # Without any positive weight the latest observed value is kept.
    fresh = (~pos) & seen
    values[fresh] = st.values[fresh]
    return lt.replace(values=values, weights=weights, counts=counts, normalized=True,
                      deployment_count=lt.deployment_count + 1)


def catmull_rom_weights(t: np.ndarray) -> np.ndarray:
    """Cubic convolution (a = -1/2) weights for offsets -1, 0, 1, 2; shape (4, n)."""
    t = np.asarray(t, dtype=float)
    t2 = t * t
    t3 = t2 * t
    return 0.5 * np.stack((-t3 + 2 * t2 - t,
                           3 * t3 - 5 * t2 + 2,
                           -3 * t3 + 4 * t2 + t,
                           t3 - t2))


def bicubic_sample_many(grid: SdfGrid, points: np.ndarray, field: str) -> tuple[np.ndarray, np.ndarray]:
    """Catmull-Rom interpolation at many points.

    Returns ``(samples, valid)``; points closer than two pixels to the grid
    border are invalid and their sample is NaN.
    """
    plane = {"weights": grid.weights, "values": grid.values}[field]
    g = grid.to_grid(np.atleast_2d(points))
    gx, gy = g[:, 0], g[:, 1]
    valid = (gx >= 2) & (gx <= grid.width - 3) & (gy >= 2) & (gy <= grid.height - 3)
    out = np.full(gx.shape, np.nan)
    if not valid.any():
        return out, valid
    gx, gy = gx[valid], gy[valid]
    j0 = np.floor(gx).astype(np.int64)
    i0 = np.floor(gy).astype(np.int64)
    wx = catmull_rom_weights(gx - j0)
    wy = catmull_rom_weights(gy - i0)
    acc = np.zeros(gx.shape)
    for a in range(4):
        rows = i0 + a - 1
        inner = np.zeros(gx.shape)
        for b in range(4):
            inner += wx[b] * plane[rows, j0 + b - 1]
        acc += wy[a] * inner
    out[valid] = acc
    return out, valid


def bicubic_sample(grid: SdfGrid, point, field: str) -> float:
    vals, valid = bicubic_sample_many(grid, np.asarray(point, dtype=float).reshape(1, 2), field)
    if not valid[0]:
        raise IndexError(f"point {tuple(point)} is within two pixels of the grid border")
    return float(vals[0])


def filter_mask(scan: CompositeScan, lt: SdfGrid, config: Config) -> np.ndarray:
    if not lt.normalized:
        raise ValueError("filtering needs a normalized long-term grid")
    if len(scan) == 0:
        return np.zeros(0, dtype=bool)
    pts = scan.world_points()
    w, valid = bicubic_sample_many(lt, pts, "weights")
    v, _ = bicubic_sample_many(lt, pts, "values")
    keep = np.zeros(len(scan), dtype=bool)
    keep[valid] = (w[valid] > config.t2_stf) & (np.abs(v[valid]) < config.t_d)
    return keep


def filter_scan(scan: CompositeScan, lt: SdfGrid, config: Config) -> CompositeScan:
    """Observations whose interpolated long-term weight exceeds ``t2_stf``
    and whose interpolated value lies within ``t_d`` of the surface."""
    return scan.subset(filter_mask(scan, lt, config))
