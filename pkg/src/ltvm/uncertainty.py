"""Per-observation sensor covariance and Monte Carlo endpoint covariance."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import CompositeScan, Observation, SensorModel, child_rng
from .extract import DegenerateFitError, LineFeature, fit_line


@dataclass(frozen=True, eq=False)
class ObservationCovariance:
    q: np.ndarray

    def __post_init__(self) -> None:
        q = np.array(self.q, dtype=float).reshape(2, 2)
        q.setflags(write=False)
        object.__setattr__(self, "q", q)


def _as_scan(inliers) -> CompositeScan:
    if isinstance(inliers, CompositeScan):
        return inliers
    if isinstance(inliers, Observation):
        return CompositeScan.from_observations([inliers])
    return CompositeScan.from_observations(inliers)


def covariance_from_polar(rho, beta, sensor: SensorModel) -> np.ndarray:
    """Radial variance sigma_rho^2 plus tangential variance (rho sigma_alpha)^2.

    ``beta`` is the world-frame bearing. Works elementwise; the result has
    shape ``rho.shape + (2, 2)``.
    """
    rho = np.asarray(rho, dtype=float)
    beta = np.asarray(beta, dtype=float)
    c, s = np.cos(beta), np.sin(beta)
    var_r = sensor.sigma_rho ** 2
    var_t = (rho * sensor.sigma_alpha) ** 2
    q = np.empty(rho.shape + (2, 2))
    q[..., 0, 0] = var_r * c * c + var_t * s * s
    q[..., 1, 1] = var_r * s * s + var_t * c * c
    q[..., 0, 1] = q[..., 1, 0] = (var_r - var_t) * s * c
    return q


def sensor_covariance(c: Observation, sensor: SensorModel) -> ObservationCovariance:
    return ObservationCovariance(covariance_from_polar(c.rho, c.pose.theta + c.alpha, sensor))


def scan_covariances(scan: CompositeScan, sensor: SensorModel) -> np.ndarray:
    return covariance_from_polar(scan.rho, scan.bearings(), sensor)


def _sampler(scan: CompositeScan, sensor: SensorModel):
    """``draw(rng)`` returning one Gaussian perturbation of the scan's world points.

    Sampling along the radial and tangential unit vectors with the two
    standard deviations draws exactly from N(p, Q) without a factorization.
    """
    beta = scan.bearings()
    ur = np.column_stack((np.cos(beta), np.sin(beta)))
    ut = np.column_stack((-ur[:, 1], ur[:, 0]))
    base = scan.world_points()
    sigma_t = scan.rho * sensor.sigma_alpha

    def draw(rng: np.random.Generator) -> np.ndarray:
        z = rng.standard_normal((base.shape[0], 2))
        return base + (sensor.sigma_rho * z[:, 0])[:, None] * ur + (sigma_t * z[:, 1])[:, None] * ut

    return draw


def resample_inliers(inliers, sensor: SensorModel, seed) -> np.ndarray:
    """One Gaussian draw around each observation's world point."""
    scan = _as_scan(inliers)
    if len(scan) == 0:
        raise ValueError("no inliers to resample")
    rng = seed if isinstance(seed, np.random.Generator) else child_rng(seed)
    return _sampler(scan, sensor)(rng)


def _matched(line: LineFeature, a: np.ndarray, b: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    # Refits come back in canonical order, which can flip for near-vertical
    # lines; pair them with the reference endpoints by direction instead.
    if (b - a) @ (line.p2 - line.p1) < 0.0:
        return b, a
    return a, b


def endpoint_samples(line: LineFeature, draw, k: int, seed: int) -> tuple[np.ndarray, np.ndarray]:
    """Run ``k`` draw-and-refit rounds; ``draw(rng)`` returns a point set.

    A failed fit is retried once with a fresh draw; a second failure skips
    the round. Returns the two ``(m, 2)`` endpoint sample arrays.
    """
    e1, e2 = [], []
    for r in range(k):
        for attempt in range(2):
            rng = child_rng(seed, r, attempt)
            try:
                a, b = fit_line(draw(rng), line.p1, line.p2)
            except DegenerateFitError:
                continue
            a, b = _matched(line, a, b)
            e1.append(a)
            e2.append(b)
            break
    if len(e1) < 2:
        raise DegenerateFitError(f"only {len(e1)} of {k} resample rounds produced a fit")
    return np.array(e1), np.array(e2)


def sample_covariance(samples: np.ndarray) -> np.ndarray:
    """Scatter of the samples about their mean divided by ``m - 1``; symmetrized.

    Samples are shifted by the first one before centring, so identical
    samples give exactly zero.
    """
    shifted = samples - samples[0]
    d = shifted - shifted.mean(axis=0)
    q = d.T @ d / (samples.shape[0] - 1)
    return 0.5 * (q + q.T)


def estimate_endpoint_covariance(line: LineFeature, inliers, k: int, sensor: SensorModel,
                                 seed: int) -> tuple[np.ndarray, np.ndarray]:
    if k < 2:
        raise ValueError("need at least two resample rounds")
    scan = _as_scan(inliers)
    if len(scan) < 2:
        raise ValueError("need at least two inliers")
    e1, e2 = endpoint_samples(line, _sampler(scan, sensor), k, seed)
    return sample_covariance(e1), sample_covariance(e2)


def covariance_ellipse(q: np.ndarray, n_sigma: float = 3.0) -> tuple[float, float, float]:
    """Semi-axes and orientation (radians) of the ``n_sigma`` ellipse of ``q``."""
    vals, vecs = np.linalg.eigh(np.asarray(q, dtype=float))
    vals = np.clip(vals, 0.0, None)
    major = vecs[:, 1]
    return (n_sigma * math.sqrt(vals[1]), n_sigma * math.sqrt(vals[0]),
            math.atan2(major[1], major[0]))
