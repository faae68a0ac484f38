"""Shared geometric types, sensor model and configuration.

Scans are stored column-wise (numpy arrays) because a single deployment
easily holds 10^5 returns; :class:`Observation` objects are produced on
demand when iterating a :class:`CompositeScan`.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator

import numpy as np


def normalize_angle(theta: float) -> float:
    """Wrap an angle to (-pi, pi]."""
    wrapped = math.remainder(theta, 2.0 * math.pi)
    if wrapped <= -math.pi:
        wrapped += 2.0 * math.pi
    return wrapped


def normalize_angles(theta: np.ndarray) -> np.ndarray:
    """Vectorized :func:`normalize_angle`; values already in range pass through unchanged."""
    theta = np.asarray(theta, dtype=float)
    inside = (theta > -np.pi) & (theta <= np.pi)
    if inside.all():
        return theta
    wrapped = np.remainder(theta + np.pi, 2.0 * np.pi) - np.pi
    wrapped[wrapped <= -np.pi] += 2.0 * np.pi
    return np.where(inside, theta, wrapped)


@dataclass(frozen=True, slots=True)
class Pose:
    """Robot pose in the world frame (meters, radians)."""

    x: float
    y: float
    theta: float

    def __post_init__(self) -> None:
        object.__setattr__(self, "theta", normalize_angle(float(self.theta)))


@dataclass(frozen=True, slots=True)
class Observation:
    """One laser return: range, bearing in the sensor frame, recording pose."""

    rho: float
    alpha: float
    pose: Pose

    def __post_init__(self) -> None:
        if not self.rho > 0.0:
            raise ValueError(f"range must be positive, got {self.rho}")
        object.__setattr__(self, "alpha", normalize_angle(float(self.alpha)))


def observation_world_point(c: Observation) -> np.ndarray:
    beta = c.pose.theta + c.alpha
    return np.array([c.pose.x + c.rho * math.cos(beta), c.pose.y + c.rho * math.sin(beta)])


@dataclass(frozen=True, eq=False)
class CompositeScan:
    """All registered returns of one deployment, in recording order.

    The five columns share one length; ``observations`` materializes them
    as :class:`Observation` objects. Angles are wrapped to (-pi, pi].
    """

    rho: np.ndarray
    alpha: np.ndarray
    x: np.ndarray
    y: np.ndarray
    theta: np.ndarray
    deployment_id: int = 0

    def __post_init__(self) -> None:
        cols = [np.ascontiguousarray(np.asarray(getattr(self, n), dtype=float).reshape(-1))
                for n in ("rho", "alpha", "x", "y", "theta")]
        if len({c.size for c in cols}) != 1:
            raise ValueError("scan columns have different lengths")
        cols[1] = np.ascontiguousarray(normalize_angles(cols[1]))
        cols[4] = np.ascontiguousarray(normalize_angles(cols[4]))
        for name, col in zip(("rho", "alpha", "x", "y", "theta"), cols):
            col.setflags(write=False)
            object.__setattr__(self, name, col)

    @classmethod
    def from_observations(cls, observations, deployment_id: int = 0) -> "CompositeScan":
        obs = list(observations)
        return cls(
            rho=np.array([o.rho for o in obs], dtype=float),
            alpha=np.array([o.alpha for o in obs], dtype=float),
            x=np.array([o.pose.x for o in obs], dtype=float),
            y=np.array([o.pose.y for o in obs], dtype=float),
            theta=np.array([o.pose.theta for o in obs], dtype=float),
            deployment_id=deployment_id,
        )

    @classmethod
    def empty(cls, deployment_id: int = 0) -> "CompositeScan":
        z = np.zeros(0)
        return cls(z, z, z, z, z, deployment_id)

    def __len__(self) -> int:
        return self.rho.size

    def __getitem__(self, i: int) -> Observation:
        return Observation(float(self.rho[i]), float(self.alpha[i]),
                           Pose(float(self.x[i]), float(self.y[i]), float(self.theta[i])))

    def __iter__(self) -> Iterator[Observation]:
        for i in range(len(self)):
            yield self[i]

    @property
    def observations(self) -> list[Observation]:
        return list(self)

    def subset(self, index) -> "CompositeScan":
        """Rows selected by a boolean mask or an index array, order preserved."""
        index = np.asarray(index)
        if index.dtype == bool:
            index = np.flatnonzero(index)
        else:
            index = np.sort(index)
        return CompositeScan(self.rho[index], self.alpha[index], self.x[index],
                             self.y[index], self.theta[index], self.deployment_id)

    def bearings(self) -> np.ndarray:
        """World-frame ray direction angle of each return."""
        return self.theta + self.alpha

    def world_points(self) -> np.ndarray:
        beta = self.bearings()
        return np.column_stack((self.x + self.rho * np.cos(beta), self.y + self.rho * np.sin(beta)))

    def poses(self) -> np.ndarray:
        return np.column_stack((self.x, self.y))


@dataclass(frozen=True, slots=True)
class SensorModel:
    """Laser noise model.

    ``epsilon`` and ``sigma_w`` shape the SDF weight profile (full weight
    inside ``epsilon``, Gaussian falloff with rate ``sigma_w`` in 1/m^2).
    """

    sigma_rho: float = 0.01
    sigma_alpha: float = 0.001
    epsilon: float = 0.03
    sigma_w: float = 1000.0
    max_range: float = 20.0

    def __post_init__(self) -> None:
        for f in dataclasses.fields(self):
            value = getattr(self, f.name)
            if not (isinstance(value, (int, float)) and value > 0.0 and math.isfinite(value)):
                raise ValueError(f"sensor.{f.name} must be strictly positive, got {value!r}")


@dataclass(frozen=True, slots=True)
class Config:
    """Thresholds and physical constants. Defaults are the published values."""

    t1_df: float = 0.2
    t2_stf: float = 0.95
    t_chi: float = 30.0
    t_d: float = 0.05
    t_r: float = 0.12
    t_c: float = 0.05
    delta: float = 0.2
    grid_resolution_q: float = 0.05
    mc_samples_k: int = 100
    ransac_iters: int = 50
    min_inliers: int = 10
    rng_seed: int = 0
    ransac_radius: float = 0.5

    def __post_init__(self) -> None:
        for name in ("t1_df", "t2_stf"):
            v = getattr(self, name)
            if not 0.0 < v < 1.0:
                raise ValueError(f"{name} must lie in (0, 1), got {v}")
        for name in ("t_chi", "t_d", "t_r", "t_c", "delta", "grid_resolution_q", "ransac_radius"):
            v = getattr(self, name)
            if not v > 0.0:
                raise ValueError(f"{name} must be positive, got {v}")
        for name in ("mc_samples_k", "ransac_iters", "min_inliers"):
            v = getattr(self, name)
            if int(v) != v or v < 1:
                raise ValueError(f"{name} must be a positive integer, got {v}")
            object.__setattr__(self, name, int(v))
        if int(self.rng_seed) != self.rng_seed or not -(2**63) <= self.rng_seed < 2**64:
            raise ValueError(f"rng_seed must be a 64-bit integer, got {self.rng_seed}")
        object.__setattr__(self, "rng_seed", int(self.rng_seed))

    def check_sensor(self, sensor: SensorModel) -> None:
        if not sensor.epsilon < self.delta:
            raise ValueError(f"sensor.epsilon ({sensor.epsilon}) must be below delta ({self.delta})")

    def replace(self, **changes) -> "Config":
        return dataclasses.replace(self, **changes)

    def as_dict(self) -> dict:
        return dataclasses.asdict(self)


CONFIG_FIELDS = tuple(f.name for f in dataclasses.fields(Config))
SENSOR_FIELDS = tuple(f.name for f in dataclasses.fields(SensorModel))
_INT_FIELDS = {"mc_samples_k", "ransac_iters", "min_inliers", "rng_seed"}


class ConfigError(ValueError):
    pass


def parse_config_text(text: str, source: str = "<string>") -> tuple[Config, SensorModel]:
    """Parse ``key = value`` lines; ``#`` starts a comment.

    Keys are the field names of :class:`Config` and :class:`SensorModel`.
    Missing keys keep their defaults.
    """
    cfg: dict = {}
    sen: dict = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value', got {raw.strip()!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        target = cfg if key in CONFIG_FIELDS else sen if key in SENSOR_FIELDS else None
        if target is None:
            raise ConfigError(f"{source}:{lineno}: unknown key {key!r}")
        if key in target:
            raise ConfigError(f"{source}:{lineno}: duplicate key {key!r}")
        try:
            target[key] = int(value, 0) if key in _INT_FIELDS else float(value)
        except ValueError:
            raise ConfigError(f"{source}:{lineno}: bad value for {key}: {value!r}") from None
    try:
        config, sensor = Config(**cfg), SensorModel(**sen)
        config.check_sensor(sensor)
    except ValueError as exc:
        raise ConfigError(f"{source}: {exc}") from None
    return config, sensor


def load_config(path: str | Path) -> tuple[Config, SensorModel]:
    path = Path(path)
    return parse_config_text(path.read_text(), source=str(path))


def format_config(config: Config, sensor: SensorModel | None = None) -> str:
    lines = [f"{k} = {getattr(config, k)!r}" for k in CONFIG_FIELDS]
    if sensor is not None:
        lines += [f"{k} = {getattr(sensor, k)!r}" for k in SENSOR_FIELDS]
    return "\n".join(lines) + "\n"


# Stage tags for deriving independent child streams from Config.rng_seed.
STAGE_SCANGEN = 1
STAGE_EXTRACT = 2
STAGE_UNCERTAINTY = 3
STAGE_PRUNE = 4


def child_rng(seed: int, *keys: int) -> np.random.Generator:
    """Deterministic generator for the stream identified by ``(seed, *keys)``."""
    ss = np.random.SeedSequence(entropy=int(seed) % 2**64, spawn_key=tuple(int(k) for k in keys))
    return np.random.default_rng(ss)


def child_seed(seed: int, *keys: int) -> int:
    ss = np.random.SeedSequence(entropy=int(seed) % 2**64, spawn_key=tuple(int(k) for k in keys))
    return int(ss.generate_state(1, dtype=np.uint64)[0])
