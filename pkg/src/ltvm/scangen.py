"""Synthetic environments and labelled deployments.

An :class:`EnvironmentSpec` lists permanent walls (optionally with doors),
movable convex obstacles and moving disk agents. :func:`realize_deployment`
draws one deployment's door states, obstacle placements and agent phases;
:func:`simulate_scan` ray-casts a robot path through that realization and
labels each return by the class of object it hit.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .core import STAGE_SCANGEN, CompositeScan, Pose, SensorModel, child_rng

LTF, STF, DF = 0, 1, 2
LABEL_NAMES = ("LTF", "STF", "DF")
MAX_PLACEMENT_TRIES = 100
RAY_CHUNK = 8192


class ScenarioError(ValueError):
    pass


class PlacementError(RuntimeError):
    pass


def _pt(p) -> tuple[float, float]:
    x, y = p
    return float(x), float(y)


@dataclass(frozen=True)
class Door:
    """Opening between ``start`` and ``end`` meters from the wall's first point."""

    start: float
    end: float
    open_probability: float


@dataclass(frozen=True)
class Wall:
    a: tuple[float, float]
    b: tuple[float, float]
    doors: tuple[Door, ...] = ()

    def __post_init__(self) -> None:
        object.__setattr__(self, "a", _pt(self.a))
        object.__setattr__(self, "b", _pt(self.b))
        object.__setattr__(self, "doors", tuple(sorted(self.doors, key=lambda d: d.start)))
        if self.length <= 0.0:
            raise ScenarioError("wall endpoints coincide")
        prev = 0.0
        for d in self.doors:
            if not prev < d.start < d.end < self.length:
                raise ScenarioError(f"door [{d.start}, {d.end}] must lie strictly inside the wall "
                                    f"(length {self.length:.3f}) and not overlap another door")
            if not 0.0 <= d.open_probability <= 1.0:
                raise ScenarioError(f"door open probability {d.open_probability} outside [0, 1]")
            prev = d.end

    @property
    def length(self) -> float:
        return math.hypot(self.b[0] - self.a[0], self.b[1] - self.a[1])

    def point_at(self, s: float) -> tuple[float, float]:
        f = s / self.length
        return (self.a[0] + f * (self.b[0] - self.a[0]), self.a[1] + f * (self.b[1] - self.a[1]))

    def solid_intervals(self) -> list[tuple[float, float]]:
        """Wall pieces (in meters along the wall) between the doors."""
        out, s = [], 0.0
        for d in self.doors:
            out.append((s, d.start))
            s = d.end
        out.append((s, self.length))
        return out


@dataclass(frozen=True)
class MovableObject:
    """Convex polygon present with probability ``presence``; jittered per deployment."""

    vertices: tuple[tuple[float, float], ...]
    presence: float
    jitter: float = 0.0
    rotation_jitter: float = 0.0

    def __post_init__(self) -> None:
        v = np.array(self.vertices, dtype=float)
        if v.ndim != 2 or v.shape[0] < 3 or v.shape[1] != 2:
            raise ScenarioError("an obstacle needs at least three 2-D vertices")
        area2 = float(np.sum(v[:, 0] * np.roll(v[:, 1], -1) - np.roll(v[:, 0], -1) * v[:, 1]))
        if area2 == 0.0:
            raise ScenarioError("obstacle polygon has zero area")
        if area2 < 0.0:
            v = v[::-1]
        if not _is_convex(v):
            raise ScenarioError("obstacle polygon must be convex")
        object.__setattr__(self, "vertices", tuple(_pt(p) for p in v))
        if not 0.0 <= self.presence <= 1.0:
            raise ScenarioError(f"presence probability {self.presence} outside [0, 1]")
        if self.jitter < 0.0 or self.rotation_jitter < 0.0:
            raise ScenarioError("jitter must be non-negative")


@dataclass(frozen=True)
class Agent:
    """Disk moving at constant speed around a closed waypoint loop."""

    radius: float
    speed: float
    waypoints: tuple[tuple[float, float], ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "waypoints", tuple(_pt(p) for p in self.waypoints))
        if self.radius <= 0.0 or self.speed < 0.0 or len(self.waypoints) < 2:
            raise ScenarioError("agent needs radius > 0, speed >= 0 and two or more waypoints")

    def loop(self) -> tuple[np.ndarray, np.ndarray]:
        pts = np.array(self.waypoints + (self.waypoints[0],))
        seg = np.hypot(*np.diff(pts, axis=0).T)
        return pts, np.concatenate(([0.0], np.cumsum(seg)))

    def positions(self, phase: float, times: np.ndarray) -> np.ndarray:
        pts, cum = self.loop()
        s = np.mod(phase + self.speed * np.asarray(times, dtype=float), cum[-1])
        return np.column_stack((np.interp(s, cum, pts[:, 0]), np.interp(s, cum, pts[:, 1])))


@dataclass(frozen=True)
class EnvironmentSpec:
    walls: tuple[Wall, ...]
    stfs: tuple[MovableObject, ...] = ()
    dfs: tuple[Agent, ...] = ()
    seed: int = 0
    keepout: tuple[tuple[float, float], ...] = ()
    keepout_clearance: float = 0.3
    bounds: tuple[float, float, float, float] | None = None

    def __post_init__(self) -> None:
        for name in ("walls", "stfs", "dfs"):
            object.__setattr__(self, name, tuple(getattr(self, name)))
        object.__setattr__(self, "keepout", tuple(_pt(p) for p in self.keepout))
        if not self.walls:
            raise ScenarioError("an environment needs at least one wall")
        if self.bounds is None:
            xy = np.array([w.a for w in self.walls] + [w.b for w in self.walls])
            lo, hi = xy.min(axis=0), xy.max(axis=0)
            object.__setattr__(self, "bounds", (float(lo[0]), float(lo[1]), float(hi[0]), float(hi[1])))
        else:
            object.__setattr__(self, "bounds", tuple(float(b) for b in self.bounds))


# ---------------------------------------------------------------- geometry


def _is_convex(v: np.ndarray) -> bool:
    e = np.roll(v, -1, axis=0) - v
    cross = e[:, 0] * np.roll(e, -1, axis=0)[:, 1] - e[:, 1] * np.roll(e, -1, axis=0)[:, 0]
    return bool(np.all(cross >= -1e-12))


def _axes(poly: np.ndarray) -> np.ndarray:
    e = np.roll(poly, -1, axis=0) - poly
    n = np.column_stack((-e[:, 1], e[:, 0]))
    norms = np.hypot(n[:, 0], n[:, 1])
    return n[norms > 0] / norms[norms > 0, None]


def convex_overlap(a: np.ndarray, b: np.ndarray) -> bool:
    """Separating-axis test for two convex point sets (a segment is a 2-gon)."""
    for axis in np.vstack((_axes(a), _axes(b))):
        pa, pb = a @ axis, b @ axis
        if pa.max() < pb.min() or pb.max() < pa.min():
            return False
    return True


def segment_segment_distance(p, q, r, s) -> float:
    if convex_overlap(np.array([p, q]), np.array([r, s])):
        return 0.0

    def pt_seg(x, a, b):
        v = b - a
        t = np.clip((x - a) @ v / (v @ v), 0.0, 1.0)
        return float(np.hypot(*(x - a - t * v)))

    return min(pt_seg(p, r, s), pt_seg(q, r, s), pt_seg(r, p, q), pt_seg(s, p, q))


def polygon_segment_distance(poly: np.ndarray, a, b) -> float:
    a, b = np.asarray(a, float), np.asarray(b, float)
    if convex_overlap(poly, np.array([a, b])):
        return 0.0
    return min(segment_segment_distance(poly[i], poly[(i + 1) % len(poly)], a, b) for i in range(len(poly)))


def point_in_convex(poly: np.ndarray, p) -> bool:
    e = np.roll(poly, -1, axis=0) - poly
    w = np.asarray(p, float) - poly
    return bool(np.all(e[:, 0] * w[:, 1] - e[:, 1] * w[:, 0] > 0.0))


def _place(obj: MovableObject, rng: np.random.Generator) -> np.ndarray:
    v = np.array(obj.vertices)
    c = v.mean(axis=0)
    ang = rng.normal(0.0, obj.rotation_jitter) if obj.rotation_jitter > 0 else 0.0
    off = rng.normal(0.0, obj.jitter, 2) if obj.jitter > 0 else np.zeros(2)
    rot = np.array([[math.cos(ang), -math.sin(ang)], [math.sin(ang), math.cos(ang)]])
    return (v - c) @ rot.T + c + off


# ---------------------------------------------------------------- realization


@dataclass(frozen=True, eq=False)
class Scene:
    """One deployment's realization of an environment.

    ``segments`` rows are ``(ax, ay, bx, by)`` with class ``labels`` and
    ``owners`` indexing the wall (LTF), door or obstacle (STF) they belong
    to. Door owners are ``(wall, door)`` flattened in wall order.
    """

    env: EnvironmentSpec
    deployment_index: int
    door_open: tuple[bool, ...]
    stf_polygons: tuple[np.ndarray | None, ...]
    agent_phases: tuple[float, ...]
    segments: np.ndarray
    labels: np.ndarray
    owners: np.ndarray

    @property
    def stf_present(self) -> tuple[bool, ...]:
        return tuple(p is not None for p in self.stf_polygons)


def realize_deployment(env: EnvironmentSpec, deployment_index: int) -> Scene:
    rng = child_rng(env.seed, STAGE_SCANGEN, deployment_index, 0)
    segs, labels, owners = [], [], []
    door_open = []
    door_id = 0
    for wi, wall in enumerate(env.walls):
        for s0, s1 in wall.solid_intervals():
            segs.append(wall.point_at(s0) + wall.point_at(s1))
            labels.append(LTF)
            owners.append(wi)
        for d in wall.doors:
            is_open = bool(rng.random() < d.open_probability)
            door_open.append(is_open)
            if not is_open:
                segs.append(wall.point_at(d.start) + wall.point_at(d.end))
                labels.append(STF)
                owners.append(door_id)
            door_id += 1
    wall_segs = [np.array([w.a, w.b]) for w in env.walls]
    path = np.array(env.keepout) if env.keepout else np.zeros((0, 2))
    placed: list[np.ndarray | None] = []
    for k, obj in enumerate(env.stfs):
        present = bool(rng.random() < obj.presence)
        if not present:
            placed.append(None)
            continue
        for _ in range(MAX_PLACEMENT_TRIES):
            poly = _place(obj, rng)
            clash = any(p is not None and convex_overlap(poly, p) for p in placed)
            clash = clash or any(convex_overlap(poly, ws) for ws in wall_segs)
            clash = clash or any(polygon_segment_distance(poly, path[i], path[i + 1]) < env.keepout_clearance
                                 for i in range(len(path) - 1))
            if not clash:
                break
        else:
            raise PlacementError(f"obstacle {k} could not be placed without overlap "
                                 f"after {MAX_PLACEMENT_TRIES} tries (deployment {deployment_index})")
        placed.append(poly)
        for i in range(len(poly)):
            segs.append(tuple(poly[i]) + tuple(poly[(i + 1) % len(poly)]))
            labels.append(STF)
            owners.append(door_id + k)
    phases = tuple(float(rng.uniform(0.0, a.loop()[1][-1])) for a in env.dfs)
    return Scene(env, deployment_index, tuple(door_open), tuple(placed), phases,
                 np.array(segs, dtype=float).reshape(-1, 4), np.array(labels, dtype=np.int8),
                 np.array(owners, dtype=np.int64))


# ---------------------------------------------------------------- ray casting


@dataclass(frozen=True, eq=False)
class LabeledScan:
    scan: CompositeScan
    labels: np.ndarray
    truth: Scene
    owners: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))

    def __post_init__(self) -> None:
        if len(self.labels) != len(self.scan):
            raise ValueError("one label per observation required")


def cast_rays(origins: np.ndarray, directions: np.ndarray, segments: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Nearest positive hit distance of each ray against the segments.

    Returns ``(distance, segment index)``; misses give ``inf`` and -1.
    """
    n = origins.shape[0]
    if segments.shape[0] == 0:
        return np.full(n, np.inf), np.full(n, -1)
    a = segments[None, :, 0:2]
    e = segments[None, :, 2:4] - a
    d = directions[:, None, :]
    ao = a - origins[:, None, :]
    denom = d[..., 0] * e[..., 1] - d[..., 1] * e[..., 0]
    with np.errstate(divide="ignore", invalid="ignore"):
        s = (ao[..., 0] * e[..., 1] - ao[..., 1] * e[..., 0]) / denom
        u = (ao[..., 0] * d[..., 1] - ao[..., 1] * d[..., 0]) / denom
    hit = (denom != 0.0) & (s > 0.0) & (u >= 0.0) & (u <= 1.0)
    s = np.where(hit, s, np.inf)
    idx = np.argmin(s, axis=1)
    dist = s[np.arange(n), idx]
    return dist, np.where(np.isfinite(dist), idx, -1)


def cast_disks(origins, directions, centers, radius) -> np.ndarray:
    """Entry distance of each ray into a disk whose centre varies per ray; ``inf`` on a miss."""
    m = centers - origins
    b = np.einsum("ij,ij->i", m, directions)
    perp2 = np.einsum("ij,ij->i", m, m) - b * b
    disc = radius * radius - perp2
    s = b - np.sqrt(np.clip(disc, 0.0, None))
    return np.where((disc >= 0.0) & (s > 0.0), s, np.inf)


def simulate_scan(scene: Scene, robot_path, sensor: SensorModel, rays_per_pose: int,
                  pose_period: float = 0.1, noise: bool = True) -> LabeledScan:
    """Ray-cast every pose of ``robot_path`` through ``scene``.

    Ray ``j`` of pose ``k`` fires at bearing ``-pi + 2 pi j / rays_per_pose``
    at time ``(k + j / rays_per_pose) * pose_period``. Returns with no hit
    inside ``sensor.max_range`` are dropped.
    """
    poses = list(robot_path)
    if rays_per_pose < 1:
        raise ValueError("rays_per_pose must be positive")
    env = scene.env
    xmin, ymin, xmax, ymax = env.bounds
    for k, p in enumerate(poses):
        if not (xmin < p.x < xmax and ymin < p.y < ymax):
            raise ValueError(f"pose {k} ({p.x:.3f}, {p.y:.3f}) lies outside the environment")
        for poly in scene.stf_polygons:
            if poly is not None and point_in_convex(poly, (p.x, p.y)):
                raise ValueError(f"pose {k} ({p.x:.3f}, {p.y:.3f}) lies inside an obstacle")
    rng = child_rng(env.seed, STAGE_SCANGEN, scene.deployment_index, 1)
    n_rays = len(poses) * rays_per_pose
    alpha = -math.pi + 2.0 * math.pi * np.arange(rays_per_pose) / rays_per_pose
    px = np.repeat([p.x for p in poses], rays_per_pose)
    py = np.repeat([p.y for p in poses], rays_per_pose)
    pth = np.repeat([p.theta for p in poses], rays_per_pose)
    al = np.tile(alpha, len(poses))
    times = (np.repeat(np.arange(len(poses)), rays_per_pose) + np.tile(np.arange(rays_per_pose), len(poses))
             / rays_per_pose) * pose_period
    beta = pth + al
    dirs = np.column_stack((np.cos(beta), np.sin(beta)))
    origins = np.column_stack((px, py))
    rho = np.empty(n_rays)
    seg = np.empty(n_rays, dtype=np.int64)
    for lo in range(0, n_rays, RAY_CHUNK):
        hi = min(lo + RAY_CHUNK, n_rays)
        rho[lo:hi], seg[lo:hi] = cast_rays(origins[lo:hi], dirs[lo:hi], scene.segments)
    labels = np.where(seg >= 0, scene.labels[np.clip(seg, 0, None)], -1).astype(np.int8)
    owners = np.where(seg >= 0, scene.owners[np.clip(seg, 0, None)], -1)
    for ai, (agent, phase) in enumerate(zip(env.dfs, scene.agent_phases)):
        s = cast_disks(origins, dirs, agent.positions(phase, times), agent.radius)
        closer = s < rho
        rho[closer] = s[closer]
        labels[closer] = DF
        owners[closer] = ai
    # Noise is drawn for every ray so a dropout never shifts other rays' draws.
    z = rng.standard_normal((n_rays, 2)) if noise else np.zeros((n_rays, 2))
    rho_m = rho + sensor.sigma_rho * z[:, 0]
    al_m = al + sensor.sigma_alpha * z[:, 1]
    keep = np.isfinite(rho) & (rho <= sensor.max_range) & (rho_m > 0.0) & (rho_m <= sensor.max_range)
    scan = CompositeScan(rho_m[keep], al_m[keep], px[keep], py[keep], pth[keep],
                         deployment_id=scene.deployment_index)
    return LabeledScan(scan, labels[keep], scene, owners[keep])


# ---------------------------------------------------------------- scenarios


def path_poses(waypoints, step: float) -> list[Pose]:
    """Poses every ``step`` meters along a polyline, heading along the current leg."""
    pts = np.asarray(waypoints, dtype=float)
    poses: list[Pose] = []
    carry = 0.0
    for a, b in zip(pts[:-1], pts[1:]):
        v = b - a
        length = float(np.hypot(*v))
        if length == 0.0:
            continue
        heading = math.atan2(v[1], v[0])
        s = carry
        while s < length:
            p = a + v * (s / length)
            poses.append(Pose(float(p[0]), float(p[1]), heading))
            s += step
        carry = s - length
    last = pts[-1]
    if not poses or math.hypot(poses[-1].x - last[0], poses[-1].y - last[1]) > 1e-9:
        prev = pts[-2] if len(pts) > 1 else last
        poses.append(Pose(float(last[0]), float(last[1]),
                          math.atan2(last[1] - prev[1], last[0] - prev[0]) if len(pts) > 1 else 0.0))
    return poses


@dataclass(frozen=True)
class Scenario:
    name: str
    environment: EnvironmentSpec
    path: tuple[tuple[float, float], ...]
    deployments: int
    rays_per_pose: int = 360
    pose_step: float = 0.1
    pose_period: float = 0.1
    sensor: SensorModel = field(default_factory=SensorModel)

    def __post_init__(self) -> None:
        object.__setattr__(self, "path", tuple(_pt(p) for p in self.path))
        if len(self.path) < 1:
            raise ScenarioError("scenario path needs at least one waypoint")
        if self.deployments < 1 or self.rays_per_pose < 1 or self.pose_step <= 0:
            raise ScenarioError("deployments, rays_per_pose and pose_step must be positive")

    def poses(self) -> list[Pose]:
        return path_poses(self.path, self.pose_step)

    def deployment(self, index: int, noise: bool = True) -> LabeledScan:
        scene = realize_deployment(self.environment, index)
        return simulate_scan(scene, self.poses(), self.sensor, self.rays_per_pose,
                             self.pose_period, noise)


def _check_keys(obj: dict, required: set, optional: set, where: str) -> None:
    if not isinstance(obj, dict):
        raise ScenarioError(f"{where}: expected an object")
    missing = required - obj.keys()
    unknown = obj.keys() - required - optional
    if missing:
        raise ScenarioError(f"{where}: missing key(s) {sorted(missing)}")
    if unknown:
        raise ScenarioError(f"{where}: unknown key(s) {sorted(unknown)}")


def scenario_from_dict(d: dict) -> Scenario:
    _check_keys(d, {"name", "walls", "path", "deployments"},
                {"seed", "stfs", "dfs", "rays_per_pose", "pose_step", "pose_period", "sensor",
                 "bounds", "keepout_clearance"}, "scenario")
    try:
        walls = []
        for i, w in enumerate(d["walls"]):
            _check_keys(w, {"a", "b"}, {"doors"}, f"walls[{i}]")
            doors = []
            for j, dr in enumerate(w.get("doors", [])):
                _check_keys(dr, {"start", "end", "open_probability"}, set(), f"walls[{i}].doors[{j}]")
                doors.append(Door(float(dr["start"]), float(dr["end"]), float(dr["open_probability"])))
            walls.append(Wall(tuple(w["a"]), tuple(w["b"]), tuple(doors)))
        stfs = []
        for i, s in enumerate(d.get("stfs", [])):
            _check_keys(s, {"vertices", "presence"}, {"jitter", "rotation_jitter"}, f"stfs[{i}]")
            stfs.append(MovableObject(tuple(map(tuple, s["vertices"])), float(s["presence"]),
                                      float(s.get("jitter", 0.0)), float(s.get("rotation_jitter", 0.0))))
        dfs = []
        for i, a in enumerate(d.get("dfs", [])):
            _check_keys(a, {"radius", "speed", "waypoints"}, set(), f"dfs[{i}]")
            dfs.append(Agent(float(a["radius"]), float(a["speed"]), tuple(map(tuple, a["waypoints"]))))
        sensor = SensorModel(**d.get("sensor", {}))
        env = EnvironmentSpec(tuple(walls), tuple(stfs), tuple(dfs), int(d.get("seed", 0)),
                              keepout=tuple(map(tuple, d["path"])),
                              keepout_clearance=float(d.get("keepout_clearance", 0.3)),
                              bounds=tuple(d["bounds"]) if "bounds" in d else None)
        return Scenario(str(d["name"]), env, tuple(map(tuple, d["path"])), int(d["deployments"]),
                        int(d.get("rays_per_pose", 360)), float(d.get("pose_step", 0.1)),
                        float(d.get("pose_period", 0.1)), sensor)
    except (TypeError, KeyError) as exc:
        raise ScenarioError(f"malformed scenario: {exc}") from None


def scenario_to_dict(sc: Scenario) -> dict:
    env = sc.environment
    return {
        "name": sc.name,
        "seed": env.seed,
        "deployments": sc.deployments,
        "rays_per_pose": sc.rays_per_pose,
        "pose_step": sc.pose_step,
        "pose_period": sc.pose_period,
        "sensor": {k: getattr(sc.sensor, k) for k in ("sigma_rho", "sigma_alpha", "epsilon", "sigma_w", "max_range")},
        "bounds": list(env.bounds),
        "keepout_clearance": env.keepout_clearance,
        "walls": [{"a": list(w.a), "b": list(w.b),
                   "doors": [{"start": d.start, "end": d.end, "open_probability": d.open_probability}
                             for d in w.doors]} for w in env.walls],
        "stfs": [{"vertices": [list(v) for v in s.vertices], "presence": s.presence,
                  "jitter": s.jitter, "rotation_jitter": s.rotation_jitter} for s in env.stfs],
        "dfs": [{"radius": a.radius, "speed": a.speed, "waypoints": [list(p) for p in a.waypoints]}
                for a in env.dfs],
        "path": [list(p) for p in sc.path],
    }


def load_scenario(path: str | Path) -> Scenario:
    path = Path(path)
    try:
        data = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ScenarioError(f"{path}: line {exc.lineno} column {exc.colno}: {exc.msg}") from None
    try:
        return scenario_from_dict(data)
    except (ScenarioError, ValueError) as exc:
        raise ScenarioError(f"{path}: {exc}") from None


def save_scenario(sc: Scenario, path: str | Path) -> None:
    Path(path).write_text(json.dumps(scenario_to_dict(sc), indent=1) + "\n")
