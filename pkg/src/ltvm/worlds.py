"""Ready-made scenarios for tests, experiments and the acceptance suite."""

from __future__ import annotations

from .core import SensorModel
from .scangen import Agent, Door, EnvironmentSpec, MovableObject, Scenario, Wall


def _loop(*corners):
    pts = list(corners)
    return [Wall(pts[i], pts[(i + 1) % len(pts)]) for i in range(len(pts))]


def _box(cx, cy, w, h, presence, jitter=0.1, rotation_jitter=0.05):
    hw, hh = w / 2, h / 2
    return MovableObject(((cx - hw, cy - hh), (cx + hw, cy - hh), (cx + hw, cy + hh), (cx - hw, cy + hh)),
                         presence, jitter, rotation_jitter)


def square_room(deployments: int = 3, seed: int = 0, sensor: SensorModel | None = None) -> Scenario:
    """4 x 4 m empty room, robot circling the centre."""
    path = [(1.2, 1.2), (2.8, 1.2), (2.8, 2.8), (1.2, 2.8), (1.2, 1.2)]
    env = EnvironmentSpec(tuple(_loop((0, 0), (4, 0), (4, 4), (0, 4))), seed=seed, keepout=tuple(path))
    return Scenario("square_room", env, tuple(path), deployments, rays_per_pose=360, pose_step=0.2,
                    sensor=sensor or SensorModel())


def two_room_building(deployments: int = 12, seed: int = 7, sensor: SensorModel | None = None) -> Scenario:
    """12 x 8 m: corridor along the south side, two rooms, four doors, two open passages.

    The robot enters the rooms through the passages (x 3-4 and x 8-9 on the
    corridor wall), which never close; the four doors open and close
    between deployments.
    """
    walls = _loop((0, 0), (12, 0), (12, 8), (0, 8))
    walls += [
        Wall((0, 2.5), (3, 2.5), (Door(1.0, 1.9, 0.5),)),
        Wall((4, 2.5), (8, 2.5), (Door(2.9, 3.8, 0.5),)),
        Wall((9, 2.5), (12, 2.5), (Door(1.2, 2.1, 0.5),)),
        Wall((6, 2.5), (6, 8), (Door(2.3, 3.2, 0.5),)),
    ]
    path = [(1.0, 1.25), (11.0, 1.25), (8.5, 1.25), (8.5, 5.2), (10.5, 5.2), (10.5, 7.0), (7.5, 7.0),
            (7.5, 4.0), (8.5, 4.0), (8.5, 1.25), (3.5, 1.25), (3.5, 5.2), (1.5, 5.2), (1.5, 7.0),
            (4.5, 7.0), (4.5, 4.0), (3.5, 4.0), (3.5, 1.25), (1.0, 1.25)]
    stfs = (_box(2.0, 4.0, 0.6, 0.6, 0.5), _box(10.8, 3.4, 0.8, 0.5, 0.5), _box(5.3, 5.8, 0.5, 0.5, 0.4))
    dfs = (Agent(0.25, 1.0, ((2.0, 0.6), (10.0, 0.6))), Agent(0.25, 0.8, ((7.0, 3.5), (11.0, 3.5), (11.0, 6.0))))
    env = EnvironmentSpec(tuple(walls), stfs, dfs, seed=seed, keepout=tuple(path))
    return Scenario("two_room_building", env, tuple(path), deployments, rays_per_pose=360, pose_step=0.2,
                    sensor=sensor or SensorModel())


def stf_hall(deployments: int = 10, seed: int = 3, sensor: SensorModel | None = None) -> Scenario:
    """16 x 10 m hall with twenty movable boxes in a 5 x 4 layout, presence 0.2 to 0.8."""
    walls = _loop((0, 0), (16, 0), (16, 10), (0, 10))
    stfs = []
    xs = (3.0, 5.5, 8.0, 10.5, 13.0)
    ys = (2.4, 4.5, 6.5, 8.6)
    k = 0
    for y in ys:
        for x in xs:
            presence = 0.2 + 0.6 * (k % 7) / 6
            w, h = (0.6, 0.6) if k % 3 else (1.0, 0.5)
            stfs.append(_box(x, y, w, h, presence))
            k += 1
    lanes = (1.2, 3.5, 5.5, 7.55, 9.3)
    path = []
    for i, y in enumerate(lanes):
        xa, xb = (1.2, 14.8) if i % 2 == 0 else (14.8, 1.2)
        path += [(xa, y), (xb, y)]
    dfs = (Agent(0.25, 1.0, ((1.5, 5.5), (14.5, 5.5))),)
    env = EnvironmentSpec(tuple(walls), tuple(stfs), dfs, seed=seed, keepout=tuple(path))
    return Scenario("stf_hall", env, tuple(path), deployments, rays_per_pose=270, pose_step=0.2,
                    sensor=sensor or SensorModel())


def l_room(deployments: int = 12, seed: int = 11, sensor: SensorModel | None = None) -> Scenario:
    """Static L-shaped room with six walls."""
    walls = _loop((0, 0), (8, 0), (8, 4), (4, 4), (4, 7), (0, 7))
    path = [(1.5, 1.5), (6.5, 1.5), (6.5, 2.5), (2.5, 2.5), (2.5, 5.5), (1.5, 5.5), (1.5, 1.5)]
    env = EnvironmentSpec(tuple(walls), (), (Agent(0.25, 0.8, ((1.0, 3.5), (3.0, 3.5))),),
                          seed=seed, keepout=tuple(path))
    return Scenario("l_room", env, tuple(path), deployments, rays_per_pose=360, pose_step=0.1,
                    sensor=sensor or SensorModel())


LIBRARY = {"square_room": square_room, "two_room_building": two_room_building,
           "stf_hall": stf_hall, "l_room": l_room}
