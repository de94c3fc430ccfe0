"""Deterministic kinematic pick-and-place world.

Objects and containers are spheres resting on a flat table. The end effector is
a point with a scalar gripper aperture (0 closed, 1 open). Actions are absolute
targets ``(x, y, z, aperture)``; the world rate-limits both the translation and
the aperture change, so commands behave like tracking setpoints.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field

import numpy as np

SETTINGS = ("wrist_invisible", "similar_distractors", "pass_by", "richer_semantics")
CONDITIONS = ("control", "experimental")

# kind codes written into the observation; containers have their own slots
OBJECT_KINDS = ("cube", "ball", "can", "fruit")
CONTAINER_KIND = "container"

ROBOT_WIDTH = 5
OBJECT_SLOT_WIDTH = 5
CONTAINER_SLOT_WIDTH = 4


class PlacementInfeasible(RuntimeError):
    pass


class CapacityError(ValueError):
    pass


@dataclass(frozen=True)
class WorldConfig:
    bounds_lo: tuple[float, float, float] = (0.0, 0.0, 0.0)
    bounds_hi: tuple[float, float, float] = (1.0, 1.0, 1.0)
    grasp_radius: float = 0.04
    table_height: float = 0.0
    max_step_displacement: float = 0.02
    max_aperture_rate: float = 0.1
    grasp_close_threshold: float = 0.35
    grasp_open_threshold: float = 0.65
    wrist_fov_radius: float = 0.15
    max_objects: int = 4
    max_containers: int = 1
    object_radius: float = 0.025
    container_radius: float = 0.06
    # scene sampling
    home_height: float = 0.08
    min_separation: float = 0.1
    min_target_reach: float = 0.35
    similar_proximity: float = 0.15
    corridor_radius: float = 0.06
    max_placement_attempts: int = 1000

    def __post_init__(self):
        if self.grasp_radius <= 0 or self.wrist_fov_radius <= 0:
            raise ValueError("grasp_radius and wrist_fov_radius must be positive")
        if not self.grasp_close_threshold < self.grasp_open_threshold:
            raise ValueError("grasp_close_threshold must be below grasp_open_threshold")

    @property
    def lo(self) -> np.ndarray:
        return np.asarray(self.bounds_lo, dtype=float)

    @property
    def hi(self) -> np.ndarray:
        return np.asarray(self.bounds_hi, dtype=float)

    @property
    def obs_width(self) -> int:
        return (ROBOT_WIDTH + OBJECT_SLOT_WIDTH * self.max_objects
                + CONTAINER_SLOT_WIDTH * self.max_containers)


@dataclass(frozen=True)
class SceneObject:
    id: int
    kind: str
    center: np.ndarray
    radius: float
    velocity: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        if self.radius <= 0:
            raise ValueError("radius must be positive")

    def moved(self, center: np.ndarray) -> SceneObject:
        return dataclasses.replace(self, center=center, velocity=center - self.center)


@dataclass(frozen=True)
class SceneState:
    ee: np.ndarray
    aperture: float
    held: int | None
    objects: tuple[SceneObject, ...]
    containers: tuple[SceneObject, ...]
    step_index: int = 0
    grasp_offset: np.ndarray | None = None

    def object(self, obj_id: int) -> SceneObject:
        for o in self.objects:
            if o.id == obj_id:
                return o
        raise KeyError(obj_id)

    def container(self, ctr_id: int) -> SceneObject:
        for c in self.containers:
            if c.id == ctr_id:
                return c
        raise KeyError(ctr_id)


@dataclass(frozen=True)
class TaskSpec:
    target_id: int
    container_id: int
    setting: str
    condition: str


def make_scene(cfg: WorldConfig, ee, objects, containers, aperture: float = 1.0) -> SceneState:
    """Build a scene after checking slot capacity and sorting into canonical order."""
    if len(objects) > cfg.max_objects:
        raise CapacityError(f"{len(objects)} objects exceed max_objects={cfg.max_objects}")
    if len(containers) > cfg.max_containers:
        raise CapacityError(
            f"{len(containers)} containers exceed max_containers={cfg.max_containers}")
    return SceneState(
        ee=np.asarray(ee, dtype=float),
        aperture=float(aperture),
        held=None,
        objects=tuple(sorted(objects, key=lambda o: o.id)),
        containers=tuple(sorted(containers, key=lambda c: c.id)),
    )


def point_to_surface_distance(p, obj: SceneObject) -> float:
    return max(0.0, float(np.linalg.norm(np.asarray(p, dtype=float) - obj.center)) - obj.radius)


def wrist_visible(scene: SceneState, obj: SceneObject, cfg: WorldConfig) -> bool:
    # closed ball
    return bool(np.linalg.norm(scene.ee - obj.center) <= cfg.wrist_fov_radius)


def _segment_distance(p: np.ndarray, a: np.ndarray, b: np.ndarray) -> float:
    ab = b - a
    s = np.clip(np.dot(p - a, ab) / np.dot(ab, ab), 0.0, 1.0)
    return float(np.linalg.norm(p - (a + s * ab)))


def reset_and_sample_task(cfg: WorldConfig, setting: str, condition: str,
                          seed: int) -> tuple[SceneState, TaskSpec]:
    """Sample a scene realizing ``setting`` under ``condition``.

    Control scenes hold only the target and the container. Experimental scenes
    add the confounding object(s):

    * ``wrist_invisible``: target out of the initial wrist view, a dissimilar
      distractor inside it.
    * ``similar_distractors``: a same-kind distractor near the target.
    * ``pass_by``: a dissimilar distractor on the straight reach from the
      initial end effector to the target.
    * ``richer_semantics``: several distractors of other kinds.
    """
    if setting not in SETTINGS:
        raise ValueError(f"unknown setting {setting!r}")
    if condition not in CONDITIONS:
        raise ValueError(f"unknown condition {condition!r}")
    rng = np.random.default_rng(seed)
    table_z = cfg.table_height
    lo, hi = cfg.lo, cfg.hi
    span = hi - lo

    def on_table(x, y):
        return np.array([x, y, table_z])

    for _ in range(cfg.max_placement_attempts):
        ee = np.array([lo[0] + span[0] * rng.uniform(0.35, 0.65),
                       lo[1] + span[1] * rng.uniform(0.1, 0.2),
                       table_z + cfg.home_height])
        ctr = on_table(lo[0] + span[0] * rng.uniform(0.15, 0.85),
                       lo[1] + span[1] * rng.uniform(0.78, 0.9))
        target = on_table(lo[0] + span[0] * rng.uniform(0.15, 0.85),
                          lo[1] + span[1] * rng.uniform(0.35, 0.62))
        if np.linalg.norm(target - ee) < cfg.min_target_reach:
            continue
        if np.linalg.norm(target - ctr) < 2 * cfg.min_separation:
            continue
        target_kind = int(rng.integers(len(OBJECT_KINDS)))
        others_kind = [k for k in range(len(OBJECT_KINDS)) if k != target_kind]
        distractors: list[tuple[np.ndarray, int]] = []
        ok = True
        if condition == "experimental":
            if setting == "wrist_invisible":
                horiz = np.sqrt(max(cfg.wrist_fov_radius**2 - cfg.home_height**2, 0.0))
                ang = rng.uniform(0, 2 * np.pi)
                rad = rng.uniform(0.3, 0.9) * horiz
                p = on_table(ee[0] + rad * np.cos(ang), ee[1] + rad * np.sin(ang))
                distractors.append((p, int(rng.choice(others_kind))))
            elif setting == "similar_distractors":
                ang = rng.uniform(0, 2 * np.pi)
                rad = rng.uniform(cfg.min_separation, cfg.similar_proximity)
                p = on_table(target[0] + rad * np.cos(ang), target[1] + rad * np.sin(ang))
                distractors.append((p, target_kind))
            elif setting == "pass_by":
                f = rng.uniform(0.4, 0.6)
                p = ee + f * (target - ee)
                p = on_table(p[0] + rng.uniform(-0.02, 0.02), p[1] + rng.uniform(-0.02, 0.02))
                if _segment_distance(p, ee, target) > cfg.corridor_radius:
                    ok = False
                distractors.append((p, int(rng.choice(others_kind))))
            else:
                for _k in range(cfg.max_objects - 1):
                    p = on_table(lo[0] + span[0] * rng.uniform(0.1, 0.9),
                                 lo[1] + span[1] * rng.uniform(0.3, 0.7))
                    distractors.append((p, int(rng.choice(others_kind))))
        if not ok:
            continue
        centers = [target] + [p for p, _ in distractors]
        if any(not np.all((c >= lo) & (c <= hi)) for c in centers):
            continue
        if any(np.linalg.norm(c - ctr) < 2 * cfg.min_separation for c in centers):
            continue
        if any(np.linalg.norm(centers[i] - centers[j]) < cfg.min_separation
               for i in range(len(centers)) for j in range(i)):
            continue
        if setting == "wrist_invisible" and condition == "experimental":
            if np.linalg.norm(target - ee) <= cfg.wrist_fov_radius:
                continue
        # randomize which slot the target occupies
        ids = rng.choice(cfg.max_objects, size=len(centers), replace=False)
        kinds = [target_kind] + [k for _, k in distractors]
        objects = [SceneObject(int(ids[i]), OBJECT_KINDS[kinds[i]], centers[i], cfg.object_radius)
                   for i in range(len(centers))]
        containers = [SceneObject(0, CONTAINER_KIND, ctr, cfg.container_radius)]
        scene = make_scene(cfg, ee, objects, containers)
        return scene, TaskSpec(int(ids[0]), 0, setting, condition)
    raise PlacementInfeasible(
        f"could not place {setting}/{condition} scene in {cfg.max_placement_attempts} attempts")


def _as_action(action) -> np.ndarray:
    a = np.asarray(action, dtype=float).reshape(-1)
    if a.shape[0] < 4:
        raise ValueError("action needs (x, y, z, aperture)")
    return a


def step(scene: SceneState, action, cfg: WorldConfig) -> SceneState:
    a = _as_action(action)
    delta = a[:3] - scene.ee
    norm = float(np.linalg.norm(delta))
    if norm > cfg.max_step_displacement:
        delta = delta * (cfg.max_step_displacement / norm)
    ee = np.clip(scene.ee + delta, cfg.lo, cfg.hi)

    rate = cfg.max_aperture_rate
    aperture = float(np.clip(scene.aperture + np.clip(a[3] - scene.aperture, -rate, rate),
                             0.0, 1.0))

    held = scene.held
    offset = scene.grasp_offset
    new_centers = {o.id: o.center for o in scene.objects}
    if held is not None:
        new_centers[held] = ee + offset
        if scene.aperture <= cfg.grasp_open_threshold < aperture:
            c = new_centers[held]
            new_centers[held] = np.array([c[0], c[1], cfg.table_height])
            held, offset = None, None
    elif scene.aperture >= cfg.grasp_close_threshold > aperture and scene.objects:
        nearest = min(scene.objects, key=lambda o: np.linalg.norm(ee - o.center))
        if np.linalg.norm(ee - nearest.center) <= cfg.grasp_radius:
            held = nearest.id
            offset = nearest.center - ee

    objects = tuple(o.moved(new_centers[o.id]) for o in scene.objects)
    containers = tuple(c.moved(c.center) for c in scene.containers)
    return SceneState(ee=ee, aperture=aperture, held=held, objects=objects,
                      containers=containers, step_index=scene.step_index + 1,
                      grasp_offset=offset)


@dataclass(frozen=True)
class RobotState:
    ee: np.ndarray
    aperture: float
    held: bool

    def as_vector(self) -> np.ndarray:
        return np.array([*self.ee, self.aperture, float(self.held)])


ROBOT_STATE_WIDTH = 5


def perception(scene: SceneState, cfg: WorldConfig) -> tuple[np.ndarray, RobotState]:
    """Global-view observation vector and proprioceptive state.

    Layout: ``[ee_x, ee_y, ee_z, aperture, held]``, then ``max_objects`` slots
    of ``[kind_code, x, y, z, present]`` indexed by object id, then
    ``max_containers`` slots of ``[x, y, z, present]`` indexed by container id.
    Kind codes are ``(index + 1) / len(OBJECT_KINDS)``; empty slots are zeros.
    """
    obs = np.zeros(cfg.obs_width)
    obs[0:3] = scene.ee
    obs[3] = scene.aperture
    obs[4] = float(scene.held is not None)
    for o in scene.objects:
        if not 0 <= o.id < cfg.max_objects:
            raise CapacityError(f"object id {o.id} has no observation slot")
        base = ROBOT_WIDTH + OBJECT_SLOT_WIDTH * o.id
        obs[base] = (OBJECT_KINDS.index(o.kind) + 1) / len(OBJECT_KINDS)
        obs[base + 1:base + 4] = o.center
        obs[base + 4] = 1.0
    off = ROBOT_WIDTH + OBJECT_SLOT_WIDTH * cfg.max_objects
    for c in scene.containers:
        if not 0 <= c.id < cfg.max_containers:
            raise CapacityError(f"container id {c.id} has no observation slot")
        base = off + CONTAINER_SLOT_WIDTH * c.id
        obs[base:base + 3] = c.center
        obs[base + 3] = 1.0
    return obs, RobotState(scene.ee.copy(), scene.aperture, scene.held is not None)


class ObsLayout:
    """Index helper for observation vectors of one ``WorldConfig``."""

    def __init__(self, cfg: WorldConfig):
        self.cfg = cfg
        self.width = cfg.obs_width
        self.container_offset = ROBOT_WIDTH + OBJECT_SLOT_WIDTH * cfg.max_objects

    def object_slot(self, i: int) -> slice:
        base = ROBOT_WIDTH + OBJECT_SLOT_WIDTH * i
        return slice(base, base + OBJECT_SLOT_WIDTH)

    def object_pos(self, obs: np.ndarray, i: int) -> np.ndarray:
        base = ROBOT_WIDTH + OBJECT_SLOT_WIDTH * i
        return obs[base + 1:base + 4]

    def object_present(self, obs: np.ndarray, i: int) -> bool:
        return bool(obs[ROBOT_WIDTH + OBJECT_SLOT_WIDTH * i + 4] > 0.5)

    def object_kind(self, obs: np.ndarray, i: int) -> float:
        return float(obs[ROBOT_WIDTH + OBJECT_SLOT_WIDTH * i])

    def container_pos(self, obs: np.ndarray, i: int) -> np.ndarray:
        base = self.container_offset + CONTAINER_SLOT_WIDTH * i
        return obs[base:base + 3]

    def state(self, obs: np.ndarray) -> RobotState:
        return RobotState(obs[0:3].copy(), float(obs[3]), bool(obs[4] > 0.5))

    def continuous_mask(self) -> np.ndarray:
        """Entries carrying continuous values (poses and aperture), not flags or kind codes."""
        mask = np.zeros(self.width, dtype=bool)
        mask[0:4] = True
        for i in range(self.cfg.max_objects):
            base = ROBOT_WIDTH + OBJECT_SLOT_WIDTH * i
            mask[base + 1:base + 4] = True
        for i in range(self.cfg.max_containers):
            base = self.container_offset + CONTAINER_SLOT_WIDTH * i
            mask[base:base + 3] = True
        return mask

    def pose_mask(self) -> np.ndarray:
        """Position entries only: the end effector plus every object and container slot."""
        mask = self.continuous_mask()
        mask[3] = False
        return mask
