"""Mock video planner.

``oracle_plan`` scripts an ideal pick-and-place and rolls it through the world,
so every frame is the perception of a reachable state. ``generate`` then
corrupts that trajectory the way a generative video model fails: a wrong
object, global jitter, distorted motion during the interaction phase, or an
early cut.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass

import numpy as np

from . import world as W
from .idm import present_continuous_mask
from .world import ObsLayout, SceneState, TaskSpec, WorldConfig


class PlanInfeasible(RuntimeError):
    pass


@dataclass(frozen=True)
class PlannerConfig:
    hover_height: float = 0.1
    retreat_height: float = 0.1
    max_plan_steps: int = 400
    subsample_stride: int = 1
    tau_task: float = 0.06


@dataclass(frozen=True)
class CorruptionModel:
    interaction_noise_sigma: float = 0.0
    global_drift_sigma: float = 0.0
    semantic_failure_prob: float = 0.0
    truncation_prob: float = 0.0

    def __post_init__(self):
        if self.interaction_noise_sigma < 0 or self.global_drift_sigma < 0:
            raise ValueError("noise scales must be >= 0")
        for p in (self.semantic_failure_prob, self.truncation_prob):
            if not 0.0 <= p <= 1.0:
                raise ValueError("probabilities must lie in [0, 1]")

    @classmethod
    def preset(cls, name: str) -> CorruptionModel:
        return dataclasses.replace(cls(), **CORRUPTION_PRESETS[name])


# interaction-only distortion levels; "high" breaks direct grasping from the plan
CORRUPTION_PRESETS: dict[str, dict[str, float]] = {
    "none": {},
    "low": {"interaction_noise_sigma": 0.01},
    "high": {"interaction_noise_sigma": 0.05},
}


@dataclass
class OraclePlan:
    frames: np.ndarray
    actions: np.ndarray
    gates: np.ndarray
    scenes: list[SceneState]

    def __post_init__(self):
        if not len(self.actions) == len(self.gates) == len(self.frames) - 1:
            raise ValueError("actions and gates must have one entry per transition")


@dataclass
class FrameTrajectory:
    """Planned frames ``I*_0..I*_n`` plus what the corruption did to them."""

    frames: np.ndarray
    planned_target_id: int
    semantic_failure: bool = False
    truncated: bool = False
    places_target: bool = True
    gates: np.ndarray | None = None

    def __post_init__(self):
        if self.frames.ndim != 2 or len(self.frames) < 2:
            raise ValueError("a frame trajectory needs at least two frames of one width")

    def __len__(self) -> int:
        return len(self.frames)

    def meta(self) -> dict:
        return {"planned_target_id": self.planned_target_id,
                "semantic_failure": self.semantic_failure,
                "truncated": self.truncated,
                "places_target": self.places_target,
                "n_frames": len(self.frames)}


def _move(scene, goal, aperture, max_disp):
    return np.array([*(scene.ee + _clip_norm(goal - scene.ee, max_disp)), aperture])


def _clip_norm(v, r):
    n = float(np.linalg.norm(v))
    return v if n <= r else v * (r / n)


def oracle_plan(scene: SceneState, task: TaskSpec, wcfg: WorldConfig,
                pcfg: PlannerConfig | None = None) -> OraclePlan:
    pcfg = pcfg or PlannerConfig()
    try:
        target = scene.object(task.target_id)
        ctr = scene.container(task.container_id)
    except KeyError as e:
        raise PlanInfeasible(f"task refers to missing id {e}") from None
    lo, hi = wcfg.lo, wcfg.hi
    grasp = target.center.copy()
    above_obj = grasp + np.array([0.0, 0.0, pcfg.hover_height])
    above_ctr = np.array([ctr.center[0], ctr.center[1], wcfg.table_height + pcfg.hover_height])
    retreat = above_ctr + np.array([0.0, 0.0, pcfg.retreat_height])
    for p in (grasp, above_obj, above_ctr, retreat):
        if np.any(p < lo - 1e-12) or np.any(p > hi + 1e-12):
            raise PlanInfeasible("plan waypoint outside the workspace")

    scenes = [scene]
    actions, gates = [], []
    s = scene
    step = wcfg.max_step_displacement

    def roll(action, gate):
        nonlocal s
        if len(actions) >= pcfg.max_plan_steps:
            raise PlanInfeasible(f"plan exceeds {pcfg.max_plan_steps} steps")
        actions.append(action)
        gates.append(gate)
        s = W.step(s, action, wcfg)
        scenes.append(s)

    def go(goal, aperture, gate):
        while np.linalg.norm(goal - s.ee) > 1e-12:
            roll(_move(s, goal, aperture, step), gate)

    go(above_obj, 1.0, 0)
    go(grasp, 1.0, 0)
    while s.aperture > 0.0:
        roll(np.array([*grasp, 0.0]), 1)
    if s.held != target.id:
        raise PlanInfeasible("scripted grasp did not bind the target")
    go(above_obj, 0.0, 1)
    go(above_ctr, 0.0, 1)
    while s.aperture < 1.0:
        releasing = s.held is not None
        roll(np.array([*above_ctr, 1.0]), 1 if releasing else 0)
    go(retreat, 1.0, 0)

    frames = np.stack([W.perception(x, wcfg)[0] for x in scenes])
    actions = np.array(actions)
    gates = np.array(gates, dtype=float)
    stride = pcfg.subsample_stride
    if stride > 1:
        idx = list(range(0, len(frames), stride))
        if idx[-1] != len(frames) - 1:
            idx.append(len(frames) - 1)
        frames = frames[idx]
        actions = np.array([actions[b - 1] for b in idx[1:]])
        gates = np.array([gates[a:b].max() for a, b in zip(idx[:-1], idx[1:])])
        scenes = [scenes[i] for i in idx]
    return OraclePlan(frames, actions, gates, scenes)


def frame_gates(transition_gates: np.ndarray) -> np.ndarray:
    """Per-frame interaction mask: frame ``j`` inherits the gate of the transition producing it."""
    return np.concatenate([[0.0], transition_gates])


def generate(initial_obs, scene: SceneState, task: TaskSpec, corruption: CorruptionModel,
             seed: int, wcfg: WorldConfig, pcfg: PlannerConfig | None = None) -> FrameTrajectory:
    pcfg = pcfg or PlannerConfig()
    obs0, _ = W.perception(scene, wcfg)
    if not np.array_equal(np.asarray(initial_obs, dtype=float), obs0):
        raise ValueError("initial observation does not match the scene")
    rng = np.random.default_rng(seed)

    planned = task
    candidates = [o.id for o in scene.objects if o.id != task.target_id]
    u_sem, u_pick = rng.random(), rng.random()
    semantic = bool(candidates) and u_sem < corruption.semantic_failure_prob
    if semantic:
        planned = dataclasses.replace(task, target_id=candidates[int(u_pick * len(candidates))])
    plan = oracle_plan(scene, planned, wcfg, pcfg)
    clean = plan.frames
    n_frames = len(clean)

    layout = ObsLayout(wcfg)
    pose = present_continuous_mask(clean, layout, poses_only=True)
    drift = rng.normal(0.0, 1.0, size=clean.shape)
    inter = rng.normal(0.0, 1.0, size=clean.shape)
    fg = frame_gates(plan.gates)[:, None] > 0.5
    frames = (clean
              + np.where(pose, corruption.global_drift_sigma * drift, 0.0)
              + np.where(pose & fg, corruption.interaction_noise_sigma * inter, 0.0))

    u_trunc, u_cut = rng.random(), rng.random()
    truncated = False
    gates = plan.gates
    end = n_frames
    highs = np.flatnonzero(frame_gates(plan.gates) > 0.5)
    if u_trunc < corruption.truncation_prob and len(highs):
        first = int(highs[0])
        end = max(first + 1 + int(u_cut * (n_frames - first - 1)), 2)
        truncated = end < n_frames
        frames = frames[:end]
        gates = gates[:end - 1]

    final = plan.scenes[end - 1]
    ctr = final.container(task.container_id).center
    tgt = final.object(task.target_id).center
    places = (not semantic) and float(np.linalg.norm(tgt - ctr)) <= pcfg.tau_task
    return FrameTrajectory(frames, planned.target_id, semantic, truncated, places, gates)
