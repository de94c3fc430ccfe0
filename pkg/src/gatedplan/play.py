"""Random-play data collection for the inverse dynamics model.

Trajectories wander between random waypoints and, with some probability per
segment, run a scripted approach / close / carry / open routine on a random
object. Transitions from the first closing step until the object is released
are labelled as interaction.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import world as W
from .idm import Dataset, augment_observation
from .world import ObsLayout, WorldConfig


@dataclass(frozen=True)
class PlayConfig:
    num_samples: int = 50_000
    traj_len_range: tuple[int, int] = (100, 200)
    grasp_episode_prob: float = 0.5
    action_noise_sigma: float = 0.001
    obs_noise_sigma: float = 0.002
    seed: int = 0

    def __post_init__(self):
        lo, hi = self.traj_len_range
        if not 1 <= lo <= hi:
            raise ValueError("traj_len_range must satisfy 1 <= min <= max")
        if not 0.0 <= self.grasp_episode_prob <= 1.0:
            raise ValueError("grasp_episode_prob must lie in [0, 1]")
        if self.num_samples < 0:
            raise ValueError("num_samples must be >= 0")


class _Roller:
    def __init__(self, scene, wcfg: WorldConfig, pcfg: PlayConfig, rng, budget: int):
        self.s = scene
        self.wcfg = wcfg
        self.pcfg = pcfg
        self.rng = rng
        self.budget = budget
        self.frames = [W.perception(scene, wcfg)[0]]
        self.actions: list[np.ndarray] = []
        self.gates: list[int] = []

    @property
    def full(self) -> bool:
        return len(self.actions) >= self.budget

    def roll(self, pose, aperture, gate):
        if self.full:
            return
        pose = np.asarray(pose, dtype=float)
        if self.pcfg.action_noise_sigma > 0:
            pose = pose + self.rng.normal(0.0, self.pcfg.action_noise_sigma, 3)
        pose = np.clip(pose, self.wcfg.lo, self.wcfg.hi)
        a = np.array([*pose, aperture])
        self.actions.append(a)
        self.gates.append(gate)
        self.s = W.step(self.s, a, self.wcfg)
        self.frames.append(W.perception(self.s, self.wcfg)[0])

    def go(self, goal, aperture, gate, speed=1.0):
        step = self.wcfg.max_step_displacement * speed
        for _ in range(400):
            if self.full:
                return
            d = goal - self.s.ee
            n = float(np.linalg.norm(d))
            if n < 2e-3:
                return
            pose = self.s.ee + (d if n <= step else d * (step / n))
            self.roll(pose, aperture, gate)

    def set_aperture(self, target, gate_fn):
        for _ in range(100):
            if self.full or abs(self.s.aperture - target) < 1e-9:
                return
            self.roll(self.s.ee, target, gate_fn())


def _random_point(rng, wcfg: WorldConfig, z_range=(0.0, 0.35)) -> np.ndarray:
    lo, hi = wcfg.lo, wcfg.hi
    xy = lo[:2] + (hi[:2] - lo[:2]) * rng.uniform(0.05, 0.95, 2)
    return np.array([xy[0], xy[1], wcfg.table_height + rng.uniform(*z_range)])


def _trajectory(wcfg: WorldConfig, pcfg: PlayConfig, rng, length: int):
    setting = W.SETTINGS[int(rng.integers(len(W.SETTINGS)))]
    condition = W.CONDITIONS[int(rng.integers(len(W.CONDITIONS)))]
    scene, _ = W.reset_and_sample_task(wcfg, setting, condition, int(rng.integers(2**63)))
    r = _Roller(scene, wcfg, pcfg, rng, length)
    while not r.full:
        if rng.random() < pcfg.grasp_episode_prob and r.s.objects:
            obj = r.s.objects[int(rng.integers(len(r.s.objects)))]
            hover = rng.uniform(0.06, 0.15)
            center = obj.center.copy()
            r.set_aperture(1.0, lambda: 0)
            r.go(center + [0, 0, hover], 1.0, 0, rng.uniform(0.5, 1.0))
            r.go(center, 1.0, 0, rng.uniform(0.5, 1.0))
            r.set_aperture(0.0, lambda: 1)
            for _ in range(int(rng.integers(1, 3))):
                dest = _random_point(rng, wcfg, (0.05, 0.2))
                r.go(dest, 0.0, 1, rng.uniform(0.5, 1.0))
            r.set_aperture(1.0, lambda: int(r.s.held is not None))
        else:
            for _ in range(int(rng.integers(1, 4))):
                r.go(_random_point(rng, wcfg), r.s.aperture, 0, rng.uniform(0.3, 1.0))
    return np.array(r.frames), np.array(r.actions), np.array(r.gates, dtype=float)


def collect_random_play(wcfg: WorldConfig, pcfg: PlayConfig) -> Dataset:
    rng = np.random.default_rng(pcfg.seed)
    layout = ObsLayout(wcfg)
    parts = []
    total = 0
    while total < pcfg.num_samples:
        length = int(rng.integers(pcfg.traj_len_range[0], pcfg.traj_len_range[1] + 1))
        frames, actions, gates = _trajectory(wcfg, pcfg, rng, length)
        n = len(actions)
        prev = augment_observation(frames[:-1], pcfg.obs_noise_sigma, rng, layout)
        nxt = augment_observation(frames[1:], pcfg.obs_noise_sigma, rng, layout)
        parts.append(Dataset(prev, nxt, frames[:-1, :W.ROBOT_STATE_WIDTH].copy(), actions, gates))
        total += n
    if not parts:
        return Dataset.empty(wcfg.obs_width)
    return Dataset.concat(parts).subset(slice(0, pcfg.num_samples))
