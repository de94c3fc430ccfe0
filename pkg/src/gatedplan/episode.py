"""Per-episode execution records. The executor writes them; metrics and record files read them."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .world import TaskSpec

PLAN = "plan"
LOWLEVEL = "lowlevel"


@dataclass
class StepRecord:
    t: int
    mode: str
    action: np.ndarray
    gate: float | None
    ee: np.ndarray
    aperture: float
    held: int | None
    target_pos: np.ndarray
    target_vel: np.ndarray
    chunk_index: int = -1
    hand_source: str | None = None
    object_pos: np.ndarray | None = None
    object_vel: np.ndarray | None = None


@dataclass
class EpisodeLog:
    method: str
    task: TaskSpec
    seed: int
    target_radius: float
    container_pos: np.ndarray
    steps: list[StepRecord] = field(default_factory=list)
    trial: int = 0
    chunk_actions: np.ndarray | None = None
    chunk_gates: np.ndarray | None = None
    plan_meta: dict | None = None
    switches: list[tuple[int, str]] = field(default_factory=list)
    termination: str = ""

    def __len__(self) -> int:
        return len(self.steps)

    @property
    def setting(self) -> str:
        return self.task.setting

    @property
    def condition(self) -> str:
        return self.task.condition

    def engagements(self) -> int:
        return sum(1 for _, d in self.switches if d == "to_lowlevel")
