"""Scripted reactive pick-and-place policy with configurable perception confounds.

The policy stands in for a learned visuomotor controller. It locks onto an
object on its first call, then runs a phase machine
(seek, descend, close, lift, transport, open, done) from the current
observation. Confound knobs make it pick the wrong object the way such
policies do. It may trust only what the wrist camera sees. It may also mix up
same-kind objects or get captured by an object passed on the way.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass

import numpy as np

from .world import ObsLayout, RobotState, TaskSpec, WorldConfig

PHASES = ("seek", "descend", "close", "lift", "transport", "open", "done")


@dataclass(frozen=True)
class LowLevelConfig:
    wrist_reliance: bool = True
    similar_confusion_prob: float = 0.6
    passby_capture_prob: float = 0.7
    approach_gain: float = 1.0
    confusion_radius: float = 0.25
    hover_height: float = 0.1
    engage_radius: float = 0.1
    reach_tol: float = 0.02
    close_trigger: float = 0.02

    def __post_init__(self):
        for p in (self.similar_confusion_prob, self.passby_capture_prob):
            if not 0.0 <= p <= 1.0:
                raise ValueError("confound probabilities must lie in [0, 1]")
        if not 0.0 < self.approach_gain <= 1.0:
            raise ValueError("approach_gain must lie in (0, 1]")

    @classmethod
    def confound_free(cls, **kw) -> LowLevelConfig:
        return cls(wrist_reliance=False, similar_confusion_prob=0.0,
                   passby_capture_prob=0.0, **kw)


@dataclass(frozen=True)
class PolicyState:
    locked_target: int | None = None
    phase: str | None = None
    capturable: bool = False
    captured: bool = False
    seed: int = 0


class LowLevelPolicy:
    def __init__(self, wcfg: WorldConfig, cfg: LowLevelConfig | None = None):
        self.wcfg = wcfg
        self.cfg = cfg or LowLevelConfig()
        self.layout = ObsLayout(wcfg)

    # -- perception helpers -------------------------------------------------
    def _present(self, obs) -> list[int]:
        return [i for i in range(self.wcfg.max_objects) if self.layout.object_present(obs, i)]

    def _visible(self, obs, ee) -> list[int]:
        return [i for i in self._present(obs)
                if np.linalg.norm(self.layout.object_pos(obs, i) - ee) <= self.wcfg.wrist_fov_radius]

    def _nearest(self, obs, ee, ids):
        return min(ids, key=lambda i: (np.linalg.norm(self.layout.object_pos(obs, i) - ee), i))

    # -- target selection -----------------------------------------------------
    def start(self, obs, state: RobotState, task: TaskSpec, seed: int) -> PolicyState:
        """Lock a target under the confound rules; all random draws happen here."""
        rng = np.random.default_rng(seed)
        u_similar, u_capture = rng.random(), rng.random()
        cfg = self.cfg
        present = self._present(obs)
        if not present:
            return PolicyState(None, "done", seed=seed)
        target = task.target_id
        locked = target if target in present else self._nearest(obs, state.ee, present)
        visible = self._visible(obs, state.ee)
        others_visible = [i for i in visible if i != target]
        tpos = self.layout.object_pos(obs, target) if target in present else None
        similar = []
        if tpos is not None:
            kind = self.layout.object_kind(obs, target)
            similar = [i for i in present if i != target
                       and self.layout.object_kind(obs, i) == kind
                       and np.linalg.norm(self.layout.object_pos(obs, i) - tpos)
                       <= cfg.confusion_radius]
        if cfg.wrist_reliance and target not in visible and others_visible:
            locked = self._nearest(obs, state.ee, others_visible)
        elif similar and u_similar < cfg.similar_confusion_prob:
            locked = self._nearest(obs, state.ee, similar)
        ps = PolicyState(locked, None, capturable=u_capture < cfg.passby_capture_prob, seed=seed)
        return dataclasses.replace(ps, phase=self.entry_phase(obs, state, ps))

    def entry_phase(self, obs, state: RobotState, ps: PolicyState) -> str:
        """Phase to resume from when control is (re)handed to the policy."""
        if ps.locked_target is None:
            return "done"
        if state.held:
            lift_z = self.wcfg.table_height + self.cfg.hover_height
            return "transport" if state.ee[2] >= lift_z - self.cfg.reach_tol else "lift"
        tpos = self.layout.object_pos(obs, ps.locked_target)
        near = np.linalg.norm(state.ee - tpos) <= self.cfg.engage_radius
        if near and state.aperture > self.wcfg.grasp_close_threshold:
            return "close"
        return "seek"

    # -- control ----------------------------------------------------------------
    def _advance(self, obs, state: RobotState, task: TaskSpec, ps: PolicyState) -> PolicyState:
        cfg, wcfg = self.cfg, self.wcfg
        ee = state.ee
        phase = ps.phase
        if ps.locked_target is None:
            return dataclasses.replace(ps, phase="done")
        if phase in ("seek", "descend") and ps.capturable and not ps.captured:
            visible = self._visible(obs, ee)
            if ps.locked_target not in visible:
                others = [i for i in visible if i != ps.locked_target]
                if others:
                    ps = dataclasses.replace(ps, locked_target=self._nearest(obs, ee, others),
                                             captured=True, phase="seek")
                    phase = "seek"
        tpos = self.layout.object_pos(obs, ps.locked_target)
        lift_z = wcfg.table_height + cfg.hover_height
        ctr = self.layout.container_pos(obs, task.container_id)
        if phase == "seek":
            hover = tpos + np.array([0.0, 0.0, cfg.hover_height])
            if np.linalg.norm(ee - hover) <= cfg.reach_tol and state.aperture >= 0.95:
                phase = "descend"
        if phase == "descend" and np.linalg.norm(ee - tpos) <= cfg.close_trigger:
            phase = "close"
        if phase == "close":
            if state.held:
                phase = "lift"
            elif state.aperture <= 1e-9:
                phase = "seek"
        if phase == "lift" and ee[2] >= lift_z - cfg.reach_tol:
            phase = "transport"
        if phase == "transport":
            if not state.held:
                phase = "seek"
            elif (np.linalg.norm(ee[:2] - ctr[:2]) <= cfg.reach_tol
                  and abs(ee[2] - lift_z) <= cfg.reach_tol):
                phase = "open"
        if phase == "open" and not state.held and state.aperture >= 0.95:
            phase = "done"
        return dataclasses.replace(ps, phase=phase)

    def _command(self, obs, state: RobotState, task: TaskSpec, ps: PolicyState) -> np.ndarray:
        cfg, wcfg = self.cfg, self.wcfg
        ee = state.ee
        if ps.locked_target is None:
            return np.array([*ee, state.aperture])
        tpos = self.layout.object_pos(obs, ps.locked_target)
        lift_z = wcfg.table_height + cfg.hover_height
        ctr = self.layout.container_pos(obs, task.container_id)
        goal, ap = {
            "seek": (tpos + np.array([0.0, 0.0, cfg.hover_height]), 1.0),
            "descend": (tpos, 1.0),
            "close": (tpos, 0.0),
            "lift": (np.array([ee[0], ee[1], lift_z]), 0.0),
            "transport": (np.array([ctr[0], ctr[1], lift_z]), 0.0),
            "open": (np.array([ctr[0], ctr[1], lift_z]), 1.0),
            "done": (ee, 1.0),
        }[ps.phase]
        pose = ee + cfg.approach_gain * (goal - ee)
        return np.array([*np.clip(pose, wcfg.lo, wcfg.hi), ap])

    def react(self, obs, state: RobotState, task: TaskSpec,
              ps: PolicyState) -> tuple[np.ndarray, PolicyState]:
        ps = self._advance(obs, state, task, ps)
        return self._command(obs, state, task, ps), ps

    def hand_component(self, obs, state: RobotState, task: TaskSpec,
                       ps: PolicyState) -> tuple[float, PolicyState]:
        """Aperture command only; the phase machine still advances."""
        action, ps = self.react(obs, state, task, ps)
        return float(np.clip(action[3], 0.0, 1.0)), ps
