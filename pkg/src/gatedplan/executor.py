"""Inference loops that turn a planned frame trajectory into robot motion.

Four methods share one episode scaffold:

* ``run_pure_idm`` executes the smoothed IDM chunk open loop.
* ``run_hierarchical`` watches the realtime gate and hands control to the
  reactive policy during interaction, then prunes the queue to the next
  non-interaction segment when it hands back.
* ``run_simultaneous`` takes the arm pose from the chunk and the gripper from
  the reactive policy on every step.
* ``run_lowlevel_only`` is the policy alone, the baseline without a plan.

The queue is indexed, never mutated: pruning is an advance of ``k``.
"""

from __future__ import annotations

import dataclasses
from collections.abc import Sequence
from dataclasses import dataclass, field

import numpy as np

from . import world as W
from .episode import LOWLEVEL, PLAN, EpisodeLog, StepRecord
from .idm import IdmModel, PlannedChunk, predict, predict_chunk
from .lowlevel import LowLevelPolicy, PolicyState
from .metrics import MetricsConfig, SuccessTracker
from .planner import CorruptionModel, PlanInfeasible, PlannerConfig, generate
from .seeding import derive_seed
from .smoother import SmootherConfig, smooth_with_index

VARIANTS = ("pure_idm", "hierarchical", "simultaneous")
# steps the policy may sit in its final phase so a released object can settle
POLICY_SETTLE_STEPS = 2
TERMINATIONS = ("success", "plan_exhausted", "step_budget", "policy_done", "plan_infeasible")


@dataclass(frozen=True)
class ExecutorConfig:
    tau: float = 0.5
    persistence: int = 3
    persistence_low: int | None = None
    max_switches: int | None = 1
    step_budget: int = 400
    variant: str = "hierarchical"
    final_fallback: bool = False
    stop_on_success: bool = True

    def __post_init__(self):
        # tau = 1.0 is allowed: a sigmoid never exceeds it, which disables switching
        if not 0.0 < self.tau <= 1.0:
            raise ValueError("tau must lie in (0, 1]")
        if self.persistence < 1 or (self.persistence_low is not None and self.persistence_low < 1):
            raise ValueError("persistence must be >= 1")
        if self.max_switches is not None and self.max_switches < 0:
            raise ValueError("max_switches must be >= 0")
        if self.step_budget < 1:
            raise ValueError("step_budget must be >= 1")
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}")

    @property
    def k_low(self) -> int:
        return self.persistence if self.persistence_low is None else self.persistence_low


def stable_high(history: Sequence[float], tau: float, k: int) -> bool:
    return len(history) >= k and all(g > tau for g in history[len(history) - k:])


def stable_low(history: Sequence[float], tau: float, k: int) -> bool:
    return len(history) >= k and all(g <= tau for g in history[len(history) - k:])


def truncate_to_next_low(k: int, predicted_gates, tau: float) -> int:
    gates = np.asarray(predicted_gates, dtype=float)
    if not 0 <= k <= len(gates):
        raise ValueError("k must index into the gate sequence")
    low = np.flatnonzero(gates[k:] <= tau)
    return k + int(low[0]) if len(low) else len(gates)


def compose(a_pose, a_hand) -> np.ndarray:
    """Pose from the plan, aperture from the policy."""
    return np.array([*np.asarray(a_pose, dtype=float)[:3], float(a_hand)])


@dataclass
class GateMonitor:
    """The switching half of the hierarchical loop, isolated from the world.

    ``observe`` appends one realtime gate reading and returns the event that
    the loop must act on (``"engage"`` or ``"release"``), or ``None`` when
    nothing changes.
    """

    tau: float
    k_high: int
    k_low: int
    max_switches: int | None = None
    history: list[float] = field(default_factory=list)
    enabled: bool = False
    switches_used: int = 0
    latched: bool = False

    @classmethod
    def from_config(cls, cfg: ExecutorConfig) -> GateMonitor:
        return cls(cfg.tau, cfg.persistence, cfg.k_low, cfg.max_switches)

    @property
    def can_switch(self) -> bool:
        return self.max_switches is None or self.switches_used < self.max_switches

    def observe(self, gate: float) -> str | None:
        self.history.append(float(gate))
        if not self.enabled:
            if stable_high(self.history, self.tau, self.k_high) and self.can_switch:
                self.enabled = True
                self.switches_used += 1
                return "engage"
            return None
        if not self.latched and stable_low(self.history, self.tau, self.k_low):
            self.enabled = False
            return "release"
        return None

    def force_engage(self) -> None:
        """Engage regardless of the gate and stay engaged: there is no plan left to return to."""
        self.enabled = True
        self.latched = True
        self.switches_used += 1


def smooth_chunk(raw: PlannedChunk, cfg: SmootherConfig) -> PlannedChunk:
    """Smooth the actions and carry each predicted gate along with its action."""
    actions, index = smooth_with_index(raw.actions, cfg)
    return PlannedChunk(actions, np.asarray(raw.predicted_gates)[index])


class Env:
    """World handle: one scene, advanced by ``execute``."""

    def __init__(self, cfg: W.WorldConfig, setting: str, condition: str):
        self.cfg = cfg
        self.setting = setting
        self.condition = condition
        self.scene: W.SceneState | None = None
        self.task: W.TaskSpec | None = None

    def reset_and_sample_task(self, seed: int) -> tuple[np.ndarray, W.TaskSpec]:
        self.scene, self.task = W.reset_and_sample_task(self.cfg, self.setting, self.condition, seed)
        return self.perception()[0], self.task

    def perception(self) -> tuple[np.ndarray, W.RobotState]:
        return W.perception(self.scene, self.cfg)

    def execute(self, action) -> None:
        self.scene = W.step(self.scene, action, self.cfg)


@dataclass(frozen=True)
class Planner:
    """Mock video model: a scripted plan rendered as frames, then corrupted."""

    cfg: PlannerConfig = PlannerConfig()
    corruption: CorruptionModel = CorruptionModel()

    def generate(self, obs0, scene, task, seed: int, wcfg: W.WorldConfig):
        return generate(obs0, scene, task, self.corruption, seed, wcfg, self.cfg)


class _Episode:
    """Bookkeeping shared by every method: logging and success tracking under a step budget."""

    def __init__(self, method: str, env: Env, seed: int, exec_cfg: ExecutorConfig,
                 metrics_cfg: MetricsConfig, trial: int):
        self.env = env
        self.cfg = exec_cfg
        scene, task = env.scene, env.task
        target = scene.object(task.target_id)
        ctr = scene.container(task.container_id).center
        self.log = EpisodeLog(method, task, seed, target.radius, ctr.copy(), trial=trial)
        self.tracker = SuccessTracker(metrics_cfg, target.radius, ctr)

    def finished(self) -> bool:
        if self.cfg.stop_on_success and self.tracker.overall:
            self.log.termination = "success"
            return True
        if len(self.log.steps) >= self.cfg.step_budget:
            self.log.termination = "step_budget"
            return True
        return False

    def execute(self, action, mode: str, gate, chunk_index: int = -1,
                hand_source: str | None = None) -> None:
        before = self.env.scene
        self.env.execute(action)
        after = self.env.scene
        tid = self.env.task.target_id
        pos = np.array([o.center for o in after.objects])
        vel = pos - np.array([o.center for o in before.objects])
        idx = [o.id for o in after.objects].index(tid)
        rec = StepRecord(
            t=len(self.log.steps), mode=mode, action=np.asarray(action, dtype=float).copy(),
            gate=None if gate is None else float(gate), ee=after.ee.copy(),
            aperture=float(after.aperture), held=after.held,
            target_pos=pos[idx].copy(), target_vel=vel[idx].copy(), chunk_index=chunk_index,
            hand_source=hand_source, object_pos=pos, object_vel=vel)
        self.log.steps.append(rec)
        self.tracker.update(rec)


def _plan(ep: _Episode, planner: Planner, model: IdmModel, smoother_cfg: SmootherConfig,
          obs0, seed: int) -> PlannedChunk | None:
    env = ep.env
    try:
        traj = planner.generate(obs0, env.scene, env.task, derive_seed(seed, "plan"), env.cfg)
    except PlanInfeasible:
        ep.log.termination = "plan_infeasible"
        return None
    ep.log.plan_meta = traj.meta()
    _, state0 = env.perception()
    chunk = smooth_chunk(predict_chunk(model, traj.frames, state0.as_vector()), smoother_cfg)
    ep.log.chunk_actions = chunk.actions
    ep.log.chunk_gates = np.asarray(chunk.predicted_gates)
    return chunk


def _gate(model: IdmModel, prev_obs, obs, prev_state: W.RobotState) -> float:
    return predict(model, prev_obs, obs, prev_state.as_vector())[1]


def run_pure_idm(env: Env, planner: Planner, model: IdmModel, smoother_cfg: SmootherConfig,
                 exec_cfg: ExecutorConfig, seed: int, metrics_cfg: MetricsConfig | None = None,
                 trial: int = 0) -> EpisodeLog:
    obs0, _ = env.reset_and_sample_task(seed)
    ep = _Episode("pure_idm", env, seed, exec_cfg, metrics_cfg or MetricsConfig(), trial)
    chunk = _plan(ep, planner, model, smoother_cfg, obs0, seed)
    if chunk is None:
        return ep.log
    prev_obs, prev_state = env.perception()
    k = 0
    while not ep.finished():
        obs, state = env.perception()
        gate = _gate(model, prev_obs, obs, prev_state)
        if k >= len(chunk):
            ep.log.termination = "plan_exhausted"
            break
        ep.execute(chunk.actions[k], PLAN, gate, chunk_index=k)
        k += 1
        prev_obs, prev_state = obs, state
    return ep.log


def run_hierarchical(env: Env, planner: Planner, model: IdmModel, policy: LowLevelPolicy,
                     smoother_cfg: SmootherConfig, exec_cfg: ExecutorConfig, seed: int,
                     metrics_cfg: MetricsConfig | None = None, trial: int = 0) -> EpisodeLog:
    obs0, task = env.reset_and_sample_task(seed)
    ep = _Episode("hierarchical", env, seed, exec_cfg, metrics_cfg or MetricsConfig(), trial)
    chunk = _plan(ep, planner, model, smoother_cfg, obs0, seed)
    if chunk is None:
        return ep.log
    monitor = GateMonitor.from_config(exec_cfg)
    policy_seed = derive_seed(seed, "policy")
    ps: PolicyState | None = None
    prev_obs, prev_state = env.perception()
    k = idle = 0
    while not ep.finished():
        obs, state = env.perception()
        gate = _gate(model, prev_obs, obs, prev_state)
        event = monitor.observe(gate)
        t = len(ep.log.steps)
        if event == "engage":
            ep.log.switches.append((t, "to_lowlevel"))
        elif event == "release":
            ep.log.switches.append((t, "to_plan"))
            k = truncate_to_next_low(k, chunk.predicted_gates, exec_cfg.tau)
        if not monitor.enabled and k >= len(chunk):
            if exec_cfg.final_fallback and monitor.can_switch and not ep.tracker.overall:
                monitor.force_engage()
                ep.log.switches.append((t, "to_lowlevel"))
                event = "engage"
            else:
                ep.log.termination = "plan_exhausted"
                break
        if monitor.enabled:
            if ps is None:
                ps = policy.start(obs, state, task, policy_seed)
            elif event == "engage":
                ps = dataclasses.replace(ps, phase=policy.entry_phase(obs, state, ps))
            action, ps = policy.react(obs, state, task, ps)
            idle = idle + 1 if ps.phase == "done" else 0
            if idle > POLICY_SETTLE_STEPS and k >= len(chunk):
                ep.log.termination = "policy_done"
                break
            ep.execute(action, LOWLEVEL, gate)
        else:
            ep.execute(chunk.actions[k], PLAN, gate, chunk_index=k)
            k += 1
        prev_obs, prev_state = obs, state
    return ep.log


def run_simultaneous(env: Env, planner: Planner, model: IdmModel, policy: LowLevelPolicy,
                     smoother_cfg: SmootherConfig, exec_cfg: ExecutorConfig, seed: int,
                     metrics_cfg: MetricsConfig | None = None, trial: int = 0) -> EpisodeLog:
    obs0, task = env.reset_and_sample_task(seed)
    ep = _Episode("simultaneous", env, seed, exec_cfg, metrics_cfg or MetricsConfig(), trial)
    chunk = _plan(ep, planner, model, smoother_cfg, obs0, seed)
    if chunk is None:
        return ep.log
    policy_seed = derive_seed(seed, "policy")
    ps: PolicyState | None = None
    prev_obs, prev_state = env.perception()
    k = 0
    while not ep.finished():
        obs, state = env.perception()
        gate = _gate(model, prev_obs, obs, prev_state)
        if k >= len(chunk):
            ep.log.termination = "plan_exhausted"
            break
        if ps is None:
            ps = policy.start(obs, state, task, policy_seed)
        hand, ps = policy.hand_component(obs, state, task, ps)
        ep.execute(compose(chunk.actions[k], hand), PLAN, gate, chunk_index=k,
                   hand_source=LOWLEVEL)
        k += 1
        prev_obs, prev_state = obs, state
    return ep.log


def run_lowlevel_only(env: Env, policy: LowLevelPolicy, exec_cfg: ExecutorConfig, seed: int,
                      metrics_cfg: MetricsConfig | None = None, trial: int = 0,
                      model: IdmModel | None = None) -> EpisodeLog:
    """The reactive policy on its own from the first step; no plan, no switching."""
    obs0, task = env.reset_and_sample_task(seed)
    ep = _Episode("lowlevel_only", env, seed, exec_cfg, metrics_cfg or MetricsConfig(), trial)
    prev_obs, prev_state = env.perception()
    ps = policy.start(obs0, prev_state, task, derive_seed(seed, "policy"))
    idle = 0
    while not ep.finished():
        obs, state = env.perception()
        gate = None if model is None else _gate(model, prev_obs, obs, prev_state)
        action, ps = policy.react(obs, state, task, ps)
        idle = idle + 1 if ps.phase == "done" else 0
        if idle > POLICY_SETTLE_STEPS:
            ep.log.termination = "policy_done"
            break
        ep.execute(action, LOWLEVEL, gate)
        prev_obs, prev_state = obs, state
    return ep.log
