import dataclasses

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gatedplan import world as W
from gatedplan.idm import present_continuous_mask
from gatedplan.planner import (CorruptionModel, PlanInfeasible, PlannerConfig, frame_gates,
                               generate, oracle_plan)
from gatedplan.world import ObsLayout, SceneObject, WorldConfig

CFG = WorldConfig()


def _sample(seed, setting="similar_distractors", condition="experimental"):
    scene, task = W.reset_and_sample_task(CFG, setting, condition, seed)
    return scene, task, W.perception(scene, CFG)[0]


def _transitions(g):
    d = np.diff(np.concatenate([[0.0], g, [0.0]]))
    return int(np.sum(d > 0.5)), int(np.sum(d < -0.5))


@pytest.mark.parametrize("setting", W.SETTINGS)
def test_oracle_places_target(setting):
    scene, task, _ = _sample(3, setting)
    plan = oracle_plan(scene, task, CFG)
    final = plan.scenes[-1]
    dist = np.linalg.norm(final.object(task.target_id).center
                          - final.container(task.container_id).center)
    assert dist <= PlannerConfig().tau_task
    assert final.held is None


@given(st.integers(0, 2**32), st.sampled_from(W.SETTINGS), st.sampled_from(W.CONDITIONS))
@settings(max_examples=30)
def test_oracle_gates_single_block(seed, setting, condition):
    scene, task = W.reset_and_sample_task(CFG, setting, condition, seed)
    plan = oracle_plan(scene, task, CFG)
    assert _transitions(plan.gates) == (1, 1)
    assert len(plan.actions) == len(plan.gates) == len(plan.frames) - 1
    # the block starts with the first closing step
    first = int(np.argmax(plan.gates > 0.5))
    assert plan.actions[first, 3] < plan.scenes[first].aperture
    assert np.all(plan.gates[:first] == 0)


def test_oracle_replay_reproduces_frames():
    scene, task, _ = _sample(11)
    plan = oracle_plan(scene, task, CFG)
    s = scene
    frames = [W.perception(s, CFG)[0]]
    for a in plan.actions:
        s = W.step(s, a, CFG)
        frames.append(W.perception(s, CFG)[0])
    assert np.array_equal(np.stack(frames), plan.frames)


def test_oracle_missing_target_infeasible():
    scene, task, _ = _sample(2)
    with pytest.raises(PlanInfeasible):
        oracle_plan(scene, dataclasses.replace(task, target_id=99), CFG)


def test_oracle_step_budget_infeasible():
    scene, task, _ = _sample(2)
    with pytest.raises(PlanInfeasible):
        oracle_plan(scene, task, CFG, PlannerConfig(max_plan_steps=10))


def test_oracle_out_of_workspace_infeasible():
    ctr = SceneObject(0, "container", np.array([0.5, 0.85, 0.0]), 0.06)
    obj = SceneObject(1, "cube", np.array([0.5, 0.5, 0.0]), 0.025)
    scene = W.make_scene(CFG, (0.5, 0.5, 0.1), [obj], [ctr])
    task = W.TaskSpec(1, 0, "pass_by", "control")
    with pytest.raises(PlanInfeasible):
        oracle_plan(scene, task, CFG, PlannerConfig(hover_height=1.5))


def test_subsample_stride_keeps_endpoints():
    scene, task, _ = _sample(4)
    full = oracle_plan(scene, task, CFG)
    sub = oracle_plan(scene, task, CFG, PlannerConfig(subsample_stride=3))
    assert np.array_equal(sub.frames[0], full.frames[0])
    assert np.array_equal(sub.frames[-1], full.frames[-1])
    assert len(sub.frames) == len(range(0, len(full.frames), 3)) + \
        (0 if (len(full.frames) - 1) % 3 == 0 else 1)
    assert _transitions(sub.gates) == (1, 1)


def test_frame_gates_shift():
    assert frame_gates(np.array([0.0, 1.0, 1.0, 0.0])).tolist() == [0, 0, 1, 1, 0]


# -- generate ----------------------------------------------------------------------------

def test_zero_corruption_equals_oracle():
    scene, task, obs0 = _sample(5)
    traj = generate(obs0, scene, task, CorruptionModel(), 123, CFG)
    plan = oracle_plan(scene, task, CFG)
    assert np.array_equal(traj.frames, plan.frames)
    assert np.array_equal(traj.gates, plan.gates)
    assert traj.places_target and not traj.semantic_failure and not traj.truncated


def test_semantic_failure_retargets():
    scene, task, obs0 = _sample(6)
    assert len(scene.objects) >= 2
    for seed in range(5):
        traj = generate(obs0, scene, task, CorruptionModel(semantic_failure_prob=1.0), seed, CFG)
        assert traj.semantic_failure
        assert traj.planned_target_id != task.target_id
        assert traj.planned_target_id in [o.id for o in scene.objects]
        assert not traj.places_target
        # the planned (wrong) object ends up at the container
        lay = ObsLayout(CFG)
        ctr = scene.container(task.container_id).center
        final = lay.object_pos(traj.frames[-1], traj.planned_target_id)
        assert np.linalg.norm(final - ctr) <= PlannerConfig().tau_task


def test_interaction_noise_mask():
    scene, task, obs0 = _sample(7)
    clean = oracle_plan(scene, task, CFG)
    traj = generate(obs0, scene, task, CorruptionModel(interaction_noise_sigma=0.05), 9, CFG)
    fg = frame_gates(clean.gates) > 0.5
    assert np.array_equal(traj.frames[~fg], clean.frames[~fg])
    assert not np.array_equal(traj.frames[fg], clean.frames[fg])
    # only pose-bearing entries move
    pose = present_continuous_mask(clean.frames, ObsLayout(CFG), poses_only=True)
    assert np.array_equal(traj.frames[~pose], clean.frames[~pose])


def test_drift_touches_every_frame_but_not_layout():
    scene, task, obs0 = _sample(8)
    clean = oracle_plan(scene, task, CFG)
    traj = generate(obs0, scene, task, CorruptionModel(global_drift_sigma=0.01), 1, CFG)
    assert traj.frames.shape == clean.frames.shape
    assert np.all(np.any(traj.frames != clean.frames, axis=1))


def test_truncation_cuts_after_interaction_start():
    scene, task, obs0 = _sample(9)
    clean = oracle_plan(scene, task, CFG)
    first = int(np.argmax(frame_gates(clean.gates) > 0.5))
    seen = 0
    for seed in range(20):
        traj = generate(obs0, scene, task, CorruptionModel(truncation_prob=1.0), seed, CFG)
        assert first + 1 <= len(traj) <= len(clean.frames)
        assert len(traj.gates) == len(traj) - 1
        assert np.array_equal(traj.frames, clean.frames[:len(traj)])
        seen += traj.truncated
        lay = ObsLayout(CFG)
        tgt = lay.object_pos(traj.frames[-1], task.target_id)
        ctr = lay.container_pos(traj.frames[-1], task.container_id)
        assert traj.places_target == (np.linalg.norm(tgt - ctr) <= PlannerConfig().tau_task)
    assert seen > 0


def test_generate_deterministic():
    scene, task, obs0 = _sample(10)
    c = CorruptionModel(0.03, 0.01, 0.5, 0.5)
    a = generate(obs0, scene, task, c, 77, CFG)
    b = generate(obs0, scene, task, c, 77, CFG)
    assert np.array_equal(a.frames, b.frames) and a.meta() == b.meta()


def test_generate_rejects_mismatched_obs():
    scene, task, obs0 = _sample(10)
    with pytest.raises(ValueError):
        generate(obs0 + 1.0, scene, task, CorruptionModel(), 0, CFG)


def test_corruption_validation():
    with pytest.raises(ValueError):
        CorruptionModel(interaction_noise_sigma=-1)
    with pytest.raises(ValueError):
        CorruptionModel(truncation_prob=1.5)
    assert CorruptionModel.preset("none") == CorruptionModel()
