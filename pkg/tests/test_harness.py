import dataclasses

import numpy as np
import pytest

from gatedplan import records as R
from gatedplan.config import ExperimentConfig
from gatedplan.harness import run_episode, run_experiment, train_model, write_experiment
from gatedplan.idm import TrainConfig
from gatedplan.play import PlayConfig


@pytest.fixture(scope="module")
def tiny():
    cfg = ExperimentConfig(
        seed=3, trials=2, methods=("lowlevel_only", "pure_idm", "hierarchical", "simultaneous"),
        settings=("pass_by",), play=PlayConfig(num_samples=1500),
        train=dataclasses.replace(ExperimentConfig().train, epochs=1, hidden=(32, 32),
                                  head_hidden=32))
    model, _ = train_model(cfg)
    return cfg, model


def test_one_cell_one_trial(tiny):
    cfg, model = tiny
    one = dataclasses.replace(cfg, trials=1, methods=("pure_idm",), conditions=("control",))
    res = run_experiment(one, model)
    assert len(res.logs) == 1
    assert [r.metric for r in res.rows] == ["instr_follow", "overall"]
    assert len(res.failures) == 1


def test_matrix_shape_and_labels(tiny):
    cfg, model = tiny
    res = run_experiment(cfg, model)
    assert len(res.logs) == 4 * 1 * 2 * 2
    assert len(res.rows) == 4 * 2 * 2
    for lg in res.logs:
        assert lg.termination in ("success", "plan_exhausted", "step_budget", "policy_done",
                                  "plan_infeasible")
    assert 0.0 <= res.rate("pure_idm", "pass_by", "control") <= 1.0


def test_methods_share_scenes(tiny):
    cfg, model = tiny
    a = run_episode(cfg, model, "pure_idm", "pass_by", "experimental", 1)
    b = run_episode(cfg, model, "lowlevel_only", "pass_by", "experimental", 1)
    assert a.seed == b.seed and a.task == b.task
    assert np.array_equal(a.container_pos, b.container_pos)


def test_outputs_byte_identical_across_runs_and_workers(tiny, tmp_path):
    cfg, model = tiny
    p1 = write_experiment(tmp_path / "a", run_experiment(cfg, model), cfg.world.obs_width)
    p2 = write_experiment(tmp_path / "b", run_experiment(cfg, model), cfg.world.obs_width)
    par = dataclasses.replace(cfg, workers=2)
    p3 = write_experiment(tmp_path / "c", run_experiment(par, model), cfg.world.obs_width)
    for key in p1:
        assert p1[key].read_bytes() == p2[key].read_bytes() == p3[key].read_bytes()


def test_training_is_deterministic(tiny):
    cfg, model = tiny
    again, _ = train_model(cfg)
    assert all(np.array_equal(a, b) for a, b in zip(model.params(), again.params()))


def test_episode_log_roundtrip(tiny, tmp_path):
    cfg, model = tiny
    res = run_experiment(dataclasses.replace(cfg, trials=1), model)
    R.save_logs(tmp_path / "e.jsonl", res.logs, cfg.world.obs_width)
    back = R.load_logs(tmp_path / "e.jsonl")
    assert len(back) == len(res.logs)
    for a, b in zip(res.logs, back):
        assert (a.method, a.task, a.seed, a.trial, a.termination, a.switches, a.plan_meta) == \
            (b.method, b.task, b.seed, b.trial, b.termination, b.switches, b.plan_meta)
        assert len(a) == len(b)
        for ra, rb in zip(a.steps, b.steps):
            assert np.array_equal(ra.action, rb.action) and np.array_equal(ra.ee, rb.ee)
            assert ra.gate == rb.gate and ra.mode == rb.mode
        assert R.replay_trace(a) == R.replay_trace(b)


def test_missing_model_rejected(tiny):
    cfg, _ = tiny
    with pytest.raises(ValueError):
        run_episode(cfg, None, "pure_idm", "pass_by", "control", 0)
    with pytest.raises(ValueError):
        run_episode(cfg, None, "teleport", "pass_by", "control", 0)


def test_lowlevel_only_runs_without_training():
    cfg = ExperimentConfig(trials=1, methods=("lowlevel_only",), settings=("pass_by",),
                           train=TrainConfig(epochs=0))
    res = run_experiment(cfg)
    assert len(res.logs) == 2
