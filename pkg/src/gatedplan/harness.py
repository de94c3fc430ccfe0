"""End-to-end experiment runner: the full cell matrix in, tables and logs out."""

from __future__ import annotations

import dataclasses
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

from . import records
from .config import ExperimentConfig
from .episode import EpisodeLog
from .executor import (Env, ExecutorConfig, Planner, run_hierarchical, run_lowlevel_only,
                       run_pure_idm, run_simultaneous)
from .idm import IdmModel, TrainLog, train
from .lowlevel import LowLevelPolicy
from .metrics import (EpisodeResult, FailureRow, ResultsRow, aggregate, evaluate, failures_csv,
                      results_csv, results_table)
from .play import collect_random_play
from .seeding import derive_seed

log = logging.getLogger(__name__)


def scene_seed(root: int, setting: str, condition: str, trial: int) -> int:
    """Seed of one scene. Methods share it, so every method sees the same scenes."""
    return derive_seed(root, "scene", setting, condition, trial)


def train_model(cfg: ExperimentConfig) -> tuple[IdmModel, TrainLog]:
    play = dataclasses.replace(cfg.play, seed=derive_seed(cfg.seed, "play", cfg.play.seed))
    data = collect_random_play(cfg.world, play)
    return train(data, cfg.world, cfg.train, seed=derive_seed(cfg.seed, "train"))


def run_episode(cfg: ExperimentConfig, model: IdmModel | None, method: str, setting: str,
                condition: str, trial: int) -> EpisodeLog:
    env = Env(cfg.world, setting, condition)
    seed = scene_seed(cfg.seed, setting, condition, trial)
    policy = LowLevelPolicy(cfg.world, cfg.lowlevel)
    planner = Planner(cfg.planner, cfg.corruption)
    ex = cfg.executor
    if method == "lowlevel_only":
        return run_lowlevel_only(env, policy, ex, seed, cfg.metrics, trial, model)
    if model is None:
        raise ValueError(f"method {method!r} needs a trained model")
    if method == "pure_idm":
        return run_pure_idm(env, planner, model, cfg.smoother,
                            dataclasses.replace(ex, variant="pure_idm"), seed, cfg.metrics, trial)
    if method == "hierarchical":
        return run_hierarchical(env, planner, model, policy, cfg.smoother,
                                dataclasses.replace(ex, variant="hierarchical"), seed,
                                cfg.metrics, trial)
    if method == "simultaneous":
        return run_simultaneous(env, planner, model, policy, cfg.smoother,
                                dataclasses.replace(ex, variant="simultaneous"), seed,
                                cfg.metrics, trial)
    raise ValueError(f"unknown method {method!r}")


@dataclass
class ExperimentResult:
    logs: list[EpisodeLog]
    results: list[EpisodeResult]
    rows: list[ResultsRow]
    failures: list[FailureRow]

    @property
    def results_csv(self) -> str:
        return results_csv(self.rows)

    @property
    def failures_csv(self) -> str:
        return failures_csv(self.failures)

    def table(self) -> str:
        return results_table(self.rows)

    def rate(self, method: str, setting: str, condition: str, metric: str = "overall") -> float:
        for r in self.rows:
            if (r.method, r.setting, r.condition, r.metric) == (method, setting, condition, metric):
                return r.rate
        raise KeyError((method, setting, condition, metric))


def _cells(cfg: ExperimentConfig):
    return [(m, s, c, t) for m in cfg.methods for s in cfg.settings for c in cfg.conditions
            for t in range(cfg.trials)]


def _run_cell(args):
    cfg, model, cell = args
    return run_episode(cfg, model, *cell)


def run_experiment(cfg: ExperimentConfig, model: IdmModel | None = None) -> ExperimentResult:
    """Run every (method, setting, condition, trial) cell and aggregate.

    Output is sorted by cell and trial before aggregation, so it does not
    depend on ``workers``.
    """
    if model is None and cfg.needs_model():
        if cfg.checkpoint:
            model = records.load_checkpoint(cfg.checkpoint)
        else:
            log.info("no checkpoint given; collecting random play and training")
            model, _ = train_model(cfg)
    cells = _cells(cfg)
    if cfg.workers > 1:
        with ProcessPoolExecutor(cfg.workers) as pool:
            logs = list(pool.map(_run_cell, [(cfg, model, c) for c in cells], chunksize=8))
    else:
        logs = [run_episode(cfg, model, *c) for c in cells]
    order = sorted(range(len(cells)), key=lambda i: cells[i])
    logs = [logs[i] for i in order]
    results = [evaluate(lg, cfg.metrics) for lg in logs]
    rows, fails = aggregate(results)
    return ExperimentResult(logs, results, rows, fails)


def write_experiment(out_dir, res: ExperimentResult, layout_width: int = 0) -> dict[str, Path]:
    out = records.ensure_dir(out_dir)
    paths = {"results": out / "results.csv", "failures": out / "failures.csv",
             "table": out / "table.txt", "episodes": out / "episodes.jsonl"}
    paths["results"].write_text(res.results_csv, encoding="utf-8")
    paths["failures"].write_text(res.failures_csv, encoding="utf-8")
    paths["table"].write_text(res.table(), encoding="utf-8")
    records.save_logs(paths["episodes"], res.logs, layout_width)
    return paths


__all__ = ["ExecutorConfig", "ExperimentResult", "run_episode", "run_experiment", "scene_seed",
           "train_model", "write_experiment"]
