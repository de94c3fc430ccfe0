"""Success predicates plus the failure taxonomy, aggregated into Suc/All tables."""

from __future__ import annotations

import csv
import io
from collections import Counter
from dataclasses import dataclass

import numpy as np

from .episode import EpisodeLog, StepRecord

FAILURE_KINDS = ("video_generation", "guidance", "interaction")
METRIC_NAMES = ("instr_follow", "overall")


@dataclass(frozen=True)
class MetricsConfig:
    tau_ins: float = 0.05
    tau_task: float = 0.06
    tau_static: float = 1e-4

    def __post_init__(self):
        if min(self.tau_ins, self.tau_task, self.tau_static) <= 0:
            raise ValueError("thresholds must be positive")


class SuccessTracker:
    """Running evaluation of both success predicates, one step record at a time."""

    def __init__(self, cfg: MetricsConfig, target_radius: float, container_pos):
        self.cfg = cfg
        self.radius = target_radius
        self.ctr = np.asarray(container_pos, dtype=float)
        self.min_d_ins = np.inf
        self.overall = False

    def update(self, rec: StepRecord) -> None:
        d = max(0.0, float(np.linalg.norm(rec.ee - rec.target_pos)) - self.radius)
        self.min_d_ins = min(self.min_d_ins, d)
        if not self.overall:
            static = float(np.linalg.norm(rec.target_vel)) <= self.cfg.tau_static
            placed = float(np.linalg.norm(rec.target_pos - self.ctr)) <= self.cfg.tau_task
            self.overall = static and placed

    @property
    def instr(self) -> bool:
        return bool(self.min_d_ins <= self.cfg.tau_ins)

    @classmethod
    def over(cls, log: EpisodeLog, cfg: MetricsConfig) -> SuccessTracker:
        tr = cls(cfg, log.target_radius, log.container_pos)
        for rec in log.steps:
            tr.update(rec)
        return tr


def instruction_follow_success(log: EpisodeLog, cfg: MetricsConfig) -> bool:
    return SuccessTracker.over(log, cfg).instr


def overall_success(log: EpisodeLog, cfg: MetricsConfig) -> bool:
    return SuccessTracker.over(log, cfg).overall


def classify_failure(log: EpisodeLog, cfg: MetricsConfig, plan_meta: dict | None = None) -> str:
    """Earliest broken stage, checked in pipeline order starting from the plan."""
    tr = SuccessTracker.over(log, cfg)
    if tr.overall:
        return "none"
    meta = plan_meta if plan_meta is not None else log.plan_meta
    if meta is not None and (meta.get("semantic_failure") or not meta.get("places_target", True)):
        return "video_generation"
    if not tr.instr:
        return "guidance"
    return "interaction"


@dataclass(frozen=True)
class EpisodeResult:
    method: str
    setting: str
    condition: str
    trial: int
    instr: bool
    overall: bool
    failure: str


def evaluate(log: EpisodeLog, cfg: MetricsConfig) -> EpisodeResult:
    tr = SuccessTracker.over(log, cfg)
    return EpisodeResult(log.method, log.setting, log.condition, log.trial, tr.instr, tr.overall,
                         classify_failure(log, cfg))


@dataclass(frozen=True)
class ResultsRow:
    method: str
    setting: str
    condition: str
    metric: str
    successes: int
    trials: int

    def __post_init__(self):
        if not 0 <= self.successes <= self.trials:
            raise ValueError("need 0 <= successes <= trials")

    @property
    def rate(self) -> float:
        return self.successes / self.trials

    def cell(self) -> str:
        return f"{self.successes}/{self.trials}  {self.rate:.2f}"


@dataclass(frozen=True)
class FailureRow:
    method: str
    setting: str
    condition: str
    counts: tuple[int, int, int]
    total_failures: int


def aggregate(results: list[EpisodeResult]) -> tuple[list[ResultsRow], list[FailureRow]]:
    groups: dict[tuple[str, str, str], list[EpisodeResult]] = {}
    for r in results:
        groups.setdefault((r.method, r.setting, r.condition), []).append(r)
    rows, fails = [], []
    for key in sorted(groups):
        eps = groups[key]
        n = len(eps)
        rows.append(ResultsRow(*key, "instr_follow", sum(e.instr for e in eps), n))
        rows.append(ResultsRow(*key, "overall", sum(e.overall for e in eps), n))
        kinds = Counter(e.failure for e in eps if not e.overall)
        fails.append(FailureRow(*key, tuple(kinds[k] for k in FAILURE_KINDS),
                                sum(not e.overall for e in eps)))
    return rows, fails


def results_csv(rows: list[ResultsRow]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["method", "setting", "condition", "metric", "suc", "all", "rate"])
    for r in rows:
        w.writerow([r.method, r.setting, r.condition, r.metric, r.successes, r.trials,
                    f"{r.rate:.2f}"])
    return buf.getvalue()


def failures_csv(rows: list[FailureRow]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["method", "setting", "condition", *FAILURE_KINDS, "total_failures"])
    for r in rows:
        w.writerow([r.method, r.setting, r.condition, *r.counts, r.total_failures])
    return buf.getvalue()


def results_table(rows: list[ResultsRow]) -> str:
    """Aligned text table: one line per (method, metric), one column per (setting, condition)."""
    cols = sorted({(r.setting, r.condition) for r in rows})
    lines_key = sorted({(r.method, r.metric) for r in rows})
    cells = {(r.method, r.metric, r.setting, r.condition): r.cell() for r in rows}
    head = ["method", "metric"] + [f"{s}/{c}" for s, c in cols]
    body = [[m, k] + [cells.get((m, k, s, c), "-") for s, c in cols] for m, k in lines_key]
    widths = [max(len(row[i]) for row in [head] + body) for i in range(len(head))]
    fmt = "  ".join(f"{{:<{w}}}" for w in widths)
    return "\n".join(fmt.format(*row) for row in [head] + body) + "\n"
