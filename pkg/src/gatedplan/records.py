"""Line-delimited record files.

Every file is UTF-8 JSON Lines. The first line is a header::

    {"type": "header", "format": "gatedplan", "version": 1, "kind": ..., "layout_width": ...}

and every following line is one self-describing object with a ``type`` tag
(``frame_pair``, ``chunk``, ``episode_meta``, ``episode_step``, ``scene``,
``trajectory_meta``, ``frame``, ``model_meta``, ``tensor``, ``loss``). Floats are
written with Python's shortest round-trip representation, so a value read
back is bit-identical to the value written.
"""

from __future__ import annotations

import dataclasses
import json
from collections.abc import Iterable, Iterator
from pathlib import Path

import numpy as np

from .episode import EpisodeLog, StepRecord
from .idm import Dataset, IdmModel, PlannedChunk
from .nnet import Mlp
from .planner import FrameTrajectory
from .world import SceneObject, SceneState, TaskSpec

FORMAT = "gatedplan"
VERSION = 1


class RecordError(ValueError):
    """Malformed record file; ``line`` is 1-based."""

    def __init__(self, path, line: int, msg: str):
        super().__init__(f"{path}:{line}: {msg}")
        self.path = path
        self.line = line


class VersionMismatch(RecordError):
    pass


def _num(x):
    if isinstance(x, np.ndarray):
        return x.tolist()
    if isinstance(x, (np.floating, np.integer)):
        return x.item()
    return x


def _dumps(obj: dict) -> str:
    return json.dumps({k: _num(v) for k, v in obj.items()}, sort_keys=True,
                      separators=(",", ":"))


def write_records(path, kind: str, layout_width: int, records: Iterable[dict],
                  extra_header: dict | None = None) -> None:
    header = {"type": "header", "format": FORMAT, "version": VERSION, "kind": kind,
              "layout_width": int(layout_width), **(extra_header or {})}
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.write(_dumps(header) + "\n")
        for rec in records:
            f.write(_dumps(rec) + "\n")


def read_records(path, kind: str) -> tuple[dict, Iterator[tuple[int, dict]]]:
    """Parse and validate the header; return it with ``(line_no, record)`` pairs."""
    with open(path, encoding="utf-8") as f:
        lines = f.read().split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    parsed = []
    for i, text in enumerate(lines, start=1):
        try:
            obj = json.loads(text)
        except json.JSONDecodeError as e:
            raise RecordError(path, i, f"not valid JSON ({e.msg})") from None
        if not isinstance(obj, dict) or "type" not in obj:
            raise RecordError(path, i, "record is not an object with a 'type' tag")
        parsed.append((i, obj))
    if not parsed or parsed[0][1]["type"] != "header":
        raise RecordError(path, 1, "missing header line")
    header = parsed[0][1]
    if header.get("format") != FORMAT:
        raise RecordError(path, 1, f"unknown format {header.get('format')!r}")
    if header.get("version") != VERSION:
        raise VersionMismatch(path, 1, f"version {header.get('version')!r}, expected {VERSION}")
    if header.get("kind") != kind:
        raise RecordError(path, 1, f"file holds {header.get('kind')!r}, expected {kind!r}")
    return header, iter(parsed[1:])


def _field(path, line: int, rec: dict, key: str, width: int | None = None):
    if key not in rec:
        raise RecordError(path, line, f"missing field {key!r}")
    v = rec[key]
    if width is not None:
        try:
            v = np.asarray(v, dtype=float)
        except (TypeError, ValueError):
            raise RecordError(path, line, f"field {key!r} is not numeric") from None
        if v.shape != (width,):
            raise RecordError(path, line, f"field {key!r} has shape {v.shape}, expected ({width},)")
    return v


def _expect(path, line: int, rec: dict, type_: str) -> None:
    if rec["type"] != type_:
        raise RecordError(path, line, f"unexpected record type {rec['type']!r}")


# -- datasets -----------------------------------------------------------------

def save_dataset(path, data: Dataset) -> None:
    width = data.prev_obs.shape[1]
    recs = ({"type": "frame_pair", "prev_obs": data.prev_obs[i], "obs": data.obs[i],
             "state": data.state[i], "action": data.action[i], "gate": float(data.gate[i])}
            for i in range(len(data)))
    write_records(path, "dataset", width, recs,
                  {"state_width": data.state.shape[1], "act_dim": data.action.shape[1]})


def load_dataset(path) -> Dataset:
    header, recs = read_records(path, "dataset")
    w, sw, ad = header["layout_width"], header["state_width"], header["act_dim"]
    cols = {k: [] for k in ("prev_obs", "obs", "state", "action", "gate")}
    for line, rec in recs:
        _expect(path, line, rec, "frame_pair")
        cols["prev_obs"].append(_field(path, line, rec, "prev_obs", w))
        cols["obs"].append(_field(path, line, rec, "obs", w))
        cols["state"].append(_field(path, line, rec, "state", sw))
        cols["action"].append(_field(path, line, rec, "action", ad))
        g = _field(path, line, rec, "gate")
        if not isinstance(g, (int, float)):
            raise RecordError(path, line, "field 'gate' is not a number")
        cols["gate"].append(float(g))
    if not cols["gate"]:
        return Dataset(np.zeros((0, w)), np.zeros((0, w)), np.zeros((0, sw)),
                       np.zeros((0, ad)), np.zeros(0))
    return Dataset(*(np.array(cols[k], dtype=float)
                     for k in ("prev_obs", "obs", "state", "action", "gate")))


# -- action chunks ------------------------------------------------------------

def save_chunk(path, chunk: PlannedChunk) -> None:
    acts = np.asarray(chunk.actions, dtype=float)
    recs = ({"type": "chunk", "t": i, "action": acts[i], "gate": float(chunk.predicted_gates[i])}
            for i in range(len(acts)))
    write_records(path, "chunk", acts.shape[1] if acts.ndim == 2 else 0, recs)


def load_chunk(path) -> PlannedChunk:
    header, recs = read_records(path, "chunk")
    w = header["layout_width"]
    acts, gates = [], []
    for line, rec in recs:
        _expect(path, line, rec, "chunk")
        if rec.get("t") != len(acts):
            raise RecordError(path, line, "chunk steps out of order")
        acts.append(_field(path, line, rec, "action", w))
        gates.append(float(_field(path, line, rec, "gate")))
    return PlannedChunk(np.array(acts, dtype=float).reshape(len(acts), w), np.array(gates))


# -- scenes and frame trajectories ---------------------------------------------

def _obj(o: SceneObject) -> dict:
    return {"id": o.id, "kind": o.kind, "center": o.center.tolist(), "radius": o.radius,
            "velocity": o.velocity.tolist()}


def _unobj(d: dict) -> SceneObject:
    return SceneObject(d["id"], d["kind"], np.array(d["center"], dtype=float), d["radius"],
                       np.array(d["velocity"], dtype=float))


def scene_record(s: SceneState) -> dict:
    return {"type": "scene", "ee": s.ee, "aperture": s.aperture, "held": s.held,
            "objects": [_obj(o) for o in s.objects],
            "containers": [_obj(c) for c in s.containers], "step_index": s.step_index,
            "grasp_offset": None if s.grasp_offset is None else s.grasp_offset.tolist()}


def scene_from_record(d: dict) -> SceneState:
    off = d.get("grasp_offset")
    return SceneState(np.array(d["ee"], dtype=float), d["aperture"], d["held"],
                      tuple(_unobj(o) for o in d["objects"]),
                      tuple(_unobj(c) for c in d["containers"]), d["step_index"],
                      None if off is None else np.array(off, dtype=float))


def save_scenes(path, scenes: list[SceneState], layout_width: int) -> None:
    write_records(path, "scenes", layout_width, (scene_record(s) for s in scenes))


def load_scenes(path) -> list[SceneState]:
    _, recs = read_records(path, "scenes")
    out = []
    for line, rec in recs:
        _expect(path, line, rec, "scene")
        try:
            out.append(scene_from_record(rec))
        except (KeyError, TypeError, ValueError) as e:
            raise RecordError(path, line, f"bad scene record ({e})") from None
    return out


def save_trajectory(path, traj: FrameTrajectory) -> None:
    meta = {"type": "trajectory_meta", **traj.meta(),
            "gates": None if traj.gates is None else np.asarray(traj.gates).tolist()}
    recs = [meta] + [{"type": "frame", "t": i, "obs": f} for i, f in enumerate(traj.frames)]
    write_records(path, "trajectory", traj.frames.shape[1], recs)


def load_trajectory(path) -> FrameTrajectory:
    header, recs = read_records(path, "trajectory")
    w = header["layout_width"]
    line, meta = next(recs, (2, None))
    if meta is None or meta["type"] != "trajectory_meta":
        raise RecordError(path, line, "expected trajectory_meta record")
    frames = []
    for line, rec in recs:
        _expect(path, line, rec, "frame")
        frames.append(_field(path, line, rec, "obs", w))
    gates = meta.get("gates")
    return FrameTrajectory(np.array(frames), meta["planned_target_id"], meta["semantic_failure"],
                           meta["truncated"], meta["places_target"],
                           None if gates is None else np.array(gates, dtype=float))


# -- episode logs ---------------------------------------------------------------

def _arr(x):
    return None if x is None else np.asarray(x).tolist()


def episode_records(log: EpisodeLog, index: int = 0) -> list[dict]:
    meta = {"type": "episode_meta", "episode": index, "method": log.method,
            "task": {"target_id": log.task.target_id, "container_id": log.task.container_id,
                     "setting": log.task.setting, "condition": log.task.condition},
            "seed": log.seed, "trial": log.trial, "target_radius": log.target_radius,
            "container_pos": log.container_pos, "chunk_actions": _arr(log.chunk_actions),
            "chunk_gates": _arr(log.chunk_gates), "plan_meta": log.plan_meta,
            "switches": [list(s) for s in log.switches], "termination": log.termination,
            "n_steps": len(log.steps)}
    steps = [{"type": "episode_step", "episode": index, "t": r.t, "mode": r.mode,
              "action": r.action, "gate": r.gate, "ee": r.ee, "aperture": r.aperture,
              "held": r.held, "target_pos": r.target_pos, "target_vel": r.target_vel,
              "chunk_index": r.chunk_index, "hand_source": r.hand_source,
              "object_pos": _arr(r.object_pos), "object_vel": _arr(r.object_vel)}
             for r in log.steps]
    return [meta] + steps


def save_logs(path, logs: list[EpisodeLog], layout_width: int = 0) -> None:
    def gen():
        for i, log in enumerate(logs):
            yield from episode_records(log, i)
    write_records(path, "episodes", layout_width, gen())


def save_log(path, log: EpisodeLog, layout_width: int = 0) -> None:
    save_logs(path, [log], layout_width)


def _step_from(d: dict) -> StepRecord:
    def opt(k):
        return None if d.get(k) is None else np.array(d[k], dtype=float)
    return StepRecord(d["t"], d["mode"], np.array(d["action"], dtype=float), d["gate"],
                      np.array(d["ee"], dtype=float), d["aperture"], d["held"],
                      np.array(d["target_pos"], dtype=float),
                      np.array(d["target_vel"], dtype=float), d["chunk_index"],
                      d["hand_source"], opt("object_pos"), opt("object_vel"))


def _log_from(d: dict) -> EpisodeLog:
    def opt(k):
        return None if d.get(k) is None else np.array(d[k], dtype=float)
    return EpisodeLog(d["method"], TaskSpec(**d["task"]), d["seed"], d["target_radius"],
                      np.array(d["container_pos"], dtype=float), [], d["trial"],
                      opt("chunk_actions"), opt("chunk_gates"), d["plan_meta"],
                      [tuple(s) for s in d["switches"]], d["termination"])


def load_logs(path) -> list[EpisodeLog]:
    _, recs = read_records(path, "episodes")
    logs: list[EpisodeLog] = []
    expected: list[int] = []
    for line, rec in recs:
        try:
            if rec["type"] == "episode_meta":
                if rec["episode"] != len(logs):
                    raise RecordError(path, line, "episodes out of order")
                logs.append(_log_from(rec))
                expected.append(rec["n_steps"])
            elif rec["type"] == "episode_step":
                if not logs or rec["episode"] != len(logs) - 1:
                    raise RecordError(path, line, "step does not follow its episode header")
                if rec["t"] != len(logs[-1].steps):
                    raise RecordError(path, line, "step indices must be consecutive")
                logs[-1].steps.append(_step_from(rec))
            else:
                raise RecordError(path, line, f"unexpected record type {rec['type']!r}")
        except (KeyError, TypeError, ValueError) as e:
            if isinstance(e, RecordError):
                raise
            raise RecordError(path, line, f"bad episode record ({e!r})") from None
    for log, n in zip(logs, expected):
        if len(log.steps) != n:
            raise RecordError(path, 0, f"episode {log.seed} declares {n} steps, found "
                                       f"{len(log.steps)}")
    return logs


def load_log(path) -> EpisodeLog:
    logs = load_logs(path)
    if len(logs) != 1:
        raise RecordError(path, 1, f"expected one episode, found {len(logs)}")
    return logs[0]


def replay_trace(log: EpisodeLog) -> str:
    """Human-readable step trace of a logged episode."""
    head = (f"# {log.method} {log.setting}/{log.condition} trial={log.trial} seed={log.seed} "
            f"target={log.task.target_id} termination={log.termination}")
    lines = [head, "t\tmode\tgate\tee\taperture\theld\ttarget"]
    marks = {t: d for t, d in log.switches}
    for r in log.steps:
        if r.t in marks:
            lines.append(f"-- switch {marks[r.t]} at t={r.t}")
        gate = "-" if r.gate is None else f"{r.gate:.3f}"
        ee = ",".join(f"{v:.4f}" for v in r.ee)
        tp = ",".join(f"{v:.4f}" for v in r.target_pos)
        held = "-" if r.held is None else str(r.held)
        lines.append(f"{r.t}\t{r.mode}\t{gate}\t{ee}\t{r.aperture:.3f}\t{held}\t{tp}")
    return "\n".join(lines) + "\n"


# -- checkpoints ------------------------------------------------------------------

def _mlp_records(prefix: str, m: Mlp) -> list[dict]:
    out = []
    for i, (w, b) in enumerate(zip(m.weights, m.biases)):
        out.append({"type": "tensor", "name": f"{prefix}.w{i}", "shape": list(w.shape),
                    "data": w.ravel()})
        out.append({"type": "tensor", "name": f"{prefix}.b{i}", "shape": list(b.shape),
                    "data": b})
    return out


def save_checkpoint(path, m: IdmModel, loss_cfg=None) -> None:
    """Write the checkpoint and a ``<path>.meta.json`` sidecar describing it."""
    header = {"sizes": {"encoder": list(m.encoder.sizes), "action_head": list(m.action_head.sizes),
                        "gate_head": list(m.gate_head.sizes)}}
    meta = {"type": "model_meta", "anchor_actions": m.anchor_actions,
            "in_mean": m.in_mean, "in_std": m.in_std,
            "bounds_lo": m.bounds_lo, "bounds_hi": m.bounds_hi}
    recs = ([meta] + _mlp_records("encoder", m.encoder) + _mlp_records("action_head", m.action_head)
            + _mlp_records("gate_head", m.gate_head))
    write_records(path, "checkpoint", m.obs_width, recs, header)
    sidecar = {"format": FORMAT, "version": VERSION, "layout_width": m.obs_width,
               "act_dim": m.act_dim, "sizes": header["sizes"],
               "loss": None if loss_cfg is None else dataclasses.asdict(loss_cfg)}
    Path(f"{path}.meta.json").write_text(json.dumps(sidecar, sort_keys=True, indent=1) + "\n",
                                         encoding="utf-8")


def load_checkpoint(path) -> IdmModel:
    header, recs = read_records(path, "checkpoint")
    sizes = header.get("sizes")
    if not isinstance(sizes, dict):
        raise RecordError(path, 1, "checkpoint header lacks layer sizes")
    line, meta = next(recs, (2, None))
    if meta is None or meta["type"] != "model_meta":
        raise RecordError(path, line, "expected model_meta record")
    tensors = {}
    for line, rec in recs:
        _expect(path, line, rec, "tensor")
        try:
            tensors[rec["name"]] = np.array(rec["data"], dtype=float).reshape(rec["shape"])
        except (KeyError, ValueError) as e:
            raise RecordError(path, line, f"bad tensor ({e})") from None

    def mlp(prefix):
        s = tuple(sizes[prefix])
        try:
            ws = [tensors[f"{prefix}.w{i}"] for i in range(len(s) - 1)]
            bs = [tensors[f"{prefix}.b{i}"] for i in range(len(s) - 1)]
        except KeyError as e:
            raise RecordError(path, 0, f"missing tensor {e}") from None
        return Mlp(s, ws, bs)

    return IdmModel(mlp("encoder"), mlp("action_head"), mlp("gate_head"),
                    np.array(meta["in_mean"], dtype=float), np.array(meta["in_std"], dtype=float),
                    header["layout_width"], np.array(meta["bounds_lo"], dtype=float),
                    np.array(meta["bounds_hi"], dtype=float), meta["anchor_actions"])


def save_loss_curve(path, rows) -> None:
    """Training curve as CSV: step, loss, action_loss, gate_loss, lr."""
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.write("step,loss,action_loss,gate_loss,lr\n")
        for row in rows:
            f.write(",".join(repr(float(v)) if i else str(int(v)) for i, v in enumerate(row)) + "\n")


def ensure_dir(path) -> Path:
    p = Path(path)
    p.mkdir(parents=True, exist_ok=True)
    return p
