"""Multi-head inverse dynamics model.

A shared encoder reads ``concat(prev_obs, obs, state)``; an action head
regresses the absolute action that realizes the transition and a gate head
emits an interaction logit. Training uses a weighted smooth-L1 on actions and
binary cross-entropy on the gate.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from . import nnet
from .nnet import Mlp
from .world import ObsLayout, WorldConfig, ROBOT_STATE_WIDTH

log = logging.getLogger(__name__)

ACT_DIM = 4
BCE_EPS = 1e-7


@dataclass
class FramePairSample:
    prev_obs: np.ndarray
    obs: np.ndarray
    state: np.ndarray
    action: np.ndarray
    gate_label: int


@dataclass
class Dataset:
    """Column-stacked frame-pair samples."""

    prev_obs: np.ndarray
    obs: np.ndarray
    state: np.ndarray
    action: np.ndarray
    gate: np.ndarray

    def __len__(self) -> int:
        return len(self.gate)

    @classmethod
    def empty(cls, obs_width: int, act_dim: int = ACT_DIM) -> Dataset:
        return cls(np.zeros((0, obs_width)), np.zeros((0, obs_width)),
                   np.zeros((0, ROBOT_STATE_WIDTH)), np.zeros((0, act_dim)), np.zeros(0))

    @classmethod
    def from_samples(cls, samples: list[FramePairSample]) -> Dataset:
        if not samples:
            raise ValueError("no samples")
        return cls(np.stack([s.prev_obs for s in samples]).astype(float),
                   np.stack([s.obs for s in samples]).astype(float),
                   np.stack([s.state for s in samples]).astype(float),
                   np.stack([s.action for s in samples]).astype(float),
                   np.array([s.gate_label for s in samples], dtype=float))

    def samples(self) -> list[FramePairSample]:
        return [FramePairSample(self.prev_obs[i], self.obs[i], self.state[i], self.action[i],
                                int(self.gate[i])) for i in range(len(self))]

    def subset(self, idx) -> Dataset:
        return Dataset(self.prev_obs[idx], self.obs[idx], self.state[idx], self.action[idx],
                       self.gate[idx])

    def inputs(self) -> np.ndarray:
        return np.concatenate([self.prev_obs, self.obs, self.state], axis=1)

    @staticmethod
    def concat(parts: list[Dataset]) -> Dataset:
        return Dataset(*(np.concatenate([getattr(p, f) for p in parts])
                         for f in ("prev_obs", "obs", "state", "action", "gate")))


@dataclass(frozen=True)
class LossConfig:
    lambda_act: float = 1.0
    lambda_gate: float = 1.0
    huber_beta: float = 0.1
    action_weights: tuple[float, ...] = (1.0,) * ACT_DIM

    def __post_init__(self):
        if self.lambda_act < 0 or self.lambda_gate < 0:
            raise ValueError("loss weights must be non-negative")
        if self.huber_beta <= 0:
            raise ValueError("huber_beta must be positive")


@dataclass
class IdmModel:
    encoder: Mlp
    action_head: Mlp
    gate_head: Mlp
    in_mean: np.ndarray
    in_std: np.ndarray
    obs_width: int
    bounds_lo: np.ndarray
    bounds_hi: np.ndarray
    # action head predicts an offset from the (ee, aperture) shown in the later frame
    anchor_actions: bool = True

    def __post_init__(self):
        feat = self.encoder.out_dim
        if self.action_head.in_dim != feat or self.gate_head.in_dim != feat:
            raise ValueError("head input dims must equal encoder output dim")
        if self.gate_head.out_dim != 1:
            raise ValueError("gate head must emit one logit")
        if self.encoder.in_dim != 2 * self.obs_width + ROBOT_STATE_WIDTH:
            raise ValueError("encoder input does not match observation layout")

    @property
    def act_dim(self) -> int:
        return self.action_head.out_dim

    @property
    def in_dim(self) -> int:
        return self.encoder.in_dim

    def params(self) -> list[np.ndarray]:
        return self.encoder.params() + self.action_head.params() + self.gate_head.params()

    def param_groups(self) -> list[str]:
        return (["encoder"] * len(self.encoder.params())
                + ["action_head"] * len(self.action_head.params())
                + ["gate_head"] * len(self.gate_head.params()))

    @classmethod
    def init(cls, world: WorldConfig, rng: np.random.Generator,
             hidden: tuple[int, ...] = (256, 256), head_hidden: int = 256,
             act_dim: int = ACT_DIM, zero_heads: bool = False) -> IdmModel:
        w = world.obs_width
        in_dim = 2 * w + ROBOT_STATE_WIDTH
        enc = Mlp.init((in_dim, *hidden), rng)
        act = Mlp.init((hidden[-1], head_hidden, act_dim), rng, zero_last=zero_heads)
        gate = Mlp.init((hidden[-1], head_hidden, 1), rng, zero_last=zero_heads)
        return cls(enc, act, gate, np.zeros(in_dim), np.ones(in_dim), w,
                   world.lo.copy(), world.hi.copy())


def _sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


@dataclass
class _Pass:
    enc_tape: nnet.Tape
    feat_pre: np.ndarray
    act_tape: nnet.Tape
    gate_tape: nnet.Tape
    action: np.ndarray
    logit: np.ndarray


def _forward(m: IdmModel, x: np.ndarray) -> _Pass:
    xn = (x - m.in_mean) / m.in_std
    feat_pre, enc_tape = nnet.forward(m.encoder, xn)
    feat = np.maximum(feat_pre, 0.0)
    action, act_tape = nnet.forward(m.action_head, feat)
    if m.anchor_actions:
        action = action + x[:, m.obs_width:m.obs_width + m.act_dim]
    logit, gate_tape = nnet.forward(m.gate_head, feat)
    return _Pass(enc_tape, feat_pre, act_tape, gate_tape, action, logit[:, 0])


def _check_width(m: IdmModel, x: np.ndarray) -> None:
    if x.shape[-1] != m.in_dim:
        raise ValueError(f"input width {x.shape[-1]} does not match model width {m.in_dim}")


def predict_batch(m: IdmModel, prev_obs, obs, state) -> tuple[np.ndarray, np.ndarray]:
    x = np.concatenate([np.atleast_2d(prev_obs), np.atleast_2d(obs), np.atleast_2d(state)],
                       axis=1)
    _check_width(m, x)
    p = _forward(m, x)
    action = p.action.copy()
    action[:, :3] = np.clip(action[:, :3], m.bounds_lo, m.bounds_hi)
    action[:, 3] = np.clip(action[:, 3], 0.0, 1.0)
    return action, _sigmoid(p.logit)


def predict(m: IdmModel, prev_obs, obs, state) -> tuple[np.ndarray, float]:
    """``(action, gate)`` for one transition; action pose is clipped to the workspace."""
    action, gate = predict_batch(m, prev_obs, obs, state)
    return action[0], float(gate[0])


@dataclass
class PlannedChunk:
    actions: np.ndarray
    predicted_gates: np.ndarray

    def __post_init__(self):
        if len(self.actions) != len(self.predicted_gates):
            raise ValueError("actions and gates differ in length")

    def __len__(self) -> int:
        return len(self.actions)


def predict_chunk(m: IdmModel, frames: np.ndarray, state0) -> PlannedChunk:
    frames = np.asarray(frames, dtype=float)
    if frames.ndim != 2 or len(frames) < 2:
        raise ValueError("need at least two frames")
    if frames.shape[1] != m.obs_width:
        raise ValueError(f"frame width {frames.shape[1]} != model layout {m.obs_width}")
    states = frames[:-1, :ROBOT_STATE_WIDTH].copy()
    states[0] = np.asarray(state0, dtype=float)
    actions, gates = predict_batch(m, frames[:-1], frames[1:], states)
    return PlannedChunk(actions, gates)


def weighted_smooth_l1(x, x_hat, beta: float, w) -> float:
    e = np.abs(np.asarray(x, dtype=float) - np.asarray(x_hat, dtype=float))
    w = np.asarray(w, dtype=float)
    per = np.where(e < beta, 0.5 * w * e * e / beta, w * (e - 0.5 * beta))
    return float(per.sum())


def bce(p, g) -> float:
    p = float(np.clip(p, BCE_EPS, 1.0 - BCE_EPS))
    return -(g * math.log(p) + (1 - g) * math.log(1.0 - p))


@dataclass
class LossResult:
    total: float
    action: float
    gate: float
    grads: list[np.ndarray]


def _huber_terms(pred, target, beta, w):
    e = pred - target
    ae = np.abs(e)
    small = ae < beta
    loss = np.where(small, 0.5 * w * e * e / beta, w * (ae - 0.5 * beta)).sum(axis=1)
    dloss = np.where(small, w * e / beta, w * np.sign(e))
    return loss, dloss


def _bce_terms(logit, g):
    p = _sigmoid(logit)
    pc = np.clip(p, BCE_EPS, 1.0 - BCE_EPS)
    loss = -(g * np.log(pc) + (1 - g) * np.log(1.0 - pc))
    inside = (p > BCE_EPS) & (p < 1.0 - BCE_EPS)
    dlogit = np.where(inside, p - g, 0.0)
    return loss, dlogit


def total_loss(m: IdmModel, batch, cfg: LossConfig, with_grads: bool = True) -> LossResult:
    """Batch mean of ``lambda_act * smooth_l1 + lambda_gate * bce`` and its gradients.

    Gradients follow the order of ``m.params()``.
    """
    if isinstance(batch, list):
        batch = Dataset.from_samples(batch)
    if len(batch) == 0:
        raise ValueError("empty batch")
    x = batch.inputs()
    _check_width(m, x)
    n = len(batch)
    w = np.asarray(cfg.action_weights, dtype=float)
    if w.shape != (m.act_dim,):
        raise ValueError("action_weights length must equal act_dim")
    p = _forward(m, x)
    act_l, dact = _huber_terms(p.action, batch.action, cfg.huber_beta, w)
    gate_l, dlogit = _bce_terms(p.logit, batch.gate)
    la, lg = float(act_l.mean()), float(gate_l.mean())
    total = cfg.lambda_act * la + cfg.lambda_gate * lg
    if not with_grads:
        return LossResult(total, la, lg, [])
    ga = nnet.backward(m.action_head, p.act_tape, dact * (cfg.lambda_act / n))
    gg = nnet.backward(m.gate_head, p.gate_tape, (dlogit * (cfg.lambda_gate / n))[:, None])
    dfeat = (ga.dx + gg.dx) * (p.feat_pre > 0)
    ge = nnet.backward(m.encoder, p.enc_tape, dfeat)
    return LossResult(total, la, lg, ge.params() + ga.params() + gg.params())


@dataclass(frozen=True)
class TrainConfig:
    hidden: tuple[int, ...] = (256, 256)
    head_hidden: int = 256
    batch_size: int = 32
    epochs: int = 8
    base_lr: float = 5e-4
    warmup_frac: float = 0.1
    weight_decay: float = 0.01
    adam_eps: float = 0.01
    betas: tuple[float, float] = (0.9, 0.999)
    encoder_lr_mult: float = 1.0
    loss: LossConfig = field(default_factory=LossConfig)


@dataclass
class TrainLog:
    step: list[int] = field(default_factory=list)
    loss: list[float] = field(default_factory=list)
    action_loss: list[float] = field(default_factory=list)
    gate_loss: list[float] = field(default_factory=list)
    lr: list[float] = field(default_factory=list)

    def rows(self):
        return zip(self.step, self.loss, self.action_loss, self.gate_loss, self.lr)


def _normalizer(x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    mean = x.mean(axis=0)
    std = x.std(axis=0)
    std[std < 1e-6] = 1.0
    return mean, std


def train(dataset: Dataset, world: WorldConfig, cfg: TrainConfig,
          seed: int) -> tuple[IdmModel, TrainLog]:
    if len(dataset) == 0:
        raise ValueError("empty dataset")
    rng = np.random.default_rng(seed)
    model = IdmModel.init(world, rng, cfg.hidden, cfg.head_hidden,
                          act_dim=dataset.action.shape[1])
    model.in_mean, model.in_std = _normalizer(dataset.inputs())
    params = model.params()
    scale = [cfg.encoder_lr_mult if g == "encoder" else 1.0 for g in model.param_groups()]
    opt = nnet.OptimState.zeros_like(params, betas=cfg.betas, eps=cfg.adam_eps,
                                     weight_decay=cfg.weight_decay)
    n = len(dataset)
    per_epoch = math.ceil(n / cfg.batch_size)
    total = per_epoch * cfg.epochs
    sched = nnet.LrSchedule(cfg.base_lr, int(cfg.warmup_frac * total), max(total, 1))
    tl = TrainLog()
    step = 0
    for epoch in range(cfg.epochs):
        order = rng.permutation(n)
        for b in range(per_epoch):
            batch = dataset.subset(order[b * cfg.batch_size:(b + 1) * cfg.batch_size])
            res = total_loss(model, batch, cfg.loss)
            if not math.isfinite(res.total):
                raise nnet.TrainingDiverged(f"non-finite loss at step {step}")
            lr = nnet.lr_at(sched, step)
            nnet.adam_step(params, res.grads, opt, lr, scale)
            tl.step.append(step)
            tl.loss.append(res.total)
            tl.action_loss.append(res.action)
            tl.gate_loss.append(res.gate)
            tl.lr.append(lr)
            step += 1
        log.info("epoch %d/%d loss %.5f", epoch + 1, cfg.epochs,
                 float(np.mean(tl.loss[-per_epoch:])))
    return model, tl


def gate_accuracy(m: IdmModel, data: Dataset, tau: float = 0.5) -> float:
    _, g = predict_batch(m, data.prev_obs, data.obs, data.state)
    return float(np.mean((g > tau) == (data.gate > 0.5)))


def augment_observation(obs, sigma: float, rng: np.random.Generator,
                        layout: ObsLayout) -> np.ndarray:
    """Gaussian noise on continuous entries of present slots; flags and kind codes untouched."""
    obs = np.asarray(obs, dtype=float)
    if sigma == 0:
        return obs.copy()
    mask = np.broadcast_to(present_continuous_mask(obs, layout), obs.shape)
    noise = rng.normal(0.0, sigma, size=obs.shape)
    return obs + np.where(mask, noise, 0.0)


def present_continuous_mask(obs: np.ndarray, layout: ObsLayout, poses_only: bool = False):
    """Continuous-entry mask restricted to present slots (works on a batch of frames)."""
    base = layout.pose_mask() if poses_only else layout.continuous_mask()
    mask = np.broadcast_to(base, obs.shape).copy()
    cfg = layout.cfg
    for i in range(cfg.max_objects):
        sl = layout.object_slot(i)
        absent = obs[..., sl.stop - 1] < 0.5
        mask[..., sl] &= ~absent[..., None]
    off = layout.container_offset
    for i in range(cfg.max_containers):
        sl = slice(off + 4 * i, off + 4 * i + 4)
        absent = obs[..., sl.stop - 1] < 0.5
        mask[..., sl] &= ~absent[..., None]
    return mask


def gradcheck(n_models: int = 10, batch: int = 8, seed: int = 0, h: float = 1e-5,
              world: WorldConfig | None = None, hidden=(12, 10), head_hidden: int = 8,
              loss_cfg: LossConfig | None = None) -> list[float]:
    """Max elementwise relative error of ``total_loss`` gradients vs central differences,
    one value per random model."""
    world = world or WorldConfig(max_objects=2)
    loss_cfg = loss_cfg or LossConfig(action_weights=(1.0, 2.0, 1.0, 0.5))
    rng = np.random.default_rng(seed)
    errs = []
    for _ in range(n_models):
        m = IdmModel.init(world, rng, hidden, head_hidden)
        for p in m.params():
            p += rng.normal(0, 0.05, size=p.shape)
        w = world.obs_width
        data = Dataset(rng.uniform(0, 1, (batch, w)), rng.uniform(0, 1, (batch, w)),
                       rng.uniform(0, 1, (batch, ROBOT_STATE_WIDTH)),
                       rng.uniform(0, 1, (batch, m.act_dim)),
                       rng.integers(0, 2, batch).astype(float))
        m.in_mean, m.in_std = _normalizer(data.inputs())
        analytic = total_loss(m, data, loss_cfg).grads
        numeric = nnet.finite_difference(
            lambda: total_loss(m, data, loss_cfg, with_grads=False).total, m.params(), h)
        errs.append(max(float(nnet.relative_error(a, b).max())
                        for a, b in zip(analytic, numeric)))
    return errs
