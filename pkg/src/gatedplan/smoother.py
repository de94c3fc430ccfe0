"""Keypoint-preserving action smoother.

Pipeline: recursive-extrema keypoints, moving average confined to keypoint
intervals, keypoint hold extension, then a lower clamp on one dimension.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class SmootherConfig:
    rounds: int = 2
    min_segment: int = 5
    union_dims: tuple[int, ...] = (0, 1, 2)
    window: int = 5
    hold: int = 3
    skip_prefix: int = 5
    clamp_dim: int = 2
    clamp_min: float = 0.13

    def __post_init__(self):
        if self.rounds < 0 or self.hold < 0 or self.skip_prefix < 0:
            raise ValueError("rounds and hold must be >= 0, as must skip_prefix")
        if self.min_segment < 2:
            raise ValueError("min_segment must be >= 2")
        if self.window < 1 or self.window % 2 == 0:
            raise ValueError("window must be a positive odd integer")

    @classmethod
    def neutral(cls) -> SmootherConfig:
        return cls(rounds=0, window=1, hold=0, clamp_min=-np.inf)


def _as_traj(traj) -> np.ndarray:
    a = np.asarray(traj, dtype=float)
    if a.ndim == 1:
        a = a[:, None]
    if a.shape[0] == 0:
        raise ValueError("empty trajectory")
    return a


def keypoints_1d(values: np.ndarray, rounds: int, min_segment: int) -> list[int]:
    T = len(values)
    keys = sorted({0, T - 1})
    for _ in range(rounds):
        added = set()
        for u, v in zip(keys[:-1], keys[1:]):
            if v - u + 1 < min_segment:
                continue
            seg = values[u:v + 1]
            for idx in (u + int(np.argmax(seg)), u + int(np.argmin(seg))):
                if idx not in keys:
                    added.add(idx)
        if not added:
            break
        keys = sorted(set(keys) | added)
    return keys


def select_keypoints(traj, cfg: SmootherConfig) -> list[int]:
    """Sorted keypoint indices: union over ``cfg.union_dims`` of per-dimension extrema sets.

    Each round splits on the current keypoints and adds, for every segment of
    at least ``min_segment`` samples, the first-occurrence argmax and argmin
    unless already selected.
    """
    a = _as_traj(traj)
    keys: set[int] = set()
    for d in cfg.union_dims:
        keys.update(keypoints_1d(a[:, d], cfg.rounds, cfg.min_segment))
    if not cfg.union_dims:
        keys.update({0, len(a) - 1})
    return sorted(keys)


def segment_moving_average(traj, keypoints, window: int) -> np.ndarray:
    a = _as_traj(traj)
    out = a.copy()
    h = window // 2
    if h == 0:
        return out
    for u, v in zip(keypoints[:-1], keypoints[1:]):
        for t in range(u + 1, v):
            lo, hi = max(u, t - h), min(v, t + h)
            out[t] = a[lo:hi + 1].mean(axis=0)
    return out


def hold_extend(traj, keypoints, hold: int, skip_prefix: int) -> np.ndarray:
    a = _as_traj(traj)
    return a[hold_index_map(len(a), keypoints, hold, skip_prefix)]


def hold_index_map(T: int, keypoints, hold: int, skip_prefix: int) -> np.ndarray:
    """Source index of every output sample after hold extension."""
    kept = {k for k in keypoints if k >= skip_prefix}
    idx = []
    for t in range(T):
        idx.append(t)
        if t in kept:
            idx.extend([t] * hold)
    return np.asarray(idx, dtype=int)


def clamp_dim(traj, dim: int, minimum: float) -> np.ndarray:
    out = _as_traj(traj).copy()
    out[:, dim] = np.maximum(out[:, dim], minimum)
    return out


def smooth_with_index(traj, cfg: SmootherConfig) -> tuple[np.ndarray, np.ndarray]:
    """Smoothed trajectory plus, for each output row, the raw index it came from."""
    a = _as_traj(traj)
    keys = select_keypoints(a, cfg)
    avg = segment_moving_average(a, keys, cfg.window)
    index = hold_index_map(len(a), keys, cfg.hold, cfg.skip_prefix)
    return clamp_dim(avg[index], cfg.clamp_dim, cfg.clamp_min), index


def smooth(traj, cfg: SmootherConfig) -> np.ndarray:
    return smooth_with_index(traj, cfg)[0]
