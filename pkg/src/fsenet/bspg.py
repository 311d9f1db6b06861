"""Boundary-aware pseudo-labels grown from point annotations."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class OutOfWindowError(ValueError):
    pass


class AnnotationError(ValueError):
    pass


@dataclass
class BspgConfig:
    """Pseudo-label settings.

    ``windows`` and ``gate`` switch the two halves of the generator on and off
    for the pseudo-label ablation.  ``fallback`` decides what frames outside
    every window receive: ``"background"`` (the normal rule) or ``"raw"``,
    which copies the model's own scores (the no-strategy baseline).
    """

    w: int = 7
    beta: float = 0.6
    tau: float = 0.95
    windows: bool = True
    gate: bool = True
    fallback: str = "background"

    def __post_init__(self):
        if self.w < 0:
            raise ValueError(f"w must be >= 0, got {self.w}")
        if self.windows and self.w < 1:
            raise ValueError("smoothing windows need w >= 1")
        if not 0.0 <= self.beta <= 1.0:
            raise ValueError(f"beta must lie in [0, 1], got {self.beta}")
        if not 0.0 < self.tau <= 1.0:
            raise ValueError(f"tau must lie in (0, 1], got {self.tau}")
        if self.fallback not in ("background", "raw"):
            raise ValueError(f"unknown fallback {self.fallback!r}")


# named strategies used by the pseudo-label ablation
STRATEGIES = {
    "none": dict(windows=False, gate=False, fallback="raw"),
    "threshold": dict(windows=False, gate=True, fallback="raw"),
    "step": dict(windows=True, gate=False, fallback="background"),
    "full": dict(windows=True, gate=True, fallback="background"),
}


def strategy_config(name: str, **overrides) -> BspgConfig:
    return BspgConfig(**{**STRATEGIES[name], **overrides})


def smoothing_score(t: int, t_p: int, cfg: BspgConfig) -> float:
    dist = abs(t - t_p)
    if dist > cfg.w:
        raise OutOfWindowError(f"|{t} - {t_p}| = {dist} exceeds window {cfg.w}")
    return _decay(dist, cfg.w, cfg.beta)


def _decay(dist, w: int, beta: float):
    if w == 0:
        return 1.0
    return beta + (1.0 - beta) * (1.0 - dist / w)


def generate_pseudo_labels(y: np.ndarray, points, cfg: BspgConfig) -> np.ndarray:
    """Dense T x (C+1) targets from ``points`` = iterable of (timestamp, class).

    ``y`` is the model's current CAS; it only feeds the non-sentiment gate and
    the raw fallback, and is never differentiated through.
    """
    y = np.asarray(y, dtype=np.float64)
    T, n_cols = y.shape
    C = n_cols - 1
    pts = sorted((int(t), int(c)) for t, c in points)
    for t, c in pts:
        if not 0 <= t < T:
            raise AnnotationError(f"annotation timestamp {t} outside [0, {T})")
        if not 0 <= c < C:
            raise AnnotationError(f"annotation class {c} outside [0, {C})")

    if cfg.fallback == "raw":
        out = y.copy()
    else:
        out = np.zeros((T, n_cols))
        out[:, C] = 1.0

    reach = cfg.w if cfg.windows else 0
    if pts:
        times = np.array([t for t, _ in pts])
        frames = np.arange(T)
        dist = np.abs(frames[:, None] - times[None, :])
        # argmin returns the first minimum, i.e. the earlier timestamp on ties
        nearest = dist.argmin(axis=1)
        nearest_dist = dist[frames, nearest]
        for t in np.flatnonzero(nearest_dist <= reach):
            t_p, c = pts[nearest[t]]
            s = _decay(abs(int(t) - t_p), reach, cfg.beta)
            out[t] = 0.0
            out[t, c] = s
            out[t, C] = 1.0 - s

    if cfg.gate:
        gated = y[:, C] > cfg.tau
        out[gated] = 0.0
        out[gated, C] = 1.0
    return out
