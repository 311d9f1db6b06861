"""Point-aware contrast: prototypes, point distances, top-K set mining and the loss."""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field

import numpy as np

from . import numeric as nm

log = logging.getLogger(__name__)

METRICS = ("cosine", "l1", "l2", "dot")


class AbsentClassError(KeyError):
    pass


class ContrastConfigError(ValueError):
    pass


@dataclass
class PointAnnotationSet:
    """Sparse supervision: (frame, class) pairs with classes in [0, C)."""

    points: list = field(default_factory=list)

    def __post_init__(self):
        self.points = sorted((int(t), int(c)) for t, c in self.points)
        times = [t for t, _ in self.points]
        if len(set(times)) != len(times):
            raise ValueError("annotation timestamps must be unique")

    def validate(self, T: int, C: int):
        for t, c in self.points:
            if not 0 <= t < T:
                raise ValueError(f"annotation at {t} outside [0, {T})")
            if not 0 <= c < C:
                raise ValueError(f"annotation class {c} outside [0, {C})")

    @property
    def timestamps(self) -> list[int]:
        return [t for t, _ in self.points]

    @property
    def classes(self) -> list[int]:
        return sorted({c for _, c in self.points})

    def frames_of(self, c: int) -> list[int]:
        return [t for t, k in self.points if k == c]

    def to_json(self):
        return [{"t": t, "class": c} for t, c in self.points]

    @classmethod
    def from_json(cls, items):
        return cls([(d["t"], d["class"]) for d in items])

    def __len__(self):
        return len(self.points)


def class_prototype(ann: PointAnnotationSet, f_mix, c: int):
    """Mean embedding of the annotated frames of class ``c``.

    Works on a Tensor (differentiable) or a plain array.
    """
    frames = ann.frames_of(c)
    if not frames:
        raise AbsentClassError(c)
    if isinstance(f_mix, nm.Tensor):
        return nm.mean(nm.take_rows(f_mix, frames), axis=0, keepdims=True)
    return np.asarray(f_mix)[frames].mean(axis=0)


def similarity(f: np.ndarray, p: np.ndarray, metric: str = "cosine") -> np.ndarray:
    """Row-wise similarity of T x D ``f`` to a single vector ``p``.

    L1/L2 distances are negated so larger always means more similar.  Under
    cosine a zero-norm vector has similarity 0.
    """
    if metric == "cosine":
        fn = np.linalg.norm(f, axis=1)
        pn = np.linalg.norm(p)
        denom = fn * pn
        dots = f @ p
        return np.divide(dots, denom, out=np.zeros_like(dots), where=denom > 0)
    if metric == "dot":
        return f @ p
    if metric == "l1":
        return -np.abs(f - p).sum(axis=1)
    if metric == "l2":
        return -np.linalg.norm(f - p, axis=1)
    raise ValueError(f"unknown similarity metric {metric!r}; expected one of {METRICS}")


def point_distance(f_mix, ann: PointAnnotationSet, c: int, metric: str = "cosine") -> np.ndarray:
    """Mean similarity of every frame to the annotated points of class ``c``."""
    f = np.asarray(f_mix.data if isinstance(f_mix, nm.Tensor) else f_mix, dtype=np.float64)
    frames = ann.frames_of(c)
    if not frames:
        raise AbsentClassError(c)
    return np.mean([similarity(f, f[t], metric) for t in frames], axis=0)


@dataclass
class ContrastSets:
    positives: dict  # class -> sorted frame indices
    negatives: dict  # class -> sorted frame indices claimed by other classes
    owner: dict  # frame -> class whose positive set holds it
    weighted: dict  # class -> weighted scores used for ranking

    def to_json(self) -> str:
        return json.dumps({
            str(c): {
                "positives": self.positives[c],
                "negatives": self.negatives[c],
                "weighted_scores": [round(float(v), 6) for v in self.weighted[c]],
            }
            for c in self.positives
        }, indent=2)


def top_k_size(T: int, k_divisor: int) -> int:
    return max(1, T // k_divisor)


def build_contrast_sets(distances: dict, w, ann: PointAnnotationSet, K: int) -> ContrastSets:
    """Weighted top-K positive mining.

    Every (class, frame) pair is ranked by ``w[t] * d_c[t]``; pairs are taken
    greedily from the top, skipping annotated frames, frames already claimed
    by another class and classes that already hold K frames.  Ties go to the
    lower frame index, then the lower class index.
    """
    classes = sorted(distances)
    w = np.asarray(w, dtype=np.float64).reshape(-1)
    T = w.shape[0]
    annotated = set(ann.timestamps)
    free = T - len(annotated)
    if K >= free:
        raise ContrastConfigError(f"K={K} must be smaller than T-N={free}")
    if K * len(classes) > free:
        raise ContrastConfigError(
            f"{len(classes)} classes x K={K} positives exceed {free} unannotated frames")

    weighted = {c: w * np.asarray(distances[c], dtype=np.float64) for c in classes}
    pairs = [(-weighted[c][t], t, c) for c in classes for t in range(T) if t not in annotated]
    pairs.sort()
    positives = {c: [] for c in classes}
    owner: dict[int, int] = {}
    for _, t, c in pairs:
        if t in owner or len(positives[c]) >= K:
            continue
        positives[c].append(t)
        owner[t] = c
        if len(owner) == K * len(classes):
            break
    positives = {c: sorted(v) for c, v in positives.items()}
    negatives = {c: sorted(t for t, k in owner.items() if k != c) for c in classes}
    return ContrastSets(positives, negatives, owner, weighted)


def contrastive_loss(f_mix: nm.Tensor, sets: ContrastSets, prototypes: dict,
                     pairing: str = "anchor") -> nm.Tensor:
    """Sum over classes of -log(positive mass / (positive + negative mass)).

    Embeddings and prototypes are unit-normalised before the dot products.
    ``pairing="anchor"`` scores negatives against the class being contrasted;
    ``"owner"`` scores them against the prototype of the class that claimed
    them.
    """
    if pairing not in ("anchor", "owner"):
        raise ValueError(f"unknown pairing {pairing!r}")
    f_hat = nm.l2_normalize_rows(f_mix)
    p_hat = {c: nm.l2_normalize_rows(p) for c, p in prototypes.items()}
    total = nm.Tensor(0.0)
    for c, pos in sets.positives.items():
        if not pos:
            log.warning("class %d has an empty positive set; skipping", c)
            continue
        if c not in p_hat:
            continue
        pos_mass = nm.tsum(nm.exp(nm.take_rows(f_hat, pos) @ p_hat[c].T))
        neg = sets.negatives.get(c, [])
        if not neg:
            continue  # ratio is exactly 1
        if pairing == "anchor":
            neg_mass = nm.tsum(nm.exp(nm.take_rows(f_hat, neg) @ p_hat[c].T))
        else:
            neg_mass = nm.Tensor(0.0)
            for k in sorted({sets.owner[t] for t in neg}):
                rows = [t for t in neg if sets.owner[t] == k]
                neg_mass = neg_mass + nm.tsum(nm.exp(nm.take_rows(f_hat, rows) @ p_hat[k].T))
        total = total + nm.log(pos_mass + neg_mass) - nm.log(pos_mass)
    return total
