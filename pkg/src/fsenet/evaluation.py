"""Temporal localization metrics: proposal extraction, IoU, AP, mAP, recall, F2."""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np


class EvaluationError(ValueError):
    pass


@dataclass(frozen=True)
class SentimentSegment:
    start: int  # inclusive
    end: int  # exclusive
    cls: int
    score: float = 1.0

    def __post_init__(self):
        if not 0 <= self.start < self.end:
            raise ValueError(f"invalid segment [{self.start}, {self.end})")

    def to_dict(self):
        return {"start": self.start, "end": self.end, "class": self.cls, "score": self.score}

    @classmethod
    def from_dict(cls, d):
        return cls(int(d["start"]), int(d["end"]), int(d["class"]), float(d.get("score", 1.0)))


def _default_proposal_thresholds():
    return [round(0.1 * i, 2) for i in range(1, 10)]


@dataclass
class EvalConfig:
    iou_thresholds: list = field(default_factory=lambda: [0.1, 0.15, 0.2, 0.25, 0.3])
    proposal_thresholds: list = field(default_factory=_default_proposal_thresholds)
    nms_iou: float = 0.5
    # "contrast": inner mean minus the mean of a margin of outer_ratio * length
    # on each side; "mean": plain inner mean
    scoring: str = "contrast"
    outer_ratio: float = 0.25
    # moving-average window applied to model scores before extraction; 1 disables
    smooth: int = 7

    def __post_init__(self):
        if self.smooth < 1:
            raise ValueError("smooth must be >= 1")
        if self.scoring not in ("contrast", "mean"):
            raise ValueError(f"unknown segment scoring {self.scoring!r}")
        if self.outer_ratio < 0:
            raise ValueError("outer_ratio must be nonnegative")
        for name in ("iou_thresholds", "proposal_thresholds"):
            vals = list(getattr(self, name))
            if not vals or any(not 0 < v < 1 for v in vals) or vals != sorted(vals):
                raise ValueError(f"{name} must be ascending values in (0, 1), got {vals}")


def iou(a: SentimentSegment, b: SentimentSegment) -> float:
    inter = min(a.end, b.end) - max(a.start, b.start)
    if inter <= 0:
        return 0.0
    union = (a.end - a.start) + (b.end - b.start) - inter
    return inter / union


def _runs(mask: np.ndarray) -> list[tuple[int, int]]:
    padded = np.concatenate([[False], mask, [False]]).astype(np.int8)
    edges = np.flatnonzero(np.diff(padded))
    return list(zip(edges[0::2].tolist(), edges[1::2].tolist()))


def suppress(segments: Sequence[SentimentSegment], overlap: float) -> list[SentimentSegment]:
    """Greedy 1-D non-maximum suppression; keeps higher-scored, earlier segments on ties."""
    order = sorted(segments, key=lambda s: (-s.score, s.start, s.end))
    kept: list[SentimentSegment] = []
    for seg in order:
        if all(iou(seg, k) < overlap for k in kept):
            kept.append(seg)
    return kept


def segment_score(col: np.ndarray, s: int, e: int, scoring="contrast", outer_ratio=0.25) -> float:
    inner = float(col[s:e].mean())
    if scoring == "mean":
        return inner
    m = max(1, int(round(outer_ratio * (e - s))))
    outer = np.concatenate([col[max(0, s - m):s], col[e:e + m]])
    # a run filling the whole video has no context to contrast against
    return inner - float(outer.mean()) if outer.size else inner


def smooth_scores(scores: np.ndarray, k: int) -> np.ndarray:
    """Centred moving average along time with edge padding; keeps the shape."""
    scores = np.asarray(scores, dtype=float)
    if k <= 1 or len(scores) == 0:
        return scores
    lo, hi = (k - 1) // 2, k // 2
    padded = np.pad(scores, ((lo, hi), (0, 0)), mode="edge")
    csum = np.concatenate([np.zeros((1, scores.shape[1])), np.cumsum(padded, axis=0)])
    return (csum[k:] - csum[:-k]) / k


def extract_segments(scores: np.ndarray, cfg: EvalConfig | None = None, thresholds=None) -> list[SentimentSegment]:
    """Proposals from a T x (C+1) score matrix; the last column is ignored.

    Each sentiment column is binarised at every proposal threshold and the
    contiguous runs become segments. By default a run is scored by its mean
    class score minus the mean over a short margin around it, which ranks
    whole plateaus above the jitter fragments inside them. The pooled
    proposals are suppressed per class.
    """
    cfg = cfg or EvalConfig()
    thetas = cfg.proposal_thresholds if thresholds is None else thresholds
    scores = np.asarray(scores)
    out: list[SentimentSegment] = []
    for c in range(scores.shape[1] - 1):
        col = scores[:, c]
        pooled = []
        for theta in thetas:
            for s, e in _runs(col >= theta):
                pooled.append(SentimentSegment(s, e, c, segment_score(col, s, e, cfg.scoring, cfg.outer_ratio)))
        out.extend(suppress(pooled, cfg.nms_iou))
    return out


def _match(proposals, gt, iou_thr):
    """Greedy matching in descending score order. Returns per-proposal TP flags
    (in that order) and the number of matched GT."""
    # (video, segment) pairs; stable sort keeps input order on equal scores
    order = sorted(range(len(proposals)), key=lambda i: -proposals[i][1].score)
    used = {vid: np.zeros(len(segs), dtype=bool) for vid, segs in gt.items()}
    flags = []
    for i in order:
        vid, p = proposals[i]
        segs = gt.get(vid, [])
        best, best_j = -1.0, -1
        for j, g in enumerate(segs):
            if used[vid][j]:
                continue
            ov = iou(p, g)
            if ov >= iou_thr and ov > best:
                best, best_j = ov, j
        if best_j >= 0:
            used[vid][best_j] = True
            flags.append(True)
        else:
            flags.append(False)
    return flags, int(sum(u.sum() for u in used.values()))


def _as_video_map(x):
    return x if isinstance(x, Mapping) else {0: list(x)}


def average_precision(proposals, ground_truth, cls: int, iou_thr: float) -> float:
    """Non-interpolated detection AP for one class.

    ``proposals`` and ``ground_truth`` are either flat segment lists (single
    video) or mappings video id -> segment list.  Returns NaN when the class
    has no ground truth, so callers can skip it.
    """
    props = _as_video_map(proposals)
    gts = _as_video_map(ground_truth)
    gt_c = {v: [g for g in segs if g.cls == cls] for v, segs in gts.items()}
    n_gt = sum(len(s) for s in gt_c.values())
    if n_gt == 0:
        return float("nan")
    flat = [(v, p) for v, segs in props.items() for p in segs if p.cls == cls]
    flags, _ = _match(flat, gt_c, iou_thr)
    tp = 0
    total = 0.0
    for rank, hit in enumerate(flags, start=1):
        if hit:
            tp += 1
            total += tp / rank
    return total / n_gt


@dataclass
class MetricsReport:
    map_at: dict  # iou threshold -> mAP
    avg_map: float
    recall: float
    precision: float
    f2: float

    def to_dict(self):
        return {
            "mAP": {f"{k:.2f}": v for k, v in self.map_at.items()},
            "avg_mAP": self.avg_map,
            "recall": self.recall,
            "precision": self.precision,
            "f2": self.f2,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=False)

    def table(self, label: str = "Model") -> str:
        keys = list(self.map_at)
        head = ["Method"] + [f"{k:g}" for k in keys] + ["Avg mAP", "Recall", "F2"]
        row = [label] + [f"{100 * self.map_at[k]:.2f}" for k in keys] + [
            f"{100 * self.avg_map:.2f}", f"{100 * self.recall:.2f}", f"{100 * self.f2:.2f}"]
        return format_table(head, [row])


def format_table(head, rows) -> str:
    widths = [max(len(str(r[i])) for r in [head] + rows) for i in range(len(head))]
    line = lambda r: "  ".join(str(v).ljust(widths[0]) if i == 0 else str(v).rjust(widths[i])
                               for i, v in enumerate(r))
    sep = "-" * (sum(widths) + 2 * (len(widths) - 1))
    return "\n".join([line(head), sep] + [line(r) for r in rows])


def f2_score(precision: float, recall: float) -> float:
    denom = 4 * precision + recall
    return 0.0 if denom == 0 else 5 * precision * recall / denom


def evaluate(predictions: Mapping, ground_truth: Mapping, cfg: EvalConfig | None = None) -> MetricsReport:
    """Score per-video proposal lists against per-video ground-truth segments.

    Recall and precision use greedy matching at the lowest IoU threshold.
    """
    cfg = cfg or EvalConfig()
    if not any(len(s) for s in ground_truth.values()):
        raise EvaluationError("no ground-truth segments to evaluate against")
    missing = set(predictions) - set(ground_truth)
    if missing:
        raise EvaluationError(f"predictions for unknown videos: {sorted(missing)[:5]}")
    classes = sorted({g.cls for segs in ground_truth.values() for g in segs})

    map_at = {}
    for thr in cfg.iou_thresholds:
        aps = [average_precision(predictions, ground_truth, c, thr) for c in classes]
        map_at[thr] = float(np.mean(aps))

    low = cfg.iou_thresholds[0]
    matched = 0
    n_props = 0
    for c in classes:
        flat = [(v, p) for v, segs in predictions.items() for p in segs if p.cls == c]
        gt_c = {v: [g for g in segs if g.cls == c] for v, segs in ground_truth.items()}
        _, m = _match(flat, gt_c, low)
        matched += m
        n_props += len(flat)
    n_props += sum(1 for segs in predictions.values() for p in segs if p.cls not in classes)
    n_gt = sum(len(s) for s in ground_truth.values())
    recall = matched / n_gt
    precision = matched / n_props if n_props else 0.0
    return MetricsReport(
        map_at=map_at,
        avg_map=float(np.mean(list(map_at.values()))),
        recall=recall,
        precision=precision,
        f2=f2_score(precision, recall),
    )
