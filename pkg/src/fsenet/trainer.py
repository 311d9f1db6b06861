"""Training loop tying fusion, heads, pseudo-labels, contrast and losses together."""
from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field, fields, is_dataclass
from typing import Callable

import numpy as np

from . import numeric as nm
from .bspg import BspgConfig, generate_pseudo_labels
from .evaluation import EvalConfig, MetricsReport, evaluate, extract_segments, smooth_scores
from .losses import LossWeights, base_loss, focal_align, total_loss
from .model import ModelConfig, ModelParams, forward, infer, init_params
from .optim import AdamW
from .pssc import build_contrast_sets, class_prototype, contrastive_loss, point_distance, top_k_size

log = logging.getLogger(__name__)


class TrainingDivergence(RuntimeError):
    def __init__(self, step: int, value: float):
        super().__init__(f"non-finite loss {value} at step {step}")
        self.step = step


@dataclass
class TrainConfig:
    learning_rate: float = 1e-3
    weight_decay: float = 0.5  # small data overfits the window labels; see README
    epochs: int = 200
    batch_size: int = 8
    seed: int = 0
    bspg: BspgConfig = field(default_factory=BspgConfig)
    loss: LossWeights = field(default_factory=LossWeights)
    k_divisor: int = 8
    d: int = 32
    heads: int = 4
    classes: int = 2
    metric: str = "cosine"
    pairing: str = "anchor"
    stage1: bool = True
    stage2: bool = True
    gsp: bool = True
    zero_face: bool = False
    train_fraction: float = 0.8
    eval_every: int = 1

    def __post_init__(self):
        if isinstance(self.bspg, dict):
            self.bspg = BspgConfig(**self.bspg)
        if isinstance(self.loss, dict):
            self.loss = LossWeights(**self.loss)
        if self.epochs < 0 or self.batch_size < 1 or self.k_divisor < 1:
            raise ValueError("epochs must be >= 0; batch_size and k_divisor positive")
        if self.learning_rate <= 0 or self.weight_decay < 0:
            raise ValueError("learning_rate must be positive and weight_decay nonnegative")

    @classmethod
    def full_scale(cls, **kw) -> "TrainConfig":
        """Full-scale optimiser recipe (pretrained-feature regime)."""
        base = dict(learning_rate=1e-5, weight_decay=5e-4, epochs=600, batch_size=16, d=512)
        return cls(**{**base, **kw})

    def model_config(self, in_dims) -> ModelConfig:
        return ModelConfig(in_dims=tuple(in_dims), d=self.d, heads=self.heads, classes=self.classes,
                           stage1=self.stage1, stage2=self.stage2, gsp=self.gsp, zero_face=self.zero_face)

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)


def apply_overrides(cfg: TrainConfig, assignments) -> TrainConfig:
    """Apply ``key=value`` strings; dotted keys reach nested sections (``bspg.w=5``)."""
    d = cfg.to_dict()
    for item in assignments:
        if "=" not in item:
            raise ValueError(f"override {item!r} is not key=value")
        key, raw = item.split("=", 1)
        try:
            value = json.loads(raw)
        except json.JSONDecodeError:
            value = raw
        node = d
        parts = key.split(".")
        for p in parts[:-1]:
            if p not in node or not isinstance(node[p], dict):
                raise ValueError(f"unknown config section {p!r} in {key!r}")
            node = node[p]
        if parts[-1] not in node:
            raise ValueError(f"unknown config key {key!r}")
        node[parts[-1]] = value
    return TrainConfig.from_dict(d)


@dataclass
class TrainHistory:
    steps: list = field(default_factory=list)
    epochs: list = field(default_factory=list)
    train_ids: list = field(default_factory=list)
    heldout_ids: list = field(default_factory=list)

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=1)


def split_ids(ids, fraction: float, seed: int):
    ids = sorted(ids)
    order = np.random.default_rng([seed, 0x5917]).permutation(len(ids))
    n_train = int(round(fraction * len(ids)))
    if len(ids) > 1:
        n_train = min(max(n_train, 1), len(ids) - 1)
    train = sorted(ids[i] for i in order[:n_train])
    held = sorted(ids[i] for i in order[n_train:])
    return train, held


@dataclass
class Targets:
    """Label-path quantities that the gradient treats as constants."""

    y_hat: np.ndarray
    sets: object | None


def make_targets(out, video, cfg: TrainConfig) -> Targets:
    y_hat = generate_pseudo_labels(out.y.data, video.points.points, cfg.bspg)
    sets = None
    classes = video.points.classes
    if classes:
        T = out.y.shape[0]
        dists = {c: point_distance(out.f_mix.data, video.points, c, cfg.metric) for c in classes}
        K = top_k_size(T, cfg.k_divisor)
        sets = build_contrast_sets(dists, out.w.data, video.points, K)
    return Targets(y_hat, sets)


def video_objective(params: ModelParams, video, cfg: TrainConfig, targets: Targets | None = None):
    """Total loss for one video plus its float components and the targets used."""
    out = forward(params, video.features)
    if targets is None:
        targets = make_targets(out, video, cfg)
    lw = cfg.loss
    base = base_loss(out.y, targets.y_hat)
    frame = focal_align(out.y, targets.y_hat, lw.gamma)
    frame_glo = focal_align(out.y_glo, targets.y_hat, lw.gamma)
    if targets.sets is not None:
        protos = {c: class_prototype(video.points, out.f_mix, c) for c in video.points.classes}
        sc = contrastive_loss(out.f_mix, targets.sets, protos, cfg.pairing)
    else:
        sc = nm.Tensor(0.0)
    total = total_loss(base, frame, frame_glo, sc, lw)
    parts = {"base": base.item(), "frame": frame.item(), "frame_glo": frame_glo.item(),
             "sc": sc.item(), "total": total.item()}
    return total, parts, targets


def batch_gradients(params: ModelParams, videos, cfg: TrainConfig):
    """Mean gradient and mean loss components over ``videos``, reduced in id order."""
    names = params.names()
    tensors = params.values()
    acc = [np.zeros_like(t.data) for t in tensors]
    comps = {k: 0.0 for k in ("base", "frame", "frame_glo", "sc", "total")}
    for video in sorted(videos, key=lambda v: v.vid):
        with nm.GradientTape() as tape:
            total, parts, _ = video_objective(params, video, cfg)
        for a, g in zip(acc, tape.gradient(total, tensors)):
            a += g
        for k, v in parts.items():
            comps[k] += v
    n = len(videos)
    return [a / n for a in acc], {k: v / n for k, v in comps.items()}, names


def predict(params: ModelParams, videos, eval_cfg: EvalConfig | None = None) -> dict:
    eval_cfg = eval_cfg or EvalConfig()
    preds = {}
    for v in videos:
        _, y_glo, _ = infer(params, v.features)
        preds[v.vid] = extract_segments(smooth_scores(y_glo, eval_cfg.smooth), eval_cfg)
    return preds


def evaluate_model(params: ModelParams, dataset, ids=None, eval_cfg: EvalConfig | None = None) -> MetricsReport:
    view = dataset.training_view(ids)
    return evaluate(predict(params, view, eval_cfg), dataset.ground_truth(ids), eval_cfg)


def train(cfg: TrainConfig, dataset, eval_cfg: EvalConfig | None = None,
          on_step: Callable[[dict], None] | None = None, params: ModelParams | None = None):
    """Optimise on the training split using point annotations only.

    The held-out split's ground truth is used solely for the per-epoch report.
    """
    if not dataset.videos:
        raise ValueError("empty dataset")
    train_ids, held_ids = split_ids(dataset.ids(), cfg.train_fraction, cfg.seed)
    train_videos = dataset.training_view(train_ids)
    held_gt = dataset.ground_truth(held_ids) if held_ids else {}
    held_view = dataset.training_view(held_ids) if held_ids else []

    in_dims = [np.shape(getattr(train_videos[0].features, m))[1] for m in ("audio", "visual", "face")]
    if params is None:
        params = init_params(cfg.model_config(in_dims), seed=cfg.seed)
    opt = AdamW(params.values(), lr=cfg.learning_rate, weight_decay=cfg.weight_decay)
    history = TrainHistory(train_ids=train_ids, heldout_ids=held_ids)
    rng = np.random.default_rng([cfg.seed, 0xBA7C4])

    step = 0
    for epoch in range(1, cfg.epochs + 1):
        order = rng.permutation(len(train_videos))
        for b in range(0, len(order), cfg.batch_size):
            batch = [train_videos[i] for i in order[b:b + cfg.batch_size]]
            grads, comps, _ = batch_gradients(params, batch, cfg)
            step += 1
            if not np.isfinite(comps["total"]) or not all(np.isfinite(g).all() for g in grads):
                raise TrainingDivergence(step, comps["total"])
            opt.step(grads)
            record = {"step": step, "epoch": epoch, **comps}
            history.steps.append(record)
            if on_step is not None:
                on_step(record)
        if held_gt and any(held_gt.values()) and (epoch % cfg.eval_every == 0 or epoch == cfg.epochs):
            report = evaluate(predict(params, held_view, eval_cfg), held_gt, eval_cfg)
            history.epochs.append({"epoch": epoch, **report.to_dict()})
            log.info("epoch %d  loss %.4f  avg mAP %.4f", epoch, history.steps[-1]["total"], report.avg_map)
    return params, history
