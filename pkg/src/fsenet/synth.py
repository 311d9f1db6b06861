"""Synthetic corpus with planted sentiment segments and one point per segment.

Each class owns a random unit direction per modality.  Frames inside a
segment are shifted along their class direction, with the shift split
between the face track and the audio/visual tracks by
``face_informativeness``; all frames get spherical Gaussian noise plus a
per-video constant offset that carries no class information.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import numeric as nm
from .evaluation import SentimentSegment
from .fsd import FeatureSequence
from .pssc import PointAnnotationSet


class SpecError(ValueError):
    pass


@dataclass
class SynthSpec:
    video_count: int = 62
    frame_range: tuple = (80, 160)
    class_count: int = 2
    segments_per_video: tuple = (1, 3)
    segment_length: tuple = (4, 30)
    transient_prob: float = 0.15  # chance a segment is a 2-3 frame transient
    class_signal_strength: float = 4.0
    noise_scale: float = 0.3
    face_informativeness: float = 0.5
    redundancy: float = 0.5  # norm of the per-video static offset
    feature_dim: int = 32
    min_gap: int = 2
    seed: int = 0

    def __post_init__(self):
        self.frame_range = tuple(self.frame_range)
        self.segments_per_video = tuple(self.segments_per_video)
        self.segment_length = tuple(self.segment_length)
        for name in ("frame_range", "segments_per_video", "segment_length"):
            lo, hi = getattr(self, name)
            if lo > hi or lo < 0:
                raise SpecError(f"{name} must be a nonempty range, got {(lo, hi)}")
        if self.segment_length[0] < 2:
            raise SpecError("segments need at least 2 frames")
        if self.segment_length[1] > self.frame_range[0]:
            raise SpecError(
                f"segment length {self.segment_length[1]} exceeds shortest video {self.frame_range[0]}")
        if not 0.0 <= self.face_informativeness <= 1.0:
            raise SpecError("face_informativeness must lie in [0, 1]")
        if self.video_count < 1 or self.class_count < 1 or self.feature_dim < 1:
            raise SpecError("video_count, class_count and feature_dim must be positive")
        if self.noise_scale < 0 or self.class_signal_strength < 0:
            raise SpecError("noise_scale and class_signal_strength must be nonnegative")


@dataclass
class Video:
    vid: str
    features: FeatureSequence  # raw numpy tracks
    points: PointAnnotationSet
    segments: list = field(default_factory=list)

    @property
    def frame_count(self) -> int:
        return self.features.frame_count


@dataclass
class TrainingVideo:
    """What the optimizer is allowed to see: features and point annotations."""

    vid: str
    features: FeatureSequence
    points: PointAnnotationSet


@dataclass
class Dataset:
    videos: list
    spec: dict = field(default_factory=dict)

    def ids(self) -> list[str]:
        return [v.vid for v in self.videos]

    def by_id(self, vid: str) -> Video:
        for v in self.videos:
            if v.vid == vid:
                return v
        raise KeyError(vid)

    def training_view(self, ids=None) -> list[TrainingVideo]:
        keep = set(self.ids() if ids is None else ids)
        return [TrainingVideo(v.vid, v.features, v.points) for v in self.videos if v.vid in keep]

    def ground_truth(self, ids=None) -> dict:
        keep = set(self.ids() if ids is None else ids)
        return {v.vid: list(v.segments) for v in self.videos if v.vid in keep}

    def subset(self, ids) -> "Dataset":
        keep = set(ids)
        return Dataset([v for v in self.videos if v.vid in keep], self.spec)


def class_directions(spec: SynthSpec) -> np.ndarray:
    """modality x class x dim unit vectors, shared by every video."""
    rng = np.random.default_rng([spec.seed, 0xC1A55])
    dirs = rng.standard_normal((3, spec.class_count, spec.feature_dim))
    return dirs / np.linalg.norm(dirs, axis=-1, keepdims=True)


def _place_segments(rng, T, spec: SynthSpec):
    n = int(rng.integers(spec.segments_per_video[0], spec.segments_per_video[1] + 1))
    placed: list[tuple[int, int]] = []
    for _ in range(n):
        for _attempt in range(100):
            if rng.random() < spec.transient_prob:
                length = int(rng.integers(2, 4))
            else:
                length = int(rng.integers(spec.segment_length[0], spec.segment_length[1] + 1))
            start = int(rng.integers(0, T - length + 1))
            end = start + length
            if all(end + spec.min_gap <= s or start >= e + spec.min_gap for s, e in placed):
                placed.append((start, end))
                break
    return sorted(placed)


def generate_video(spec: SynthSpec, index: int, dirs: np.ndarray | None = None) -> Video:
    dirs = class_directions(spec) if dirs is None else dirs
    rng = np.random.default_rng([spec.seed, index])
    T = int(rng.integers(spec.frame_range[0], spec.frame_range[1] + 1))
    D = spec.feature_dim
    phi = spec.face_informativeness
    # amplitude share per modality: audio, visual, face
    share = np.array([1.0 - phi, 1.0 - phi, phi]) * spec.class_signal_strength

    offset = rng.standard_normal((3, D))
    offset *= spec.redundancy / np.maximum(np.linalg.norm(offset, axis=1, keepdims=True), 1e-12)
    tracks = offset[:, None, :] + spec.noise_scale * rng.standard_normal((3, T, D))

    segments = []
    points = []
    for start, end in _place_segments(rng, T, spec):
        c = int(rng.integers(0, spec.class_count))
        tracks[:, start:end, :] += (share[:, None] * dirs[:, c, :])[:, None, :]
        segments.append(SentimentSegment(start, end, c))
        points.append((int(rng.integers(start, end)), c))

    feat = FeatureSequence(audio=tracks[0], visual=tracks[1], face=tracks[2])
    return Video(f"v{index:04d}", feat, PointAnnotationSet(points), segments)


def generate(spec: SynthSpec) -> Dataset:
    dirs = class_directions(spec)
    return Dataset([generate_video(spec, i, dirs) for i in range(spec.video_count)], asdict(spec))


# --------------------------------------------------------------------------
# on-disk layout

def save_dataset(ds: Dataset, root) -> None:
    root = Path(root)
    for v in ds.videos:
        vdir = root / "videos" / v.vid
        vdir.mkdir(parents=True, exist_ok=True)
        for m in ("audio", "visual", "face"):
            nm.save_tensor(vdir / f"{m}.bin", getattr(v.features, m))
        (vdir / "gt.json").write_text(json.dumps([s.to_dict() for s in v.segments], indent=1))
        (vdir / "points.json").write_text(json.dumps(v.points.to_json(), indent=1))
    manifest = {"videos": ds.ids(), "spec": ds.spec}
    (root / "manifest.json").write_text(json.dumps(manifest, indent=2))


def load_dataset(root, with_ground_truth: bool = True) -> Dataset:
    root = Path(root)
    manifest = json.loads((root / "manifest.json").read_text())
    videos = []
    for vid in manifest["videos"]:
        vdir = root / "videos" / vid
        feat = FeatureSequence(*(nm.load_tensor(vdir / f"{m}.bin").data for m in ("audio", "visual", "face")))
        points = PointAnnotationSet.from_json(json.loads((vdir / "points.json").read_text()))
        segs = []
        if with_ground_truth and (vdir / "gt.json").exists():
            segs = [SentimentSegment.from_dict(d) for d in json.loads((vdir / "gt.json").read_text())]
        videos.append(Video(vid, feat, points, segs))
    return Dataset(videos, manifest.get("spec", {}))
