"""Face-guided fusion: two-stage cross-attention and the global sentiment weight."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import numeric as nm


class AttentionConfigError(ValueError):
    pass


@dataclass
class FeatureSequence:
    """Frame-aligned audio, visual and face tracks, each T x d."""

    audio: object
    visual: object
    face: object

    def __post_init__(self):
        shapes = {np.shape(getattr(x, "data", x)) for x in (self.audio, self.visual, self.face)}
        if len(shapes) != 1:
            raise nm.ShapeError(f"tracks disagree in shape: {sorted(shapes)}")
        (shape,) = shapes
        if len(shape) != 2 or shape[0] < 1:
            raise nm.ShapeError(f"tracks must be T x d with T >= 1, got {shape}")

    @property
    def frame_count(self) -> int:
        return np.shape(getattr(self.audio, "data", self.audio))[0]

    @property
    def dim(self) -> int:
        return np.shape(getattr(self.audio, "data", self.audio))[1]


@dataclass
class AttentionParams:
    wq: nm.Tensor
    wk: nm.Tensor
    wv: nm.Tensor
    wo: nm.Tensor
    heads: int


@dataclass
class GspParams:
    conv1_w: nm.Tensor  # 3 x 3d x d
    conv1_b: nm.Tensor
    conv2_w: nm.Tensor  # 3 x d x d
    conv2_b: nm.Tensor
    reg_w: nm.Tensor  # d x 1
    reg_b: nm.Tensor  # 1


def multi_head_attention(q, k, v, params: AttentionParams) -> nm.Tensor:
    T, d = q.shape
    h = params.heads
    if h < 1 or d % h:
        raise AttentionConfigError(f"head count {h} does not divide model dim {d}")
    if k.shape != v.shape or k.shape[1] != d:
        raise nm.ShapeError(f"attention inputs disagree: q {q.shape}, k {k.shape}, v {v.shape}")
    dh = d // h
    scale = 1.0 / math.sqrt(dh)
    Q = q @ params.wq
    K = k @ params.wk
    V = v @ params.wv
    if h == 1:
        out = nm.softmax_rows(Q @ K.T, scale) @ V
    else:
        # heads as a leading batch axis: T x d -> h x T x dh
        Qh = nm.permute(nm.reshape(Q, (T, h, dh)), (1, 0, 2))
        Kt = nm.permute(nm.reshape(K, (k.shape[0], h, dh)), (1, 2, 0))
        Vh = nm.permute(nm.reshape(V, (k.shape[0], h, dh)), (1, 0, 2))
        att = nm.softmax_rows(nm.bmm(Qh, Kt), scale)
        out = nm.reshape(nm.permute(nm.bmm(att, Vh), (1, 0, 2)), (T, d))
    return out @ params.wo


def fci_stage1(feat: FeatureSequence, visual: AttentionParams, audio: AttentionParams):
    """Face queries visual and audio; each result is added back residually."""
    fv = feat.visual + multi_head_attention(feat.face, feat.visual, feat.visual, visual)
    fa = feat.audio + multi_head_attention(feat.face, feat.audio, feat.audio, audio)
    return fv, fa


def fci_stage2(fv_f, fa_f, visual: AttentionParams, audio: AttentionParams) -> nm.Tensor:
    """Cross-query the stage-1 pair and concatenate into a T x 2d fused track."""
    if fv_f.shape != fa_f.shape:
        raise nm.ShapeError(f"stage-2 inputs disagree: {fv_f.shape} vs {fa_f.shape}")
    fv_af = fv_f + multi_head_attention(fa_f, fv_f, fv_f, visual)
    fa_vf = fa_f + multi_head_attention(fv_f, fa_f, fa_f, audio)
    return nm.concat([fv_af, fa_vf], axis=1)


def gsp_weight(feat: FeatureSequence, params: GspParams) -> nm.Tensor:
    """Per-frame sentiment saliency in (0, 1), shape T x 1."""
    x = nm.concat([feat.audio, feat.visual, feat.face], axis=1)
    h = nm.relu(nm.conv1d(x, params.conv1_w, params.conv1_b))
    h = nm.conv1d(h, params.conv2_w, params.conv2_b)
    return nm.sigmoid(h @ params.reg_w + params.reg_b)
