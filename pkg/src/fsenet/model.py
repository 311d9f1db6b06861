"""Parameter container, initialisation, forward pass and parameter files."""
from __future__ import annotations

import json
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import numeric as nm
from .fsd import AttentionParams, FeatureSequence, GspParams, fci_stage1, fci_stage2, gsp_weight
from .heads import ClsParams, cas, global_cas

PARAMS_MAGIC = b"FSEPARM1"


class ConfigurationError(ValueError):
    pass


@dataclass
class ModelConfig:
    in_dims: tuple = (32, 32, 32)  # raw audio, visual, face widths
    d: int = 32
    heads: int = 4
    classes: int = 2
    gsp_kernel: int = 3
    cls_kernel: int = 1
    # component switches for the architecture ablations
    stage1: bool = True
    stage2: bool = True
    gsp: bool = True
    zero_face: bool = False

    def __post_init__(self):
        self.in_dims = tuple(int(v) for v in self.in_dims)
        if len(self.in_dims) != 3:
            raise ConfigurationError(f"in_dims needs three entries, got {self.in_dims}")
        if self.heads < 1 or self.d % self.heads:
            raise ConfigurationError(f"heads={self.heads} must divide d={self.d}")
        if self.classes < 1:
            raise ConfigurationError("need at least one sentiment class")


ATTENTION_BLOCKS = ("s1_visual", "s1_audio", "s2_visual", "s2_audio")
MODALITIES = ("audio", "visual", "face")


@dataclass
class ModelParams:
    config: ModelConfig
    tensors: dict = field(default_factory=dict)  # name -> Tensor, insertion order is canonical

    def __getitem__(self, name) -> nm.Tensor:
        return self.tensors[name]

    def names(self) -> list[str]:
        return list(self.tensors)

    def values(self) -> list[nm.Tensor]:
        return list(self.tensors.values())

    def attention(self, block: str) -> AttentionParams:
        t = self.tensors
        return AttentionParams(t[f"{block}.wq"], t[f"{block}.wk"], t[f"{block}.wv"], t[f"{block}.wo"],
                               self.config.heads)

    def gsp(self) -> GspParams:
        t = self.tensors
        return GspParams(t["gsp.conv1_w"], t["gsp.conv1_b"], t["gsp.conv2_w"], t["gsp.conv2_b"],
                         t["gsp.reg_w"], t["gsp.reg_b"])

    def cls(self) -> ClsParams:
        return ClsParams(self.tensors["cls.w"], self.tensors["cls.b"])

    def copy(self) -> "ModelParams":
        return ModelParams(self.config, {k: nm.Tensor(v.data.copy(), True, k) for k, v in self.tensors.items()})

    def norm(self) -> float:
        return float(np.sqrt(sum((v.data ** 2).sum() for v in self.tensors.values())))


def _shapes(cfg: ModelConfig) -> dict:
    d, C = cfg.d, cfg.classes
    shapes = {}
    for m, din in zip(MODALITIES, cfg.in_dims):
        shapes[f"proj.{m}_w"] = (1, din, d)
        shapes[f"proj.{m}_b"] = (d,)
    for block in ATTENTION_BLOCKS:
        for p in ("wq", "wk", "wv", "wo"):
            shapes[f"{block}.{p}"] = (d, d)
    k = cfg.gsp_kernel
    shapes.update({
        "gsp.conv1_w": (k, 3 * d, d), "gsp.conv1_b": (d,),
        "gsp.conv2_w": (k, d, d), "gsp.conv2_b": (d,),
        "gsp.reg_w": (d, 1), "gsp.reg_b": (1,),
        "cls.w": (cfg.cls_kernel, 2 * d, C + 1), "cls.b": (C + 1,),
    })
    return shapes


def init_params(cfg: ModelConfig, seed: int = 0, zero: bool = False) -> ModelParams:
    """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights from a seeded generator; biases start at 0."""
    rng = np.random.default_rng(seed)
    tensors = {}
    for name, shape in _shapes(cfg).items():
        if zero or name.endswith("_b") or name == "cls.b":
            data = np.zeros(shape)
        else:
            bound = 1.0 / np.sqrt(int(np.prod(shape[:-1])))
            data = rng.uniform(-bound, bound, size=shape)
        tensors[name] = nm.Tensor(data, requires_grad=True, name=name)
    return ModelParams(cfg, tensors)


@dataclass
class Forward:
    y: nm.Tensor  # CAS, T x (C+1)
    y_glo: nm.Tensor  # global CAS, T x (C+1)
    w: nm.Tensor  # sentiment weight, T x 1
    f_mix: nm.Tensor  # fused embedding, T x 2d


def project(params: ModelParams, raw: FeatureSequence) -> FeatureSequence:
    cfg = params.config
    tracks = []
    for m, din in zip(MODALITIES, cfg.in_dims):
        x = nm.as_tensor(getattr(raw, m))
        if x.shape[1] != din:
            raise ConfigurationError(f"{m} track has width {x.shape[1]}, model expects {din}")
        if m == "face" and cfg.zero_face:
            x = nm.Tensor(np.zeros(x.shape))
        tracks.append(nm.conv1d(x, params[f"proj.{m}_w"], params[f"proj.{m}_b"]))
    return FeatureSequence(*tracks)


def forward(params: ModelParams, raw: FeatureSequence) -> Forward:
    cfg = params.config
    feat = project(params, raw)
    if cfg.stage1:
        fv, fa = fci_stage1(feat, params.attention("s1_visual"), params.attention("s1_audio"))
    else:
        fv, fa = feat.visual, feat.audio
    if cfg.stage2:
        f_mix = fci_stage2(fv, fa, params.attention("s2_visual"), params.attention("s2_audio"))
    else:
        f_mix = nm.concat([fv, fa], axis=1)
    y = cas(f_mix, params.cls())
    if cfg.gsp:
        w = gsp_weight(feat, params.gsp())
        y_glo = global_cas(y, w)
    else:
        # without the global branch the weight is neutral and the global CAS is the CAS
        w = nm.Tensor(np.ones((y.shape[0], 1)))
        y_glo = y
    return Forward(y, y_glo, w, f_mix)


def infer(params: ModelParams, raw: FeatureSequence):
    """Forward pass as plain arrays: (y, y_glo, w)."""
    out = forward(params, raw)
    return out.y.data.copy(), out.y_glo.data.copy(), out.w.data.copy()


# --------------------------------------------------------------------------
# serialization: 8-byte magic, u32 manifest length, JSON manifest, tensor records

def params_to_bytes(params: ModelParams) -> bytes:
    blobs = []
    entries = []
    offset = 0
    for name, t in params.tensors.items():
        b = nm.tensor_to_bytes(t)
        entries.append({"name": name, "shape": list(t.shape), "offset": offset, "nbytes": len(b)})
        blobs.append(b)
        offset += len(b)
    manifest = json.dumps({"config": asdict(params.config), "tensors": entries}, sort_keys=True).encode()
    return PARAMS_MAGIC + struct.pack("<I", len(manifest)) + manifest + b"".join(blobs)


def params_from_bytes(buf: bytes) -> ModelParams:
    if buf[:8] != PARAMS_MAGIC:
        raise ValueError("not a parameter file")
    (n,) = struct.unpack_from("<I", buf, 8)
    manifest = json.loads(buf[12:12 + n])
    base = 12 + n
    cfg = ModelConfig(**manifest["config"])
    tensors = {}
    for e in manifest["tensors"]:
        t, _ = nm.tensor_from_bytes(buf, base + e["offset"])
        tensors[e["name"]] = nm.Tensor(t.data, requires_grad=True, name=e["name"])
    return ModelParams(cfg, tensors)


def save_params(params: ModelParams, path) -> None:
    Path(path).write_bytes(params_to_bytes(params))


def load_params(path) -> ModelParams:
    return params_from_bytes(Path(path).read_bytes())
