"""Named configuration grids for the ablation studies."""
from __future__ import annotations

import json
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from .bspg import STRATEGIES
from .evaluation import EvalConfig, format_table
from .synth import SynthSpec, generate
from .trainer import TrainConfig, apply_overrides, evaluate_model, split_ids, train


@dataclass
class Row:
    label: str
    overrides: list = field(default_factory=list)  # TrainConfig key=value strings
    spec: dict = field(default_factory=dict)  # SynthSpec field overrides


def _bspg(name, **kw):
    return "bspg=" + json.dumps({"w": 7, "beta": 0.6, "tau": 0.95, **STRATEGIES[name], **kw})


def _loss(frame=True, frame_glo=True, sc=True):
    out = [f"loss.frame={json.dumps(frame)}", f"loss.frame_glo={json.dumps(frame_glo)}"]
    if not sc:
        out.append("loss.lambda2=0")
    return out


SUITES = {
    "table4": [
        Row("a  (GSP only)", ["stage1=false", "stage2=false"]),
        Row("b  (stage 1 + GSP)", ["stage2=false"]),
        Row("c  (stage 2 + GSP)", ["stage1=false"]),
        Row("d  (FCI, no GSP)", ["gsp=false"]),
        Row("e  (full)"),
    ],
    "table5": [
        Row("None", [_bspg("none")]),
        Row("Threshold Only", [_bspg("threshold")]),
        Row("Step Only", [_bspg("step")]),
        Row("Full", [_bspg("full")]),
    ],
    "table6": [
        Row("a  (all)", _loss()),
        Row("b  (no L_frame)", _loss(frame=False)),
        Row("c  (no L_frame^glo)", _loss(frame_glo=False)),
        Row("d  (no L_sc)", _loss(sc=False)),
        Row("e  (L_sc only)", _loss(False, False)),
        Row("f  (base only)", _loss(False, False, False)),
    ],
    "sweep-w": [Row(f"w={w}", [f"bspg.w={w}"]) for w in (5, 6, 7, 8, 9)],
    "sweep-beta": [Row(f"beta={b}", [f"bspg.beta={b}"]) for b in (0.1, 0.3, 0.5, 0.6, 0.7)],
    "sweep-k": [Row(f"k={k}", [f"k_divisor={k}"]) for k in (5, 6, 7, 8, 10, 12)],
    "face": [
        Row("AV + face", [], {"face_informativeness": 1.0}),
        Row("face zeroed", ["zero_face=true"], {"face_informativeness": 1.0}),
    ],
    "metric": [Row(m, [f"metric={m}"]) for m in ("cosine", "dot", "l1", "l2")],
}


def run_one(row: Row, seed: int, base: TrainConfig, spec: SynthSpec, eval_cfg: EvalConfig | None = None) -> dict:
    cfg = apply_overrides(base, [f"seed={seed}"] + list(row.overrides))
    ds = generate(SynthSpec(**{**asdict(spec), **row.spec}))
    params, _ = train(cfg, ds, eval_cfg)
    _, held = split_ids(ds.ids(), cfg.train_fraction, cfg.seed)
    return evaluate_model(params, ds, held, eval_cfg).to_dict()


def _job(args):
    return run_one(*args)


def run_suite(name: str, seeds=(0, 1, 2), base: TrainConfig | None = None, spec: SynthSpec | None = None,
              eval_cfg: EvalConfig | None = None, workers: int = 1) -> dict:
    """Train every row of a suite once per seed; returns per-run and seed-mean reports."""
    if name not in SUITES:
        raise KeyError(f"unknown suite {name!r}; choose from {sorted(SUITES)}")
    base = base or TrainConfig()
    spec = spec or SynthSpec()
    rows = SUITES[name]
    jobs = [(row, s, base, spec, eval_cfg) for row in rows for s in seeds]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            reports = list(pool.map(_job, jobs))
    else:
        reports = [_job(j) for j in jobs]

    out = {"suite": name, "seeds": list(seeds), "rows": []}
    it = iter(reports)
    for row in rows:
        runs = [next(it) for _ in seeds]
        mean = {
            "mAP": {k: float(np.mean([r["mAP"][k] for r in runs])) for k in runs[0]["mAP"]},
            **{k: float(np.mean([r[k] for r in runs])) for k in ("avg_mAP", "recall", "precision", "f2")},
        }
        out["rows"].append({"label": row.label, "overrides": row.overrides, "spec": row.spec,
                            "runs": runs, "mean": mean})
    return out


def suite_table(result: dict) -> str:
    keys = list(result["rows"][0]["mean"]["mAP"])
    head = ["Method"] + keys + ["Avg mAP", "Recall", "F2"]
    body = []
    for r in result["rows"]:
        m = r["mean"]
        body.append([r["label"]] + [f"{100 * m['mAP'][k]:.2f}" for k in keys]
                    + [f"{100 * m[k]:.2f}" for k in ("avg_mAP", "recall", "f2")])
    return format_table(head, body)


def worker_count() -> int:
    raw = os.environ.get("FSENET_THREADS", "1")
    try:
        return max(1, int(raw))
    except ValueError:
        raise ValueError(f"FSENET_THREADS must be an integer, got {raw!r}") from None
