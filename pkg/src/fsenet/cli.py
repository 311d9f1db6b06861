"""fsenet command line: gen, train, eval, infer, pseudo, ablate.

Exit codes: 0 success, 1 usage error, 2 runtime failure.
"""
from __future__ import annotations

import os
import sys

# BLAS pools size themselves when numpy loads, so the cap goes in first
if os.environ.get("FSENET_THREADS", "").isdigit():
    for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        os.environ.setdefault(_var, os.environ["FSENET_THREADS"])

import argparse
import json
import logging
from dataclasses import fields
from pathlib import Path


from .ablation import SUITES, run_suite, suite_table, worker_count
from .bspg import generate_pseudo_labels
from .evaluation import evaluate
from .heads import scores_to_csv
from .model import infer, load_params, save_params
from .synth import SynthSpec, generate, load_dataset, save_dataset
from .trainer import TrainConfig, apply_overrides, predict, split_ids, train


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _read_json(path):
    try:
        return json.loads(Path(path).read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise UsageError(f"no such file: {path}") from None
    except json.JSONDecodeError as e:
        raise UsageError(f"{path}: invalid JSON ({e})") from None


def _write(path, text: str):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text, encoding="utf-8")


def _synth_spec(path, sets) -> SynthSpec:
    d = _read_json(path) if path else {}
    known = {f.name for f in fields(SynthSpec)}
    for item in sets or []:
        if "=" not in item:
            raise UsageError(f"--set {item!r} is not key=value")
        k, raw = item.split("=", 1)
        try:
            d[k] = json.loads(raw)
        except json.JSONDecodeError:
            d[k] = raw
    unknown = set(d) - known
    if unknown:
        raise UsageError(f"unknown spec keys: {sorted(unknown)}")
    try:
        return SynthSpec(**d)
    except (TypeError, ValueError) as e:
        raise UsageError(f"bad spec: {e}") from None


def _train_config(path, sets) -> TrainConfig:
    try:
        cfg = TrainConfig.from_dict(_read_json(path)) if path else TrainConfig()
        return apply_overrides(cfg, sets or [])
    except (TypeError, ValueError) as e:
        raise UsageError(f"bad config: {e}") from None


def _load_model(path):
    """A model directory (params.bin + config.json) or a bare parameter file."""
    path = Path(path)
    if path.is_dir():
        cfg_file = path / "config.json"
        cfg = TrainConfig.from_dict(_read_json(cfg_file)) if cfg_file.exists() else None
        return load_params(path / "params.bin"), cfg
    if not path.exists():
        raise UsageError(f"no such model: {path}")
    return load_params(path), None


def _video(ds, vid):
    try:
        return ds.by_id(vid)
    except KeyError:
        raise UsageError(f"video {vid!r} not in dataset ({len(ds.videos)} videos)") from None


# --------------------------------------------------------------------------
# subcommands

def cmd_gen(args):
    spec = _synth_spec(args.spec, args.set)
    save_dataset(generate(spec), args.out)
    print(f"wrote {spec.video_count} videos to {args.out}")


def cmd_train(args):
    cfg = _train_config(args.config, args.set)
    ds = load_dataset(args.data)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "loss.jsonl", "w", encoding="utf-8") as fh:
        def on_step(rec):
            fh.write(json.dumps(rec, sort_keys=True) + "\n")
        params, history = train(cfg, ds, on_step=on_step)
    save_params(params, out / "params.bin")
    _write(out / "config.json", cfg.to_json())
    _write(out / "history.json", history.to_json())
    if history.epochs:
        print(f"epoch {history.epochs[-1]['epoch']}: held-out avg mAP {history.epochs[-1]['avg_mAP']:.4f}")
    print(f"saved model to {out}")


def cmd_eval(args):
    params, cfg = _load_model(args.model)
    ds = load_dataset(args.data)
    ids = ds.ids()
    if args.split == "heldout":
        if cfg is None:
            raise UsageError("--split heldout needs a model directory with config.json")
        ids = split_ids(ids, cfg.train_fraction, cfg.seed)[1]
    view = ds.training_view(ids)
    report = evaluate(predict(params, view), ds.ground_truth(ids))
    _write(args.report, report.to_json() + "\n")
    print(report.table("FSENet"))


def cmd_infer(args):
    params, _ = _load_model(args.model)
    v = _video(load_dataset(args.data, with_ground_truth=False), args.video)
    y, y_glo, w = infer(params, v.features)
    scores_to_csv(y_glo if args.glo else y, args.dump_cas)
    if args.dump_weight:
        _write(args.dump_weight, "t,w\n" + "".join(f"{t},{x:.9f}\n" for t, x in enumerate(w[:, 0])))
    segs = predict(params, [v])[v.vid]
    print(json.dumps([s.to_dict() for s in segs], indent=1))


def cmd_pseudo(args):
    params, cfg = _load_model(args.model)
    try:
        cfg = apply_overrides(cfg or TrainConfig(), args.set or [])
    except (TypeError, ValueError) as e:
        raise UsageError(f"bad config: {e}") from None
    v = _video(load_dataset(args.data, with_ground_truth=False), args.video)
    y, _, _ = infer(params, v.features)
    labels = generate_pseudo_labels(y, v.points.points, cfg.bspg)
    scores_to_csv(labels, args.dump_pseudo)
    print(f"wrote {labels.shape[0]} x {labels.shape[1]} pseudo-labels to {args.dump_pseudo}")


def cmd_ablate(args):
    try:
        seeds = [int(s) for s in args.seeds.split(",") if s != ""]
    except ValueError:
        raise UsageError(f"--seeds must be comma-separated integers, got {args.seeds!r}") from None
    if not seeds:
        raise UsageError("--seeds is empty")
    base = _train_config(args.config, args.set)
    spec = _synth_spec(args.spec, args.spec_set)
    result = run_suite(args.suite, seeds, base, spec, workers=worker_count())
    if args.out:
        _write(args.out, json.dumps(result, indent=1) + "\n")
    print(f"suite {args.suite}, seed-mean over {seeds}")
    print(suite_table(result))


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="fsenet", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    g = sub.add_parser("gen", help="write a synthetic dataset")
    g.add_argument("--spec", help="JSON file with SynthSpec fields")
    g.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a spec field")
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_gen)

    t = sub.add_parser("train", help="train on a dataset directory")
    t.add_argument("--config", help="JSON file with TrainConfig fields")
    t.add_argument("--data", required=True)
    t.add_argument("--out", required=True, help="model directory")
    t.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a config field (bspg.w=5)")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="score a model against ground truth")
    e.add_argument("--model", required=True)
    e.add_argument("--data", required=True)
    e.add_argument("--report", required=True)
    e.add_argument("--split", choices=("heldout", "all"), default="heldout")
    e.set_defaults(func=cmd_eval)

    i = sub.add_parser("infer", help="dump score tracks for one video")
    i.add_argument("--model", required=True)
    i.add_argument("--data", required=True)
    i.add_argument("--video", required=True)
    i.add_argument("--dump-cas", required=True)
    i.add_argument("--glo", action="store_true", help="dump the weighted scores instead of the raw CAS")
    i.add_argument("--dump-weight", help="also write the per-frame sentiment weight")
    i.set_defaults(func=cmd_infer)

    s = sub.add_parser("pseudo", help="dump pseudo-labels for one video")
    s.add_argument("--model", required=True)
    s.add_argument("--data", required=True)
    s.add_argument("--video", required=True)
    s.add_argument("--dump-pseudo", required=True)
    s.add_argument("--set", action="append", metavar="KEY=VALUE")
    s.set_defaults(func=cmd_pseudo)

    a = sub.add_parser("ablate", help="run an ablation grid and print a table")
    a.add_argument("--suite", required=True, choices=sorted(SUITES))
    a.add_argument("--seeds", default="0,1,2")
    a.add_argument("--config")
    a.add_argument("--set", action="append", metavar="KEY=VALUE")
    a.add_argument("--spec")
    a.add_argument("--spec-set", action="append", metavar="KEY=VALUE")
    a.add_argument("--out", help="write the full result JSON here")
    a.set_defaults(func=cmd_ablate)
    return p


def run(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:  # usage errors and --help
        return e.code if isinstance(e.code, int) else 1
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(name)s: %(message)s", stream=sys.stderr)
    try:
        args.func(args)
    except UsageError as e:
        parser.print_usage(sys.stderr)
        print(f"fsenet {args.command}: error: {e}", file=sys.stderr)
        return 1
    except Exception as e:  # runtime failure: report which stage died
        print(f"fsenet {args.command}: failed: {type(e).__name__}: {e}", file=sys.stderr)
        return 2
    return 0


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()
