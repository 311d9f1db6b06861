"""FSENet: point-supervised temporal sentiment localization on a small numpy autodiff core.

Submodules load lazily so ``fsenet.cli`` can cap BLAS threads before numpy starts.
"""
import importlib

__version__ = "0.1.0"

_EXPORTS = {
    "Tensor": "numeric", "GradientTape": "numeric", "grad_check": "numeric",
    "FeatureSequence": "fsd", "ModelConfig": "model", "ModelParams": "model", "init_params": "model",
    "infer": "model", "save_params": "model", "load_params": "model",
    "BspgConfig": "bspg", "generate_pseudo_labels": "bspg", "PointAnnotationSet": "pssc",
    "LossWeights": "losses", "TrainConfig": "trainer", "train": "trainer", "evaluate_model": "trainer",
    "SentimentSegment": "evaluation", "EvalConfig": "evaluation", "evaluate": "evaluation",
    "extract_segments": "evaluation", "SynthSpec": "synth", "generate": "synth",
    "save_dataset": "synth", "load_dataset": "synth", "run_suite": "ablation",
}
__all__ = sorted(_EXPORTS)


def __getattr__(name):
    if name in _EXPORTS:
        return getattr(importlib.import_module(f".{_EXPORTS[name]}", __name__), name)
    raise AttributeError(f"module {__name__!r} has no attribute {name!r}")
