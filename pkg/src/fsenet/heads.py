"""Frame classifiers: the CAS head and its fusion with the sentiment weight."""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass

import numpy as np

from . import numeric as nm


@dataclass
class ClsParams:
    """C+1 single-output temporal convolutions stored as one k x 2d x (C+1) kernel.

    Output column c depends only on ``weight[..., c]`` and ``bias[c]``.
    """

    weight: nm.Tensor
    bias: nm.Tensor

    @property
    def class_count(self) -> int:
        return self.weight.shape[2] - 1


def cas(f_mix, params: ClsParams) -> nm.Tensor:
    return nm.sigmoid(nm.conv1d(f_mix, params.weight, params.bias))


def global_cas(y, w) -> nm.Tensor:
    """Scale sentiment columns by w and the non-sentiment column by 1 - w."""
    y, w = nm.as_tensor(y), nm.as_tensor(w)
    if y.shape[0] != w.shape[0] or w.shape[1:] != (1,):
        raise nm.ShapeError(f"global_cas: scores {y.shape} vs weights {w.shape}")
    C = y.shape[1] - 1
    mask = np.zeros((1, C + 1))
    mask[0, :C] = 1.0
    # w on sentiment columns, 1 - w on the last one
    gate = w * mask + (1.0 - w) * (1.0 - mask)
    return y * gate


def scores_to_csv(scores, path=None) -> str:
    arr = np.asarray(getattr(scores, "data", scores))
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["t"] + [f"class_{c}" for c in range(arr.shape[1])])
    for t, row in enumerate(arr):
        writer.writerow([t] + [f"{v:.8f}" for v in row])
    text = buf.getvalue()
    if path is not None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(text)
    return text


def scores_from_csv(path) -> np.ndarray:
    with open(path, encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    return np.array([[float(v) for v in r[1:]] for r in rows[1:]])
