import math
import zlib

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from fsenet import numeric as nm


def test_matmul_examples():
    eye = nm.Tensor(np.eye(2))
    m = nm.Tensor([[1, 2], [3, 4]])
    np.testing.assert_array_equal(nm.matmul(eye, m).data, [[1, 2], [3, 4]])
    np.testing.assert_array_equal(nm.matmul(nm.zeros(2, 2), nm.Tensor(np.ones((2, 5)))).data, np.zeros((2, 5)))
    np.testing.assert_array_equal((m @ nm.Tensor([[5, 6], [7, 8]])).data, [[19, 22], [43, 50]])


def test_matmul_shape_error_names_both_shapes():
    with pytest.raises(nm.ShapeError, match=r"\(2, 3\).*\(2, 3\)"):
        nm.matmul(nm.zeros(2, 3), nm.zeros(2, 3))


def test_softmax_examples():
    np.testing.assert_allclose(nm.softmax_rows(nm.Tensor([[0.0, 0.0]])).data, [[0.5, 0.5]])
    for c in (-1000.0, 0.0, 7.5, 1000.0):
        np.testing.assert_allclose(nm.softmax_rows(nm.Tensor([[c, c, c]])).data, [[1 / 3] * 3], atol=1e-15)
    np.testing.assert_allclose(nm.softmax_rows(nm.Tensor([[0.0, math.log(3)]])).data, [[0.25, 0.75]], atol=1e-15)


def test_sigmoid_examples():
    assert nm.sigmoid(nm.Tensor(0.0)).item() == 0.5
    x = np.linspace(-30, 30, 41)
    np.testing.assert_allclose(nm.sigmoid(nm.Tensor(x)).data + nm.sigmoid(nm.Tensor(-x)).data, 1.0, atol=1e-15)
    assert nm.sigmoid(nm.Tensor(1.0)).item() == pytest.approx(0.731059, abs=5e-7)
    out = nm.sigmoid(nm.Tensor([-800.0, 800.0])).data
    assert np.isfinite(out).all()


finite = st.floats(-50, 50, allow_nan=False)


@settings(max_examples=100, deadline=None)
@given(arrays(np.float64, st.tuples(st.integers(1, 6), st.integers(1, 8)), elements=finite))
def test_softmax_rows_sum_to_one(x):
    out = nm.softmax_rows(nm.Tensor(x)).data
    assert (out >= 0).all()
    np.testing.assert_allclose(out.sum(axis=1), 1.0, atol=1e-12)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_matmul_associative(seed):
    rng = np.random.default_rng(seed)
    m, k, n, p = rng.integers(1, 6, size=4)
    a, b, c = (nm.Tensor(rng.normal(size=s)) for s in ((m, k), (k, n), (n, p)))
    left = ((a @ b) @ c).data
    right = (a @ (b @ c)).data
    scale = max(1.0, np.abs(left).max())
    np.testing.assert_allclose(left, right, atol=1e-9 * scale, rtol=1e-9)


def test_grad_check_square():
    x = nm.Tensor([3.0], requires_grad=True)
    with nm.GradientTape() as tape:
        y = nm.tsum(nm.square(x))
    assert tape.gradient(y, [x])[0][0] == 6.0
    assert nm.grad_check(lambda: nm.tsum(nm.square(x)), [x], eps=1e-5) <= 1e-8


def test_grad_check_constant():
    x = nm.Tensor([1.0, 2.0], requires_grad=True)
    assert nm.grad_check(lambda: nm.Tensor(4.0), [x], eps=1e-5) == 0.0


def test_grad_check_rejects_bad_eps_and_nonfinite():
    x = nm.Tensor([1.0], requires_grad=True)
    with pytest.raises(ValueError):
        nm.grad_check(lambda: nm.tsum(x), [x], eps=1e-2)
    with pytest.raises(nm.EvaluationError):
        nm.grad_check(lambda: nm.tsum(x) * np.inf, [x], eps=1e-5)


def _rand(rng, *shape, positive=False):
    data = rng.uniform(0.5, 2.0, size=shape) if positive else rng.normal(size=shape)
    return nm.Tensor(data, requires_grad=True)


PRIMITIVES = {
    "matmul": lambda r: ((a := _rand(r, 3, 4)), (b := _rand(r, 4, 2)), lambda: nm.matmul(a, b)),
    "add_broadcast": lambda r: ((a := _rand(r, 3, 4)), (b := _rand(r, 1, 4)), lambda: a + b),
    "sub_column": lambda r: ((a := _rand(r, 3, 4)), (b := _rand(r, 3, 1)), lambda: a - b),
    "mul": lambda r: ((a := _rand(r, 3, 4)), (b := _rand(r, 3, 4)), lambda: a * b),
    "div": lambda r: ((a := _rand(r, 3, 4)), (b := _rand(r, 3, 4, positive=True)), lambda: a / b),
    "exp": lambda r: ((a := _rand(r, 3, 4)), None, lambda: nm.exp(a)),
    "log": lambda r: ((a := _rand(r, 3, 4, positive=True)), None, lambda: nm.log(a)),
    "sqrt": lambda r: ((a := _rand(r, 3, 4, positive=True)), None, lambda: nm.sqrt(a)),
    "power": lambda r: ((a := _rand(r, 3, 4, positive=True)), None, lambda: nm.power(a, 2.5)),
    "sigmoid": lambda r: ((a := _rand(r, 3, 4)), None, lambda: nm.sigmoid(a)),
    "softmax": lambda r: ((a := _rand(r, 3, 5)), None, lambda: nm.softmax_rows(a, 0.7)),
    "softmax3d": lambda r: ((a := _rand(r, 2, 3, 5)), None, lambda: nm.softmax_rows(a)),
    "mean_axis": lambda r: ((a := _rand(r, 3, 4)), None, lambda: nm.mean(a, axis=0, keepdims=True)),
    "sum_all": lambda r: ((a := _rand(r, 3, 4)), None, lambda: nm.tsum(a) * nm.tsum(a)),
    "concat": lambda r: ((a := _rand(r, 3, 2)), (b := _rand(r, 3, 4)), lambda: nm.concat([a, b, a], axis=1)),
    "slice": lambda r: ((a := _rand(r, 3, 6)), None, lambda: nm.slice_cols(a, 1, 4)),
    "take_rows": lambda r: ((a := _rand(r, 5, 3)), None, lambda: nm.take_rows(a, [4, 0, 4, 2])),
    "transpose": lambda r: ((a := _rand(r, 3, 4)), None, lambda: nm.transpose(a)),
    "permute": lambda r: ((a := _rand(r, 2, 3, 4)), None, lambda: nm.permute(a, (2, 0, 1))),
    "reshape": lambda r: ((a := _rand(r, 3, 4)), None, lambda: nm.reshape(a, (2, 6))),
    "bmm": lambda r: ((a := _rand(r, 2, 3, 4)), (b := _rand(r, 2, 4, 5)), lambda: nm.bmm(a, b)),
    "conv1d_k3": lambda r: ((a := _rand(r, 6, 3)), (b := _rand(r, 3, 3, 2)), lambda: nm.conv1d(a, b)),
    "conv1d_k1": lambda r: ((a := _rand(r, 6, 3)), (b := _rand(r, 1, 3, 2)), lambda: nm.conv1d(a, b)),
    "normalize": lambda r: ((a := _rand(r, 4, 3)), None, lambda: nm.l2_normalize_rows(a)),
}


@pytest.mark.parametrize("name", sorted(PRIMITIVES))
def test_primitive_gradients(name):
    rng = np.random.default_rng(zlib.crc32(name.encode()))
    a, b, op = PRIMITIVES[name](rng)
    params = [p for p in (a, b) if p is not None]
    w_rng = np.random.default_rng(7)
    w = w_rng.normal(size=op().shape)
    err = nm.grad_check(lambda: nm.tsum(op() * w), params, eps=1e-5)
    assert err < 1e-6, f"{name}: relative error {err}"


def test_conv_bias_and_relu_gradients():
    rng = np.random.default_rng(3)
    x = _rand(rng, 7, 4)
    w = _rand(rng, 3, 4, 2)
    b = _rand(rng, 2)
    wt = rng.normal(size=(7, 2))
    err = nm.grad_check(lambda: nm.tsum(nm.relu(nm.conv1d(x, w, b)) * wt), [x, w, b], eps=1e-5)
    assert err < 1e-6


def test_clip_blocks_gradient_outside_range():
    x = nm.Tensor([-1.0, 0.5, 2.0], requires_grad=True)
    with nm.GradientTape() as tape:
        y = nm.tsum(nm.clip(x, 0.0, 1.0))
    np.testing.assert_array_equal(tape.gradient(y, [x])[0], [0.0, 1.0, 0.0])


def test_conv1d_same_padding_matches_direct_sum():
    rng = np.random.default_rng(0)
    x = rng.normal(size=(5, 2))
    w = rng.normal(size=(3, 2, 4))
    out = nm.conv1d(nm.Tensor(x), nm.Tensor(w)).data
    xp = np.vstack([np.zeros((1, 2)), x, np.zeros((1, 2))])
    ref = np.array([sum(xp[t + j] @ w[j] for j in range(3)) for t in range(5)])
    np.testing.assert_allclose(out, ref, atol=1e-12)


def test_no_tape_means_no_recording():
    x = nm.Tensor([1.0], requires_grad=True)
    y = nm.exp(x)
    assert not y.requires_grad


def test_tensor_file_roundtrip(tmp_path):
    t = nm.Tensor(np.arange(24, dtype=float).reshape(2, 3, 4) / 7)
    path = tmp_path / "t.bin"
    nm.save_tensor(path, t)
    raw = path.read_bytes()
    assert raw[:8] == b"FSETNSR1"
    assert int.from_bytes(raw[8:12], "little") == 3
    assert [int.from_bytes(raw[12 + 4 * i:16 + 4 * i], "little") for i in range(3)] == [2, 3, 4]
    assert len(raw) == 8 + 4 + 12 + 24 * 4
    back = nm.load_tensor(path)
    np.testing.assert_allclose(back.data, t.data.astype(np.float32), rtol=0, atol=0)


def test_tensor_file_rejects_bad_magic():
    with pytest.raises(ValueError):
        nm.tensor_from_bytes(b"NOTATNSR" + bytes(8))
