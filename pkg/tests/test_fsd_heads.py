import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fsenet import numeric as nm
from fsenet.fsd import (AttentionConfigError, AttentionParams, FeatureSequence, GspParams, fci_stage1,
                        fci_stage2, gsp_weight, multi_head_attention)
from fsenet.heads import ClsParams, cas, global_cas, scores_from_csv, scores_to_csv


def eye_params(d, h=1, scale=1.0):
    return AttentionParams(*(nm.Tensor(np.eye(d) * scale) for _ in range(4)), heads=h)


def test_single_key_returns_value_row():
    v = nm.Tensor([[1.0, -2.0, 3.0, 0.5]])
    out = multi_head_attention(v, v, v, eye_params(4, h=2))
    np.testing.assert_allclose(out.data, v.data, atol=1e-15)


def test_equal_keys_give_column_mean():
    rng = np.random.default_rng(0)
    q = nm.Tensor(rng.normal(size=(5, 4)))
    k = nm.Tensor(np.tile(rng.normal(size=(1, 4)), (6, 1)))
    v = nm.Tensor(rng.normal(size=(6, 4)))
    out = multi_head_attention(q, k, nm.Tensor(v.data), eye_params(4, h=2))
    np.testing.assert_allclose(out.data, np.tile(v.data.mean(axis=0), (5, 1)), atol=1e-12)


def test_zero_query_projection_is_uniform():
    rng = np.random.default_rng(1)
    x = nm.Tensor(rng.normal(size=(7, 4)))
    p = eye_params(4)
    p.wq = nm.zeros(4, 4)
    out = multi_head_attention(x, x, x, p)
    np.testing.assert_allclose(out.data, np.tile(x.data.mean(axis=0), (7, 1)), atol=1e-12)


def test_head_count_must_divide_dim():
    x = nm.zeros(3, 6)
    with pytest.raises(AttentionConfigError):
        multi_head_attention(x, x, x, eye_params(6, h=4))


@settings(max_examples=25, deadline=None)
@given(st.sampled_from([1, 2, 4]), st.integers(1, 6), st.integers(1, 6), st.integers(0, 2**31 - 1))
def test_multi_head_matches_per_head_loop(h, T, S, seed):
    rng = np.random.default_rng(seed)
    d = 8
    q, k, v = rng.normal(size=(T, d)), rng.normal(size=(S, d)), rng.normal(size=(S, d))
    W = [rng.normal(size=(d, d)) / 3 for _ in range(4)]
    out = multi_head_attention(nm.Tensor(q), nm.Tensor(k), nm.Tensor(v),
                               AttentionParams(*map(nm.Tensor, W), heads=h)).data
    Q, K, V = q @ W[0], k @ W[1], v @ W[2]
    dh = d // h
    heads = []
    for i in range(h):
        sl = slice(i * dh, (i + 1) * dh)
        s = Q[:, sl] @ K[:, sl].T / np.sqrt(dh)
        a = np.exp(s - s.max(axis=1, keepdims=True))
        heads.append((a / a.sum(axis=1, keepdims=True)) @ V[:, sl])
    np.testing.assert_allclose(out, np.hstack(heads) @ W[3], atol=1e-10)


def _feat(rng, T=5, d=4):
    return FeatureSequence(*(nm.Tensor(rng.normal(size=(T, d))) for _ in range(3)))


def test_stage1_residual_identity_and_doubling():
    rng = np.random.default_rng(2)
    feat = _feat(rng)
    zero_v = eye_params(4)
    zero_v.wv = nm.zeros(4, 4)
    fv, fa = fci_stage1(feat, zero_v, zero_v)
    np.testing.assert_array_equal(fv.data, feat.visual.data)
    np.testing.assert_array_equal(fa.data, feat.audio.data)
    one = _feat(rng, T=1)
    fv, fa = fci_stage1(one, eye_params(4), eye_params(4))
    np.testing.assert_allclose(fv.data, 2 * one.visual.data, atol=1e-15)
    np.testing.assert_allclose(fa.data, 2 * one.audio.data, atol=1e-15)


def test_stage2_zero_values_concatenates():
    rng = np.random.default_rng(3)
    fv, fa = nm.Tensor(rng.normal(size=(5, 4))), nm.Tensor(rng.normal(size=(5, 4)))
    p = eye_params(4)
    p.wv = nm.zeros(4, 4)
    out = fci_stage2(fv, fa, p, p)
    assert out.shape == (5, 8)
    np.testing.assert_array_equal(out.data, np.hstack([fv.data, fa.data]))


def test_feature_sequence_shape_checks():
    with pytest.raises(nm.ShapeError):
        FeatureSequence(np.zeros((4, 3)), np.zeros((4, 3)), np.zeros((5, 3)))
    assert FeatureSequence(np.zeros((4, 3)), np.zeros((4, 3)), np.zeros((4, 3))).frame_count == 4


def _gsp(d, bias=0.0):
    return GspParams(nm.zeros(3, 3 * d, d), nm.zeros(d), nm.zeros(3, d, d), nm.zeros(d),
                     nm.zeros(d, 1), nm.Tensor([bias]))


def test_gsp_examples():
    feat = _feat(np.random.default_rng(4), T=6)
    np.testing.assert_array_equal(gsp_weight(feat, _gsp(4)).data, np.full((6, 1), 0.5))
    np.testing.assert_allclose(gsp_weight(feat, _gsp(4, 10.0)).data, 0.99995, atol=1e-5)


def test_gsp_weights_strictly_inside_unit_interval():
    rng = np.random.default_rng(5)
    d = 4
    p = GspParams(nm.Tensor(rng.normal(size=(3, 3 * d, d))), nm.Tensor(rng.normal(size=d)),
                  nm.Tensor(rng.normal(size=(3, d, d))), nm.Tensor(rng.normal(size=d)),
                  nm.Tensor(rng.normal(size=(d, 1))), nm.Tensor([0.3]))
    w = gsp_weight(_feat(rng, T=9), p).data
    assert w.shape == (9, 1) and ((w > 0) & (w < 1)).all()


def test_cas_examples_and_column_isolation():
    rng = np.random.default_rng(6)
    f = nm.Tensor(rng.normal(size=(7, 8)))
    zero = ClsParams(nm.zeros(1, 8, 3), nm.zeros(3))
    np.testing.assert_array_equal(cas(f, zero).data, np.full((7, 3), 0.5))
    w = rng.normal(size=(1, 8, 3))
    base = cas(f, ClsParams(nm.Tensor(w), nm.zeros(3))).data
    w2 = w.copy()
    w2[..., 1] += 1.0
    moved = cas(f, ClsParams(nm.Tensor(w2), nm.zeros(3))).data
    np.testing.assert_array_equal(moved[:, [0, 2]], base[:, [0, 2]])
    assert not np.allclose(moved[:, 1], base[:, 1])


def test_global_cas_examples():
    y = np.array([[0.8, 0.2, 0.6], [0.8, 0.2, 0.6], [0.8, 0.2, 0.6]])
    w = np.array([[1.0], [0.0], [0.5]])
    out = global_cas(y, w).data
    np.testing.assert_allclose(out[0], [0.8, 0.2, 0.0])
    np.testing.assert_allclose(out[1], [0.0, 0.0, 0.6])
    np.testing.assert_allclose(out[2], [0.4, 0.1, 0.3])
    with pytest.raises(nm.ShapeError):
        global_cas(y, np.ones((2, 1)))


unit = st.floats(0, 1)


@settings(max_examples=100, deadline=None)
@given(st.lists(unit, min_size=3, max_size=3), unit, unit)
def test_global_cas_range_and_monotone(row, w1, w2):
    lo, hi = sorted((w1, w2))
    y = np.array([row])
    a = global_cas(y, np.array([[lo]])).data[0]
    b = global_cas(y, np.array([[hi]])).data[0]
    assert ((a >= 0) & (a <= 1)).all() and ((b >= 0) & (b <= 1)).all()
    assert (b[:2] >= a[:2]).all() and b[2] <= a[2]


def test_scores_csv_roundtrip(tmp_path):
    y = np.random.default_rng(7).uniform(size=(4, 3))
    text = scores_to_csv(y, tmp_path / "cas.csv")
    assert text.splitlines()[0] == "t,class_0,class_1,class_2"
    np.testing.assert_allclose(scores_from_csv(tmp_path / "cas.csv"), y, atol=5e-9)
