import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tinytrack import tensor as T
from tinytrack.attention import (AttentionConfig, AttentionWeights, attention_logits,
                                 multi_head_attention, read_attention_map, record_attention,
                                 write_attention_map)
from tinytrack.tensor import DimensionError, Tensor


def make_weights(d_model, n_heads, seed=0, identity=False):
    w = AttentionWeights(AttentionConfig(d_model, n_heads), np.random.default_rng(seed))
    if identity:
        for lin in (w.wq, w.wk, w.wv, w.wo):
            lin.weight.data = np.eye(d_model, dtype=lin.weight.dtype)
    return w


def loop_oracle(q, k, v, w, bias=None):
    """Per-head loops over numpy arrays; independent of the library's reshapes."""
    cfg = w.cfg
    d = cfg.d_head
    wq, bq = w.wq.weight.data, w.wq.bias.data
    wk, bk = w.wk.weight.data, w.wk.bias.data
    wv, bv = w.wv.weight.data, w.wv.bias.data
    Q, K, V = q @ wq + bq, k @ wk + bk, v @ wv + bv
    heads = []
    for h in range(cfg.n_heads):
        sl = slice(h * d, (h + 1) * d)
        scale = 1 / math.sqrt(2 * d) if bias is not None else 1 / math.sqrt(d)
        out = np.zeros((len(q), d))
        for i in range(len(q)):
            logits = np.array([scale * np.dot(Q[i, sl], K[j, sl]) for j in range(len(k))])
            if bias is not None:
                logits = logits + bias[h, i]
            e = np.exp(logits - logits.max())
            a = e / e.sum()
            out[i] = sum(a[j] * V[j, sl] for j in range(len(k)))
        heads.append(out)
    return np.concatenate(heads, axis=1) @ w.wo.weight.data + w.wo.bias.data


def test_config_divisibility():
    assert AttentionConfig(8, 2).d_head == 4
    with pytest.raises(ValueError):
        AttentionConfig(10, 3)


def test_single_token_returns_value():
    w = make_weights(1, 1, identity=True)
    out = multi_head_attention(Tensor([[0.3]]), Tensor([[-2.0]]), Tensor([[5.0]]), w)
    np.testing.assert_allclose(out.data, [[5.0]], rtol=1e-6)


def test_identical_keys_return_that_value():
    rng = np.random.default_rng(0)
    w = make_weights(4, 2, identity=True)
    kv = np.tile(rng.normal(size=(1, 4)), (2, 1))
    for _ in range(3):
        q = Tensor(rng.normal(size=(3, 4)))
        out = multi_head_attention(q, Tensor(kv), Tensor(kv), w)
        np.testing.assert_allclose(out.data, np.tile(kv[:1], (3, 1)), rtol=1e-5, atol=1e-6)


@pytest.mark.parametrize("with_bias", [False, True])
def test_matches_loop_oracle(with_bias):
    rng = np.random.default_rng(1)
    with T.default_dtype(np.float64):
        w = make_weights(6, 2, seed=4)
        q, k, v = rng.normal(size=(3, 6)), rng.normal(size=(4, 6)), rng.normal(size=(4, 6))
        bias = rng.normal(size=(2, 3, 4)) if with_bias else None
        got = multi_head_attention(Tensor(q), Tensor(k), Tensor(v), w,
                                   Tensor(bias) if with_bias else None).data
    np.testing.assert_allclose(got, loop_oracle(q, k, v, w, bias), atol=1e-5)


def test_logits_orthogonal_and_unit_cases():
    w = make_weights(2, 1, identity=True)
    for lin in (w.wq, w.wk):
        lin.bias.data[:] = 0
    out = attention_logits(Tensor([[1.0, 0.0]]), Tensor([[0.0, 1.0]]), w, 1.0)
    assert out.data.reshape(-1)[0] == 0.0
    w1 = make_weights(1, 1, identity=True)
    out = attention_logits(Tensor([[1.0]]), Tensor([[1.0]]), w1, 1.0 / math.sqrt(1))
    assert out.data.reshape(-1)[0] == pytest.approx(1.0)


def test_logits_match_dot_product_loop():
    rng = np.random.default_rng(2)
    with T.default_dtype(np.float64):
        w = make_weights(4, 2, seed=1)
        q, k = rng.normal(size=(3, 4)), rng.normal(size=(5, 4))
        got = attention_logits(Tensor(q), Tensor(k), w, 0.5).data[0]
    Q = q @ w.wq.weight.data + w.wq.bias.data
    K = k @ w.wk.weight.data + w.wk.bias.data
    for h in range(2):
        for i in range(3):
            for j in range(5):
                ref = 0.5 * np.dot(Q[i, 2 * h:2 * h + 2], K[j, 2 * h:2 * h + 2])
                assert got[h, i, j] == pytest.approx(ref, abs=1e-12)


def test_bias_shape_and_length_errors():
    w = make_weights(4, 2)
    x = Tensor(np.ones((3, 4)))
    with pytest.raises(DimensionError):
        multi_head_attention(x, x, x, w, Tensor(np.zeros((2, 3, 4))))
    with pytest.raises(DimensionError):
        multi_head_attention(x, x, Tensor(np.ones((2, 4))), w)
    with pytest.raises(DimensionError):
        multi_head_attention(Tensor(np.ones((3, 5))), x, x, w)


def _self_attention_perm(seed, with_bias):
    rng = np.random.default_rng(seed)
    with T.default_dtype(np.float64):
        w = make_weights(8, 2, seed=seed)
        x = rng.normal(size=(6, 8))
        perm = rng.permutation(6)
        bias = Tensor(rng.normal(size=(2, 6, 6))) if with_bias else None
        out = multi_head_attention(Tensor(x), Tensor(x), Tensor(x), w, bias).data
        xp = x[perm]
        out_p = multi_head_attention(Tensor(xp), Tensor(xp), Tensor(xp), w, bias).data
    inv = np.argsort(perm)
    return out, out_p[inv]


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000))
def test_permutation_equivariance_without_bias(seed):
    out, back = _self_attention_perm(seed, with_bias=False)
    np.testing.assert_allclose(back, out, atol=1e-6)


def test_bias_breaks_permutation_symmetry():
    out, back = _self_attention_perm(3, with_bias=True)
    assert np.max(np.abs(back - out)) > 1e-3


def test_rows_are_stochastic_and_recorded():
    rng = np.random.default_rng(0)
    w = make_weights(4, 2)
    with record_attention() as maps:
        multi_head_attention(Tensor(rng.normal(size=(2, 3, 4))), Tensor(rng.normal(size=(2, 5, 4))),
                             Tensor(rng.normal(size=(2, 5, 4))), w)
    assert maps[0].shape == (2, 2, 3, 5)
    np.testing.assert_allclose(maps[0].sum(axis=-1), 1.0, atol=1e-6)


def test_one_head_equals_single_head_formula():
    rng = np.random.default_rng(5)
    with T.default_dtype(np.float64):
        w = make_weights(4, 1, seed=2)
        x = rng.normal(size=(3, 4))
        got = multi_head_attention(Tensor(x), Tensor(x), Tensor(x), w).data
    Q = x @ w.wq.weight.data + w.wq.bias.data
    K = x @ w.wk.weight.data + w.wk.bias.data
    V = x @ w.wv.weight.data + w.wv.bias.data
    logits = Q @ K.T / 2.0
    a = np.exp(logits - logits.max(axis=1, keepdims=True))
    a /= a.sum(axis=1, keepdims=True)
    ref = (a @ V) @ w.wo.weight.data + w.wo.bias.data
    np.testing.assert_allclose(got, ref, atol=1e-12)


def test_attention_map_file_round_trip(tmp_path):
    arr = np.random.default_rng(0).random((2, 3, 5)).astype(np.float32)
    write_attention_map(tmp_path / "a.ttam", arr)
    back = read_attention_map(tmp_path / "a.ttam")
    assert back.dtype == np.float32
    np.testing.assert_array_equal(back, arr)
    with pytest.raises(ValueError):
        (tmp_path / "b.ttam").write_bytes(b"nope")
        read_attention_map(tmp_path / "b.ttam")
