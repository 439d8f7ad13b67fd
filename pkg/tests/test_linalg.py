import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from zeroprompt.linalg import as_matrix, layer_norm, log_softmax, masked_attention, matmul


def naive_attention(q, k, v, mask, scale):
    q, k, v = (np.asarray(a, dtype=np.float64) for a in (q, k, v))
    s = q @ k.T * scale
    s = np.where(mask, s, -np.inf)
    p = np.exp(s - s.max(axis=1, keepdims=True))
    p /= p.sum(axis=1, keepdims=True)
    return p @ v


def test_matmul_matches_numpy(rng):
    a = rng.normal(size=(7, 5)).astype(np.float32)
    b = rng.normal(size=(5, 3)).astype(np.float32)
    np.testing.assert_allclose(matmul(a, b), a.astype(np.float64) @ b, rtol=1e-5, atol=1e-5)


def test_matmul_rows_independent_bitwise(rng):
    a = rng.normal(size=(9, 6)).astype(np.float32)
    b = rng.normal(size=(6, 4)).astype(np.float32)
    full = matmul(a, b)
    for lo, hi in [(0, 3), (2, 9), (4, 5)]:
        assert np.array_equal(matmul(a[lo:hi], b), full[lo:hi])


def test_matmul_shape_error_names_shapes():
    with pytest.raises(ValueError, match=r"\(2, 3\) x \(4, 1\)"):
        matmul(np.zeros((2, 3)), np.zeros((4, 1)))


@settings(max_examples=60, deadline=None)
@given(st.integers(1, 5), st.integers(1, 7), st.integers(1, 4), st.integers(0, 2**31))
def test_masked_attention_matches_softmax_oracle(nq, nk, d, seed):
    r = np.random.default_rng(seed)
    q, k, v = (r.normal(size=s).astype(np.float32) for s in [(nq, d), (nk, d), (nk, d)])
    mask = r.random((nq, nk)) < 0.6
    mask[np.arange(nq), r.integers(0, nk, nq)] = True
    out = masked_attention(q, k, v, mask, 0.7)
    np.testing.assert_allclose(out, naive_attention(q, k, v, mask, 0.7), rtol=1e-4, atol=1e-5)


def test_masked_keys_have_no_influence(rng):
    q = rng.normal(size=(3, 4)).astype(np.float32)
    k = rng.normal(size=(5, 4)).astype(np.float32)
    v = rng.normal(size=(5, 4)).astype(np.float32)
    mask = np.ones((3, 5), dtype=bool)
    mask[:, 3:] = False
    base = masked_attention(q, k, v, mask, 0.5)
    k2, v2 = k.copy(), v.copy()
    k2[3:] = 1e4
    v2[3:] = -1e4
    assert np.array_equal(masked_attention(q, k2, v2, mask, 0.5), base)
    # dropping the masked keys entirely changes nothing either
    assert np.array_equal(masked_attention(q, k[:3], v[:3], mask[:, :3], 0.5), base)


def test_fully_masked_row_rejected(rng):
    q = k = v = rng.normal(size=(2, 2)).astype(np.float32)
    mask = np.array([[True, False], [False, False]])
    with pytest.raises(ValueError, match=r"\[1\]"):
        masked_attention(q, k, v, mask, 1.0)


def test_attention_shape_errors(rng):
    q = rng.normal(size=(2, 3)).astype(np.float32)
    with pytest.raises(ValueError):
        masked_attention(q, q[:, :2], q, np.ones((2, 2), bool), 1.0)
    with pytest.raises(ValueError):
        masked_attention(q, q, q, np.ones((2, 3), bool), 1.0)


def test_layer_norm_matches_formula(rng):
    x = rng.normal(size=(4, 6)).astype(np.float32)
    g = rng.normal(size=6).astype(np.float32)
    b = rng.normal(size=6).astype(np.float32)
    x64 = x.astype(np.float64)
    ref = (x64 - x64.mean(1, keepdims=True)) / np.sqrt(x64.var(1, keepdims=True) + 1e-5) * g + b
    np.testing.assert_allclose(layer_norm(x, g, b), ref, rtol=1e-4, atol=1e-5)
    with pytest.raises(ValueError):
        layer_norm(x, g[:5], b)
    with pytest.raises(ValueError):
        layer_norm(x, g, b, eps=0)


def test_log_softmax_normalised(rng):
    x = (rng.normal(size=(5, 7)) * 30).astype(np.float32)
    lp = log_softmax(x)
    np.testing.assert_allclose(np.exp(lp.astype(np.float64)).sum(1), 1.0, atol=1e-5)
    assert np.all(lp <= 0)


def test_as_matrix_validation():
    assert as_matrix([1, 2, 3]).shape == (1, 3)
    with pytest.raises(ValueError, match="non-finite"):
        as_matrix([[np.nan]])
    with pytest.raises(ValueError, match="2-D"):
        as_matrix(np.zeros((2, 2, 2)))
