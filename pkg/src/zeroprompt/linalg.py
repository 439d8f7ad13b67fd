"""Small deterministic dense kernels used by the streaming encoder.

Every reduction here runs as an explicit sequential loop over the reduced
axis, vectorised over the other axis. The result for a given output element
therefore depends only on that element's own inputs and never on how many
other rows happen to be in the matrix. That property is what lets the
encoder promise bit-identical real-frame outputs with and without appended
zero-prompt rows.

Matrices are plain ``numpy.ndarray`` objects of dtype float32 and rank 2.
Attention masks are boolean arrays of shape ``(n_query, n_key)``.
"""
from __future__ import annotations

import numpy as np

DTYPE = np.float32


def as_matrix(x, name: str = "matrix") -> np.ndarray:
    """Return ``x`` as a C-contiguous float32 matrix, validating rank and finiteness."""
    m = np.ascontiguousarray(x, dtype=DTYPE)
    if m.ndim == 1:
        m = m.reshape(1, -1)
    if m.ndim != 2:
        raise ValueError(f"{name} must be 2-D, got shape {m.shape}")
    if not np.all(np.isfinite(m)):
        raise ValueError(f"{name} contains non-finite entries")
    return m


def matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Matrix product with a fixed k-loop accumulation order.

    Each output element is ``((a[i,0]*b[0,j] + a[i,1]*b[1,j]) + ...)`` summed
    left to right in float32, so repeated runs are bit-identical and a row's
    result is independent of the other rows of ``a``.
    """
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ValueError(f"matmul shape mismatch: {a.shape} x {b.shape}")
    a = a.astype(DTYPE, copy=False)
    b = b.astype(DTYPE, copy=False)
    out = np.zeros((a.shape[0], b.shape[1]), dtype=DTYPE)
    for k in range(a.shape[1]):
        out += a[:, k : k + 1] * b[k]
    return out


def _row_sum(x: np.ndarray) -> np.ndarray:
    # sequential over columns; shape (rows, 1)
    acc = np.zeros((x.shape[0], 1), dtype=DTYPE)
    for j in range(x.shape[1]):
        acc += x[:, j : j + 1]
    return acc


def masked_attention(
    q: np.ndarray, k: np.ndarray, v: np.ndarray, mask: np.ndarray, scale: float
) -> np.ndarray:
    """Scaled dot-product attention restricted to the allowed keys of each query.

    Disallowed keys are left out of the max, the normaliser and the weighted
    value sum entirely, so their content (keys or values) cannot influence the
    output in any bit.
    """
    if q.shape[1] != k.shape[1]:
        raise ValueError(f"query/key width mismatch: {q.shape} vs {k.shape}")
    if k.shape[0] != v.shape[0]:
        raise ValueError(f"key/value length mismatch: {k.shape} vs {v.shape}")
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != (q.shape[0], k.shape[0]):
        raise ValueError(f"mask shape {mask.shape} does not match ({q.shape[0]}, {k.shape[0]})")
    empty = ~mask.any(axis=1)
    if empty.any():
        raise ValueError(f"query rows {np.flatnonzero(empty).tolist()} have no allowed key")

    scores = matmul(q, np.ascontiguousarray(k.T)) * DTYPE(scale)
    row_max = np.where(mask, scores, -np.inf).max(axis=1, keepdims=True).astype(DTYPE)
    weights = np.where(mask, np.exp(np.where(mask, scores - row_max, 0)), 0).astype(DTYPE)

    denom = np.zeros((q.shape[0], 1), dtype=DTYPE)
    out = np.zeros((q.shape[0], v.shape[1]), dtype=DTYPE)
    for j in range(k.shape[0]):
        col = mask[:, j]
        if not col.any():
            continue
        if col.all():
            denom += weights[:, j : j + 1]
            out += weights[:, j : j + 1] * v[j]
        else:
            rows = np.flatnonzero(col)
            denom[rows] += weights[rows, j : j + 1]
            out[rows] += weights[rows, j : j + 1] * v[j]
    return out / denom


def layer_norm(x: np.ndarray, gamma: np.ndarray, beta: np.ndarray, eps: float = 1e-5) -> np.ndarray:
    if eps <= 0:
        raise ValueError("eps must be positive")
    gamma = np.asarray(gamma, dtype=DTYPE).reshape(-1)
    beta = np.asarray(beta, dtype=DTYPE).reshape(-1)
    if gamma.shape[0] != x.shape[1] or beta.shape[0] != x.shape[1]:
        raise ValueError(
            f"layer_norm parameter length {gamma.shape[0]}/{beta.shape[0]} != width {x.shape[1]}"
        )
    n = DTYPE(x.shape[1])
    mean = _row_sum(x) / n
    centered = x - mean
    var = _row_sum(centered * centered) / n
    return centered / np.sqrt(var + DTYPE(eps)) * gamma + beta


def log_softmax(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=DTYPE)
    shifted = x - x.max(axis=1, keepdims=True)
    return shifted - np.log(_row_sum(np.exp(shifted)))
