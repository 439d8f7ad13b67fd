import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from zeroprompt.ctc import (
    BLANK,
    CollapseState,
    ctc_grad,
    ctc_loss,
    ctc_loss_and_grad,
    edit_distance,
    greedy_collapse,
    is_feasible,
)


def collapse_whole(frames):
    out, prev = [], None
    for f in frames:
        if f != prev and f != BLANK:
            out.append(f)
        prev = f
    return out


def brute_force_loss(lp, target):
    T, V = lp.shape
    total = -math.inf
    for path in itertools.product(range(V), repeat=T):
        if collapse_whole(path) == list(target):
            total = np.logaddexp(total, sum(lp[t, s] for t, s in enumerate(path)))
    return -total


def random_logprobs(rng, T, V):
    x = rng.normal(size=(T, V)) * 2
    return x - np.log(np.exp(x).sum(1, keepdims=True))


def test_collapse_examples():
    assert greedy_collapse([1, 1, 0, 1, 2, 2, 0])[0] == [1, 1, 2]
    toks, state = greedy_collapse([3, 3], CollapseState(3))
    assert toks == [] and state.last == 3
    assert greedy_collapse([], CollapseState(2)) == ([], CollapseState(2))


@settings(max_examples=200, deadline=None)
@given(st.lists(st.integers(0, 3), max_size=30), st.data())
def test_chunked_collapse_equals_whole(frames, data):
    cuts = sorted(data.draw(st.lists(st.integers(0, len(frames)), max_size=5)))
    state, out = CollapseState(), []
    for a, b in zip([0] + cuts, cuts + [len(frames)]):
        toks, state = greedy_collapse(frames[a:b], state)
        out += toks
    assert out == collapse_whole(frames)


def test_feasibility():
    assert is_feasible(3, [1, 1])
    assert not is_feasible(2, [1, 1])
    assert is_feasible(2, [1, 2])
    assert is_feasible(1, [])


def test_loss_small_cases_against_enumeration(rng):
    for T, target in [(1, []), (1, [1]), (3, [1, 1]), (4, [2, 1]), (4, [])]:
        lp = random_logprobs(rng, T, 3)
        assert abs(ctc_loss(lp, target) - brute_force_loss(lp, target)) < 1e-10


def test_infeasible_loss_is_infinite(rng):
    lp = random_logprobs(rng, 2, 3)
    assert ctc_loss(lp, [1, 1]) == math.inf
    loss, grad, ok = ctc_loss_and_grad(lp, [1, 1])
    assert loss == math.inf and not ok and not grad.any()


def test_loss_input_validation():
    with pytest.raises(ValueError):
        ctc_loss(np.zeros((0, 3)), [])


def test_grad_matches_finite_differences(rng):
    x = rng.normal(size=(6, 4))

    def loss_of(logits):
        lp = logits - np.log(np.exp(logits).sum(1, keepdims=True))
        return ctc_loss(lp, [1, 3, 3])

    lp = x - np.log(np.exp(x).sum(1, keepdims=True))
    grad, ok = ctc_grad(lp, [1, 3, 3])
    assert ok
    eps = 1e-6
    num = np.zeros_like(x)
    for idx in np.ndindex(*x.shape):
        d = np.zeros_like(x)
        d[idx] = eps
        num[idx] = (loss_of(x + d) - loss_of(x - d)) / (2 * eps)
    np.testing.assert_allclose(grad, num, rtol=1e-5, atol=1e-7)


def test_grad_rows_sum_to_zero(rng):
    lp = random_logprobs(rng, 8, 5)
    grad, _ = ctc_grad(lp, [2, 4, 1])
    np.testing.assert_allclose(grad.sum(1), 0, atol=1e-12)


def levenshtein(a, b):
    d = np.arange(len(b) + 1)
    for i, x in enumerate(a, 1):
        prev, d[0] = d[0], i
        for j, y in enumerate(b, 1):
            prev, d[j] = d[j], min(d[j] + 1, d[j - 1] + 1, prev + (x != y))
    return int(d[-1])


def test_edit_distance_examples():
    assert edit_distance([1, 2, 3], [1, 2, 3]) == (0, 0, 0)
    assert edit_distance([1, 9, 3], [1, 2, 3]) == (1, 0, 0)
    assert edit_distance([1, 3], [1, 2, 3]) == (0, 1, 0)
    assert edit_distance([1, 2, 2, 3], [1, 2, 3]) == (0, 0, 1)
    assert edit_distance([], [4, 5]) == (0, 2, 0)


@settings(max_examples=200, deadline=None)
@given(st.lists(st.integers(1, 4), max_size=8), st.lists(st.integers(1, 4), max_size=8))
def test_edit_distance_total_and_symmetry(hyp, ref):
    s, d, i = edit_distance(hyp, ref)
    assert s + d + i == levenshtein(hyp, ref)
    assert len(hyp) == len(ref) - d + i
    assert edit_distance(ref, hyp) == (s, i, d)
