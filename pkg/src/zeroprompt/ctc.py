"""CTC utilities: streaming greedy collapse, loss, gradient and edit distance.

Token id 0 is the blank everywhere in this package.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

BLANK = 0


@dataclass(frozen=True)
class CollapseState:
    """Frame-level argmax seen last, carried across chunk boundaries."""

    last: Optional[int] = None


def greedy_collapse(frame_argmax: Sequence[int], state: CollapseState = CollapseState()):
    """Apply the CTC rule (merge repeats, then drop blanks) to a run of frame ids.

    Repeats are judged against ``state.last`` so that decoding chunk by chunk
    yields exactly the whole-sequence result.
    """
    out = []
    prev = state.last
    for tok in frame_argmax:
        tok = int(tok)
        if tok != prev and tok != BLANK:
            out.append(tok)
        prev = tok
    return out, CollapseState(prev)


def _extend(target: Sequence[int]) -> np.ndarray:
    ext = np.zeros(2 * len(target) + 1, dtype=np.int64)
    ext[1::2] = target
    return ext


def is_feasible(n_frames: int, target: Sequence[int]) -> bool:
    repeats = sum(1 for a, b in zip(target, target[1:]) if a == b)
    return n_frames >= len(target) + repeats


def _alpha_beta(lp: np.ndarray, ext: np.ndarray):
    T, S = lp.shape[0], ext.shape[0]
    emit = lp[:, ext]  # T x S
    skip = np.zeros(S, dtype=bool)
    skip[2:] = (ext[2:] != BLANK) & (ext[2:] != ext[:-2])

    alpha = np.full((T, S), -np.inf)
    alpha[0, 0] = emit[0, 0]
    if S > 1:
        alpha[0, 1] = emit[0, 1]
    for t in range(1, T):
        prev = alpha[t - 1]
        acc = prev.copy()
        acc[1:] = np.logaddexp(acc[1:], prev[:-1])
        acc[2:] = np.where(skip[2:], np.logaddexp(acc[2:], prev[:-2]), acc[2:])
        alpha[t] = acc + emit[t]

    beta = np.full((T, S), -np.inf)
    beta[T - 1, S - 1] = emit[T - 1, S - 1]
    if S > 1:
        beta[T - 1, S - 2] = emit[T - 1, S - 2]
    skip_fwd = np.zeros(S, dtype=bool)
    skip_fwd[:-2] = skip[2:]
    for t in range(T - 2, -1, -1):
        nxt = beta[t + 1]
        acc = nxt.copy()
        acc[:-1] = np.logaddexp(acc[:-1], nxt[1:])
        acc[:-2] = np.where(skip_fwd[:-2], np.logaddexp(acc[:-2], nxt[2:]), acc[:-2])
        beta[t] = acc + emit[t]
    return alpha, beta


def ctc_loss(logprobs: np.ndarray, target: Sequence[int]) -> float:
    """Negative log-likelihood of ``target`` under the frame log-distributions.

    Returns ``math.inf`` when no alignment of ``target`` fits in the frames.
    """
    lp = np.asarray(logprobs, dtype=np.float64)
    if lp.ndim != 2 or lp.shape[0] < 1:
        raise ValueError(f"logprobs must be T x V with T >= 1, got {lp.shape}")
    target = list(target)
    if not is_feasible(lp.shape[0], target):
        return float("inf")
    ext = _extend(target)
    alpha, _ = _alpha_beta(lp, ext)
    tail = alpha[-1, -2:] if len(ext) > 1 else alpha[-1, -1:]
    return float(-np.logaddexp.reduce(tail))


def ctc_loss_and_grad(logprobs: np.ndarray, target: Sequence[int]):
    """Loss and its gradient with respect to the logits feeding the log-softmax.

    Returns ``(loss, grad, feasible)``; an infeasible target gives
    ``(inf, zeros, False)``.
    """
    lp = np.asarray(logprobs, dtype=np.float64)
    T, V = lp.shape
    target = list(target)
    if not is_feasible(T, target):
        return float("inf"), np.zeros((T, V)), False
    ext = _extend(target)
    alpha, beta = _alpha_beta(lp, ext)
    emit = lp[:, ext]
    log_total = np.logaddexp.reduce(alpha[-1, -2:] if len(ext) > 1 else alpha[-1, -1:])
    # alpha*beta double-counts the emission at t
    post = np.exp(alpha + beta - emit - log_total)
    occupancy = np.zeros((T, V))
    for s, tok in enumerate(ext):
        occupancy[:, tok] += post[:, s]
    grad = np.exp(lp) - occupancy
    return float(-log_total), grad, True


def ctc_grad(logprobs: np.ndarray, target: Sequence[int]):
    """Gradient of :func:`ctc_loss` w.r.t. the logits; returns ``(grad, feasible)``."""
    _, grad, ok = ctc_loss_and_grad(logprobs, target)
    return grad, ok


def edit_distance(hyp: Sequence[int], ref: Sequence[int]):
    """Unit-cost Levenshtein alignment counts ``(substitutions, deletions, insertions)``.

    Among minimum-cost alignments the one with the most substitutions is
    chosen, which fixes the split between the three counts uniquely and makes
    the result symmetric: swapping ``hyp`` and ``ref`` exchanges D and I.
    """
    hyp, ref = list(hyp), list(ref)
    n, m = len(ref), len(hyp)
    # cost[i][j] = (edits, gaps, S, D, I) for ref[:i] vs hyp[:j]
    cost = [[None] * (m + 1) for _ in range(n + 1)]
    cost[0][0] = (0, 0, 0, 0, 0)
    for i in range(1, n + 1):
        cost[i][0] = (i, i, 0, i, 0)
    for j in range(1, m + 1):
        cost[0][j] = (j, j, 0, 0, j)
    for i in range(1, n + 1):
        for j in range(1, m + 1):
            e, g, s, d, ins = cost[i - 1][j - 1]
            diag = (e, g, s, d, ins) if ref[i - 1] == hyp[j - 1] else (e + 1, g, s + 1, d, ins)
            e, g, s, d, ins = cost[i - 1][j]
            dele = (e + 1, g + 1, s, d + 1, ins)
            e, g, s, d, ins = cost[i][j - 1]
            inse = (e + 1, g + 1, s, d, ins + 1)
            cost[i][j] = min(diag, inse, dele, key=lambda c: (c[0], c[1]))
    _, _, s, d, ins = cost[n][m]
    return s, d, ins
