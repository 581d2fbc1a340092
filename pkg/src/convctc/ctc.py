"""CTC loss, its gradient, and greedy / prefix beam-search decoding.

The blank symbol is the last column of every log-probability matrix.
All dynamic programming runs in log space.
"""

from __future__ import annotations

from typing import NamedTuple

import numpy as np

from .exceptions import CTCInfeasibleError

NEG_INF = -np.inf


class DecodeResult(NamedTuple):
    ids: tuple
    score: float


def log_softmax(logits: np.ndarray) -> np.ndarray:
    """Row-wise log-softmax over the last axis, stabilized by max subtraction."""
    logits = np.asarray(logits)
    shifted = logits - logits.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def extend_labels(labels, blank: int) -> np.ndarray:
    """Interleave blanks: (blank, l1, blank, l2, ..., blank)."""
    ext = np.full(2 * len(labels) + 1, blank, dtype=np.int64)
    ext[1::2] = labels
    return ext


def min_frames(labels) -> int:
    labels = np.asarray(labels)
    repeats = int(np.sum(labels[1:] == labels[:-1])) if labels.size > 1 else 0
    return labels.size + repeats


def _check_labels(labels, n_frames, blank):
    labels = np.asarray(labels, dtype=np.int64).reshape(-1)
    if labels.size and (labels.min() < 0 or labels.max() >= blank):
        raise ValueError(f"label ids must lie in [0, {blank - 1}]")
    need = min_frames(labels)
    if n_frames < need:
        raise CTCInfeasibleError(
            f"{labels.size} labels need at least {need} frames, got {n_frames}"
        )
    return labels


def _logsumexp3(a, b, c):
    m = np.maximum(np.maximum(a, b), c)
    safe = np.where(np.isfinite(m), m, 0.0)
    with np.errstate(divide="ignore"):
        out = safe + np.log(np.exp(a - safe) + np.exp(b - safe) + np.exp(c - safe))
    return np.where(np.isfinite(m), out, NEG_INF)


def _forward_backward(log_probs, ext):
    n_frames = log_probs.shape[0]
    n_states = ext.size
    emit = log_probs[:, ext]  # (T, S)
    # a state may skip its predecessor only when it is a label differing
    # from the label two positions back
    skip = np.zeros(n_states, dtype=bool)
    skip[2:] = (ext[2:] != ext[:-2]) & (ext[2:] != ext[-1])
    neg = np.full(n_states, NEG_INF)

    alpha = np.full((n_frames, n_states), NEG_INF)
    alpha[0, :2] = emit[0, :2]
    for t in range(1, n_frames):
        prev = alpha[t - 1]
        one = np.concatenate(([NEG_INF], prev))[:n_states]
        two = np.where(skip, np.concatenate(([NEG_INF, NEG_INF], prev))[:n_states], neg)
        alpha[t] = _logsumexp3(prev, one, two) + emit[t]

    # beta[t, s]: log-prob of frames t+1.. given state s at frame t
    beta = np.full((n_frames, n_states), NEG_INF)
    beta[-1, -2:] = 0.0
    skip_next = np.zeros(n_states, dtype=bool)
    skip_next[:-2] = skip[2:]
    for t in range(n_frames - 2, -1, -1):
        nxt = beta[t + 1] + emit[t + 1]
        one = np.concatenate((nxt, [NEG_INF]))[1:]
        two = np.where(skip_next, np.concatenate((nxt, [NEG_INF, NEG_INF]))[2:], neg)
        beta[t] = _logsumexp3(nxt, one, two)
    return alpha, beta


def ctc_loss(log_probs: np.ndarray, labels, blank: int | None = None):
    """Negative log-likelihood of ``labels`` and its gradient w.r.t. the logits.

    ``log_probs`` (T x (|V|+1)) must be the log-softmax of the logits; the
    returned gradient is taken with respect to those logits.
    """
    log_probs = np.asarray(log_probs, dtype=np.float64)
    n_frames, n_classes = log_probs.shape
    blank = n_classes - 1 if blank is None else blank
    labels = _check_labels(labels, n_frames, blank)
    ext = extend_labels(labels, blank)
    if n_frames == 0:
        return 0.0, np.zeros_like(log_probs)
    alpha, beta = _forward_backward(log_probs, ext)
    total = np.logaddexp(alpha[-1, -1], alpha[-1, -2]) if ext.size > 1 else alpha[-1, -1]
    if not np.isfinite(total):
        raise CTCInfeasibleError("labels have zero probability under log_probs")

    occupancy = np.exp(alpha + beta - total)  # (T, S)
    posterior = np.zeros_like(log_probs)
    for s, k in enumerate(ext):
        posterior[:, k] += occupancy[:, s]
    grad = np.exp(log_probs) - posterior
    return float(-total), grad


def _log_marginal(log_probs, labels, blank):
    """Exact log P(labels) by the forward recursion alone."""
    ext = extend_labels(labels, blank)
    alpha = np.full(ext.size, NEG_INF)
    alpha[0] = log_probs[0, blank]
    if ext.size > 1:
        alpha[1] = log_probs[0, ext[1]]
    skip = np.zeros(ext.size, dtype=bool)
    skip[2:] = (ext[2:] != blank) & (ext[2:] != ext[:-2])
    for frame in log_probs[1:]:
        one = np.concatenate(([NEG_INF], alpha))[: ext.size]
        two = np.where(skip, np.concatenate(([NEG_INF, NEG_INF], alpha))[: ext.size], NEG_INF)
        alpha = _logsumexp3(alpha, one, two) + frame[ext]
    return float(np.logaddexp(alpha[-1], alpha[-2]) if ext.size > 1 else alpha[-1])


def greedy_decode(log_probs: np.ndarray, blank: int | None = None) -> DecodeResult:
    """Per-frame argmax, merge repeats, drop blanks."""
    log_probs = np.asarray(log_probs)
    blank = log_probs.shape[1] - 1 if blank is None else blank
    best = np.argmax(log_probs, axis=1)
    score = float(log_probs[np.arange(best.size), best].sum())
    ids = []
    prev = None
    for k in best:
        if k != prev and k != blank:
            ids.append(int(k))
        prev = k
    return DecodeResult(tuple(ids), score)


def beam_decode(log_probs: np.ndarray, beam_width: int | None = 8, blank: int | None = None):
    """Prefix beam search over CTC marginals (no language model).

    Each prefix carries the log-probability of paths ending in blank and
    ending in its last label. ``beam_width=None`` disables pruning. Pruning
    drops path mass, so the prefixes left after the last frame are rescored
    with their exact marginal log-probability; the best of them is returned
    with that score.
    """
    if beam_width is not None and beam_width < 1:
        raise ValueError("beam_width must be >= 1")
    log_probs = np.asarray(log_probs, dtype=np.float64)
    n_classes = log_probs.shape[1]
    blank = n_classes - 1 if blank is None else blank
    labels = [k for k in range(n_classes) if k != blank]
    beams = {(): (0.0, NEG_INF)}
    for frame in log_probs:
        nxt = {}

        def add(prefix, pb=NEG_INF, pnb=NEG_INF):
            ob, onb = nxt.get(prefix, (NEG_INF, NEG_INF))
            nxt[prefix] = (np.logaddexp(ob, pb), np.logaddexp(onb, pnb))

        for prefix, (pb, pnb) in beams.items():
            total = np.logaddexp(pb, pnb)
            add(prefix, pb=total + frame[blank])
            last = prefix[-1] if prefix else None
            for k in labels:
                p = frame[k]
                if k == last:
                    add(prefix, pnb=pnb + p)
                    add(prefix + (k,), pnb=pb + p)
                else:
                    add(prefix + (k,), pnb=total + p)
        ranked = sorted(nxt.items(), key=lambda kv: (-np.logaddexp(*kv[1]), kv[0]))
        beams = dict(ranked if beam_width is None else ranked[:beam_width])
    if log_probs.shape[0] == 0:
        return DecodeResult((), 0.0)
    scored = [(_log_marginal(log_probs, prefix, blank), prefix) for prefix in beams]
    score, prefix = min(scored, key=lambda sp: (-sp[0], sp[1]))
    return DecodeResult(tuple(int(k) for k in prefix), score)
