"""Word error rate with its substitution / deletion / insertion breakdown."""

from __future__ import annotations

import string
from dataclasses import dataclass

import numpy as np

_PUNCT = string.punctuation


@dataclass(frozen=True)
class WerBreakdown:
    S: int
    D: int
    I: int  # noqa: E741
    C: int

    @property
    def N(self) -> int:
        return self.S + self.D + self.C

    @property
    def errors(self) -> int:
        return self.S + self.D + self.I

    def __add__(self, other):
        return WerBreakdown(self.S + other.S, self.D + other.D, self.I + other.I, self.C + other.C)


def tokenize(text: str) -> list:
    """Lowercase, split on whitespace, strip punctuation from token edges."""
    tokens = (tok.strip(_PUNCT) for tok in text.lower().split())
    return [tok for tok in tokens if tok]


def _tokens(seq):
    return tokenize(seq) if isinstance(seq, str) else list(seq)


def edit_ops(reference, hypothesis) -> WerBreakdown:
    """Levenshtein alignment with unit costs.

    Strings are tokenized into words; other sequences are compared element
    by element. When several alignments are optimal the backtrace prefers
    substitution, then insertion, then deletion.
    """
    ref, hyp = _tokens(reference), _tokens(hypothesis)
    n, m = len(ref), len(hyp)
    cost = np.zeros((n + 1, m + 1), dtype=np.int64)
    cost[:, 0] = np.arange(n + 1)
    cost[0, :] = np.arange(m + 1)
    for i in range(1, n + 1):
        for j in range(1, m + 1):
            sub = cost[i - 1, j - 1] + (ref[i - 1] != hyp[j - 1])
            cost[i, j] = min(sub, cost[i, j - 1] + 1, cost[i - 1, j] + 1)
    s = d = ins = c = 0
    i, j = n, m
    while i > 0 or j > 0:
        if i > 0 and j > 0 and cost[i, j] == cost[i - 1, j - 1] + (ref[i - 1] != hyp[j - 1]):
            if ref[i - 1] == hyp[j - 1]:
                c += 1
            else:
                s += 1
            i, j = i - 1, j - 1
        elif j > 0 and cost[i, j] == cost[i, j - 1] + 1:
            ins += 1
            j -= 1
        else:
            d += 1
            i -= 1
    return WerBreakdown(s, d, ins, c)


def wer(breakdown: WerBreakdown) -> float:
    if breakdown.N == 0:
        raise ValueError("WER is undefined for an empty reference (N = 0)")
    return breakdown.errors / breakdown.N


def corpus_wer(pairs) -> float:
    """Pooled WER: total errors over total reference words."""
    total = WerBreakdown(0, 0, 0, 0)
    for reference, hypothesis in pairs:
        total = total + edit_ops(reference, hypothesis)
    if total.N == 0:
        raise ValueError("corpus WER needs at least one non-empty reference")
    return wer(total)
