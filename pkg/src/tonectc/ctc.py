"""CTC loss, gradients, decoding and a brute-force oracle.

Label index 0 is the blank everywhere. All dynamic programming runs in log
space.
"""

from __future__ import annotations

import itertools
import logging
from collections import defaultdict
from functools import lru_cache
from typing import Sequence

import numpy as np

from .errors import TooLarge

logger = logging.getLogger(__name__)

BLANK = 0
NEG_INF = -np.inf

MAX_BRUTE_FRAMES = 8
MAX_BRUTE_LABELS = 4


def collapse(path: Sequence[int], blank: int = BLANK) -> list[int]:
    """Merge adjacent duplicates, then drop blanks."""
    out = []
    prev = None
    for y in path:
        y = int(y)
        if y != prev and y != blank:
            out.append(y)
        prev = y
    return out


def log_softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def min_frames(ref: Sequence[int]) -> int:
    """Shortest input that can emit ``ref``: one frame per label plus a blank between repeats."""
    ref = np.asarray(ref, dtype=np.int64)
    if len(ref) == 0:
        return 0
    return len(ref) + int(np.sum(ref[1:] == ref[:-1]))


def ctc_loss(logits, ref: Sequence[int], blank: int = BLANK) -> tuple[float, np.ndarray]:
    """Negative log-likelihood of ``ref`` and its gradient w.r.t. ``logits``.

    logits: (n, 1 + |A|) unnormalized frame scores.
    Returns ``(inf, zeros)`` when ``ref`` cannot be aligned to ``n`` frames.
    """
    logits = np.asarray(logits, dtype=np.float64)
    n, V = logits.shape
    ref = np.asarray(ref, dtype=np.int64)
    if n < min_frames(ref) or n == 0:
        logger.debug("impossible alignment: %d frames for %d labels", n, len(ref))
        return np.inf, np.zeros_like(logits)

    logp = log_softmax(logits)
    S = 2 * len(ref) + 1
    ext = np.full(S, blank, dtype=np.int64)
    ext[1::2] = ref
    skip = np.zeros(S, dtype=bool)
    skip[3::2] = ext[3::2] != ext[1:-2:2]
    emit = logp[:, ext]

    alpha = np.full((n, S), NEG_INF)
    alpha[0, :2] = emit[0, :2]
    for t in range(1, n):
        prev = alpha[t - 1]
        a = prev.copy()
        a[1:] = np.logaddexp(a[1:], prev[:-1])
        a[2:] = np.where(skip[2:], np.logaddexp(a[2:], prev[:-2]), a[2:])
        alpha[t] = a + emit[t]

    beta = np.full((n, S), NEG_INF)
    beta[-1, -2:] = emit[-1, -2:]
    for t in range(n - 2, -1, -1):
        nxt = beta[t + 1]
        b = nxt.copy()
        b[:-1] = np.logaddexp(b[:-1], nxt[1:])
        b[:-2] = np.where(skip[2:], np.logaddexp(b[:-2], nxt[2:]), b[:-2])
        beta[t] = b + emit[t]

    loglik = np.logaddexp.reduce(alpha[-1, -2:]) if S > 1 else alpha[-1, -1]
    if not np.isfinite(loglik):
        return np.inf, np.zeros_like(logits)

    # alpha and beta both include the emission at t
    gamma = alpha + beta - emit
    occ = np.full((n, V), NEG_INF)
    for s in range(S):
        k = ext[s]
        occ[:, k] = np.logaddexp(occ[:, k], gamma[:, s])
    grad = np.exp(logp) - np.exp(occ - loglik)
    return float(-loglik), grad


@lru_cache(maxsize=64)
def _path_table(n: int, V: int, blank: int):
    paths = np.array(list(itertools.product(range(V), repeat=n)), dtype=np.int64).reshape(-1, n)
    groups: dict[tuple, list[int]] = defaultdict(list)
    for i, p in enumerate(paths):
        groups[tuple(collapse(p, blank))].append(i)
    return paths, {k: np.array(v) for k, v in groups.items()}


def enumerate_collapsed(n: int, V: int, blank: int = BLANK) -> list[tuple[int, ...]]:
    """Every label sequence reachable from an ``n``-frame path over ``V`` symbols."""
    _check_brute_bounds(n, V)
    return sorted(_path_table(n, V, blank)[1])


def _check_brute_bounds(n, V):
    if n > MAX_BRUTE_FRAMES or V - 1 > MAX_BRUTE_LABELS:
        raise TooLarge(f"enumeration limited to n<={MAX_BRUTE_FRAMES}, |A|<={MAX_BRUTE_LABELS}")


def brute_force_ctc(logits, ref: Sequence[int], blank: int = BLANK) -> float:
    """CTC loss by explicit enumeration of all (1+|A|)^n alignment paths."""
    logits = np.asarray(logits, dtype=np.float64)
    n, V = logits.shape
    _check_brute_bounds(n, V)
    paths, groups = _path_table(n, V, blank)
    idx = groups.get(tuple(int(r) for r in ref))
    if idx is None:
        return np.inf
    logp = log_softmax(logits)
    path_logp = logp[np.arange(n), paths[idx]].sum(axis=1)
    return float(-np.logaddexp.reduce(path_logp))


def greedy_decode(logits, blank: int = BLANK) -> list[int]:
    return collapse(np.asarray(logits).argmax(axis=1), blank)


class BigramLM:
    """Symbol bigram model over tier labels.

    ``log_probs[prev, cur]`` with row 0 as the sentence-start context.
    Column 0 (blank) is never scored.
    """

    def __init__(self, log_probs: np.ndarray):
        self.log_probs = np.asarray(log_probs, dtype=np.float64)

    @classmethod
    def train(cls, sequences, vocab_size: int) -> "BigramLM":
        counts = np.ones((vocab_size, vocab_size))
        counts[:, 0] = 0.0
        for seq in sequences:
            prev = 0
            for cur in seq:
                counts[prev, int(cur)] += 1
                prev = int(cur)
        with np.errstate(divide="ignore"):
            logp = np.log(counts / counts.sum(axis=1, keepdims=True))
        return cls(logp)

    def log_prob(self, prev: int | None, cur: int) -> float:
        return self.log_probs[0 if prev is None else prev, cur]

    def score(self, seq: Sequence[int]) -> float:
        total = 0.0
        prev = None
        for c in seq:
            total += self.log_prob(prev, c)
            prev = c
        return total


def beam_decode(logits, lm: BigramLM | None = None, beam_width: int = 25,
                lm_weight: float = 0.1, blank: int = BLANK) -> list[int]:
    """CTC prefix beam search with shallow fusion of a symbol LM.

    Prefix score is ``log P_ctc(prefix) + lm_weight * log P_lm(prefix)``; the
    LM term is added once per emitted symbol.
    """
    if beam_width < 1:
        raise ValueError("beam_width must be >= 1")
    logp = log_softmax(np.asarray(logits, dtype=np.float64))
    n, V = logp.shape
    labels = [c for c in range(V) if c != blank]
    beams: dict[tuple, tuple[float, float]] = {(): (0.0, NEG_INF)}
    lm_score: dict[tuple, float] = {(): 0.0}

    def rank(item):
        prefix, (pb, pnb) = item
        return (-(np.logaddexp(pb, pnb) + lm_weight * lm_score[prefix]), prefix)

    for t in range(n):
        frame = logp[t]
        nxt: dict[tuple, list[float]] = defaultdict(lambda: [NEG_INF, NEG_INF])
        for prefix, (pb, pnb) in beams.items():
            ptot = np.logaddexp(pb, pnb)
            entry = nxt[prefix]
            entry[0] = np.logaddexp(entry[0], ptot + frame[blank])
            last = prefix[-1] if prefix else None
            if last is not None:
                entry[1] = np.logaddexp(entry[1], pnb + frame[last])
            for c in labels:
                new = prefix + (c,)
                if new not in lm_score:
                    ls = lm_score[prefix] + (lm.log_prob(last, c) if lm is not None else 0.0)
                    if ls == NEG_INF:
                        continue
                    lm_score[new] = ls
                ext = nxt[new]
                source = pb if c == last else ptot
                ext[1] = np.logaddexp(ext[1], source + frame[c])
        ranked = sorted(((p, tuple(v)) for p, v in nxt.items()), key=rank)
        beams = dict(ranked[:beam_width])
    best = min(beams.items(), key=rank)[0]
    # the best-path hypothesis competes with the survivors so pruning never loses to greedy
    greedy = tuple(collapse(logp.argmax(axis=1), blank))
    if greedy != best:
        g_lm = lm.score(greedy) if lm is not None else 0.0
        if g_lm > NEG_INF:
            g_score = sequence_log_prob(logits, greedy, blank) + lm_weight * g_lm
            b_score = (sequence_log_prob(logits, best, blank)
                       + lm_weight * (lm.score(best) if lm is not None else 0.0))
            if g_score > b_score:
                best = greedy
    return list(best)


def sequence_log_prob(logits, seq: Sequence[int], blank: int = BLANK) -> float:
    """log P_ctc(seq); ``-inf`` if unalignable."""
    loss, _ = ctc_loss(logits, seq, blank)
    return -loss
