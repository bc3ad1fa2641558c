"""Corpus BLEU over token-ID streams and a mean-pooled retrieval probe."""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import model as M
from .data import PAD, TokenSequence, pad_batch

MAX_ORDER = 4


@dataclass(frozen=True)
class BleuReport:
    bleu: float
    precisions: tuple[float, ...]
    matches: tuple[int, ...]
    totals: tuple[int, ...]
    brevity_penalty: float
    hyp_len: int
    ref_len: int

    def lines(self) -> list[str]:
        """``metric<TAB>value`` lines."""
        out = [f"bleu\t{self.bleu:.4f}"]
        out += [f"p{n}\t{p:.6f}" for n, p in enumerate(self.precisions, 1)]
        out += [f"bp\t{self.brevity_penalty:.6f}", f"hyp_len\t{self.hyp_len}", f"ref_len\t{self.ref_len}"]
        return out

    def summary(self) -> str:
        ps = "/".join(f"{100 * p:.1f}" for p in self.precisions)
        return (f"BLEU = {self.bleu:.2f} {ps} (BP = {self.brevity_penalty:.3f} "
                f"ratio = {self.hyp_len / max(1, self.ref_len):.3f} hyp_len = {self.hyp_len} ref_len = {self.ref_len})")


def _tokens(seq) -> tuple[int, ...]:
    return seq.content if isinstance(seq, TokenSequence) else tuple(int(t) for t in seq)


def _ngrams(tokens: Sequence[int], n: int) -> Counter:
    return Counter(tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1))


def corpus_bleu(hypotheses: Sequence, references: Sequence) -> BleuReport:
    """Corpus BLEU with clipped counts, exponential smoothing and a brevity penalty.

    The k-th order with zero matches gets precision ``1 / (2**k * total)``.
    Orders with no hypothesis n-grams at all are left out of the geometric
    mean, so a corpus scored against itself always gets 100.
    """
    if len(hypotheses) != len(references):
        raise ValueError(f"{len(hypotheses)} hypotheses but {len(references)} references")
    if not hypotheses:
        raise ValueError("empty corpus")
    matches = [0] * MAX_ORDER
    totals = [0] * MAX_ORDER
    hyp_len = ref_len = 0
    for hyp, ref in zip(hypotheses, references):
        h, r = _tokens(hyp), _tokens(ref)
        hyp_len += len(h)
        ref_len += len(r)
        for n in range(1, MAX_ORDER + 1):
            hc, rc = _ngrams(h, n), _ngrams(r, n)
            matches[n - 1] += sum(min(c, rc[g]) for g, c in hc.items())
            totals[n - 1] += max(0, len(h) - n + 1)

    if hyp_len == 0:
        bleu = 100.0 if ref_len == 0 else 0.0
        return BleuReport(bleu, (0.0,) * MAX_ORDER, tuple(matches), tuple(totals), 0.0 if ref_len else 1.0,
                          hyp_len, ref_len)

    precisions = []
    zero_run = 1.0
    for m, t in zip(matches, totals):
        if t == 0:
            break
        if m == 0:
            zero_run *= 2.0
            precisions.append(1.0 / (zero_run * t))
        else:
            precisions.append(m / t)
    bp = min(1.0, math.exp(1.0 - ref_len / hyp_len))
    bleu = 100.0 * bp * math.exp(math.fsum(math.log(p) for p in precisions) / len(precisions))
    bleu = min(100.0, bleu)
    precisions += [0.0] * (MAX_ORDER - len(precisions))
    return BleuReport(bleu, tuple(precisions), tuple(matches), tuple(totals), bp, hyp_len, ref_len)


# --------------------------------------------------------------------------
# retrieval
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class RetrievalReport:
    accuracy: float
    pool_size: int
    hits: int

    def lines(self) -> list[str]:
        return [f"retrieval_accuracy\t{self.accuracy:.6f}", f"pool_size\t{self.pool_size}"]


def mean_pooled(state: M.ModelState, sentences: Sequence[TokenSequence], batch_size: int = 64) -> np.ndarray:
    """Mean of final encoder states over non-PAD positions, one row per sentence."""
    rows = []
    for start in range(0, len(sentences), batch_size):
        chunk = pad_batch([s.ids for s in sentences[start:start + batch_size]])
        enc = M.encode(state, chunk).data
        keep = (chunk != PAD)[..., None]
        rows.append((enc * keep).sum(axis=1) / keep.sum(axis=1))
    return np.concatenate(rows) if rows else np.zeros((0, state.config.d_model))


def nearest_neighbour_accuracy(queries: np.ndarray, keys: np.ndarray) -> RetrievalReport:
    """Fraction of queries whose cosine-nearest key shares their row index."""
    if len(queries) != len(keys):
        raise ValueError("queries and keys must be aligned")
    if len(queries) < 2:
        raise ValueError("retrieval needs at least two pairs")
    qn = np.linalg.norm(queries, axis=1, keepdims=True)
    kn = np.linalg.norm(keys, axis=1, keepdims=True)
    if (qn == 0).any() or (kn == 0).any():
        raise ValueError("zero-norm pooled vector")
    sims = (queries / qn) @ (keys / kn).T
    hits = int((sims.argmax(axis=1) == np.arange(len(queries))).sum())
    return RetrievalReport(hits / len(queries), len(queries), hits)


def retrieval_accuracy(encoder: M.ModelState, pairs: Sequence[tuple[TokenSequence, TokenSequence]]) -> RetrievalReport:
    """Retrieve each pivot-side partner of the non-pivot sentences from the pool."""
    if len(pairs) < 2:
        raise ValueError("retrieval needs at least two pairs")
    queries = mean_pooled(encoder, [s for s, _ in pairs])
    keys = mean_pooled(encoder, [t for _, t in pairs])
    return nearest_neighbour_accuracy(queries, keys)
