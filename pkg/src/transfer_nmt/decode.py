"""Beam search and corpus translation."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import model as M
from .data import BOS, CONTENT_START, EOS, TokenSequence, encode_sentence

logger = logging.getLogger(__name__)

# every reserved ID except EOS; decoders never emit these
RESERVED_NON_EOS = tuple(t for t in range(CONTENT_START) if t != EOS)


@dataclass(frozen=True)
class DecodeConfig:
    beam_size: int = 5
    max_decode_length: int = 40
    length_penalty: float = 1.0
    banned_tokens: tuple[int, ...] = RESERVED_NON_EOS

    def __post_init__(self):
        if self.beam_size < 1:
            raise ValueError("beam_size must be >= 1")
        if self.max_decode_length < 1:
            raise ValueError("max_decode_length must be >= 1")


@dataclass(frozen=True)
class Hypothesis:
    tokens: tuple[int, ...]
    log_prob: float
    finished: bool

    def score(self, length_penalty: float) -> float:
        return self.log_prob / (len(self.tokens) - 1) ** length_penalty


class TransformerScorer:
    """Next-token log-probabilities from a model state (evaluation mode)."""

    def __init__(self, state: M.ModelState):
        self.state = state

    @property
    def vocab_size(self) -> int:
        return self.state.config.vocab_size

    def start(self, src: Sequence[int], target_lang_index: int = 0):
        memory, keep = M.memory_for(self.state, np.asarray([src]), target_lang_index)
        return memory.data, keep

    def next_log_probs(self, ctx, prefixes: np.ndarray) -> np.ndarray:
        memory, keep = ctx
        n = prefixes.shape[0]
        mem = M.Tensor(np.broadcast_to(memory, (n, *memory.shape[1:])))
        hidden = M.decode_states(self.state, mem, np.broadcast_to(keep, (n, keep.shape[1])), prefixes)
        logits = M.output_logits(self.state, M.Tensor(hidden.data[:, -1:, :])).data[:, 0, :]
        z = logits - logits.max(axis=-1, keepdims=True)
        return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def _as_scorer(model) -> TransformerScorer:
    return TransformerScorer(model) if isinstance(model, M.ModelState) else model


def _length_limit(scorer, requested: int) -> int:
    # the decoder input holds BOS plus every generated token but the last
    limit = getattr(getattr(getattr(scorer, "state", None), "config", None), "max_positions", None)
    return requested if limit is None else min(requested, limit)


def beam_search(model, src: Sequence[int], target_lang_index: int = 0,
                cfg: DecodeConfig = DecodeConfig()) -> tuple[Hypothesis, bool]:
    """Best hypothesis for ``src`` and a flag that is True when no hypothesis finished.

    ``model`` is a :class:`~transfer_nmt.model.ModelState` or any object with
    ``start(src, idx)`` and ``next_log_probs(ctx, prefixes)``.  Candidates are
    ranked by cumulative log-probability with lower token IDs first on ties.
    """
    scorer = _as_scorer(model)
    ctx = scorer.start(list(src), target_lang_index)
    live: list[tuple[tuple[int, ...], float]] = [((BOS,), 0.0)]
    pool: list[Hypothesis] = []
    banned = [t for t in cfg.banned_tokens if t != EOS]
    pen = cfg.length_penalty
    max_len = _length_limit(scorer, cfg.max_decode_length)

    for _ in range(max_len):
        prefixes = np.array([toks for toks, _ in live], dtype=np.int64)
        logp = scorer.next_log_probs(ctx, prefixes)
        if banned:
            logp[:, banned] = -np.inf
        cum = np.array([s for _, s in live])[:, None] + logp
        flat = cum.reshape(-1)
        vocab = logp.shape[1]
        # stable sort on (-score, live rank, token id)
        order = np.argsort(-flat, kind="stable")[: cfg.beam_size]
        next_live = []
        for pos in order:
            score = flat[pos]
            if not np.isfinite(score):
                continue
            h, tok = divmod(int(pos), vocab)
            toks = live[h][0] + (tok,)
            if tok == EOS:
                pool.append(Hypothesis(toks, float(score), True))
            else:
                next_live.append((toks, float(score)))
        live = next_live
        if not live:
            break
        if pool:
            best_done = max(h.score(pen) for h in pool)
            # extending only lowers log-probability; the longest length bounds the normaliser
            bound = max(s for _, s in live) / max_len ** pen
            if bound <= best_done:
                break

    if pool:
        _, best = max(enumerate(pool), key=lambda item: (item[1].score(pen), -item[0]))
        return best, False
    toks, score = live[0]
    return Hypothesis(toks, score, False), True


def greedy_search(model, src: Sequence[int], target_lang_index: int = 0,
                  max_decode_length: int = 40, banned_tokens: tuple[int, ...] = RESERVED_NON_EOS) -> Hypothesis:
    scorer = _as_scorer(model)
    ctx = scorer.start(list(src), target_lang_index)
    toks = [BOS]
    total = 0.0
    banned = [t for t in banned_tokens if t != EOS]
    for _ in range(_length_limit(scorer, max_decode_length)):
        logp = scorer.next_log_probs(ctx, np.array([toks], dtype=np.int64))[0]
        if banned:
            logp[banned] = -np.inf
        tok = int(np.argmax(logp))
        total += float(logp[tok])
        toks.append(tok)
        if tok == EOS:
            return Hypothesis(tuple(toks), total, True)
    return Hypothesis(tuple(toks), total, False)


def hypothesis_to_sequence(hyp: Hypothesis, lang: str, max_length: int = 512) -> TokenSequence:
    content = [t for t in hyp.tokens[1:] if t >= CONTENT_START]
    return encode_sentence(content, lang, max(2, min(max_length, 512)))


class BeamTranslator:
    """Callable translating a list of sentences with beam search."""

    def __init__(self, state: M.ModelState, cfg: DecodeConfig = DecodeConfig(), target_lang_index: int = 0,
                 target_lang: str = "en"):
        self.state = state
        self.cfg = cfg
        self.target_lang_index = target_lang_index
        self.target_lang = target_lang

    def __call__(self, sources: Sequence[TokenSequence]) -> list[TokenSequence]:
        return translate_corpus(self.state, sources, self.target_lang_index, self.cfg, self.target_lang)


def translate_corpus(model, sources: Sequence[TokenSequence], target_lang_index: int = 0,
                     cfg: DecodeConfig = DecodeConfig(), target_lang: str = "en",
                     flags: list[bool] | None = None) -> list[TokenSequence]:
    """Translate each sentence independently, preserving order.

    Sentences that hit ``max_decode_length`` without EOS are returned
    truncated; their positions are flagged in ``flags`` when given.
    """
    out = []
    for i, src in enumerate(sources):
        ids = src.ids if isinstance(src, TokenSequence) else tuple(src)
        hyp, unfinished = beam_search(model, ids, target_lang_index, cfg)
        if unfinished:
            logger.debug("sentence %d reached max_decode_length without EOS", i)
        if flags is not None:
            flags.append(unfinished)
        out.append(hypothesis_to_sequence(hyp, target_lang, cfg.max_decode_length + 2))
    return out
