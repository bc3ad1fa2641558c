"""Synthetic multilingual corpora, temperature sampling and batching.

Every language is derived from one shared *pivot* language.  A derived
language rewrites a fraction of the pivot's content tokens to private alias
IDs (a bijection over the content range) and applies a fixed local word-order
pattern whose displacement never exceeds ``reorder_window``.  The pivot
sentence is always the translation target, so every derived language has a
well-defined gold translation.

Token ID layout::

    0 pad | 1 bos | 2 eos | 3 mask | 4 unk | 5-7 unused | 8.. content

The content range holds ``n_pivot`` pivot tokens followed by one block of
``n_pivot`` alias IDs per language slot.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterator, Mapping, Sequence

import numpy as np

PAD, BOS, EOS, MASK, UNK = 0, 1, 2, 3, 4
CONTENT_START = 8
MAX_SOURCE_CEILING = 512
DEFAULT_MAX_SOURCE_LENGTH = 64

# grammar classes carved out of the pivot content range, in order
_N_DET = 4
_N_PREP = 4


@dataclass(frozen=True)
class Vocabulary:
    """Shared vocabulary: reserved IDs, pivot tokens and per-language alias blocks."""

    n_pivot: int = 64
    n_slots: int = 8

    def __post_init__(self):
        if self.n_pivot < 16:
            raise ValueError(f"n_pivot={self.n_pivot} is too small for the grammar (need >= 16)")
        if self.n_slots < 0:
            raise ValueError("n_slots must be non-negative")

    @property
    def size(self) -> int:
        return CONTENT_START + self.n_pivot * (1 + self.n_slots)

    @property
    def n_content(self) -> int:
        return self.n_pivot * (1 + self.n_slots)

    def pivot_ids(self) -> np.ndarray:
        return np.arange(CONTENT_START, CONTENT_START + self.n_pivot)

    def alias_block(self, slot: int) -> np.ndarray:
        if not 1 <= slot <= self.n_slots:
            raise ValueError(f"slot {slot} outside 1..{self.n_slots}")
        start = CONTENT_START + slot * self.n_pivot
        return np.arange(start, start + self.n_pivot)


@dataclass(frozen=True)
class TokenSequence:
    ids: tuple[int, ...]
    lang: str

    def __post_init__(self):
        if len(self.ids) < 2 or self.ids[0] != BOS or self.ids[-1] != EOS:
            raise ValueError("TokenSequence must start with BOS and end with EOS")

    def __len__(self) -> int:
        return len(self.ids)

    @property
    def content(self) -> tuple[int, ...]:
        return self.ids[1:-1]


def encode_sentence(raw_ids: Sequence[int], lang: str, max_source_length: int = DEFAULT_MAX_SOURCE_LENGTH,
                    vocab_size: int | None = None) -> TokenSequence:
    """Frame ``raw_ids`` with BOS/EOS, keeping the head when it is too long.

    The framed length never exceeds ``max_source_length``.
    """
    if not 2 <= max_source_length <= MAX_SOURCE_CEILING:
        raise ValueError(f"max_source_length must lie in [2, {MAX_SOURCE_CEILING}]")
    ids = [int(t) for t in raw_ids]
    for t in ids:
        if t < CONTENT_START or (vocab_size is not None and t >= vocab_size):
            raise ValueError(f"token id {t} is not a content token of the vocabulary")
    ids = ids[: max_source_length - 2]
    return TokenSequence((BOS, *ids, EOS), lang)


# --------------------------------------------------------------------------
# pivot grammar
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class _Grammar:
    det: np.ndarray
    prep: np.ndarray
    adj: np.ndarray
    noun: np.ndarray
    verb: np.ndarray
    filler: np.ndarray
    noun_det: np.ndarray  # determiner agreeing with each noun
    noun_adj: np.ndarray  # preferred adjective per noun
    verb_obj: np.ndarray  # preferred object nouns per verb, shape (n_verb, 3)
    noun_verb: np.ndarray  # preferred verb per subject noun
    verb_prep: np.ndarray  # preferred preposition per verb
    prep_noun: np.ndarray  # preferred nouns per preposition, shape (n_prep, 4)
    verb_filler: np.ndarray  # preferred filler per verb


def _grammar(n_pivot: int) -> _Grammar:
    if n_pivot < 16:
        raise ValueError(f"vocab_size={n_pivot} is too small for the grammar's reserved classes (need >= 16)")
    ids = np.arange(CONTENT_START, CONTENT_START + n_pivot)
    rest = n_pivot - _N_DET - _N_PREP
    n_adj = max(2, rest // 5)
    n_verb = max(2, rest // 5)
    n_noun = max(2, (rest * 2) // 5)
    n_filler = rest - n_adj - n_verb - n_noun
    bounds = np.cumsum([_N_DET, _N_PREP, n_adj, n_noun, n_verb])
    det, prep, adj, noun, verb, filler = np.split(ids, bounds)
    if n_filler < 1:
        filler = noun
    # collocation tables; a fixed structural rng keeps them identical for every corpus seed
    g = np.random.default_rng(0x5EED)
    noun_det = g.integers(0, _N_DET, size=n_noun)
    noun_adj = g.integers(0, n_adj, size=n_noun)
    verb_obj = np.stack([g.permutation(n_noun)[:3] for _ in range(n_verb)])
    noun_verb = g.integers(0, n_verb, size=n_noun)
    verb_prep = g.integers(0, _N_PREP, size=n_verb)
    prep_noun = np.stack([g.permutation(n_noun)[:4] for _ in range(_N_PREP)])
    verb_filler = g.integers(0, len(filler), size=n_verb)
    return _Grammar(det, prep, adj, noun, verb, filler, noun_det, noun_adj, verb_obj, noun_verb,
                    verb_prep, prep_noun, verb_filler)


def _pick(rng: np.random.Generator, preferred: int, n: int, p: float) -> int:
    return int(preferred) if rng.random() < p else int(rng.integers(n))


def _noun_phrase(g: _Grammar, rng: np.random.Generator, noun: int) -> list[int]:
    phrase = [int(g.det[_pick(rng, g.noun_det[noun], len(g.det), 0.9)])]
    if rng.random() < 0.6:
        phrase.append(int(g.adj[_pick(rng, g.noun_adj[noun], len(g.adj), 0.8)]))
    phrase.append(int(g.noun[noun]))
    return phrase


def _pivot_sentence(g: _Grammar, rng: np.random.Generator, target_len: int) -> list[int]:
    subj = int(rng.integers(len(g.noun)))
    verb = _pick(rng, g.noun_verb[subj], len(g.verb), 0.7)
    obj = int(g.verb_obj[verb, rng.integers(3)]) if rng.random() < 0.8 else int(rng.integers(len(g.noun)))
    words = _noun_phrase(g, rng, subj) + [int(g.verb[verb])] + _noun_phrase(g, rng, obj)
    while len(words) + 3 <= target_len:
        prep = _pick(rng, g.verb_prep[verb], len(g.prep), 0.7)
        noun = int(g.prep_noun[prep, rng.integers(4)]) if rng.random() < 0.7 else int(rng.integers(len(g.noun)))
        words += [int(g.prep[prep])] + _noun_phrase(g, rng, noun)
    while len(words) < target_len:
        words.append(int(g.filler[_pick(rng, g.verb_filler[verb], len(g.filler), 0.8)]))
    return words[:target_len]


def generate_pivot_corpus(seed: int, n_sentences: int, vocab_size: int = 64,
                          length_range: tuple[int, int] = (5, 12),
                          max_source_length: int = DEFAULT_MAX_SOURCE_LENGTH,
                          lang: str = "en") -> list[TokenSequence]:
    """Draw ``n_sentences`` pivot sentences from the template grammar.

    ``vocab_size`` is the number of pivot content tokens.  Lengths are
    content lengths, drawn uniformly from ``length_range`` inclusive.
    """
    lo, hi = length_range
    if not 1 <= lo <= hi or hi + 2 > max_source_length:
        raise ValueError(f"length_range {length_range} incompatible with max_source_length {max_source_length}")
    g = _grammar(vocab_size)
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(n_sentences):
        n = int(rng.integers(lo, hi + 1))
        out.append(encode_sentence(_pivot_sentence(g, rng, n), lang, max_source_length))
    return out


# --------------------------------------------------------------------------
# derived languages
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class LanguageSpec:
    id: str
    token_permutation: np.ndarray = field(repr=False)  # indexed by content offset
    reorder_window: int = 0
    reorder_pattern: tuple[int, ...] = (0,)

    def __post_init__(self):
        if not self.id or not self.id.isascii() or self.id != self.id.lower():
            raise ValueError(f"language id must be non-empty lowercase ASCII, got {self.id!r}")
        perm = np.asarray(self.token_permutation)
        if perm.ndim != 1 or not np.array_equal(np.sort(perm), np.arange(perm.size)):
            raise ValueError(f"token permutation of {self.id!r} is not a bijection")
        if self.reorder_window < 0:
            raise ValueError("reorder_window must be non-negative")
        if sorted(self.reorder_pattern) != list(range(self.reorder_window + 1)):
            raise ValueError("reorder_pattern must permute range(reorder_window + 1)")

    @property
    def inverse_permutation(self) -> np.ndarray:
        return np.argsort(self.token_permutation)

    def map_tokens(self, ids: Sequence[int], inverse: bool = False) -> list[int]:
        perm = self.inverse_permutation if inverse else self.token_permutation
        return [int(perm[t - CONTENT_START]) + CONTENT_START for t in ids]

    def reorder(self, ids: Sequence[int]) -> list[int]:
        """Apply the block word-order pattern; displacement is at most ``reorder_window``."""
        ids = list(ids)
        w = self.reorder_window + 1
        if w == 1:
            return ids
        out: list[int] = []
        for start in range(0, len(ids), w):
            block = ids[start:start + w]
            order = [i for i in self.reorder_pattern if i < len(block)]
            out.extend(block[i] for i in order)
        return out


def pivot_language(vocab: Vocabulary, tag: str = "en") -> LanguageSpec:
    return LanguageSpec(tag, np.arange(vocab.n_content), 0, (0,))


def make_language(tag: str, vocab: Vocabulary, slot: int, alias_fraction: float,
                  reorder_window: int, seed: int) -> LanguageSpec:
    """Language that swaps ``alias_fraction`` of the pivot tokens with its private alias block."""
    if not 0.0 <= alias_fraction <= 1.0:
        raise ValueError("alias_fraction must lie in [0, 1]")
    rng = np.random.default_rng([seed, slot])
    perm = np.arange(vocab.n_content)
    n_alias = int(round(alias_fraction * vocab.n_pivot))
    chosen = np.sort(rng.permutation(vocab.n_pivot)[:n_alias])
    alias = chosen + slot * vocab.n_pivot
    perm[chosen], perm[alias] = alias, chosen
    pattern = tuple(range(reorder_window + 1))
    if reorder_window > 0:
        while pattern == tuple(range(reorder_window + 1)):
            pattern = tuple(int(i) for i in rng.permutation(reorder_window + 1))
    return LanguageSpec(tag, perm, reorder_window, pattern)


def derive_language(pivot: Sequence[TokenSequence], spec: LanguageSpec,
                    max_source_length: int = DEFAULT_MAX_SOURCE_LENGTH) -> list[tuple[TokenSequence, TokenSequence]]:
    """Aligned (source in ``spec``, pivot target) pairs, one per pivot sentence."""
    pairs = []
    for sent in pivot:
        src = spec.reorder(spec.map_tokens(sent.content))
        pairs.append((encode_sentence(src, spec.id, max_source_length), sent))
    return pairs


def monolingual(pivot: Sequence[TokenSequence], spec: LanguageSpec,
                max_source_length: int = DEFAULT_MAX_SOURCE_LENGTH) -> list[TokenSequence]:
    return [src for src, _ in derive_language(pivot, spec, max_source_length)]


# --------------------------------------------------------------------------
# corpora and sampling
# --------------------------------------------------------------------------


@dataclass
class MultilingualCorpus:
    pairs: dict[str, list[tuple[TokenSequence, TokenSequence]]]
    target_lang: str = "en"

    def __post_init__(self):
        for lang, items in self.pairs.items():
            if not items:
                raise ValueError(f"language {lang!r} has no pairs")

    @property
    def languages(self) -> list[str]:
        return list(self.pairs)

    @cached_property
    def longest_sentence(self) -> int:
        return max(max(len(s), len(t)) for items in self.pairs.values() for s, t in items)

    def n_pairs(self) -> int:
        return sum(len(v) for v in self.pairs.values())

    def proportions(self) -> dict[str, float]:
        """Per-language share by sentence count."""
        total = self.n_pairs()
        return {lang: len(v) / total for lang, v in self.pairs.items()}


@dataclass(frozen=True)
class SamplingPolicy:
    proportions: Mapping[str, float]
    alpha: float = 0.2

    def __post_init__(self):
        if not self.proportions:
            raise ValueError("empty sampling policy")
        if self.alpha <= 0:
            raise ValueError("alpha must be positive")
        for lang, p in self.proportions.items():
            if not p > 0:
                raise ValueError(f"proportion for {lang!r} must be positive, got {p}")
        if abs(math.fsum(self.proportions.values()) - 1.0) > 1e-9:
            raise ValueError("proportions must sum to 1")

    @classmethod
    def from_corpus(cls, corpus: MultilingualCorpus, alpha: float = 0.2) -> "SamplingPolicy":
        return cls(corpus.proportions(), alpha)

    @property
    def derived(self) -> dict[str, float]:
        return compute_sampling_distribution(self)


def compute_sampling_distribution(policy: SamplingPolicy) -> dict[str, float]:
    """q_i = p_i^alpha / sum_j p_j^alpha."""
    for lang, p in policy.proportions.items():
        if not p > 0:
            raise ValueError(f"proportion for {lang!r} must be positive, got {p}")
    # log-space keeps tiny alphas and proportions exact to double precision
    logs = {lang: policy.alpha * math.log(p) for lang, p in policy.proportions.items()}
    top = max(logs.values())
    weights = {lang: math.exp(v - top) for lang, v in logs.items()}
    total = math.fsum(weights.values())
    return {lang: w / total for lang, w in weights.items()}


@dataclass
class Batch:
    src: np.ndarray  # (B, S) int64, PAD-padded
    tgt: np.ndarray  # (B, T) int64, PAD-padded
    langs: list[str]

    @property
    def n_target_tokens(self) -> int:
        return int((self.tgt[:, 1:] != PAD).sum())


def pad_batch(seqs: Sequence[Sequence[int]]) -> np.ndarray:
    width = max(len(s) for s in seqs)
    out = np.full((len(seqs), width), PAD, dtype=np.int64)
    for i, s in enumerate(seqs):
        out[i, :len(s)] = s
    return out


def sample_batch(corpus: MultilingualCorpus, policy: SamplingPolicy, batch_tokens: int,
                 rng: np.random.Generator) -> Batch:
    """Draw pairs until adding one more would exceed ``batch_tokens`` source+target tokens.

    At least one pair is always drawn.  Each draw picks a language from the temperature distribution, then a
    sentence uniformly within it.
    """
    if not corpus.pairs or corpus.n_pairs() == 0:
        raise ValueError("empty corpus")
    if batch_tokens < corpus.longest_sentence:
        raise ValueError(f"batch_tokens={batch_tokens} is smaller than the longest sentence "
                         f"({corpus.longest_sentence})")
    q = compute_sampling_distribution(policy)
    langs = [lang for lang in q if lang in corpus.pairs]
    probs = np.array([q[lang] for lang in langs])
    probs /= probs.sum()
    picked: list[tuple[TokenSequence, TokenSequence]] = []
    picked_langs: list[str] = []
    used = 0
    while True:
        lang = langs[int(rng.choice(len(langs), p=probs))]
        items = corpus.pairs[lang]
        src, tgt = items[int(rng.integers(len(items)))]
        cost = len(src) + len(tgt)
        if picked and used + cost > batch_tokens:
            break
        picked.append((src, tgt))
        picked_langs.append(lang)
        used += cost
    return Batch(pad_batch([s.ids for s, _ in picked]), pad_batch([t.ids for _, t in picked]), picked_langs)


def iter_batches(pairs: Sequence[tuple[TokenSequence, TokenSequence]], batch_size: int) -> Iterator[Batch]:
    """Deterministic, order-preserving batches for evaluation."""
    for start in range(0, len(pairs), batch_size):
        chunk = pairs[start:start + batch_size]
        yield Batch(pad_batch([s.ids for s, _ in chunk]), pad_batch([t.ids for _, t in chunk]),
                    [s.lang for s, _ in chunk])


# --------------------------------------------------------------------------
# corpus files
# --------------------------------------------------------------------------


def write_sentences(path: str | os.PathLike, seqs: Sequence[TokenSequence]) -> None:
    """One sentence per line, space-separated content IDs (framing is implicit)."""
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for s in seqs:
            fh.write(" ".join(str(t) for t in s.content) + "\n")


def read_sentences(path: str | os.PathLike, lang: str | None = None,
                   max_source_length: int = DEFAULT_MAX_SOURCE_LENGTH,
                   vocab_size: int | None = None) -> list[TokenSequence]:
    if lang is None:
        lang = os.path.basename(os.fspath(path)).rsplit(".", 1)[-1]
    out = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            try:
                ids = [int(tok) for tok in line.split()]
            except ValueError as exc:
                raise ValueError(f"{path}:{lineno}: {exc}") from None
            out.append(encode_sentence(ids, lang, max_source_length, vocab_size))
    return out


def write_parallel(directory: str | os.PathLike, pair: str, src_lang: str, tgt_lang: str,
                   pairs: Sequence[tuple[TokenSequence, TokenSequence]]) -> tuple[str, str]:
    src_path = os.path.join(directory, f"{pair}.{src_lang}")
    tgt_path = os.path.join(directory, f"{pair}.{tgt_lang}")
    write_sentences(src_path, [s for s, _ in pairs])
    write_sentences(tgt_path, [t for _, t in pairs])
    return src_path, tgt_path


def read_parallel(src_path: str | os.PathLike, tgt_path: str | os.PathLike,
                  max_source_length: int = DEFAULT_MAX_SOURCE_LENGTH,
                  vocab_size: int | None = None) -> list[tuple[TokenSequence, TokenSequence]]:
    src = read_sentences(src_path, max_source_length=max_source_length, vocab_size=vocab_size)
    tgt = read_sentences(tgt_path, max_source_length=max_source_length, vocab_size=vocab_size)
    if len(src) != len(tgt):
        raise ValueError(f"{src_path} and {tgt_path} are not aligned ({len(src)} vs {len(tgt)} lines)")
    return list(zip(src, tgt))
