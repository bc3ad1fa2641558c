import math
from collections import Counter
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from transfer_nmt.data import (BOS, CONTENT_START, EOS, PAD, MultilingualCorpus, SamplingPolicy, TokenSequence,
                               Vocabulary, compute_sampling_distribution, derive_language, encode_sentence,
                               generate_pivot_corpus, make_language, pivot_language, read_parallel,
                               read_sentences, sample_batch, write_parallel, write_sentences)

VOCAB = Vocabulary(32, 4)


def direct_eq1(props, alpha):
    """High-precision direct evaluation with Python's arbitrary precision decimal-free path."""
    import mpmath
    mpmath.mp.dps = 50
    w = [mpmath.mpf(p) ** mpmath.mpf(alpha) for p in props]
    total = mpmath.fsum(w)
    return [float(x / total) for x in w]


class TestGeneratePivot:
    def test_deterministic(self):
        a = generate_pivot_corpus(5, 50, 32)
        b = generate_pivot_corpus(5, 50, 32)
        assert a == b

    def test_empty(self):
        assert generate_pivot_corpus(0, 0, 32) == []

    def test_vocab_too_small(self):
        with pytest.raises(ValueError, match="too small"):
            generate_pivot_corpus(0, 5, 12)

    def test_histogram_non_degenerate(self):
        corpus = generate_pivot_corpus(1, 10_000, 64)
        counts = Counter(t for s in corpus for t in s.content)
        total = sum(counts.values())
        assert max(counts.values()) / total < 0.20
        assert min(counts) >= CONTENT_START and max(counts) < CONTENT_START + 64

    def test_lengths_and_framing(self):
        corpus = generate_pivot_corpus(2, 200, 32, (3, 9), max_source_length=16)
        for s in corpus:
            assert s.ids[0] == BOS and s.ids[-1] == EOS
            assert 3 <= len(s.content) <= 9


class TestDeriveLanguage:
    pivot = generate_pivot_corpus(3, 100, 32)

    def test_identity_language(self):
        for src, tgt in derive_language(self.pivot, pivot_language(VOCAB)):
            assert src.ids == tgt.ids

    def test_inverse_recovers_pivot(self):
        spec = make_language("xx", VOCAB, 2, 0.5, 0, seed=7)
        for src, tgt in derive_language(self.pivot, spec):
            assert tuple(spec.map_tokens(src.content, inverse=True)) == tgt.content

    def test_window_one_displacement(self):
        spec = make_language("xx", VOCAB, 1, 0.5, 1, seed=7)
        assert spec.reorder_pattern == (1, 0)
        for src, tgt in derive_language(self.pivot, spec):
            permuted = spec.map_tokens(tgt.content)
            # displacement oracle: locate every token occurrence independently
            for i, tok in enumerate(src.content):
                candidates = [j for j, t in enumerate(permuted) if t == tok]
                assert min(abs(i - j) for j in candidates) <= 1

    def test_preserves_size_and_targets(self):
        spec = make_language("xx", VOCAB, 3, 0.3, 2, seed=1)
        pairs = derive_language(self.pivot, spec)
        assert len(pairs) == len(self.pivot)
        assert [t for _, t in pairs] == self.pivot

    def test_non_bijection_rejected(self):
        from transfer_nmt.data import LanguageSpec
        perm = np.arange(VOCAB.n_content)
        perm[0] = 1
        with pytest.raises(ValueError, match="bijection"):
            LanguageSpec("bad", perm)

    def test_alias_ids_are_private(self):
        spec = make_language("xx", VOCAB, 2, 1.0, 0, seed=0)
        mapped = spec.map_tokens(list(VOCAB.pivot_ids()))
        assert set(mapped) == set(VOCAB.alias_block(2).tolist())


class TestSamplingDistribution:
    def test_symmetric(self):
        q = compute_sampling_distribution(SamplingPolicy({"a": 1 / 3, "b": 1 / 3, "c": 1 / 3}, 0.7))
        for v in q.values():
            assert v == pytest.approx(1 / 3, abs=1e-15)

    def test_alpha_one_is_identity(self):
        p = {"a": 0.5, "b": 0.3, "c": 0.2}
        q = compute_sampling_distribution(SamplingPolicy(p, 1.0))
        for k in p:
            assert q[k] == pytest.approx(p[k], abs=1e-15)

    def test_worked_value(self):
        q = compute_sampling_distribution(SamplingPolicy({"a": 0.9, "b": 0.1}, 0.2))
        oracle = direct_eq1([0.9, 0.1], 0.2)
        assert q["a"] == pytest.approx(oracle[0], abs=1e-12)
        assert q["b"] == pytest.approx(oracle[1], abs=1e-12)
        assert round(q["a"], 6) == 0.608127 and round(q["b"], 6) == 0.391873

    def test_non_positive_rejected(self):
        with pytest.raises(ValueError):
            SamplingPolicy({"a": 1.0, "b": 0.0})

    def test_small_alpha_tends_to_uniform(self):
        q = compute_sampling_distribution(SamplingPolicy({"a": 0.97, "b": 0.02, "c": 0.01}, 1e-6))
        assert max(abs(v - 1 / 3) for v in q.values()) < 1e-3

    @settings(max_examples=100, deadline=None)
    @given(st.lists(st.integers(1, 10_000), min_size=1, max_size=8), st.floats(0.01, 3.0))
    def test_normalised_and_monotone(self, counts, alpha):
        total = sum(counts)
        props = {f"l{i}": c / total for i, c in enumerate(counts)}
        props[f"l{len(counts) - 1}"] = 1.0 - math.fsum(list(props.values())[:-1])
        if min(props.values()) <= 0:
            return
        q = compute_sampling_distribution(SamplingPolicy(props, alpha))
        assert abs(math.fsum(q.values()) - 1.0) < 1e-9
        for a in props:
            for b in props:
                if props[a] > props[b] * (1 + 1e-12):
                    assert q[a] > q[b]


def _corpus(sizes):
    pivot = generate_pivot_corpus(4, sum(sizes.values()), 32)
    pairs, start = {}, 0
    for slot, (lang, n) in enumerate(sizes.items(), 1):
        spec = make_language(lang, VOCAB, slot, 0.5, 0, seed=3)
        pairs[lang] = derive_language(pivot[start:start + n], spec)
        start += n
    return MultilingualCorpus(pairs)


class TestSampleBatch:
    def test_single_language(self):
        corpus = _corpus({"aa": 20})
        batch = sample_batch(corpus, SamplingPolicy.from_corpus(corpus), 200, np.random.default_rng(0))
        assert set(batch.langs) == {"aa"}

    def test_padding_and_shapes(self):
        corpus = _corpus({"aa": 20, "bb": 10})
        batch = sample_batch(corpus, SamplingPolicy.from_corpus(corpus), 200, np.random.default_rng(0))
        assert batch.src.shape[0] == batch.tgt.shape[0] == len(batch.langs)
        assert (batch.src[:, 0] == BOS).all()
        assert ((batch.tgt == PAD) | (batch.tgt > 0)).all()

    def test_deterministic_stream(self):
        corpus = _corpus({"aa": 20, "bb": 10})
        policy = SamplingPolicy.from_corpus(corpus)
        runs = []
        for _ in range(2):
            rng = np.random.default_rng(11)
            runs.append([sample_batch(corpus, policy, 150, rng).src.tobytes() for _ in range(5)])
        assert runs[0] == runs[1]

    def test_empirical_frequencies_within_three_sigma(self):
        corpus = _corpus({"aa": 9, "bb": 1})
        policy = SamplingPolicy({"aa": 0.9, "bb": 0.1}, 0.2)
        q = compute_sampling_distribution(policy)
        rng = np.random.default_rng(0)
        longest = corpus.longest_sentence
        counts = Counter()
        # one pair per batch: the budget admits exactly one sentence pair
        while sum(counts.values()) < 100_000:
            counts.update(sample_batch(corpus, policy, longest, rng).langs)
        n = sum(counts.values())
        for lang, qi in q.items():
            sigma = math.sqrt(n * qi * (1 - qi))
            assert abs(counts[lang] - n * qi) < 3 * sigma

    def test_empty_corpus(self):
        with pytest.raises(ValueError):
            sample_batch(MultilingualCorpus({}), SamplingPolicy({"a": 1.0}), 100, np.random.default_rng(0))

    def test_budget_below_longest(self):
        corpus = _corpus({"aa": 5})
        with pytest.raises(ValueError):
            sample_batch(corpus, SamplingPolicy.from_corpus(corpus), 3, np.random.default_rng(0))


class TestEncodeSentence:
    def test_empty(self):
        assert encode_sentence([], "en").ids == (BOS, EOS)

    def test_exact_max(self):
        raw = list(range(CONTENT_START, CONTENT_START + 8))
        seq = encode_sentence(raw, "en", max_source_length=10)
        assert seq.content == tuple(raw) and len(seq) == 10

    def test_truncation(self):
        raw = list(range(CONTENT_START, CONTENT_START + 13))
        seq = encode_sentence(raw, "en", max_source_length=10)
        assert len(seq) == 10 and seq.ids[-1] == EOS and seq.content == tuple(raw[:8])

    def test_out_of_vocabulary(self):
        with pytest.raises(ValueError):
            encode_sentence([CONTENT_START, 999], "en", vocab_size=100)
        with pytest.raises(ValueError):
            encode_sentence([PAD], "en")

    def test_hard_ceiling(self):
        with pytest.raises(ValueError):
            encode_sentence([], "en", max_source_length=513)

    def test_framing_invariant(self):
        with pytest.raises(ValueError):
            TokenSequence((CONTENT_START, EOS), "en")


def test_corpus_files_round_trip(tmp_path):
    pivot = generate_pivot_corpus(6, 20, 32)
    spec = make_language("xx", VOCAB, 1, 0.5, 1, seed=2)
    pairs = derive_language(pivot, spec)
    src_path, tgt_path = write_parallel(tmp_path, "train", "xx", "en", pairs)
    assert src_path.endswith("train.xx") and tgt_path.endswith("train.en")
    back = read_parallel(src_path, tgt_path)
    assert back == pairs
    write_sentences(tmp_path / "mono.xx", [s for s, _ in pairs])
    lines = (tmp_path / "mono.xx").read_text(encoding="utf-8").splitlines()
    assert lines[0] == " ".join(str(t) for t in pairs[0][0].content)
    assert read_sentences(tmp_path / "mono.xx")[0].lang == "xx"


def test_proportions_by_sentence_count():
    corpus = _corpus({"aa": 30, "bb": 10})
    assert corpus.proportions() == {"aa": 0.75, "bb": 0.25}
    assert Fraction(corpus.proportions()["aa"]).limit_denominator() == Fraction(3, 4)
