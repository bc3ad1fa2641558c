import pytest

from transfer_nmt.data import (MultilingualCorpus, SamplingPolicy, Vocabulary, derive_language, generate_pivot_corpus,
                               make_language)
from transfer_nmt.model import ModelConfig

TINY_VOCAB = Vocabulary(16, 3)

# small enough for a test to train in seconds
TINY_CONFIG = """\
data.pivot_vocab = 16
data.alias_slots = 3
data.languages = l1:0, l2:1, l5:1
data.length_min = 3
data.length_max = 6
data.max_source_length = 12
data.mono_sentences = 60
data.pairs = 80
data.valid_pairs = 8
data.test_sentences = 6
model.enc_layers = 2
model.dec_layers = 1
model.d_model = 16
model.enc_ffn = 32
model.dec_ffn = 32
model.heads = 2
train.stage1_steps = 4
train.stage2_steps = 3
train.batch_tokens = 80
train.warmup = 2
train.mlm_steps = 4
train.mlm_batch_tokens = 80
train.mlm_warmup = 2
decode.beam = 2
decode.max_length = 8
experiment.aux_few = l1
experiment.aux_many = l1, l2
experiment.zero_shot = l5
experiment.small_pairs = 40
experiment.large_pairs = 80
experiment.bt_language = l5
experiment.bt_mono = 6
experiment.selection_sentences = 4
experiment.retrieval_pool = 10
"""


def tiny_model_config(**kw) -> ModelConfig:
    base = dict(enc_layers=2, dec_layers=1, d_model=16, enc_ffn=32, dec_ffn=32, heads=2, dropout=0.0,
                vocab_size=TINY_VOCAB.size, max_positions=12)
    base.update(kw)
    return ModelConfig(**base)


def tiny_corpus(seed: int = 0, n: int = 60) -> MultilingualCorpus:
    pivot = generate_pivot_corpus(seed, n, TINY_VOCAB.n_pivot, (3, 6), 12)
    spec = make_language("l1", TINY_VOCAB, 1, 0.5, 1, 7)
    return MultilingualCorpus({"l1": derive_language(pivot, spec, 12)}, "en")


@pytest.fixture
def corpus():
    return tiny_corpus()


@pytest.fixture
def policy(corpus):
    return SamplingPolicy.from_corpus(corpus, 0.2)


@pytest.fixture
def tiny_cfg(tmp_path):
    path = tmp_path / "tiny.cfg"
    path.write_text(TINY_CONFIG, encoding="utf-8")
    return path


# one line per acceptance criterion, printed after the run
ACCEPTANCE: dict[int, str] = {}


def record(criterion: int, passed: bool, detail: str) -> bool:
    line = f"criterion {criterion:2d}: {'PASS' if passed else 'FAIL'}  {detail}"
    ACCEPTANCE[criterion] = line
    print(line)
    return passed


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for criterion in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[criterion])
