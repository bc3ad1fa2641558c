"""scikit-learn style wrappers.

``MLMEncoder`` fits a masked-LM encoder on monolingual token sequences and
transforms sentences into mean-pooled vectors.  ``TransFTranslator`` fits the
two-stage recipe on parallel sequences and predicts translations.  Inputs are
sequences of content token IDs (or :class:`~transfer_nmt.data.TokenSequence`).
"""

from __future__ import annotations

from dataclasses import replace
from typing import Sequence

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_consistent_length, check_is_fitted

from . import model as M
from .checkpoint import Checkpoint
from .data import CONTENT_START, MultilingualCorpus, SamplingPolicy, TokenSequence, encode_sentence
from .decode import DecodeConfig, translate_corpus
from .metrics import corpus_bleu, mean_pooled
from .model import ModelConfig, Stage
from .trainer import (OptimizerConfig, PretrainConfig, TrainStageConfig, Trainer, config_from_checkpoint,
                      pretrain_mlm, state_from_checkpoint)

MAX_LENGTH = 512


def check_sequences(X, lang: str = "src", vocab_size: int | None = None, name: str = "X",
                    max_length: int = MAX_LENGTH) -> list[TokenSequence]:
    """Validate a collection of token sequences and frame them with BOS/EOS."""
    if isinstance(X, (str, bytes)) or not hasattr(X, "__len__"):
        raise TypeError(f"{name} must be a sequence of token-ID sequences, got {type(X).__name__}")
    if len(X) == 0:
        raise ValueError(f"{name} is empty")
    out = []
    for i, row in enumerate(X):
        if isinstance(row, TokenSequence):
            ids = row.content
            row_lang = row.lang
        else:
            arr = np.asarray(row)
            if arr.ndim != 1 or (arr.size and not np.issubdtype(arr.dtype, np.integer)):
                raise ValueError(f"{name}[{i}] must be a flat sequence of integer token IDs")
            ids = arr.tolist()
            row_lang = lang
        if any(t < CONTENT_START for t in ids):
            raise ValueError(f"{name}[{i}] contains a reserved token ID (< {CONTENT_START})")
        if vocab_size is not None and any(t >= vocab_size for t in ids):
            raise ValueError(f"{name}[{i}] contains a token ID outside the vocabulary of size {vocab_size}")
        out.append(encode_sentence(ids, row_lang, max_length))
    return out


def _vocab_size(requested: int | None, *collections: Sequence[TokenSequence]) -> int:
    seen = max((max(s.content, default=0) for c in collections for s in c), default=0) + 1
    if requested is None:
        return max(seen, CONTENT_START + 1)
    if seen > requested:
        raise ValueError(f"token ID {seen - 1} does not fit vocab_size={requested}")
    return requested


class MLMEncoder(TransformerMixin, BaseEstimator):
    """Masked-LM encoder; ``transform`` returns mean-pooled final states."""

    def __init__(self, vocab_size=None, d_model=64, layers=3, heads=4, ffn=128, steps=500, batch_tokens=600,
                 lr=1e-3, warmup=100, dropout=0.1, max_length=32, seed=0):
        self.vocab_size = vocab_size
        self.d_model = d_model
        self.layers = layers
        self.heads = heads
        self.ffn = ffn
        self.steps = steps
        self.batch_tokens = batch_tokens
        self.lr = lr
        self.warmup = warmup
        self.dropout = dropout
        self.max_length = max_length
        self.seed = seed

    def _model_config(self, vocab: int) -> ModelConfig:
        return ModelConfig(enc_layers=self.layers, dec_layers=1, d_model=self.d_model, enc_ffn=self.ffn,
                           dec_ffn=self.ffn, heads=self.heads, dropout=self.dropout, vocab_size=vocab,
                           max_positions=self.max_length)

    def fit(self, X, y=None, langs=None):
        """``langs`` (optional, aligned with X) groups sentences for temperature sampling."""
        seqs = check_sequences(X, vocab_size=self.vocab_size, max_length=self.max_length)
        if langs is not None:
            check_consistent_length(seqs, langs)
        groups: dict[str, list[TokenSequence]] = {}
        for i, s in enumerate(seqs):
            groups.setdefault(str(langs[i]) if langs is not None else s.lang, []).append(s)
        vocab = _vocab_size(self.vocab_size, seqs)
        pre = PretrainConfig(steps=self.steps, batch_tokens=self.batch_tokens, lr=self.lr, warmup=self.warmup,
                             dropout=self.dropout)
        self.checkpoint_ = pretrain_mlm(self._model_config(vocab), groups, pre, self.seed)
        self.n_features_out_ = self.d_model
        return self

    @property
    def encoder_state_(self) -> M.ModelState:
        check_is_fitted(self, "checkpoint_")
        state = state_from_checkpoint(self.checkpoint_)
        return state.with_config(replace(state.config, dropout=0.0))

    def transform(self, X) -> np.ndarray:
        check_is_fitted(self, "checkpoint_")
        state = self.encoder_state_
        seqs = check_sequences(X, vocab_size=state.config.vocab_size, max_length=self.max_length)
        return mean_pooled(state, seqs)


class TransFTranslator(BaseEstimator):
    """Two-stage fine-tuned encoder-decoder.

    ``pretrained`` is an encoder checkpoint (e.g. ``MLMEncoder().fit(...).checkpoint_``);
    without it both stages start from a random initialisation.
    """

    def __init__(self, pretrained: Checkpoint | None = None, vocab_size=None, d_model=64, enc_layers=3,
                 dec_layers=2, heads=4, ffn=128, stage1_steps=300, stage2_steps=300, batch_tokens=600,
                 lr_stage1=1e-3, warmup=100, lr_stage2=1e-3, pde=True, dropout=0.1, beam=5,
                 max_decode_length=24, max_length=32, alpha=0.2, seed=0):
        self.pretrained = pretrained
        self.vocab_size = vocab_size
        self.d_model = d_model
        self.enc_layers = enc_layers
        self.dec_layers = dec_layers
        self.heads = heads
        self.ffn = ffn
        self.stage1_steps = stage1_steps
        self.stage2_steps = stage2_steps
        self.batch_tokens = batch_tokens
        self.lr_stage1 = lr_stage1
        self.warmup = warmup
        self.lr_stage2 = lr_stage2
        self.pde = pde
        self.dropout = dropout
        self.beam = beam
        self.max_decode_length = max_decode_length
        self.max_length = max_length
        self.alpha = alpha
        self.seed = seed

    def _model_config(self, vocab: int) -> ModelConfig:
        if self.pretrained is not None:
            base = config_from_checkpoint(self.pretrained)
            return replace(base, dec_layers=self.dec_layers, dec_ffn=self.ffn, dropout=self.dropout,
                           pde_enabled=False)
        return ModelConfig(enc_layers=self.enc_layers, dec_layers=self.dec_layers, d_model=self.d_model,
                           enc_ffn=self.ffn, dec_ffn=self.ffn, heads=self.heads, dropout=self.dropout,
                           vocab_size=vocab, max_positions=self.max_length)

    def fit(self, X, y, langs=None):
        """``X`` source sequences, ``y`` aligned target sequences, ``langs`` optional source tags."""
        src = check_sequences(X, max_length=self.max_length)
        tgt = check_sequences(y, "tgt", name="y", max_length=self.max_length)
        check_consistent_length(src, tgt)
        if langs is not None:
            check_consistent_length(src, langs)
        vocab = _vocab_size(self.vocab_size, src, tgt)
        cfg = self._model_config(vocab)
        if max(max(s.content, default=0) for s in src + tgt) >= cfg.vocab_size:
            raise ValueError(f"token IDs exceed the model vocabulary of size {cfg.vocab_size}")
        pairs: dict[str, list] = {}
        for i, (s, t) in enumerate(zip(src, tgt)):
            pairs.setdefault(str(langs[i]) if langs is not None else s.lang, []).append((s, t))
        corpus = MultilingualCorpus(pairs, "tgt")
        policy = SamplingPolicy.from_corpus(corpus, self.alpha)
        opt = OptimizerConfig(lr_stage1=self.lr_stage1, warmup=self.warmup, lr_stage2=self.lr_stage2,
                              dropout=self.dropout)
        trainer = Trainer(M.init_model(cfg, self.seed, self.pretrained), opt, self.seed, keep_checkpoints=False)
        trainer.run_stage(TrainStageConfig(Stage.STAGE1, self.stage1_steps, self.batch_tokens), corpus, policy)
        if self.stage2_steps:
            trainer.run_stage(TrainStageConfig(Stage.STAGE2, self.stage2_steps, self.batch_tokens, self.pde),
                              corpus, policy)
        self.state_ = trainer.state.with_config(replace(trainer.state.config, dropout=0.0))
        self.log_ = list(trainer.log)
        return self

    def predict(self, X) -> list[list[int]]:
        check_is_fitted(self, "state_")
        src = check_sequences(X, vocab_size=self.state_.config.vocab_size, max_length=self.max_length)
        decode = DecodeConfig(beam_size=self.beam, max_decode_length=self.max_decode_length)
        return [list(h.content) for h in translate_corpus(self.state_, src, 0, decode, "tgt")]

    def score(self, X, y) -> float:
        """Corpus BLEU of the predictions against ``y``."""
        refs = check_sequences(y, "tgt", name="y", max_length=MAX_LENGTH)
        return corpus_bleu(self.predict(X), refs).bleu
