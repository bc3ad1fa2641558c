"""Optimisation, staged training, masked-LM pretraining and back-translation.

Two-stage fine-tuning: stage 1 trains only the decoder (and target-language
projections) on top of a frozen pretrained encoder; stage 2 trains everything
except the embeddings, optionally with the positional-disentangled encoder
switched on from its first step.  Frozen tensors are never touched, so their
payloads stay bit-identical across a stage.
"""

from __future__ import annotations

import copy
import logging
import math
import os
from dataclasses import dataclass, field, replace
from typing import Callable, Mapping, Sequence

import numpy as np

from . import model as M
from . import numerics as nx
from .checkpoint import Checkpoint, load_checkpoint, save_checkpoint, rng_to_metadata
from .data import (CONTENT_START, MASK, PAD, MultilingualCorpus, SamplingPolicy, TokenSequence,
                   compute_sampling_distribution, iter_batches, pad_batch, sample_batch)
from .decode import BeamTranslator, DecodeConfig
from .metrics import corpus_bleu
from .model import ModelConfig, ModelState, Stage

logger = logging.getLogger(__name__)

WARMUP_STAGES = (Stage.STAGE1, Stage.REVERSE_STAGE1, Stage.FT_ALL, Stage.MLM)


class TrainingDiverged(RuntimeError):
    """Loss or gradients became non-finite."""


@dataclass(frozen=True)
class OptimizerConfig:
    beta1: float = 0.9
    beta2: float = 0.98
    eps: float = 1e-8
    lr_stage1: float = 5e-4
    warmup: int = 4000
    lr_stage2: float = 1e-4
    dropout: float = 0.1
    weight_decay: float = 0.0
    clip_norm: float = 1.0
    label_smoothing: float = 0.0

    def __post_init__(self):
        if not (0 < self.beta1 < 1 and 0 < self.beta2 < 1):
            raise ValueError("betas must lie in (0, 1)")
        if self.lr_stage1 <= 0 or self.lr_stage2 <= 0:
            raise ValueError("learning rates must be positive")
        if self.warmup < 0:
            raise ValueError("warmup must be non-negative")


@dataclass(frozen=True)
class TrainStageConfig:
    stage: Stage
    steps: int
    batch_tokens: int = 1024
    pde_enabled: bool = False
    checkpoint_interval: int | None = None

    def __post_init__(self):
        object.__setattr__(self, "stage", Stage(self.stage))
        if self.steps <= 0:
            raise ValueError("steps must be positive")
        if self.stage in (Stage.STAGE1, Stage.REVERSE_STAGE1) and self.pde_enabled:
            raise ValueError("the positional-disentangled encoder is a stage-2 feature")

    @property
    def interval(self) -> int:
        """Checkpoint/log interval; defaults to 10% of the stage."""
        return self.checkpoint_interval or max(1, self.steps // 10)


# --------------------------------------------------------------------------
# optimiser
# --------------------------------------------------------------------------


@dataclass
class AdamMoments:
    first: dict[str, np.ndarray]
    second: dict[str, np.ndarray]

    @classmethod
    def zeros(cls, state: ModelState) -> "AdamMoments":
        return cls({n: np.zeros_like(t.data) for n, t in state.params.items()},
                   {n: np.zeros_like(t.data) for n, t in state.params.items()})


def adam_step(params: Mapping[str, np.ndarray], grads: Mapping[str, np.ndarray], moments: AdamMoments,
              step: int, lr: float, cfg: OptimizerConfig = OptimizerConfig(),
              trainable: set[str] | frozenset[str] | None = None):
    """Bias-corrected Adam update, in place, restricted to ``trainable`` names.

    Returns ``(params, moments)``.  Names outside ``trainable`` (or without a
    gradient) are left untouched, including their moments.
    """
    if step < 1:
        raise ValueError("step must be >= 1")
    names = grads.keys() if trainable is None else [n for n in grads if n in trainable]
    b1, b2 = cfg.beta1, cfg.beta2
    c1 = 1.0 - b1 ** step
    c2 = 1.0 - b2 ** step
    for name in names:
        g = np.asarray(grads[name])
        p = params[name]
        if g.shape != p.shape:
            raise ValueError(f"gradient shape {g.shape} does not match parameter {name!r} {p.shape}")
        if not np.isfinite(g).all():
            raise nx.NonFiniteError(f"non-finite gradient for {name!r}")
        if cfg.weight_decay:
            g = g + cfg.weight_decay * p
        m = moments.first[name]
        v = moments.second[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p -= lr * (m / c1) / (np.sqrt(v / c2) + cfg.eps)
    return params, moments


def lr_at(step: int, stage_config: TrainStageConfig, cfg: OptimizerConfig) -> float:
    """Linear warmup then inverse-square-root decay for warmup stages; constant otherwise."""
    if step < 1:
        raise ValueError("step must be >= 1")
    if stage_config.stage not in WARMUP_STAGES:
        return cfg.lr_stage2
    if cfg.warmup == 0:
        return cfg.lr_stage1
    if step <= cfg.warmup:
        return cfg.lr_stage1 * step / cfg.warmup
    return cfg.lr_stage1 * math.sqrt(cfg.warmup / step)


def clip_by_global_norm(grads: dict[str, np.ndarray], max_norm: float) -> float:
    """Scale ``grads`` in place so their global L2 norm is at most ``max_norm``; return the raw norm."""
    norm = math.sqrt(math.fsum(float((g * g).sum()) for g in grads.values()))
    if max_norm > 0 and norm > max_norm:
        factor = max_norm / norm
        for g in grads.values():
            g *= factor
    return norm


# --------------------------------------------------------------------------
# checkpoints <-> states
# --------------------------------------------------------------------------


def _config_metadata(cfg: ModelConfig) -> dict[str, str]:
    return {f"model.{k}": str(v) for k, v in cfg.to_dict().items()}


def _parse_value(text: str):
    if text in ("True", "False"):
        return text == "True"
    if text == "None":
        return None
    try:
        return int(text)
    except ValueError:
        return float(text)


def config_from_checkpoint(ckpt: Checkpoint) -> ModelConfig:
    return ModelConfig.from_dict({k: _parse_value(v) for k, v in ckpt.section("model").items()})


def state_to_checkpoint(state: ModelState, step: int = 0, kind: str = "model", stage: str = "",
                        moments: AdamMoments | None = None, rngs: Mapping[str, np.random.Generator] | None = None,
                        extra: Mapping[str, str] | None = None) -> Checkpoint:
    meta = {"format": "sxtp", "kind": kind, "step": str(step), "stage": stage}
    meta.update(_config_metadata(state.config))
    for name, rng in (rngs or {}).items():
        meta.update(rng_to_metadata(f"rng.{name}", rng))
    for key, value in (extra or {}).items():
        meta[f"extra.{key}"] = str(value)
    # payloads are stored as float32 copies, exactly what a file round trip yields
    tensors = {name: t.data.astype(np.float32) for name, t in state.params.items()}
    if moments is not None:
        meta["optimizer"] = "adam"
        for name in state.params:
            tensors[f"adam.m.{name}"] = moments.first[name].astype(np.float32)
            tensors[f"adam.v.{name}"] = moments.second[name].astype(np.float32)
    return Checkpoint(meta, tensors)


def expected_shapes(ckpt_or_cfg, kind: str = "model", with_moments: bool = False) -> dict[str, tuple[int, ...]]:
    cfg = ckpt_or_cfg if isinstance(ckpt_or_cfg, ModelConfig) else config_from_checkpoint(ckpt_or_cfg)
    shapes = dict(M.parameter_shapes(cfg, encoder_only=(kind == "encoder")))
    if with_moments:
        for name, shape in list(shapes.items()):
            shapes[f"adam.m.{name}"] = shape
            shapes[f"adam.v.{name}"] = shape
    return shapes


def validate_checkpoint(ckpt: Checkpoint) -> None:
    """Check the tensor set against the registry implied by the checkpoint's own config."""
    shapes = expected_shapes(ckpt, ckpt.kind, ckpt.metadata.get("optimizer") == "adam")
    for name, arr in ckpt.tensors.items():
        if name not in shapes:
            raise ValueError(f"unknown tensor name {name!r}")
        if tuple(arr.shape) != tuple(shapes[name]):
            raise ValueError(f"dimension mismatch for tensor {name!r}: {arr.shape} vs {shapes[name]}")
    for name in shapes:
        if name not in ckpt.tensors:
            raise ValueError(f"checkpoint lacks tensor {name!r}")


def read_checkpoint(path: str | os.PathLike) -> Checkpoint:
    """Load and validate a checkpoint against its recorded configuration."""
    ckpt = load_checkpoint(path)
    validate_checkpoint(ckpt)
    return ckpt


def state_from_checkpoint(ckpt: Checkpoint) -> ModelState:
    validate_checkpoint(ckpt)
    cfg = config_from_checkpoint(ckpt)
    names = [n for n, _ in M.parameter_shapes(cfg, encoder_only=(ckpt.kind == "encoder"))]
    return ModelState(cfg, {n: nx.Tensor(np.array(ckpt.tensors[n], dtype=np.float64)) for n in names})


# --------------------------------------------------------------------------
# training
# --------------------------------------------------------------------------


@dataclass
class LogRow:
    step: int
    stage: str
    lr: float
    train_loss: float
    valid_loss: float

    def line(self) -> str:
        return f"{self.step}\t{self.stage}\t{self.lr:.6g}\t{self.train_loss:.6f}\t{self.valid_loss:.6f}"


def validation_loss(state: ModelState, pairs: Sequence[tuple[TokenSequence, TokenSequence]],
                    target_lang_index: int = 0, batch_size: int = 64) -> float:
    """Token-weighted mean NLL in evaluation mode (no dropout)."""
    total = 0.0
    count = 0
    for batch in iter_batches(list(pairs), batch_size):
        n = batch.n_target_tokens
        loss = M.sequence_nll(state, batch.src, batch.tgt, target_lang_index)
        total += float(loss.data) * n
        count += n
    return total / count if count else float("nan")


class Trainer:
    """Owns one model state, its optimiser moments, rngs, log and checkpoint series.

    ``fork`` duplicates everything so two arms can branch from a shared prefix.
    """

    def __init__(self, state: ModelState, opt: OptimizerConfig = OptimizerConfig(), seed: int = 0,
                 valid_pairs: Sequence[tuple[TokenSequence, TokenSequence]] | None = None,
                 ckpt_dir: str | os.PathLike | None = None, log_path: str | os.PathLike | None = None,
                 target_lang_index: int = 0, keep_checkpoints: bool = True):
        self.state = state.with_config(replace(state.config, dropout=opt.dropout))
        self.opt = opt
        self.moments = AdamMoments.zeros(self.state)
        self.rngs = {"data": np.random.default_rng([seed, 1]), "dropout": np.random.default_rng([seed, 2])}
        self.valid_pairs = list(valid_pairs or [])
        self.ckpt_dir = ckpt_dir
        self.log_path = log_path
        self.target_lang_index = target_lang_index
        self.keep_checkpoints = keep_checkpoints
        self.step = 0
        self.log: list[LogRow] = []
        self.checkpoints: list[Checkpoint] = []
        self.clip_events = 0

    def fork(self) -> "Trainer":
        twin = copy.copy(self)
        twin.state = self.state.copy()
        twin.moments = copy.deepcopy(self.moments)
        twin.rngs = copy.deepcopy(self.rngs)
        twin.log = list(self.log)
        twin.checkpoints = list(self.checkpoints)
        return twin

    # ---- bookkeeping -----------------------------------------------------

    def snapshot(self, stage: str) -> Checkpoint:
        return state_to_checkpoint(self.state, self.step, "model", stage, self.moments, self.rngs)

    def _record(self, row: LogRow, stage: str) -> None:
        self.log.append(row)
        if self.log_path is not None:
            with open(self.log_path, "a", encoding="utf-8") as fh:
                fh.write(row.line() + "\n")
        ckpt = self.snapshot(stage)
        if self.keep_checkpoints:
            self.checkpoints.append(ckpt)
        if self.ckpt_dir is not None:
            save_checkpoint(ckpt, os.path.join(self.ckpt_dir, f"checkpoint_{self.step:07d}.sxtp"))

    def _diverged(self, stage: str, reason: str):
        if self.ckpt_dir is not None:
            path = os.path.join(self.ckpt_dir, f"diverged_{self.step:07d}.sxtp")
            save_checkpoint(self.snapshot(stage), path)
            reason += f" (diagnostic checkpoint: {path})"
        raise TrainingDiverged(reason)

    def valid_loss(self) -> float:
        if not self.valid_pairs:
            return float("nan")
        eval_state = self.state.with_config(replace(self.state.config, dropout=0.0))
        return validation_loss(eval_state, self.valid_pairs, self.target_lang_index)

    # ---- stages ------------------------------------------------------------

    def run_stage(self, stage_cfg: TrainStageConfig, corpus: MultilingualCorpus, policy: SamplingPolicy,
                  loss_fn: Callable | None = None) -> "Trainer":
        """Run ``stage_cfg.steps`` optimiser steps under the stage's partition."""
        stage = stage_cfg.stage
        self.state = self.state.with_config(self.state.config.with_pde(stage_cfg.pde_enabled))
        partition = M.partition_for_stage(self.state, stage)
        self.state.set_trainable(partition.trainable)
        trainable = partition.trainable
        data_rng, drop_rng = self.rngs["data"], self.rngs["dropout"]
        running: list[float] = []
        for local in range(1, stage_cfg.steps + 1):
            lr = lr_at(local, stage_cfg, self.opt)
            batch = sample_batch(corpus, policy, stage_cfg.batch_tokens, data_rng)
            try:
                with nx.Graph() as graph:
                    if loss_fn is None:
                        loss = M.sequence_nll(self.state, batch.src, batch.tgt, self.target_lang_index,
                                              drop_rng, self.opt.label_smoothing)
                    else:
                        loss = loss_fn(self.state, batch, drop_rng)
                grads = nx.backward(graph, loss)
                grads = {n: g for n, g in grads.items() if n in trainable}
                norm = clip_by_global_norm(grads, self.opt.clip_norm)
                if self.opt.clip_norm > 0 and norm > self.opt.clip_norm:
                    self.clip_events += 1
                    logger.debug("step %d: gradient norm %.4g clipped to %.4g", self.step + 1, norm,
                                 self.opt.clip_norm)
                self.step += 1
                adam_step({n: self.state[n].data for n in grads}, grads, self.moments, local, lr, self.opt,
                          trainable)
            except nx.NonFiniteError as exc:
                self._diverged(stage.value, f"non-finite values at step {self.step + 1}: {exc}")
            running.append(float(loss.data))
            if local % stage_cfg.interval == 0 or local == stage_cfg.steps:
                valid = self.valid_loss()
                if self.valid_pairs and not math.isfinite(valid):
                    self._diverged(stage.value, f"validation loss is {valid} at step {self.step}")
                self._record(LogRow(self.step, stage.value, lr, float(np.mean(running)), valid), stage.value)
                logger.info("step %d %s lr=%.3g train=%.4f valid=%.4f", self.step, stage.value, lr,
                            float(np.mean(running)), valid)
                running = []
        for t in self.state.params.values():
            t.requires_grad = False
            t.grad = None
        return self


@dataclass
class TrainResult:
    state: ModelState
    checkpoints: list[Checkpoint]
    log: list[LogRow]
    stage_ends: dict[str, int] = field(default_factory=dict)


def _eval_state(trainer: Trainer) -> ModelState:
    return trainer.state.with_config(replace(trainer.state.config, dropout=0.0))


def train_transf(state: ModelState, corpus: MultilingualCorpus, policy: SamplingPolicy,
                 stages: Sequence[TrainStageConfig], opt: OptimizerConfig = OptimizerConfig(), seed: int = 0,
                 valid_pairs=None, ckpt_dir=None, log_path=None, target_lang_index: int = 0) -> TrainResult:
    """Stage 1 (decoder only) followed by stage 2 (all but embeddings)."""
    trainer = Trainer(state, opt, seed, valid_pairs, ckpt_dir, log_path, target_lang_index)
    ends = {}
    for stage_cfg in stages:
        trainer.run_stage(stage_cfg, corpus, policy)
        ends[stage_cfg.stage.value] = trainer.step
    return TrainResult(_eval_state(trainer), trainer.checkpoints, trainer.log, ends)


def train_ft_all(state: ModelState, corpus: MultilingualCorpus, policy: SamplingPolicy, steps: int,
                 opt: OptimizerConfig = OptimizerConfig(), seed: int = 0, batch_tokens: int = 1024,
                 valid_pairs=None, ckpt_dir=None, log_path=None, target_lang_index: int = 0) -> TrainResult:
    """Single stage with every parameter trainable, warmup schedule of stage 1."""
    trainer = Trainer(state, opt, seed, valid_pairs, ckpt_dir, log_path, target_lang_index)
    trainer.run_stage(TrainStageConfig(Stage.FT_ALL, steps, batch_tokens), corpus, policy)
    return TrainResult(_eval_state(trainer), trainer.checkpoints, trainer.log, {Stage.FT_ALL.value: trainer.step})


# --------------------------------------------------------------------------
# masked-LM pretraining
# --------------------------------------------------------------------------


def mask_tokens(ids: np.ndarray, rng: np.random.Generator, vocab_size: int, ratio: float = 0.15,
                replace_probs: tuple[float, float] = (0.8, 0.1)) -> tuple[np.ndarray, np.ndarray]:
    """Select ``ratio`` of content positions; return (corrupted inputs, targets with PAD elsewhere).

    Selected tokens become MASK with probability 0.8, a random content token
    with probability 0.1, and stay unchanged otherwise.
    """
    ids = np.asarray(ids, dtype=np.int64)
    content = ids >= CONTENT_START
    selected = (rng.random(ids.shape) < ratio) & content
    if ratio > 0 and not selected.any() and content.any():
        candidates = np.flatnonzero(content)
        selected.flat[candidates[rng.integers(len(candidates))]] = True
    targets = np.where(selected, ids, PAD)
    roll = rng.random(ids.shape)
    random_tokens = rng.integers(CONTENT_START, vocab_size, size=ids.shape)
    p_mask, p_random = replace_probs
    inputs = ids.copy()
    inputs = np.where(selected & (roll < p_mask), MASK, inputs)
    inputs = np.where(selected & (roll >= p_mask) & (roll < p_mask + p_random), random_tokens, inputs)
    return inputs, targets


def mlm_loss(state: ModelState, inputs: np.ndarray, targets: np.ndarray,
             rng: np.random.Generator | None = None) -> nx.Tensor:
    """Cross-entropy at selected positions only."""
    positions = np.flatnonzero(targets != PAD)
    if positions.size == 0:
        raise ValueError("empty loss")
    logits = M.mlm_logits(state, inputs, positions, rng)
    return nx.softmax_cross_entropy(logits, targets.reshape(-1)[positions], ignore_index=PAD)


@dataclass(frozen=True)
class PretrainConfig:
    steps: int = 2000
    batch_tokens: int = 1024
    mask_ratio: float = 0.15
    alpha: float = 0.2
    lr: float = 5e-4
    warmup: int = 200
    dropout: float = 0.1


def _mono_sampler(corpora: Mapping[str, Sequence[TokenSequence]], alpha: float, batch_tokens: int,
                  rng: np.random.Generator) -> np.ndarray:
    q = compute_sampling_distribution(SamplingPolicy(
        {k: len(v) / sum(len(x) for x in corpora.values()) for k, v in corpora.items()}, alpha))
    langs = list(q)
    probs = np.array([q[k] for k in langs])
    probs /= probs.sum()
    seqs = []
    used = 0
    while True:
        items = corpora[langs[int(rng.choice(len(langs), p=probs))]]
        s = items[int(rng.integers(len(items)))]
        if seqs and used + len(s) > batch_tokens:
            break
        seqs.append(s.ids)
        used += len(s)
    return pad_batch(seqs)


def pretrain_mlm(config: ModelConfig, corpora: Mapping[str, Sequence[TokenSequence]],
                 pre: PretrainConfig = PretrainConfig(), seed: int = 0, log_path=None) -> Checkpoint:
    """Encoder-only masked-LM training over monolingual corpora sampled by temperature.

    Returns an ``encoder`` checkpoint holding the embeddings and encoder layers.
    """
    corpora = {k: list(v) for k, v in corpora.items() if len(v)}
    if not corpora:
        raise ValueError("pretraining needs at least one non-empty language")
    cfg = replace(config, dropout=pre.dropout, pde_enabled=False)
    state = M.init_model(cfg, seed, encoder_only=True)
    opt = OptimizerConfig(lr_stage1=pre.lr, warmup=pre.warmup)
    stage_cfg = TrainStageConfig(Stage.MLM, pre.steps, pre.batch_tokens)
    moments = AdamMoments.zeros(state)
    data_rng = np.random.default_rng([seed, 11])
    drop_rng = np.random.default_rng([seed, 12])
    state.set_trainable(state.names())
    running = []
    for step in range(1, pre.steps + 1):
        ids = _mono_sampler(corpora, pre.alpha, pre.batch_tokens, data_rng)
        inputs, targets = mask_tokens(ids, data_rng, cfg.vocab_size, pre.mask_ratio)
        with nx.Graph() as graph:
            loss = mlm_loss(state, inputs, targets, drop_rng)
        grads = nx.backward(graph, loss)
        clip_by_global_norm(grads, opt.clip_norm)
        adam_step({n: state[n].data for n in grads}, grads, moments, step, lr_at(step, stage_cfg, opt), opt)
        running.append(float(loss.data))
        if step % stage_cfg.interval == 0 or step == pre.steps:
            row = LogRow(step, Stage.MLM.value, lr_at(step, stage_cfg, opt), float(np.mean(running)), float("nan"))
            logger.info("mlm step %d loss=%.4f", step, row.train_loss)
            if log_path is not None:
                with open(log_path, "a", encoding="utf-8") as fh:
                    fh.write(row.line() + "\n")
            running = []
    state.set_trainable(())
    final = state.with_config(replace(cfg, dropout=config.dropout))
    return state_to_checkpoint(final, pre.steps, "encoder", Stage.MLM.value,
                               rngs={"data": data_rng, "dropout": drop_rng})


def mlm_accuracy(encoder: ModelState, sentences: Sequence[TokenSequence], seed: int = 0,
                 ratio: float = 0.15) -> float:
    """Accuracy of recovering MASK-replaced content tokens (evaluation mode)."""
    rng = np.random.default_rng(seed)
    state = encoder.with_config(replace(encoder.config, dropout=0.0))
    hits = total = 0
    for start in range(0, len(sentences), 64):
        ids = pad_batch([s.ids for s in sentences[start:start + 64]])
        inputs, targets = mask_tokens(ids, rng, state.config.vocab_size, ratio, (1.0, 0.0))
        positions = np.flatnonzero(targets != PAD)
        if positions.size == 0:
            continue
        logits = M.mlm_logits(state, inputs, positions).data
        hits += int((logits.argmax(axis=1) == targets.reshape(-1)[positions]).sum())
        total += positions.size
    return hits / total if total else 0.0


# --------------------------------------------------------------------------
# back-translation and model selection
# --------------------------------------------------------------------------


Translator = Callable[[Sequence[TokenSequence]], list[TokenSequence]]


def build_backtranslation_corpus(forward_model: Translator, monolingual: Sequence[TokenSequence],
                                 target_lang: str | None = None) -> list[tuple[TokenSequence, TokenSequence]]:
    """One round: translate each monolingual sentence once; emit (translation, original) pairs."""
    if not monolingual:
        raise ValueError("empty monolingual input")
    translations = forward_model(list(monolingual))
    if len(translations) != len(monolingual):
        raise ValueError("forward model changed the number of sentences")
    return list(zip(translations, monolingual))


@dataclass(frozen=True)
class RoundTripCandidate:
    step: int
    forward: Translator  # L -> pivot
    backward: Translator  # pivot -> L
    checkpoint: Checkpoint | None = None


@dataclass(frozen=True)
class RoundTripSelection:
    index: int
    step: int
    scores: tuple[float, ...]


def select_by_round_trip(candidates: Sequence[RoundTripCandidate],
                         sentences: Sequence[TokenSequence]) -> RoundTripSelection:
    """Pick the candidate whose L -> pivot -> L reconstruction has the highest BLEU.

    Ties go to the earliest step.  A single candidate is returned without scoring.
    """
    if not candidates:
        raise ValueError("no checkpoints to select from")
    if not sentences:
        raise ValueError("round-trip selection needs at least one sentence")
    if len(candidates) == 1:
        return RoundTripSelection(0, candidates[0].step, (float("nan"),))
    pivot_cache: dict[int, list[TokenSequence]] = {}
    scores = []
    for cand in candidates:
        key = id(cand.forward)
        if key not in pivot_cache:
            pivot_cache[key] = cand.forward(list(sentences))
        rebuilt = cand.backward(pivot_cache[key])
        scores.append(corpus_bleu(rebuilt, list(sentences)).bleu)
    best = max(range(len(candidates)), key=lambda i: (scores[i], -candidates[i].step, -i))
    return RoundTripSelection(best, candidates[best].step, tuple(scores))


def translator_for(state: ModelState, decode: DecodeConfig = DecodeConfig(), target_lang: str = "en",
                   target_lang_index: int = 0) -> BeamTranslator:
    eval_state = state.with_config(replace(state.config, dropout=0.0))
    return BeamTranslator(eval_state, decode, target_lang_index, target_lang)
