"""Desk-scale ablations over synthetic languages.

Each runner takes an :class:`ExperimentSpec`, trains every arm for every
seed, and returns an :class:`ExperimentReport`: one tab-separated row per
(arm, seed) plus a summary block with per-arm means.  Arms of one ablation
share their corpus seeds, so they differ only in the factor under study.
"""

from __future__ import annotations

import hashlib
import logging
import math
import os
import statistics
from dataclasses import dataclass, field, replace
from typing import Sequence


from . import model as M
from .checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from .config import RunConfig, load_config
from .data import (LanguageSpec, MultilingualCorpus, SamplingPolicy, TokenSequence, Vocabulary,
                   derive_language, generate_pivot_corpus, make_language, monolingual, pivot_language)
from .decode import DecodeConfig, translate_corpus
from .metrics import corpus_bleu, retrieval_accuracy
from .model import ModelConfig, ModelState, Stage
from .trainer import (OptimizerConfig, PretrainConfig, RoundTripCandidate, TrainStageConfig, Trainer,
                      build_backtranslation_corpus, pretrain_mlm, select_by_round_trip, state_from_checkpoint,
                      translator_for)

logger = logging.getLogger(__name__)

KINDS = ("multilinguality", "pde", "transf_vs_ftall", "backtranslation")


def derived_seed(seed: int, *labels: str) -> int:
    """Stable 63-bit seed for one named data stream of one run seed."""
    digest = hashlib.sha256(":".join([str(seed), *labels]).encode()).digest()
    return int.from_bytes(digest[:8], "little") >> 1


# --------------------------------------------------------------------------
# setup shared by the CLI and the runners
# --------------------------------------------------------------------------


class Workbench:
    """Languages, model/optimiser configs and corpus recipes derived from one RunConfig."""

    def __init__(self, cfg: RunConfig):
        self.cfg = cfg
        self.vocab = Vocabulary(cfg["data.pivot_vocab"], cfg["data.alias_slots"])
        self.pivot = cfg["data.pivot_lang"]
        self.languages: dict[str, LanguageSpec] = {self.pivot: pivot_language(self.vocab, self.pivot)}
        for slot, entry in enumerate(cfg["data.languages"], 1):
            tag, _, window = entry.partition(":")
            if slot > self.vocab.n_slots:
                raise ValueError(f"language {tag!r} needs alias slot {slot} but only "
                                 f"{self.vocab.n_slots} exist")
            if tag in self.languages:
                raise ValueError(f"language {tag!r} defined twice")
            self.languages[tag] = make_language(tag, self.vocab, slot, cfg["data.alias_fraction"],
                                                int(window or 0), cfg["data.language_seed"])
        self.max_len = cfg["data.max_source_length"]
        self.lengths = (cfg["data.length_min"], cfg["data.length_max"])

    # ---- configs ---------------------------------------------------------

    def model_config(self, n_target_langs: int = 1) -> ModelConfig:
        m = self.cfg.section("model")
        return ModelConfig(enc_layers=m["enc_layers"], dec_layers=m["dec_layers"], d_model=m["d_model"],
                           enc_ffn=m["enc_ffn"], dec_ffn=m["dec_ffn"], heads=m["heads"],
                           pde_layer=m["pde_layer"], dropout=m["dropout"], vocab_size=self.vocab.size,
                           max_positions=self.max_len, n_target_langs=n_target_langs)

    def optimizer(self) -> OptimizerConfig:
        t = self.cfg.section("train")
        return OptimizerConfig(beta1=t["beta1"], beta2=t["beta2"], eps=t["eps"], lr_stage1=t["lr_stage1"],
                               warmup=t["warmup"], lr_stage2=t["lr_stage2"], dropout=self.cfg["model.dropout"],
                               weight_decay=t["weight_decay"], clip_norm=t["clip_norm"],
                               label_smoothing=t["label_smoothing"])

    def pretrain_config(self) -> PretrainConfig:
        t = self.cfg.section("train")
        return PretrainConfig(steps=t["mlm_steps"], batch_tokens=t["mlm_batch_tokens"],
                              mask_ratio=t["mlm_mask_ratio"], alpha=self.cfg["data.alpha"], lr=t["mlm_lr"],
                              warmup=t["mlm_warmup"], dropout=self.cfg["model.dropout"])

    def decode_config(self) -> DecodeConfig:
        d = self.cfg.section("decode")
        return DecodeConfig(beam_size=d["beam"], max_decode_length=d["max_length"],
                            length_penalty=d["length_penalty"])

    def stage(self, stage: Stage, steps: int, pde: bool = False) -> TrainStageConfig:
        interval = self.cfg["train.checkpoint_interval"] or None
        return TrainStageConfig(stage, steps, self.cfg["train.batch_tokens"], pde, interval)

    def language(self, tag: str) -> LanguageSpec:
        if tag not in self.languages:
            raise ValueError(f"unknown language {tag!r}; defined: {', '.join(self.languages)}")
        return self.languages[tag]

    # ---- corpora ---------------------------------------------------------

    def pivot_sentences(self, seed: int, stream: str, n: int) -> list[TokenSequence]:
        return generate_pivot_corpus(derived_seed(seed, stream), n, self.vocab.n_pivot, self.lengths,
                                     self.max_len, self.pivot)

    def monolingual_corpora(self, seed: int, n: int | None = None) -> dict[str, list[TokenSequence]]:
        """Non-parallel monolingual text for every language, pivot included."""
        n = self.cfg["data.mono_sentences"] if n is None else n
        return {tag: monolingual(self.pivot_sentences(seed, f"mono.{tag}", n), spec, self.max_len)
                for tag, spec in self.languages.items()}

    def parallel_corpus(self, seed: int, aux: Sequence[str], n_pairs: int) -> MultilingualCorpus:
        """Split one pivot draw of ``n_pairs`` sentences evenly over ``aux``."""
        if not aux:
            raise ValueError("at least one auxiliary language is required")
        if n_pairs < len(aux):
            raise ValueError(f"pair budget {n_pairs} is smaller than the number of languages")
        pivot = self.pivot_sentences(seed, "parallel", n_pairs)
        base, extra = divmod(n_pairs, len(aux))
        pairs, start = {}, 0
        for i, tag in enumerate(aux):
            size = base + (1 if i < extra else 0)
            pairs[tag] = derive_language(pivot[start:start + size], self.language(tag), self.max_len)
            start += size
        return MultilingualCorpus(pairs, self.pivot)

    def validation_pairs(self, seed: int, aux: Sequence[str]) -> list[tuple[TokenSequence, TokenSequence]]:
        n = self.cfg["data.valid_pairs"]
        out = []
        for tag in aux:
            out += derive_language(self.pivot_sentences(seed, f"valid.{tag}", n), self.language(tag), self.max_len)
        return out

    def test_pairs(self, seed: int, tag: str, n: int | None = None) -> list[tuple[TokenSequence, TokenSequence]]:
        n = self.cfg["data.test_sentences"] if n is None else n
        return derive_language(self.pivot_sentences(seed, "test", n), self.language(tag), self.max_len)

    # ---- pretraining -----------------------------------------------------

    def pretrained_encoder(self, seed: int) -> Checkpoint:
        """Masked-LM encoder for ``seed``; reused from ``experiment.cache_dir`` when present there."""
        cache = self.cfg["experiment.cache_dir"]
        path = None
        if cache:
            relevant = {k: v for k, v in self.cfg.items()
                        if k.startswith(("data.", "model.", "train.mlm_"))}
            key = hashlib.sha256(repr(sorted(relevant.items())).encode()).hexdigest()[:16]
            path = os.path.join(cache, f"mlm-{key}-seed{seed}.sxtp")
            if os.path.exists(path):
                return load_checkpoint(path)
        ckpt = pretrain_mlm(self.model_config(), self.monolingual_corpora(seed), self.pretrain_config(), seed)
        if path is not None:
            os.makedirs(cache, exist_ok=True)
            save_checkpoint(ckpt, path)
        return ckpt

    # ---- evaluation ------------------------------------------------------

    def bleu(self, state: ModelState, pairs, target_lang: str | None = None) -> float:
        hyps = translate_corpus(state, [s for s, _ in pairs], 0, self.decode_config(), target_lang or self.pivot)
        return corpus_bleu(hyps, [t for _, t in pairs]).bleu

    def bleu_by_language(self, state: ModelState, seed: int, tags: Sequence[str]) -> dict[str, float]:
        return {tag: self.bleu(state, self.test_pairs(seed, tag)) for tag in tags}


# --------------------------------------------------------------------------
# spec and report types
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class ExperimentSpec:
    name: str
    kind: str
    seeds: tuple[int, ...]
    aux_few: tuple[str, ...]
    aux_many: tuple[str, ...]
    zero_shot: tuple[str, ...]
    pairs: int
    small_pairs: int
    large_pairs: int
    model: ModelConfig
    stages: tuple[TrainStageConfig, ...]
    metrics: tuple[str, ...]
    config: RunConfig = field(repr=False, compare=False)

    @classmethod
    def from_config(cls, cfg: RunConfig) -> "ExperimentSpec":
        kind = cfg["experiment.kind"]
        if kind not in KINDS:
            raise ValueError(f"unknown experiment kind {kind!r}; expected one of {', '.join(KINDS)}")
        seeds = tuple(cfg["experiment.seeds"])
        if len(seeds) < 3 or len(set(seeds)) != len(seeds):
            raise ValueError("an experiment needs at least three distinct seeds")
        bench = Workbench(cfg)
        for tag in (*cfg["experiment.aux_few"], *cfg["experiment.aux_many"], *cfg["experiment.zero_shot"]):
            bench.language(tag)
        held = set(cfg["experiment.zero_shot"])
        if held & (set(cfg["experiment.aux_few"]) | set(cfg["experiment.aux_many"])):
            raise ValueError("zero-shot languages must be disjoint from the auxiliary languages")
        if bench.pivot in held:
            raise ValueError("the pivot language cannot be a zero-shot source")
        stages = (bench.stage(Stage.STAGE1, cfg["train.stage1_steps"]),
                  bench.stage(Stage.STAGE2, cfg["train.stage2_steps"], cfg["train.pde"]))
        metrics = {"multilinguality": ("bleu", "zero_shot_bleu"), "pde": ("zero_shot_bleu",),
                   "transf_vs_ftall": ("bleu", "zero_shot_bleu", "retrieval_accuracy"),
                   "backtranslation": ("reverse_bleu", "round_trip_bleu")}[kind]
        return cls(cfg["experiment.name"], kind, seeds, tuple(cfg["experiment.aux_few"]),
                   tuple(cfg["experiment.aux_many"]), tuple(cfg["experiment.zero_shot"]), cfg["data.pairs"],
                   cfg["experiment.small_pairs"], cfg["experiment.large_pairs"], bench.model_config(), stages,
                   metrics, cfg)


def load_spec(paths: Sequence[str | os.PathLike], overrides=None) -> ExperimentSpec:
    return ExperimentSpec.from_config(load_config(paths, overrides))


def _fmt(value) -> str:
    if isinstance(value, float):
        return "nan" if math.isnan(value) else f"{value:.4f}"
    return str(value)


@dataclass
class ExperimentReport:
    name: str
    kind: str
    columns: tuple[str, ...]
    rows: list[tuple] = field(default_factory=list)
    summary: list[tuple[str, str]] = field(default_factory=list)

    def add(self, *row) -> None:
        if len(row) != len(self.columns):
            raise ValueError(f"row has {len(row)} fields, table has {len(self.columns)}")
        self.rows.append(tuple(row))

    def column(self, name: str, **where) -> list:
        i = self.columns.index(name)
        idx = {self.columns.index(k): v for k, v in where.items()}
        return [r[i] for r in self.rows if all(r[j] == v for j, v in idx.items())]

    def mean(self, name: str, **where) -> float:
        values = self.column(name, **where)
        return statistics.fmean(values) if values else float("nan")

    def value(self, key: str) -> str:
        return dict(self.summary)[key]

    def tsv(self) -> str:
        lines = ["\t".join(self.columns)] + ["\t".join(_fmt(v) for v in r) for r in self.rows]
        return "\n".join(lines) + "\n"

    def text(self) -> str:
        block = [f"# {self.name} ({self.kind})", self.tsv().rstrip("\n"), "", "[summary]"]
        block += [f"{k}\t{v}" for k, v in self.summary]
        return "\n".join(block) + "\n"


def _spread(values: Sequence[float]) -> str:
    mean = statistics.fmean(values)
    sd = statistics.stdev(values) if len(values) > 1 else 0.0
    return f"{mean:.4f} +- {sd:.4f}"


# --------------------------------------------------------------------------
# arms
# --------------------------------------------------------------------------


def _eval_state(state: ModelState) -> ModelState:
    return state.with_config(replace(state.config, dropout=0.0))


def _trainer(bench: Workbench, state: ModelState, seed: int, valid) -> Trainer:
    return Trainer(state, bench.optimizer(), seed, valid, keep_checkpoints=False)


def train_stage1(bench: Workbench, encoder: Checkpoint | None, corpus: MultilingualCorpus, seed: int,
                 steps: int, valid=None) -> Trainer:
    state = M.init_model(bench.model_config(), seed, encoder)
    trainer = _trainer(bench, state, seed, valid)
    policy = SamplingPolicy.from_corpus(corpus, bench.cfg["data.alpha"])
    trainer.run_stage(bench.stage(Stage.STAGE1, steps), corpus, policy)
    return trainer


def continue_stage2(bench: Workbench, trainer: Trainer, corpus: MultilingualCorpus, steps: int,
                    pde: bool) -> Trainer:
    trainer.run_stage(bench.stage(Stage.STAGE2, steps, pde), corpus,
                      SamplingPolicy.from_corpus(corpus, bench.cfg["data.alpha"]))
    return trainer


def train_transf_arm(bench: Workbench, encoder: Checkpoint | None, corpus: MultilingualCorpus, seed: int,
                     pde: bool, valid=None) -> ModelState:
    t = train_stage1(bench, encoder, corpus, seed, bench.cfg["train.stage1_steps"], valid)
    continue_stage2(bench, t, corpus, bench.cfg["train.stage2_steps"], pde)
    return _eval_state(t.state)


def train_ftall_arm(bench: Workbench, encoder: Checkpoint | None, corpus: MultilingualCorpus, seed: int,
                    valid=None) -> ModelState:
    steps = bench.cfg["train.stage1_steps"] + bench.cfg["train.stage2_steps"]
    trainer = _trainer(bench, M.init_model(bench.model_config(), seed, encoder), seed, valid)
    trainer.run_stage(bench.stage(Stage.FT_ALL, steps), corpus,
                      SamplingPolicy.from_corpus(corpus, bench.cfg["data.alpha"]))
    return _eval_state(trainer.state)


def _zero_shot(bench: Workbench, state: ModelState, seed: int, tags: Sequence[str]) -> tuple[dict, float]:
    scores = bench.bleu_by_language(state, seed, tags)
    return scores, statistics.fmean(scores.values())


# --------------------------------------------------------------------------
# runners
# --------------------------------------------------------------------------


def run_multilinguality_ablation(spec: ExperimentSpec) -> ExperimentReport:
    """One vs several auxiliary languages under one fixed pair budget."""
    bench = Workbench(spec.config)
    arms = {"few": spec.aux_few, "many": spec.aux_many}
    cols = ("arm", "seed", "languages", "pairs", "supervised_bleu", *spec.zero_shot, "zero_shot_bleu")
    report = ExperimentReport(spec.name, spec.kind, cols)
    for seed in spec.seeds:
        encoder = bench.pretrained_encoder(seed)
        corpora = {arm: bench.parallel_corpus(seed, aux, spec.pairs) for arm, aux in arms.items()}
        sizes = {arm: c.n_pairs() for arm, c in corpora.items()}
        if len(set(sizes.values())) != 1:
            raise ValueError(f"pair budget mismatch between arms: {sizes}")
        for arm, aux in arms.items():
            valid = bench.validation_pairs(seed, aux)
            state = train_transf_arm(bench, encoder, corpora[arm], seed, spec.config["train.pde"], valid)
            sup = statistics.fmean(bench.bleu_by_language(state, seed, aux).values())
            scores, zs = _zero_shot(bench, state, seed, spec.zero_shot)
            report.add(arm, seed, "+".join(aux), sizes[arm], sup, *scores.values(), zs)
            logger.info("multilinguality seed=%d arm=%s zero-shot=%.2f", seed, arm, zs)
    few, many = report.column("zero_shot_bleu", arm="few"), report.column("zero_shot_bleu", arm="many")
    report.summary += [("few_zero_shot", _spread(few)), ("many_zero_shot", _spread(many)),
                       ("many_minus_few", f"{statistics.fmean(many) - statistics.fmean(few):.4f}")]
    return report


def run_pde_ablation(spec: ExperimentSpec) -> ExperimentReport:
    """PDE on/off at a small and a large corpus; both arms share stage 1 exactly."""
    bench = Workbench(spec.config)
    settings = {"small": (spec.aux_few, spec.small_pairs), "large": (spec.aux_many, spec.large_pairs)}
    cols = ("setting", "pde", "seed", "pairs", "supervised_bleu", *spec.zero_shot, "zero_shot_bleu")
    report = ExperimentReport(spec.name, spec.kind, cols)
    for seed in spec.seeds:
        encoder = bench.pretrained_encoder(seed)
        for setting, (aux, n_pairs) in settings.items():
            corpus = bench.parallel_corpus(seed, aux, n_pairs)
            valid = bench.validation_pairs(seed, aux)
            shared = train_stage1(bench, encoder, corpus, seed, spec.config["train.stage1_steps"], valid)
            for pde in ("off", "on"):
                t = continue_stage2(bench, shared.fork(), corpus, spec.config["train.stage2_steps"], pde == "on")
                state = _eval_state(t.state)
                sup = statistics.fmean(bench.bleu_by_language(state, seed, aux).values())
                scores, zs = _zero_shot(bench, state, seed, spec.zero_shot)
                report.add(setting, pde, seed, n_pairs, sup, *scores.values(), zs)
                logger.info("pde seed=%d %s pde=%s zero-shot=%.2f", seed, setting, pde, zs)
    for setting in settings:
        on = report.mean("zero_shot_bleu", setting=setting, pde="on")
        off = report.mean("zero_shot_bleu", setting=setting, pde="off")
        report.summary += [(f"{setting}_pde_on", f"{on:.4f}"), (f"{setting}_pde_off", f"{off:.4f}"),
                           (f"{setting}_gap", f"{on - off:.4f}")]
    return report


def run_transf_vs_ftall(spec: ExperimentSpec) -> ExperimentReport:
    """TransF against full fine-tuning and stage-1-only training at equal step budgets.

    Also probes sentence retrieval for the first zero-shot language with the
    TransF encoder and with the pretrained encoder alone.
    """
    bench = Workbench(spec.config)
    cfg = spec.config
    total = cfg["train.stage1_steps"] + cfg["train.stage2_steps"]
    cols = ("arm", "seed", "steps", "supervised_bleu", *spec.zero_shot, "zero_shot_bleu", "retrieval_accuracy")
    report = ExperimentReport(spec.name, spec.kind, cols)
    probe_lang = spec.zero_shot[0]
    for seed in spec.seeds:
        encoder = bench.pretrained_encoder(seed)
        corpus = bench.parallel_corpus(seed, spec.aux_many, spec.pairs)
        valid = bench.validation_pairs(seed, spec.aux_many)
        pool = bench.test_pairs(seed, probe_lang, cfg["experiment.retrieval_pool"])
        pre_state = state_from_checkpoint(encoder)
        pre_state = pre_state.with_config(replace(pre_state.config, dropout=0.0))
        report.add("pretrained", seed, 0, float("nan"), *[float("nan")] * len(spec.zero_shot), float("nan"),
                   retrieval_accuracy(pre_state, pool).accuracy)
        arms = {
            "transf": lambda: train_transf_arm(bench, encoder, corpus, seed, cfg["train.pde"], valid),
            "ft_all": lambda: train_ftall_arm(bench, encoder, corpus, seed, valid),
            "stage1_only": lambda: _eval_state(train_stage1(bench, encoder, corpus, seed, total, valid).state),
        }
        for arm, build in arms.items():
            state = build()
            sup = statistics.fmean(bench.bleu_by_language(state, seed, spec.aux_many).values())
            scores, zs = _zero_shot(bench, state, seed, spec.zero_shot)
            retrieval = retrieval_accuracy(state, pool).accuracy
            report.add(arm, seed, total, sup, *scores.values(), zs, retrieval)
            logger.info("transf_vs_ftall seed=%d arm=%s zero-shot=%.2f retrieval=%.3f", seed, arm, zs, retrieval)
    for arm in ("transf", "ft_all", "stage1_only"):
        report.summary.append((f"{arm}_zero_shot", _spread(report.column("zero_shot_bleu", arm=arm))))
    for arm in ("pretrained", "transf"):
        report.summary.append((f"{arm}_retrieval", _spread(report.column("retrieval_accuracy", arm=arm))))
    return report


def _reverse_trainer(bench: Workbench, state: ModelState, seed: int, corpus, pretrained: bool,
                     s1: int, s2: int) -> Trainer:
    trainer = Trainer(state, bench.optimizer(), seed, keep_checkpoints=True)
    policy = SamplingPolicy.from_corpus(corpus, bench.cfg["data.alpha"])
    if pretrained:
        # two-stage recipe without the positional-disentangled encoder
        trainer.run_stage(bench.stage(Stage.REVERSE_STAGE1, s1), corpus, policy)
        trainer.run_stage(bench.stage(Stage.REVERSE_STAGE2, s2), corpus, policy)
    else:
        trainer.run_stage(bench.stage(Stage.FT_ALL, s1 + s2), corpus, policy)
    return trainer


def run_backtranslation_experiment(spec: ExperimentSpec) -> ExperimentReport:
    """One back-translation round for a monolingual-only language.

    A TransF model translates monolingual text of the language into the
    pivot; reverse models (pivot -> language) are trained on the synthetic
    pairs from a random or a pretrained initialisation, and the checkpoint
    with the best round-trip BLEU is evaluated on a real test set.
    """
    bench = Workbench(spec.config)
    cfg = spec.config
    lang = cfg["experiment.bt_language"]
    if lang in spec.aux_many:
        raise ValueError(f"back-translation language {lang!r} must not have parallel data")
    s1, s2 = cfg["train.stage1_steps"], cfg["train.stage2_steps"]
    decode = bench.decode_config()
    cols = ("init", "seed", "synthetic_pairs", "forward_bleu", "selected_step", "round_trip_bleu",
            "reverse_bleu", "final_reverse_bleu")
    report = ExperimentReport(spec.name, spec.kind, cols)
    for seed in spec.seeds:
        encoder = bench.pretrained_encoder(seed)
        corpus = bench.parallel_corpus(seed, spec.aux_many, spec.pairs)
        forward = train_transf_arm(bench, encoder, corpus, seed, cfg["train.pde"],
                                   bench.validation_pairs(seed, spec.aux_many))
        to_pivot = translator_for(forward, decode, bench.pivot)
        mono = monolingual(bench.pivot_sentences(seed, f"bt.{lang}", cfg["experiment.bt_mono"]),
                           bench.language(lang), bench.max_len)
        synthetic = build_backtranslation_corpus(to_pivot, mono)
        reverse_corpus = MultilingualCorpus({bench.pivot: synthetic}, lang)
        test = [(t, s) for s, t in bench.test_pairs(seed, lang)]
        selection_pivot = bench.pivot_sentences(seed, f"select.{lang}", cfg["experiment.selection_sentences"])
        selection_set = monolingual(selection_pivot, bench.language(lang), bench.max_len)
        forward_bleu = bench.bleu(forward, bench.test_pairs(seed, lang))
        for init, pretrained in (("random", False), ("pretrained", True)):
            state = M.init_model(bench.model_config(), seed, encoder if pretrained else None)
            trainer = _reverse_trainer(bench, state, seed, reverse_corpus, pretrained, s1, s2)
            candidates = []
            for ckpt in trainer.checkpoints:
                cand = _eval_state(state_from_checkpoint(ckpt))
                candidates.append(RoundTripCandidate(ckpt.step, to_pivot, translator_for(cand, decode, lang), ckpt))
            chosen = select_by_round_trip(candidates, selection_set)
            chosen_state = _eval_state(state_from_checkpoint(candidates[chosen.index].checkpoint))
            final_state = _eval_state(trainer.state)
            report.add(init, seed, len(synthetic), forward_bleu, chosen.step, chosen.scores[chosen.index],
                       bench.bleu(chosen_state, test, lang), bench.bleu(final_state, test, lang))
            logger.info("backtranslation seed=%d init=%s selected step %d", seed, init, chosen.step)
    for init in ("random", "pretrained"):
        report.summary.append((f"{init}_reverse_bleu", _spread(report.column("reverse_bleu", init=init))))
    sel = report.column("reverse_bleu")
    fin = report.column("final_reverse_bleu")
    report.summary.append(("selected_ge_final", f"{sum(a >= b for a, b in zip(sel, fin))}/{len(sel)}"))
    return report


RUNNERS = {
    "multilinguality": run_multilinguality_ablation,
    "pde": run_pde_ablation,
    "transf_vs_ftall": run_transf_vs_ftall,
    "backtranslation": run_backtranslation_experiment,
}


def run_experiment(spec: ExperimentSpec) -> ExperimentReport:
    return RUNNERS[spec.kind](spec)
