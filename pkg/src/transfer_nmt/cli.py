"""Command-line entry point: ``transfer-nmt <subcommand> [flags]``.

Exit status is 0 on success, 1 on a usage error (bad flag, unknown config
key) and 2 on a runtime failure.  Logs go to standard error; data goes to
the files named by flags or to standard output.
"""

from __future__ import annotations

import argparse
import glob
import logging
import os
import sys
from dataclasses import replace
from typing import Sequence

from . import model as M
from .checkpoint import save_checkpoint
from .config import ConfigError, defaults_table, load_config, parse_text
from .data import (MultilingualCorpus, SamplingPolicy, read_parallel, read_sentences, write_parallel,
                   write_sentences)
from .decode import translate_corpus
from .experiments import ExperimentSpec, Workbench, run_experiment
from .metrics import corpus_bleu, retrieval_accuracy
from .model import Stage
from .trainer import (Trainer, build_backtranslation_corpus, pretrain_mlm, read_checkpoint, state_from_checkpoint,
                      state_to_checkpoint, translator_for)

logger = logging.getLogger("transfer_nmt")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", action="append", default=[], metavar="PATH",
                   help="key = value file; repeatable, later files override earlier ones")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="override one config key")
    p.add_argument("--seed", type=int, default=0, help="seed for every random stream (default 0)")
    p.add_argument("--log-level", default="INFO", choices=["DEBUG", "INFO", "WARNING", "ERROR"])


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="transfer-nmt", description="Zero-shot transfer NMT on synthetic languages.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("gen-corpus", help="write monolingual, parallel, validation and test files")
    p.add_argument("--out", required=True, help="output directory")
    _common(p)

    p = sub.add_parser("pretrain", help="masked-LM pretraining of the encoder")
    p.add_argument("--data", required=True, help="directory holding mono.<lang> files")
    p.add_argument("--out", required=True, help="encoder checkpoint path")
    p.add_argument("--log", help="training log path")
    _common(p)

    p = sub.add_parser("train", help="two-stage fine-tuning on train-<lang> files")
    p.add_argument("--data", required=True, help="directory holding train-<lang>.* files")
    p.add_argument("--out", required=True, help="directory for checkpoints, log and model.sxtp")
    p.add_argument("--init", help="pretrained encoder checkpoint")
    p.add_argument("--model", help="stage-1 checkpoint to continue from (--stage 2)")
    p.add_argument("--stage", choices=["1", "2", "all"], default="all")
    p.add_argument("--pde", choices=["on", "off"], help="override train.pde for stage 2")
    p.add_argument("--langs", help="comma-separated auxiliary languages (default: every train file)")
    _common(p)

    p = sub.add_parser("translate", help="decode one line per input line")
    p.add_argument("--model", required=True)
    p.add_argument("--src", required=True, help="source file; its extension names the language")
    p.add_argument("--out", help="output file (default: standard output)")
    p.add_argument("--beam", type=int, help="beam width (default decode.beam)")
    p.add_argument("--target-lang", help="target language tag (default data.pivot_lang)")
    _common(p)

    p = sub.add_parser("score", help="corpus BLEU of a hypothesis file against a reference file")
    p.add_argument("--hyp", required=True)
    p.add_argument("--ref", required=True)
    _common(p)

    p = sub.add_parser("backtranslate", help="one round of back-translation of a monolingual file")
    p.add_argument("--model", required=True, help="forward model (language -> pivot)")
    p.add_argument("--mono", required=True, help="monolingual file; its extension names the language")
    p.add_argument("--out", required=True, help="directory for bt.<pivot> / bt.<lang>")
    p.add_argument("--beam", type=int)
    _common(p)

    p = sub.add_parser("probe", help="mean-pooled nearest-neighbour retrieval accuracy")
    p.add_argument("--model", required=True, help="model or encoder checkpoint")
    p.add_argument("--src", required=True)
    p.add_argument("--tgt", required=True)
    _common(p)

    p = sub.add_parser("experiment", help="run an ablation described by a spec file")
    p.add_argument("--spec", required=True, action="append", help="spec file; repeatable like --config")
    p.add_argument("--out", help="write the report here as well as to standard output")
    _common(p)

    p = sub.add_parser("defaults", help="print every config key with default and owner")
    _common(p)
    return parser


# --------------------------------------------------------------------------
# subcommands
# --------------------------------------------------------------------------


def _config(args, extra_files: Sequence[str] = ()):
    overrides = {}
    for item in args.set:
        overrides.update(parse_text(item, "--set"))
    return load_config([*args.config, *extra_files], overrides)


def _write_lines(path: str | None, lines: Sequence[str]) -> None:
    text = "".join(line + "\n" for line in lines)
    if path is None:
        sys.stdout.write(text)
    else:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)


def cmd_gen_corpus(args) -> None:
    bench = Workbench(_config(args))
    cfg = bench.cfg
    os.makedirs(args.out, exist_ok=True)
    for tag, sents in bench.monolingual_corpora(args.seed).items():
        write_sentences(os.path.join(args.out, f"mono.{tag}"), sents)
    corpus = bench.parallel_corpus(args.seed, cfg["experiment.aux_many"], cfg["data.pairs"])
    for tag, pairs in corpus.pairs.items():
        write_parallel(args.out, f"train-{tag}", tag, bench.pivot, pairs)
        write_parallel(args.out, f"valid-{tag}", tag, bench.pivot, bench.validation_pairs(args.seed, [tag]))
    for tag in bench.languages:
        if tag != bench.pivot:
            write_parallel(args.out, f"test-{tag}", tag, bench.pivot, bench.test_pairs(args.seed, tag))
    logger.info("corpus written to %s", args.out)


def _read_mono(directory: str, bench: Workbench) -> dict:
    files = sorted(glob.glob(os.path.join(directory, "mono.*")))
    if not files:
        raise FileNotFoundError(f"no mono.<lang> files in {directory}")
    return {os.path.splitext(f)[1][1:]: read_sentences(f, max_source_length=bench.max_len,
                                                       vocab_size=bench.vocab.size) for f in files}


def cmd_pretrain(args) -> None:
    bench = Workbench(_config(args))
    ckpt = pretrain_mlm(bench.model_config(), _read_mono(args.data, bench), bench.pretrain_config(), args.seed,
                        args.log)
    save_checkpoint(ckpt, args.out)
    logger.info("encoder checkpoint written to %s", args.out)


def _read_pairs(directory: str, prefix: str, pivot: str, bench: Workbench, langs=None) -> dict:
    out = {}
    for path in sorted(glob.glob(os.path.join(directory, f"{prefix}-*.{pivot}"))):
        tag = os.path.basename(path)[len(prefix) + 1:-len(pivot) - 1]
        if langs is not None and tag not in langs:
            continue
        src = os.path.join(directory, f"{prefix}-{tag}.{tag}")
        out[tag] = read_parallel(src, path, bench.max_len, bench.vocab.size)
    return out


def cmd_train(args) -> None:
    bench = Workbench(_config(args))
    cfg = bench.cfg
    langs = [t.strip() for t in args.langs.split(",")] if args.langs else None
    train = _read_pairs(args.data, "train", bench.pivot, bench, langs)
    if not train:
        raise FileNotFoundError(f"no train-<lang> files in {args.data}")
    corpus = MultilingualCorpus(train, bench.pivot)
    valid = [p for pairs in _read_pairs(args.data, "valid", bench.pivot, bench, list(train)).values() for p in pairs]
    policy = SamplingPolicy.from_corpus(corpus, cfg["data.alpha"])
    pde = cfg["train.pde"] if args.pde is None else args.pde == "on"
    if args.stage == "2":
        if not args.model:
            raise UsageError("--stage 2 needs --model (a stage-1 checkpoint)")
        state = state_from_checkpoint(read_checkpoint(args.model))
    else:
        encoder = read_checkpoint(args.init) if args.init else None
        state = M.init_model(bench.model_config(), args.seed, encoder)
    os.makedirs(args.out, exist_ok=True)
    log_path = os.path.join(args.out, "train.log")
    if os.path.exists(log_path):
        os.remove(log_path)
    trainer = Trainer(state, bench.optimizer(), args.seed, valid, args.out, log_path, keep_checkpoints=False)
    if args.stage in ("1", "all"):
        trainer.run_stage(bench.stage(Stage.STAGE1, cfg["train.stage1_steps"]), corpus, policy)
    if args.stage in ("2", "all"):
        trainer.run_stage(bench.stage(Stage.STAGE2, cfg["train.stage2_steps"], pde), corpus, policy)
    final = trainer.state.with_config(replace(trainer.state.config, dropout=0.0))
    save_checkpoint(state_to_checkpoint(final, trainer.step, "model", f"stage{args.stage}"),
                    os.path.join(args.out, "model.sxtp"))
    logger.info("model written to %s", os.path.join(args.out, "model.sxtp"))


def _model_for_decoding(path: str, bench: Workbench, beam: int | None):
    state = state_from_checkpoint(read_checkpoint(path))
    decode = bench.decode_config()
    if beam is not None:
        decode = replace(decode, beam_size=beam)
    return state.with_config(replace(state.config, dropout=0.0)), decode


def cmd_translate(args) -> None:
    bench = Workbench(_config(args))
    state, decode = _model_for_decoding(args.model, bench, args.beam)
    sources = read_sentences(args.src, max_source_length=bench.max_len, vocab_size=state.config.vocab_size)
    flags: list[bool] = []
    hyps = translate_corpus(state, sources, 0, decode, args.target_lang or bench.pivot, flags)
    if any(flags):
        logger.warning("%d sentences reached the length ceiling without EOS", sum(flags))
    _write_lines(args.out, [" ".join(str(t) for t in h.content) for h in hyps])


def cmd_score(args) -> None:
    hyps = read_sentences(args.hyp, "hyp", max_source_length=512)
    refs = read_sentences(args.ref, "ref", max_source_length=512)
    report = corpus_bleu(hyps, refs)
    _write_lines(None, report.lines() + ["", report.summary()])


def cmd_backtranslate(args) -> None:
    bench = Workbench(_config(args))
    state, decode = _model_for_decoding(args.model, bench, args.beam)
    mono = read_sentences(args.mono, max_source_length=bench.max_len, vocab_size=state.config.vocab_size)
    pairs = build_backtranslation_corpus(translator_for(state, decode, bench.pivot), mono)
    os.makedirs(args.out, exist_ok=True)
    src_path, tgt_path = write_parallel(args.out, "bt", bench.pivot, mono[0].lang, pairs)
    logger.info("synthetic pairs written to %s and %s", src_path, tgt_path)


def cmd_probe(args) -> None:
    bench = Workbench(_config(args))
    state = state_from_checkpoint(read_checkpoint(args.model))
    state = state.with_config(replace(state.config, dropout=0.0))
    pairs = read_parallel(args.src, args.tgt, bench.max_len, state.config.vocab_size)
    _write_lines(None, retrieval_accuracy(state, pairs).lines())


def cmd_experiment(args) -> None:
    cfg = _config(args, args.spec)
    if args.seed:
        cfg = cfg.override({"experiment.seeds": tuple(s + args.seed for s in cfg["experiment.seeds"])})
    try:
        spec = ExperimentSpec.from_config(cfg)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    text = run_experiment(spec).text()
    sys.stdout.write(text)
    if args.out:
        with open(args.out, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)


def cmd_defaults(args) -> None:
    _config(args)
    sys.stdout.write(defaults_table())


COMMANDS = {
    "gen-corpus": cmd_gen_corpus, "pretrain": cmd_pretrain, "train": cmd_train, "translate": cmd_translate,
    "score": cmd_score, "backtranslate": cmd_backtranslate, "probe": cmd_probe, "experiment": cmd_experiment,
    "defaults": cmd_defaults,
}


def main(argv: Sequence[str] | None = None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return 1
    logging.basicConfig(level=args.log_level, stream=sys.stderr, format="%(levelname)s %(name)s: %(message)s",
                        force=True)
    try:
        COMMANDS[args.command](args)
    except (UsageError, ConfigError) as exc:
        print(f"transfer-nmt {args.command}: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # runtime failure; the message names the cause
        logger.debug("traceback", exc_info=True)
        print(f"transfer-nmt {args.command}: error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
