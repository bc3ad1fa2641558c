"""Flat ``key = value`` run configuration.

Files hold one ``section.name = value`` assignment per line; ``#`` starts a
comment.  Several files may be layered, later ones overriding earlier ones.
Every key lives in :data:`REGISTRY` together with its default, type and
owning module, and anything else is rejected.
"""

from __future__ import annotations

import os
from dataclasses import dataclass
from typing import Any, Callable, Iterable, Mapping

SECTIONS = ("data", "model", "train", "decode", "experiment")


class ConfigError(ValueError):
    """Malformed config text or an unknown key; treated as a usage error."""


def _bool(text: str) -> bool:
    low = text.strip().lower()
    if low in ("true", "on", "yes", "1"):
        return True
    if low in ("false", "off", "no", "0"):
        return False
    raise ValueError(f"expected a boolean, got {text!r}")


def _int_list(text: str) -> tuple[int, ...]:
    return tuple(int(x) for x in _str_list(text))


def _str_list(text: str) -> tuple[str, ...]:
    return tuple(x.strip() for x in text.split(",") if x.strip())


def _auto_int(text: str) -> int | None:
    return None if text.strip() == "auto" else int(text)


def _format(value: Any) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if value is None:
        return "auto"
    if isinstance(value, tuple):
        return ",".join(str(v) for v in value)
    return str(value)


@dataclass(frozen=True)
class Key:
    name: str
    default: Any
    parse: Callable[[str], Any]
    owner: str
    doc: str


def _k(name, default, parse, owner, doc) -> Key:
    return Key(name, default, parse, owner, doc)


REGISTRY: dict[str, Key] = {k.name: k for k in [
    # data
    _k("data.pivot_vocab", 64, int, "data", "number of pivot content tokens"),
    _k("data.alias_slots", 6, int, "data", "private alias blocks, one per derived language"),
    _k("data.alias_fraction", 0.5, float, "data", "share of pivot tokens each derived language renames"),
    _k("data.language_seed", 100, int, "data", "seed of the language definitions"),
    _k("data.languages", ("l1:0", "l2:1", "l3:2", "l4:1", "l5:1", "l6:2"), _str_list, "data",
       "derived languages as tag:reorder_window; the n-th entry owns alias slot n"),
    _k("data.pivot_lang", "en", str, "data", "tag of the pivot (target) language"),
    _k("data.length_min", 4, int, "data", "shortest pivot sentence, content tokens"),
    _k("data.length_max", 10, int, "data", "longest pivot sentence, content tokens"),
    _k("data.max_source_length", 32, int, "data", "BOS + content + EOS ceiling"),
    _k("data.alpha", 0.2, float, "data", "sampling temperature exponent"),
    _k("data.mono_sentences", 3000, int, "data", "monolingual sentences per language for pretraining"),
    _k("data.pairs", 20000, int, "data", "parallel pair budget shared by the auxiliary languages"),
    _k("data.valid_pairs", 200, int, "data", "validation pairs per auxiliary language"),
    _k("data.test_sentences", 200, int, "data", "test sentences per evaluated language"),
    # model
    _k("model.enc_layers", 4, int, "model", "encoder layers"),
    _k("model.dec_layers", 2, int, "model", "decoder layers"),
    _k("model.d_model", 128, int, "model", "hidden size"),
    _k("model.enc_ffn", 256, int, "model", "encoder feed-forward size"),
    _k("model.dec_ffn", 256, int, "model", "decoder feed-forward size"),
    _k("model.heads", 4, int, "model", "attention heads"),
    _k("model.pde_layer", None, _auto_int, "model", "1-based positional-disentangled layer; auto = penultimate"),
    _k("model.dropout", 0.1, float, "model", "dropout probability"),
    # train
    _k("train.stage1_steps", 2000, int, "trainer", "stage 1 optimiser steps"),
    _k("train.stage2_steps", 500, int, "trainer", "stage 2 optimiser steps"),
    _k("train.batch_tokens", 1024, int, "trainer", "source + target tokens per batch"),
    _k("train.lr_stage1", 5e-4, float, "trainer", "peak learning rate of warmup stages"),
    _k("train.warmup", 4000, int, "trainer", "linear warmup steps"),
    _k("train.lr_stage2", 1e-4, float, "trainer", "constant stage 2 learning rate"),
    _k("train.beta1", 0.9, float, "trainer", "Adam beta1"),
    _k("train.beta2", 0.98, float, "trainer", "Adam beta2"),
    _k("train.eps", 1e-8, float, "trainer", "Adam epsilon"),
    _k("train.weight_decay", 0.0, float, "trainer", "L2 added to gradients"),
    _k("train.clip_norm", 1.0, float, "trainer", "global gradient norm ceiling; 0 disables"),
    _k("train.label_smoothing", 0.0, float, "trainer", "label smoothing mass"),
    _k("train.pde", True, _bool, "trainer", "switch the positional-disentangled encoder on in stage 2"),
    _k("train.checkpoint_interval", 0, int, "trainer", "steps between checkpoints; 0 = 10% of the stage"),
    _k("train.mlm_steps", 2000, int, "trainer", "masked-LM pretraining steps"),
    _k("train.mlm_batch_tokens", 1024, int, "trainer", "masked-LM tokens per batch"),
    _k("train.mlm_lr", 5e-4, float, "trainer", "masked-LM peak learning rate"),
    _k("train.mlm_warmup", 200, int, "trainer", "masked-LM warmup steps"),
    _k("train.mlm_mask_ratio", 0.15, float, "trainer", "share of content positions selected for prediction"),
    # decode
    _k("decode.beam", 5, int, "decode", "beam width"),
    _k("decode.max_length", 40, int, "decode", "generated-token ceiling"),
    _k("decode.length_penalty", 1.0, float, "decode", "exponent of the length normaliser"),
    # experiment
    _k("experiment.name", "experiment", str, "experiments", "report title"),
    _k("experiment.kind", "multilinguality", str, "experiments",
       "multilinguality, pde, transf_vs_ftall or backtranslation"),
    _k("experiment.seeds", (0, 1, 2), _int_list, "experiments", "seeds, at least three"),
    _k("experiment.aux_few", ("l1",), _str_list, "experiments", "auxiliary languages of the narrow arm"),
    _k("experiment.aux_many", ("l1", "l2", "l3", "l4"), _str_list, "experiments",
       "auxiliary languages of the multilingual arm"),
    _k("experiment.zero_shot", ("l5", "l6"), _str_list, "experiments", "held-out source languages"),
    _k("experiment.small_pairs", 5000, int, "experiments", "pair budget of the small-corpus setting"),
    _k("experiment.large_pairs", 40000, int, "experiments", "pair budget of the large-corpus setting"),
    _k("experiment.bt_language", "l5", str, "experiments", "low-resource language of back-translation"),
    _k("experiment.bt_mono", 2000, int, "experiments", "monolingual sentences translated once"),
    _k("experiment.selection_sentences", 100, int, "experiments",
       "monolingual sentences scoring round-trip checkpoint selection"),
    _k("experiment.retrieval_pool", 500, int, "experiments", "sentence pairs in the retrieval pool"),
    _k("experiment.cache_dir", "", str, "experiments", "directory reused for pretrained encoders; empty = none"),
]}


class RunConfig(Mapping[str, Any]):
    """Immutable mapping of every registry key to its (possibly overridden) value."""

    def __init__(self, values: Mapping[str, Any] | None = None):
        merged = {name: key.default for name, key in REGISTRY.items()}
        for name, value in (values or {}).items():
            if name not in REGISTRY:
                raise ConfigError(f"unknown config key {name!r}")
            merged[name] = value
        self._values = merged

    def __getitem__(self, name: str) -> Any:
        if name not in self._values:
            raise ConfigError(f"unknown config key {name!r}")
        return self._values[name]

    def __iter__(self):
        return iter(self._values)

    def __len__(self) -> int:
        return len(self._values)

    def section(self, name: str) -> dict[str, Any]:
        prefix = name + "."
        return {k[len(prefix):]: v for k, v in self._values.items() if k.startswith(prefix)}

    def override(self, values: Mapping[str, Any]) -> "RunConfig":
        return RunConfig({**self._values, **values})

    def to_text(self) -> str:
        return "".join(f"{k} = {_format(v)}\n" for k, v in self._values.items())


def parse_text(text: str, source: str = "<string>") -> dict[str, Any]:
    values: dict[str, Any] = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value', got {raw.strip()!r}")
        name, value = (part.strip() for part in line.split("=", 1))
        key = REGISTRY.get(name)
        if key is None:
            raise ConfigError(f"{source}:{lineno}: unknown config key {name!r}")
        try:
            values[name] = key.parse(value)
        except ValueError as exc:
            raise ConfigError(f"{source}:{lineno}: bad value for {name!r}: {exc}") from None
    return values


def load_config(paths: Iterable[str | os.PathLike] = (), overrides: Mapping[str, Any] | None = None) -> RunConfig:
    values: dict[str, Any] = {}
    for path in paths:
        with open(path, encoding="utf-8") as fh:
            values.update(parse_text(fh.read(), os.fspath(path)))
    values.update(overrides or {})
    return RunConfig(values)


def defaults_table() -> str:
    """Every key with its default, owning module and meaning, tab separated."""
    lines = ["key\tdefault\towner\tdescription"]
    lines += [f"{k.name}\t{_format(k.default)}\t{k.owner}\t{k.doc}" for k in REGISTRY.values()]
    return "\n".join(lines) + "\n"
