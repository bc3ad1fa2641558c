"""Post-norm transformer encoder-decoder with tied embeddings.

One token table serves as encoder input embedding, decoder input embedding
and output projection.  A single learned position table is shared by both
sides.  The positional-disentangled encoder drops the residual connection
around the self-attention sublayer of one encoder layer (``pde_layer``,
1-based) when ``pde_enabled`` is set.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, fields, replace
from enum import Enum
from typing import Mapping, Sequence

import numpy as np

from . import numerics as nx
from .data import PAD
from .numerics import Tensor

EMBEDDING_NAMES = ("embed.tokens", "embed.positions")


@dataclass(frozen=True)
class ModelConfig:
    enc_layers: int = 4
    dec_layers: int = 2
    d_model: int = 128
    enc_ffn: int = 256
    dec_ffn: int = 256
    heads: int = 4
    pde_enabled: bool = False
    pde_layer: int | None = None
    dropout: float = 0.1
    vocab_size: int = 584
    max_positions: int = 64
    n_target_langs: int = 1
    ln_eps: float = 1e-5

    def __post_init__(self):
        for name in ("enc_layers", "dec_layers", "d_model", "enc_ffn", "dec_ffn", "heads",
                     "vocab_size", "max_positions", "n_target_langs"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        if self.d_model % self.heads:
            raise ValueError(f"d_model={self.d_model} is not divisible by heads={self.heads}")
        if self.pde_layer is None:
            object.__setattr__(self, "pde_layer", max(1, self.enc_layers - 1))
        if not 1 <= self.pde_layer <= self.enc_layers:
            raise ValueError(f"pde_layer={self.pde_layer} outside 1..{self.enc_layers}")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must lie in [0, 1)")

    @classmethod
    def reference_scale(cls, vocab_size: int = 250002) -> "ModelConfig":
        """Reference architecture: 24x1024/4096/16 encoder, 12x1024/3072/16 decoder."""
        return cls(enc_layers=24, dec_layers=12, d_model=1024, enc_ffn=4096, dec_ffn=3072, heads=16,
                   vocab_size=vocab_size, max_positions=512)

    def with_pde(self, enabled: bool) -> "ModelConfig":
        return replace(self, pde_enabled=enabled)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, values: Mapping) -> "ModelConfig":
        known = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in values.items() if k in known})


class ModelState:
    """Ordered store of named parameter tensors."""

    def __init__(self, config: ModelConfig, params: dict[str, Tensor]):
        self.config = config
        self.params = params
        for name, t in params.items():
            t.name = name

    def __getitem__(self, name: str) -> Tensor:
        return self.params[name]

    def __contains__(self, name: str) -> bool:
        return name in self.params

    def names(self) -> list[str]:
        return list(self.params)

    def copy(self) -> "ModelState":
        return ModelState(self.config, {k: Tensor(v.data.copy(), v.requires_grad) for k, v in self.params.items()})

    def with_config(self, config: ModelConfig) -> "ModelState":
        """Same parameter storage under a different (shape-compatible) config."""
        return ModelState(config, self.params)

    def set_trainable(self, names) -> None:
        names = set(names)
        for name, t in self.params.items():
            t.requires_grad = name in names


# --------------------------------------------------------------------------
# parameter registry
# --------------------------------------------------------------------------


def _attn_shapes(prefix: str, d: int) -> list[tuple[str, tuple[int, ...]]]:
    return [(f"{prefix}.{p}", (d, d)) for p in ("q", "k", "v", "o")]


def _norm_shapes(prefix: str, d: int) -> list[tuple[str, tuple[int, ...]]]:
    return [(f"{prefix}.gamma", (d,)), (f"{prefix}.beta", (d,))]


def _ffn_shapes(prefix: str, d: int, f: int) -> list[tuple[str, tuple[int, ...]]]:
    return [(f"{prefix}.w1", (d, f)), (f"{prefix}.b1", (f,)), (f"{prefix}.w2", (f, d)), (f"{prefix}.b2", (d,))]


def embedding_shapes(cfg: ModelConfig) -> list[tuple[str, tuple[int, ...]]]:
    return [("embed.tokens", (cfg.vocab_size, cfg.d_model)), ("embed.positions", (cfg.max_positions, cfg.d_model))]


def encoder_shapes(cfg: ModelConfig) -> list[tuple[str, tuple[int, ...]]]:
    d = cfg.d_model
    out = _norm_shapes("enc.emb_norm", d)
    for layer in range(1, cfg.enc_layers + 1):
        p = f"enc.{layer}"
        out += _attn_shapes(f"{p}.attn", d) + _norm_shapes(f"{p}.norm1", d)
        out += _ffn_shapes(f"{p}.ffn", d, cfg.enc_ffn) + _norm_shapes(f"{p}.norm2", d)
    return out


def projection_shapes(cfg: ModelConfig) -> list[tuple[str, tuple[int, ...]]]:
    if cfg.n_target_langs == 1:
        return []
    return [(f"proj.{j}", (cfg.d_model, cfg.d_model)) for j in range(cfg.n_target_langs)]


def decoder_shapes(cfg: ModelConfig) -> list[tuple[str, tuple[int, ...]]]:
    d = cfg.d_model
    out = _norm_shapes("dec.emb_norm", d)
    for layer in range(1, cfg.dec_layers + 1):
        p = f"dec.{layer}"
        out += _attn_shapes(f"{p}.self", d) + _norm_shapes(f"{p}.norm1", d)
        out += _attn_shapes(f"{p}.cross", d) + _norm_shapes(f"{p}.norm2", d)
        out += _ffn_shapes(f"{p}.ffn", d, cfg.dec_ffn) + _norm_shapes(f"{p}.norm3", d)
    return out


def parameter_shapes(cfg: ModelConfig, encoder_only: bool = False) -> list[tuple[str, tuple[int, ...]]]:
    shapes = embedding_shapes(cfg) + encoder_shapes(cfg)
    if not encoder_only:
        shapes += projection_shapes(cfg) + decoder_shapes(cfg)
    return shapes


def _init_tensor(name: str, shape: tuple[int, ...], d_model: int, rng: np.random.Generator) -> np.ndarray:
    if name.endswith(".gamma"):
        return np.ones(shape)
    if name.endswith((".beta", ".b1", ".b2")):
        return np.zeros(shape)
    bound = 1.0 / math.sqrt(d_model)
    return rng.uniform(-bound, bound, size=shape)


def init_model(config: ModelConfig, seed: int, pretrained_encoder=None, encoder_only: bool = False) -> ModelState:
    """Random init, optionally overwriting embeddings and encoder with a pretrained checkpoint.

    ``pretrained_encoder`` is a :class:`~transfer_nmt.checkpoint.Checkpoint`
    (or any mapping-like object with a ``tensors`` dict of arrays).
    """
    rng = np.random.default_rng(seed)
    params = {}
    for name, shape in parameter_shapes(config, encoder_only):
        params[name] = Tensor(_init_tensor(name, shape, config.d_model, rng))
    if pretrained_encoder is not None:
        source = pretrained_encoder.tensors
        for name, shape in embedding_shapes(config) + encoder_shapes(config):
            if name not in source:
                raise KeyError(f"pretrained checkpoint lacks tensor {name!r}")
            arr = np.asarray(source[name])
            if arr.shape != shape:
                raise ValueError(f"dimension mismatch for {name!r}: checkpoint {arr.shape}, model {shape}")
            params[name] = Tensor(arr.astype(np.float64))
    return ModelState(config, params)


# --------------------------------------------------------------------------
# partitions
# --------------------------------------------------------------------------


class Stage(str, Enum):
    STAGE1 = "stage1"
    STAGE2 = "stage2"
    REVERSE_STAGE1 = "reverse_stage1"
    REVERSE_STAGE2 = "reverse_stage2"
    FT_ALL = "ft_all"
    MLM = "mlm"


@dataclass(frozen=True)
class ParameterPartition:
    trainable: frozenset[str]
    frozen: frozenset[str]


def _is_embedding(name: str) -> bool:
    return name in EMBEDDING_NAMES


def partition_for_stage(state: ModelState, stage: Stage | str) -> ParameterPartition:
    """Trainable/frozen split; embeddings stay frozen in every translation stage."""
    stage = Stage(stage)
    names = state.names()
    if stage in (Stage.STAGE1, Stage.REVERSE_STAGE1):
        trainable = {n for n in names if n.startswith(("dec.", "proj."))}
    elif stage in (Stage.STAGE2, Stage.REVERSE_STAGE2):
        trainable = {n for n in names if not _is_embedding(n)}
    else:
        trainable = set(names)
    return ParameterPartition(frozenset(trainable), frozenset(set(names) - trainable))


# --------------------------------------------------------------------------
# forward
# --------------------------------------------------------------------------


def _attention(state: ModelState, prefix: str, x_q: Tensor, x_kv: Tensor, keep: np.ndarray,
               heads: int) -> Tensor:
    """Multi-head attention; ``keep`` broadcasts to (B, 1, Tq, Tk), True = attend."""
    b, tq, d = x_q.shape
    tk = x_kv.shape[1]
    dh = d // heads
    q = nx.linear(x_q, state[f"{prefix}.q"])
    k = nx.linear(x_kv, state[f"{prefix}.k"])
    v = nx.linear(x_kv, state[f"{prefix}.v"])
    q = nx.transpose(nx.reshape(q, (b, tq, heads, dh)), (0, 2, 1, 3))
    k = nx.transpose(nx.reshape(k, (b, tk, heads, dh)), (0, 2, 3, 1))
    v = nx.transpose(nx.reshape(v, (b, tk, heads, dh)), (0, 2, 1, 3))
    scores = nx.scale(nx.matmul(q, k), 1.0 / math.sqrt(dh))
    probs = nx.softmax(scores, keep)
    ctx = nx.matmul(probs, v)
    ctx = nx.reshape(nx.transpose(ctx, (0, 2, 1, 3)), (b, tq, d))
    return nx.linear(ctx, state[f"{prefix}.o"])


def _ffn(state: ModelState, prefix: str, x: Tensor, p: float, rng) -> Tensor:
    h = nx.relu(nx.linear(x, state[f"{prefix}.w1"], state[f"{prefix}.b1"]))
    h = nx.dropout(h, p, rng)
    return nx.linear(h, state[f"{prefix}.w2"], state[f"{prefix}.b2"])


def _norm(state: ModelState, prefix: str, x: Tensor, eps: float) -> Tensor:
    return nx.layer_norm(x, state[f"{prefix}.gamma"], state[f"{prefix}.beta"], eps)


def _embed(state: ModelState, ids: np.ndarray, norm: str, cfg: ModelConfig, rng) -> Tensor:
    t = ids.shape[1]
    if t > cfg.max_positions:
        raise ValueError(f"sequence length {t} exceeds max_positions={cfg.max_positions}")
    if ids.size and (ids.min() < 0 or ids.max() >= cfg.vocab_size):
        raise ValueError(f"token id outside [0, {cfg.vocab_size})")
    tok = nx.embedding(state["embed.tokens"], ids)
    pos = nx.embedding(state["embed.positions"], np.arange(t))
    x = _norm(state, norm, nx.add(tok, pos), cfg.ln_eps)
    return nx.dropout(x, cfg.dropout, rng)


def encode(state: ModelState, src: np.ndarray, rng: np.random.Generator | None = None,
           trace: dict | None = None) -> Tensor:
    """Encoder representations of a PAD-padded (B, S) batch.

    ``rng`` enables dropout (training mode).  When ``trace`` is a dict it
    receives per-layer activations: ``"<l>.attn"`` (the normed
    self-attention sublayer output) and ``"<l>.out"`` for layer ``l``.
    """
    cfg = state.config
    src = np.asarray(src, dtype=np.int64)
    keep = (src != PAD)[:, None, None, :]
    h = _embed(state, src, "enc.emb_norm", cfg, rng)
    for layer in range(1, cfg.enc_layers + 1):
        p = f"enc.{layer}"
        a = nx.dropout(_attention(state, f"{p}.attn", h, h, keep, cfg.heads), cfg.dropout, rng)
        if cfg.pde_enabled and layer == cfg.pde_layer:
            h = _norm(state, f"{p}.norm1", a, cfg.ln_eps)
        else:
            h = _norm(state, f"{p}.norm1", nx.add(h, a), cfg.ln_eps)
        if trace is not None:
            trace[f"{layer}.attn"] = h.data
        f = nx.dropout(_ffn(state, f"{p}.ffn", h, cfg.dropout, rng), cfg.dropout, rng)
        h = _norm(state, f"{p}.norm2", nx.add(h, f), cfg.ln_eps)
        if trace is not None:
            trace[f"{layer}.out"] = h.data
    return h


def apply_target_projection(state: ModelState, enc_out: Tensor, target_lang_index) -> Tensor:
    """Per-target-language linear map of encoder states; identity with one target language.

    ``target_lang_index`` is an int or a per-row sequence of ints.
    """
    n = state.config.n_target_langs
    idx = np.broadcast_to(np.asarray(target_lang_index, dtype=np.int64), (enc_out.shape[0],))
    if (idx < 0).any() or (idx >= n).any():
        raise IndexError(f"target language index outside 0..{n - 1}")
    if n == 1:
        return enc_out
    out = None
    for j in np.unique(idx):
        projected = nx.linear(enc_out, state[f"proj.{j}"])
        if len(np.unique(idx)) > 1:
            projected = nx.mul(projected, (idx == j).astype(np.float64)[:, None, None])
        out = projected if out is None else nx.add(out, projected)
    return out


def decode_states(state: ModelState, memory: Tensor, src_keep: np.ndarray, tgt_in: np.ndarray,
                  rng: np.random.Generator | None = None) -> Tensor:
    """Decoder hidden states for teacher-forced inputs ``tgt_in`` (B, T)."""
    cfg = state.config
    tgt_in = np.asarray(tgt_in, dtype=np.int64)
    t = tgt_in.shape[1]
    causal = np.tril(np.ones((t, t), dtype=bool))[None, None]
    self_keep = causal & (tgt_in != PAD)[:, None, None, :]
    # a PAD query row still sees itself so its softmax stays defined
    self_keep = self_keep | np.eye(t, dtype=bool)[None, None]
    cross_keep = src_keep[:, None, None, :]
    y = _embed(state, tgt_in, "dec.emb_norm", cfg, rng)
    for layer in range(1, cfg.dec_layers + 1):
        p = f"dec.{layer}"
        s = nx.dropout(_attention(state, f"{p}.self", y, y, self_keep, cfg.heads), cfg.dropout, rng)
        y = _norm(state, f"{p}.norm1", nx.add(y, s), cfg.ln_eps)
        c = nx.dropout(_attention(state, f"{p}.cross", y, memory, cross_keep, cfg.heads), cfg.dropout, rng)
        y = _norm(state, f"{p}.norm2", nx.add(y, c), cfg.ln_eps)
        f = nx.dropout(_ffn(state, f"{p}.ffn", y, cfg.dropout, rng), cfg.dropout, rng)
        y = _norm(state, f"{p}.norm3", nx.add(y, f), cfg.ln_eps)
    return y


def output_logits(state: ModelState, hidden: Tensor) -> Tensor:
    """Logits through the transposed token table (no bias)."""
    return nx.linear(hidden, nx.transpose(state["embed.tokens"]))


def memory_for(state: ModelState, src: np.ndarray, target_lang_index=0,
               rng: np.random.Generator | None = None) -> tuple[Tensor, np.ndarray]:
    src = np.asarray(src, dtype=np.int64)
    enc = encode(state, src, rng)
    return apply_target_projection(state, enc, target_lang_index), src != PAD


def forward_logits(state: ModelState, src: np.ndarray, tgt: np.ndarray, target_lang_index=0,
                   rng: np.random.Generator | None = None) -> Tensor:
    """Teacher-forced logits predicting ``tgt[:, 1:]`` from ``tgt[:, :-1]``."""
    tgt = np.asarray(tgt, dtype=np.int64)
    memory, src_keep = memory_for(state, src, target_lang_index, rng)
    hidden = decode_states(state, memory, src_keep, tgt[:, :-1], rng)
    return output_logits(state, hidden)


def sequence_nll(state: ModelState, src: np.ndarray, tgt: np.ndarray, target_lang_index=0,
                 rng: np.random.Generator | None = None, label_smoothing: float = 0.0) -> Tensor:
    """Mean cross-entropy over non-PAD target tokens (teacher forcing)."""
    tgt = np.atleast_2d(np.asarray(tgt, dtype=np.int64))
    src = np.atleast_2d(np.asarray(src, dtype=np.int64))
    if tgt.shape[1] < 2 or not (tgt[:, 1:] != PAD).any():
        raise ValueError("empty target")
    logits = forward_logits(state, src, tgt, target_lang_index, rng)
    loss = nx.softmax_cross_entropy(logits, tgt[:, 1:], ignore_index=PAD)
    if label_smoothing > 0:
        loss = _smooth(loss, logits, tgt[:, 1:], label_smoothing)
    return loss


def _smooth(nll: Tensor, logits: Tensor, targets: np.ndarray, eps: float) -> Tensor:
    # uniform-target cross-entropy mixed into the gold loss
    v = logits.shape[-1]
    keep = (targets != PAD).reshape(-1)
    flat = nx.reshape(logits, (-1, v))
    uniform = np.zeros(flat.shape)
    uniform[keep] = 1.0 / v
    log_probs_sum = nx.sum_all(nx.mul(nx.log_softmax(flat), uniform))
    smooth = nx.scale(log_probs_sum, -1.0 / keep.sum())
    return nx.add(nx.scale(nll, 1.0 - eps), nx.scale(smooth, eps))


def token_log_probs(state: ModelState, src: Sequence[int], tgt: Sequence[int],
                    target_lang_index: int = 0) -> np.ndarray:
    """Per-step log-probabilities of the gold tokens ``tgt[1:]`` for one pair (evaluation mode)."""
    logits = forward_logits(state, np.asarray([src]), np.asarray([tgt]), target_lang_index).data[0]
    z = logits - logits.max(axis=-1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=-1, keepdims=True))
    return logp[np.arange(len(tgt) - 1), np.asarray(tgt[1:])]


def mlm_logits(state: ModelState, src: np.ndarray, positions: np.ndarray | None = None,
               rng: np.random.Generator | None = None) -> Tensor:
    """Masked-LM logits through the tied token table.

    With ``positions`` (flat indices into the (B, S) grid) only those rows
    are projected, giving an (N, V) result.
    """
    enc = encode(state, src, rng)
    if positions is not None:
        enc = nx.gather_rows(enc, positions)
    return output_logits(state, enc)
