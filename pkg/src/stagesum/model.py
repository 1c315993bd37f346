"""Transformer encoder-decoder with tied embeddings and a copy-attention head.

The output projection reuses the input embedding matrix.  One designated
head of the top decoder layer's cross-attention provides pre-softmax copy
logits, mixed with the generation logits through a learned sigmoid gate.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .tokenizer import PAD

NEG_MASK = -10000.0


class DecodeError(RuntimeError):
    pass


@dataclass
class ModelConfig:
    num_layers: int = 2
    hidden_size: int = 32
    num_heads: int = 4
    ffn_size: int = 64
    vocab_size: int = 64
    encoder_positions: int = 32
    decoder_positions: int = 16
    dropout_rate: float = 0.3
    copy_enabled: bool = True
    copy_head_index: int = 0

    def __post_init__(self):
        if self.hidden_size % self.num_heads != 0:
            raise ValueError("hidden_size must be divisible by num_heads")
        if self.copy_enabled and not 0 <= self.copy_head_index < self.num_heads:
            raise ValueError("copy_head_index out of range")

    def fingerprint(self, arch: str) -> dict:
        return {
            "arch": arch,
            "num_layers": self.num_layers,
            "hidden_size": self.hidden_size,
            "num_heads": self.num_heads,
            "ffn_size": self.ffn_size,
            "vocab_size": self.vocab_size,
            "encoder_positions": self.encoder_positions,
            "decoder_positions": self.decoder_positions,
        }


def _attn_names(prefix):
    for proj in ("q", "k", "v", "o"):
        yield f"{prefix}.{proj}.weight"
        yield f"{prefix}.{proj}.bias"


def param_spec(config: ModelConfig, arch: str = "seq2seq") -> list[tuple[str, tuple, str]]:
    """Full list of (name, shape, kind) for an architecture.

    kind is "weight" (truncated-normal init), "bias" (zeros), or "gain" (ones).
    arch is "seq2seq", "mlm_encoder", or "selector".
    """
    h, f, v = config.hidden_size, config.ffn_size, config.vocab_size
    spec = [("embedding.word", (v, h), "weight"),
            ("embedding.pos_enc", (config.encoder_positions, h), "weight")]
    if arch == "seq2seq":
        spec.append(("embedding.pos_dec", (config.decoder_positions, h), "weight"))

    def block(prefix, cross=False):
        names = []
        for sub in ("self_attn",) + (("cross_attn",) if cross else ()):
            for n in _attn_names(f"{prefix}.{sub}"):
                names.append((n, (h, h) if n.endswith("weight") else (h,),
                              "weight" if n.endswith("weight") else "bias"))
            names.append((f"{prefix}.{sub}_norm.gain", (h,), "gain"))
            names.append((f"{prefix}.{sub}_norm.bias", (h,), "bias"))
        names += [(f"{prefix}.ffn.in.weight", (h, f), "weight"),
                  (f"{prefix}.ffn.in.bias", (f,), "bias"),
                  (f"{prefix}.ffn.out.weight", (f, h), "weight"),
                  (f"{prefix}.ffn.out.bias", (h,), "bias"),
                  (f"{prefix}.ffn_norm.gain", (h,), "gain"),
                  (f"{prefix}.ffn_norm.bias", (h,), "bias")]
        return names

    for i in range(config.num_layers):
        spec += block(f"encoder.layer.{i}")
    if arch == "seq2seq":
        for i in range(config.num_layers):
            spec += block(f"decoder.layer.{i}", cross=True)
        spec += [("output.bias", (v,), "bias"),
                 ("gate.weight", (h,), "weight"),
                 ("gate.bias", (), "bias")]
    elif arch == "mlm_encoder":
        spec.append(("mlm.bias", (v,), "bias"))
    elif arch == "selector":
        spec += [("selector.weight", (h,), "weight"),
                 ("selector.bias", (), "bias")]
    else:
        raise ValueError(f"unknown architecture {arch!r}")
    return spec


@dataclass
class DecoderStepState:
    d_t: np.ndarray
    cross_logits: np.ndarray       # [heads, source_positions], top layer
    copy_logits: np.ndarray        # designated head's row of the above
    gen_logits: np.ndarray         # [vocab]
    p_gen: float
    mixed_logits: Optional[np.ndarray] = None


def _attention(store, prefix: str, q_in: Tensor, kv_in: Tensor, mask_add,
               config: ModelConfig, capture: Optional[dict] = None,
               capture_key: Optional[str] = None) -> Tensor:
    h = config.num_heads
    dh = config.hidden_size // h

    def proj(name, x):
        return ad.matmul(x, store[f"{prefix}.{name}.weight"]) + store[f"{prefix}.{name}.bias"]

    sq = q_in.shape[0]
    sk = kv_in.shape[0]
    q = proj("q", q_in).reshape(sq, h, dh).swapaxes(0, 1)
    k = proj("k", kv_in).reshape(sk, h, dh).swapaxes(0, 1)
    v = proj("v", kv_in).reshape(sk, h, dh).swapaxes(0, 1)
    scores = ad.matmul(q, k.swapaxes(1, 2)) * (1.0 / math.sqrt(dh))
    if mask_add is not None:
        scores = scores + Tensor(mask_add)
    if capture is not None:
        capture[capture_key] = scores
    weights = ad.softmax(scores, axis=-1)
    ctx = ad.matmul(weights, v).swapaxes(0, 1).reshape(sq, config.hidden_size)
    return proj("o", ctx)


def _ffn(store, prefix: str, x: Tensor) -> Tensor:
    inner = ad.gelu(ad.matmul(x, store[f"{prefix}.in.weight"]) + store[f"{prefix}.in.bias"])
    return ad.matmul(inner, store[f"{prefix}.out.weight"]) + store[f"{prefix}.out.bias"]


def _sublayer(store, norm_prefix: str, x: Tensor, out: Tensor, rate, rng) -> Tensor:
    out = ad.dropout_tokens(out, rate, rng)
    return ad.layer_norm(x + out, store[f"{norm_prefix}.gain"], store[f"{norm_prefix}.bias"])


def pad_mask_add(pad_mask: np.ndarray) -> np.ndarray:
    """Additive attention mask hiding pad key positions: [1, 1, keys]."""
    return (pad_mask.astype(np.float64) * NEG_MASK)[None, None, :]


def causal_mask_add(n: int) -> np.ndarray:
    m = np.triu(np.full((n, n), NEG_MASK), k=1)
    return m[None, :, :]


def embed(store, ids: np.ndarray, pos_table: str, config: ModelConfig,
          rate=0.0, rng=None) -> Tensor:
    if np.any(ids >= config.vocab_size) or np.any(ids < 0):
        raise ad.ShapeError("token id out of vocabulary range")
    pos = store[pos_table]
    if len(ids) > pos.shape[0]:
        raise ad.ShapeError(
            f"sequence length {len(ids)} exceeds {pos_table} table {pos.shape[0]}")
    x = ad.embedding(store["embedding.word"], ids) + pos[: len(ids)]
    return ad.dropout_tokens(x, rate, rng)


def encode(store, config: ModelConfig, source_ids: np.ndarray,
           source_pad_mask: np.ndarray, rng=None, prefix: str = "encoder") -> Tensor:
    """Run the encoder stack; pad positions are hidden from attention."""
    if source_pad_mask.all():
        raise ValueError("encode requires at least one non-pad source position")
    rate = config.dropout_rate if rng is not None else 0.0
    x = embed(store, source_ids, "embedding.pos_enc", config, rate, rng)
    mask = pad_mask_add(source_pad_mask)
    for i in range(config.num_layers):
        p = f"{prefix}.layer.{i}"
        att = _attention(store, f"{p}.self_attn", x, x, mask, config)
        x = _sublayer(store, f"{p}.self_attn_norm", x, att, rate, rng)
        x = _sublayer(store, f"{p}.ffn_norm", x, _ffn(store, f"{p}.ffn", x), rate, rng)
    return x


def decoder_stack(store, config: ModelConfig, encoder_out: Tensor,
                  source_pad_mask: np.ndarray, input_ids: np.ndarray,
                  rng=None) -> tuple[Tensor, Tensor]:
    """Causal decoder over `input_ids`; returns (hidden states, top-layer
    cross-attention logits [heads, steps, source_positions], pre-softmax)."""
    t = len(input_ids)
    if t > config.decoder_positions:
        raise DecodeError(f"decoder length {t} exceeds limit {config.decoder_positions}")
    rate = config.dropout_rate if rng is not None else 0.0
    x = embed(store, input_ids, "embedding.pos_dec", config, rate, rng)
    causal = causal_mask_add(t)
    src_mask = pad_mask_add(source_pad_mask)
    capture: dict = {}
    for i in range(config.num_layers):
        p = f"decoder.layer.{i}"
        att = _attention(store, f"{p}.self_attn", x, x, causal, config)
        x = _sublayer(store, f"{p}.self_attn_norm", x, att, rate, rng)
        top = i == config.num_layers - 1
        cross = _attention(store, f"{p}.cross_attn", x, encoder_out, src_mask, config,
                           capture=capture if top else None, capture_key="cross")
        x = _sublayer(store, f"{p}.cross_attn_norm", x, cross, rate, rng)
        x = _sublayer(store, f"{p}.ffn_norm", x, _ffn(store, f"{p}.ffn", x), rate, rng)
    return x, capture["cross"]


def gate(store, d: Tensor) -> Tensor:
    """p_gen = sigmoid(d . gate.weight + gate.bias); per row when d is 2-D."""
    return ad.sigmoid(ad.matmul(d, store["gate.weight"]) + store["gate.bias"])


def generation_logits(store, d: Tensor) -> Tensor:
    """Tied-embedding output projection: d V^T + b_v."""
    return ad.matmul(d, store["embedding.word"].transpose()) + store["output.bias"]


def selection_mask_add(selected: np.ndarray) -> np.ndarray:
    """Additive copy-logit mask: 0 where selected, -10000 elsewhere."""
    return (1.0 - selected.astype(np.float64)) * NEG_MASK


def selection_vocab_mask_add(source_ids: np.ndarray, source_pad_mask: np.ndarray,
                             selected: np.ndarray, vocab_size: int) -> np.ndarray:
    """Additive vocab-space copy mask: -10000 for source token types with no
    selected occurrence, 0 elsewhere.

    Applied after the copy scatter so that a token type repeated at both
    selected and unselected source positions keeps its selected logits
    instead of inheriting a -10000 offset per unselected duplicate.  On
    sources without repeated tokens this equals masking each position's
    logit before the scatter.
    """
    mask = np.zeros(vocab_size)
    nonpad = ~source_pad_mask
    present = source_ids[nonpad]
    kept = source_ids[nonpad & selected.astype(bool)]
    blocked = np.setdiff1d(present, kept)
    mask[blocked] = NEG_MASK
    return mask


def mixed_logits(store, config: ModelConfig, d: Tensor, copy_logits: Tensor,
                 source_ids: np.ndarray, source_pad_mask: np.ndarray,
                 selected: Optional[np.ndarray] = None
                 ) -> tuple[Tensor, Tensor, Tensor]:
    """Gate-weighted sum of generation and scatter-projected copy logits.

    copy_logits is [steps, source_positions].  Returns (mixed [steps, vocab],
    gen_logits, p_gen).  Pad source positions never enter the scatter.
    """
    y = generation_logits(store, d)
    ids = np.where(source_pad_mask, -1, source_ids)
    copy_vocab = ad.scatter_copy(copy_logits, ids, config.vocab_size)
    if selected is not None:
        copy_vocab = copy_vocab + Tensor(selection_vocab_mask_add(
            source_ids, source_pad_mask, selected, config.vocab_size))
    p = gate(store, d)
    p2 = p.reshape(-1, 1)
    z = p2 * y + (1.0 - p2) * copy_vocab
    return z, y, p


def mix_copy_logits(state: DecoderStepState, source_ids: np.ndarray,
                    source_pad_mask: np.ndarray, vocab_size: int,
                    selected: Optional[np.ndarray] = None) -> np.ndarray:
    """Single-step mixing on raw arrays (no tape): z = p y + (1-p) aX."""
    a = state.copy_logits.astype(np.float64)
    from . import kernels
    ids = np.where(source_pad_mask, -1, source_ids)
    ax = kernels.scatter_copy_forward(a[None, :], ids, vocab_size)[0]
    if selected is not None:
        ax += selection_vocab_mask_add(source_ids, source_pad_mask, selected,
                                       vocab_size)
    z = state.p_gen * state.gen_logits + (1.0 - state.p_gen) * ax
    state.mixed_logits = z
    return z


def forward_teacher_forced(store, config: ModelConfig, example,
                           selected: Optional[np.ndarray] = None,
                           rng=None, training: bool = False):
    """Teacher-forced decode over all target positions.

    Returns (P [steps, vocab] as a Tensor of per-position distributions,
    cache dict).  Dropout is active iff training and rng is given.
    """
    from .tokenizer import BOS

    drop_rng = rng if training else None
    enc = encode(store, config, example.source_ids, example.source_pad_mask, drop_rng)
    dec_input = np.concatenate(([BOS], example.target_ids[:-1]))
    d, cross = decoder_stack(store, config, enc, example.source_pad_mask,
                             dec_input, drop_rng)
    cache = {"encoder_out": enc, "decoder_out": d, "cross_logits": cross}
    if config.copy_enabled:
        copy = cross[config.copy_head_index]
        z, y, p = mixed_logits(store, config, d, copy, example.source_ids,
                               example.source_pad_mask, selected)
        cache.update(copy_logits=copy, gen_logits=y, p_gen=p)
    else:
        z = generation_logits(store, d)
        cache["gen_logits"] = z
    probs = ad.softmax(z, axis=-1)
    cache["mixed_logits"] = z
    return probs, cache


def decode_step(store, config: ModelConfig, encoder_out: Tensor,
                source_ids: np.ndarray, source_pad_mask: np.ndarray,
                prefix_ids: np.ndarray,
                selected: Optional[np.ndarray] = None) -> DecoderStepState:
    """State for the position after `prefix_ids` (which starts with BOS)."""
    prefix_ids = np.asarray(prefix_ids, dtype=np.int64)
    if len(prefix_ids) > config.decoder_positions:
        raise DecodeError(
            f"prefix length {len(prefix_ids)} exceeds limit {config.decoder_positions}")
    with ad.no_grad():
        d, cross = decoder_stack(store, config, encoder_out, source_pad_mask,
                                 prefix_ids)
        d_t = d[-1]
        gen = generation_logits(store, d_t)
        p = gate(store, d_t)
    state = DecoderStepState(
        d_t=d_t.data, cross_logits=cross.data[:, -1, :],
        copy_logits=cross.data[config.copy_head_index, -1, :],
        gen_logits=gen.data, p_gen=float(p.data))
    if config.copy_enabled:
        mix_copy_logits(state, source_ids, source_pad_mask, config.vocab_size, selected)
    else:
        state.mixed_logits = state.gen_logits
    return state
