"""Encoder-decoder backbone with a generation head and a ranking head.

A pre-norm transformer: the encoder applies bidirectional self-attention,
the decoder adds causal self-attention and cross-attention over encoder
states.  The generation head projects decoder states to next-token logits;
the ranking head is a two-layer MLP (tanh hidden) over the decoder state at
the expression's final [eos] position, producing a wrong/right probability
pair.  Both heads share every backbone parameter.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import asdict, dataclass
from functools import lru_cache
from typing import Sequence

import numpy as np

from ..errors import DimensionMismatchError, NonFiniteError
from ..seeding import stream
from . import autodiff as ad
from .autodiff import Tensor
from .vocab import Vocab

MASK_VALUE = -1e30
INIT_RANGE = 0.08


@dataclass(frozen=True)
class ModelConfig:
    d_model: int = 64
    n_heads: int = 4
    n_enc_layers: int = 2
    n_dec_layers: int = 2
    d_ff: int = 128

    def __post_init__(self):
        if self.d_model % self.n_heads != 0:
            raise DimensionMismatchError(
                f"d_model {self.d_model} not divisible by n_heads {self.n_heads}"
            )

    @property
    def d_head(self) -> int:
        return self.d_model // self.n_heads

    def to_dict(self) -> dict:
        return asdict(self)


def config_hash(config: ModelConfig, vocab_tokens: Sequence[str]) -> str:
    payload = json.dumps({"config": config.to_dict(), "vocab": list(vocab_tokens)}, sort_keys=True)
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()[:16]


def _attention_names(prefix: str, d: int) -> dict[str, tuple]:
    shapes = {}
    for part in ("q", "k", "v", "o"):
        shapes[f"{prefix}.w{part}"] = (d, d)
        shapes[f"{prefix}.b{part}"] = (d,)
    return shapes


def _block_names(prefix: str, d: int, d_ff: int, cross: bool) -> dict[str, tuple]:
    shapes = {f"{prefix}.ln1.gain": (d,), f"{prefix}.ln1.bias": (d,)}
    shapes.update(_attention_names(f"{prefix}.self", d))
    if cross:
        shapes.update({f"{prefix}.ln2.gain": (d,), f"{prefix}.ln2.bias": (d,)})
        shapes.update(_attention_names(f"{prefix}.cross", d))
        ff_ln = "ln3"
    else:
        ff_ln = "ln2"
    shapes.update({f"{prefix}.{ff_ln}.gain": (d,), f"{prefix}.{ff_ln}.bias": (d,)})
    shapes.update(
        {
            f"{prefix}.ff.w1": (d, d_ff),
            f"{prefix}.ff.b1": (d_ff,),
            f"{prefix}.ff.w2": (d_ff, d),
            f"{prefix}.ff.b2": (d,),
        }
    )
    return shapes


def param_shapes(config: ModelConfig, vocab_size: int) -> dict[str, tuple]:
    """Ordered name -> shape map for every trainable array."""
    d, d_ff = config.d_model, config.d_ff
    shapes: dict[str, tuple] = {"embed": (vocab_size, d)}
    for i in range(config.n_enc_layers):
        shapes.update(_block_names(f"enc{i}", d, d_ff, cross=False))
    shapes.update({"enc.ln.gain": (d,), "enc.ln.bias": (d,)})
    for i in range(config.n_dec_layers):
        shapes.update(_block_names(f"dec{i}", d, d_ff, cross=True))
    shapes.update({"dec.ln.gain": (d,), "dec.ln.bias": (d,)})
    shapes.update({"out.w": (d, vocab_size), "out.b": (vocab_size,)})
    shapes.update({"rank.w1": (d, d), "rank.b1": (d,), "rank.w2": (d, 2), "rank.b2": (2,)})
    return shapes


def _is_gain(name: str) -> bool:
    return name.endswith(".gain")


def _is_bias(name: str) -> bool:
    return name.split(".")[-1].startswith("b")


class ModelParams:
    """Named parameter arrays plus the config and vocabulary they belong to."""

    def __init__(self, config: ModelConfig, vocab: Vocab, arrays: dict[str, np.ndarray]):
        expected = param_shapes(config, len(vocab))
        if set(arrays) != set(expected):
            missing = set(expected) ^ set(arrays)
            raise DimensionMismatchError(f"parameter names mismatch: {sorted(missing)}")
        for name, shape in expected.items():
            if arrays[name].shape != shape:
                raise DimensionMismatchError(
                    f"{name}: expected shape {shape}, got {arrays[name].shape}"
                )
        self.config = config
        self.vocab = vocab
        self.arrays = {name: np.asarray(arrays[name], dtype=np.float64) for name in expected}

    @classmethod
    def init(cls, config: ModelConfig, vocab: Vocab, seed: int = 0) -> "ModelParams":
        """Uniform(-0.08, 0.08) weights, zero biases, unit layer-norm gains."""
        rng = stream(seed, "init")
        arrays = {}
        for name, shape in param_shapes(config, len(vocab)).items():
            if _is_gain(name):
                arrays[name] = np.ones(shape)
            elif _is_bias(name):
                arrays[name] = np.zeros(shape)
            else:
                arrays[name] = rng.uniform(-INIT_RANGE, INIT_RANGE, size=shape)
        return cls(config, vocab, arrays)

    def copy(self) -> "ModelParams":
        return ModelParams(self.config, self.vocab, {n: a.copy() for n, a in self.arrays.items()})

    def hash(self) -> str:
        return config_hash(self.config, self.vocab.tokens)

    def n_parameters(self) -> int:
        return sum(a.size for a in self.arrays.values())


GradientBundle = dict[str, np.ndarray]


@lru_cache(maxsize=8)
def _positional_encoding(length: int, d_model: int) -> np.ndarray:
    position = np.arange(length, dtype=np.float64)[:, None]
    freq = np.exp(-math.log(10000.0) * (np.arange(0, d_model, 2, dtype=np.float64) / d_model))
    pe = np.zeros((length, d_model))
    pe[:, 0::2] = np.sin(position * freq)
    pe[:, 1::2] = np.cos(position * freq)
    pe.flags.writeable = False
    return pe


def positional_encoding(length: int, d_model: int) -> np.ndarray:
    return _positional_encoding(length, d_model)


def _wrap(params: ModelParams) -> dict[str, Tensor]:
    return {name: Tensor(arr, needs_grad=True) for name, arr in params.arrays.items()}


def _collect_grads(pt: dict[str, Tensor]) -> GradientBundle:
    return {
        name: (t.grad if t.grad is not None else np.zeros_like(t.data)) for name, t in pt.items()
    }


def _attention(pt, prefix: str, q_in: Tensor, kv_in: Tensor, bias: np.ndarray | None, config: ModelConfig) -> Tensor:
    b, sq = q_in.shape[0], q_in.shape[1]
    sk = kv_in.shape[1]
    h, dh = config.n_heads, config.d_head

    def split_heads(x: Tensor, length: int) -> Tensor:
        return ad.swapaxes(ad.reshape(x, (b, length, h, dh)), 1, 2)

    q = split_heads(ad.matmul(q_in, pt[f"{prefix}.wq"]) + pt[f"{prefix}.bq"], sq)
    k = split_heads(ad.matmul(kv_in, pt[f"{prefix}.wk"]) + pt[f"{prefix}.bk"], sk)
    v = split_heads(ad.matmul(kv_in, pt[f"{prefix}.wv"]) + pt[f"{prefix}.bv"], sk)
    scores = ad.matmul(q, ad.swapaxes(k, 2, 3)) * (1.0 / math.sqrt(dh))
    if bias is not None:
        scores = scores + bias
    attn = ad.softmax(scores, axis=-1)
    context = ad.reshape(ad.swapaxes(ad.matmul(attn, v), 1, 2), (b, sq, h * dh))
    return ad.matmul(context, pt[f"{prefix}.wo"]) + pt[f"{prefix}.bo"]


def _feed_forward(pt, prefix: str, x: Tensor) -> Tensor:
    hidden = ad.gelu(ad.matmul(x, pt[f"{prefix}.w1"]) + pt[f"{prefix}.b1"])
    return ad.matmul(hidden, pt[f"{prefix}.w2"]) + pt[f"{prefix}.b2"]


def _ln(pt, prefix: str, x: Tensor) -> Tensor:
    return ad.layer_norm(x, pt[f"{prefix}.gain"], pt[f"{prefix}.bias"])


def pad_bias(pad_mask: np.ndarray) -> np.ndarray:
    """(B, S) boolean padding -> additive (B, 1, 1, S) attention bias."""
    return np.where(pad_mask, MASK_VALUE, 0.0)[:, None, None, :]


def causal_bias(length: int) -> np.ndarray:
    mask = np.triu(np.full((length, length), MASK_VALUE), k=1)
    return mask[None, None, :, :]


def _embed(pt, config: ModelConfig, ids: np.ndarray) -> Tensor:
    scale = math.sqrt(config.d_model)
    return ad.embedding(pt["embed"], ids) * scale + positional_encoding(ids.shape[1], config.d_model)


def encoder_forward(pt, config: ModelConfig, src_ids: np.ndarray, src_pad: np.ndarray) -> Tensor:
    bias = pad_bias(src_pad)
    x = _embed(pt, config, src_ids)
    for i in range(config.n_enc_layers):
        p = f"enc{i}"
        normed = _ln(pt, f"{p}.ln1", x)
        x = x + _attention(pt, f"{p}.self", normed, normed, bias, config)
        x = x + _feed_forward(pt, f"{p}.ff", _ln(pt, f"{p}.ln2", x))
    return _ln(pt, "enc.ln", x)


def decoder_forward(
    pt,
    config: ModelConfig,
    enc_out: Tensor,
    enc_pad: np.ndarray,
    tgt_ids: np.ndarray,
    tgt_pad: np.ndarray,
) -> Tensor:
    t = tgt_ids.shape[1]
    self_bias = causal_bias(t) + pad_bias(tgt_pad)
    cross_bias = pad_bias(enc_pad)
    x = _embed(pt, config, tgt_ids)
    for i in range(config.n_dec_layers):
        p = f"dec{i}"
        normed = _ln(pt, f"{p}.ln1", x)
        x = x + _attention(pt, f"{p}.self", normed, normed, self_bias, config)
        x = x + _attention(pt, f"{p}.cross", _ln(pt, f"{p}.ln2", x), enc_out, cross_bias, config)
        x = x + _feed_forward(pt, f"{p}.ff", _ln(pt, f"{p}.ln3", x))
    return _ln(pt, "dec.ln", x)


def _check_ids(params: ModelParams, ids: np.ndarray) -> np.ndarray:
    ids = np.asarray(ids, dtype=np.int64)
    if ids.size == 0:
        raise DimensionMismatchError("empty token sequence")
    if ids.min() < 0 or ids.max() >= len(params.vocab):
        raise DimensionMismatchError(
            f"token index out of range for vocabulary of size {len(params.vocab)}"
        )
    return ids


def encode(params: ModelParams, src_ids) -> np.ndarray:
    """Encoder states for one unpadded sequence: (len, d_model)."""
    ids = _check_ids(params, src_ids)[None, :]
    with ad.no_grad():
        out = encoder_forward(_wrap(params), params.config, ids, np.zeros_like(ids, dtype=bool))
    return out.data[0]


def decode_step(params: ModelParams, enc_states: np.ndarray, prefix) -> np.ndarray:
    """Next-token probability vector after consuming the prefix (starts with [bos])."""
    ids = _check_ids(params, prefix)
    if ids[0] != params.vocab.bos_id:
        raise DimensionMismatchError("decoder prefix must start with [bos]")
    if enc_states.ndim != 2 or enc_states.shape[1] != params.config.d_model:
        raise DimensionMismatchError("encoder states must be (len, d_model)")
    with ad.no_grad():
        pt = _wrap(params)
        enc = Tensor(enc_states[None, :, :])
        enc_pad = np.zeros((1, enc_states.shape[0]), dtype=bool)
        dec = decoder_forward(pt, params.config, enc, enc_pad, ids[None, :], np.zeros((1, len(ids)), dtype=bool))
        logits = ad.matmul(dec, pt["out.w"]) + pt["out.b"]
        probs = ad.softmax(logits, axis=-1)
    return probs.data[0, -1]


def _pad_batch(seqs: Sequence[np.ndarray], pad_id: int) -> tuple[np.ndarray, np.ndarray]:
    longest = max(len(s) for s in seqs)
    ids = np.full((len(seqs), longest), pad_id, dtype=np.int64)
    for i, s in enumerate(seqs):
        ids[i, : len(s)] = s
    return ids, ids == pad_id


def generation_loss(
    params: ModelParams,
    batch: Sequence[tuple[np.ndarray, np.ndarray]],
    want_grads: bool = True,
) -> tuple[float, GradientBundle | None]:
    """Teacher-forced negative log-likelihood, averaged over the batch.

    Each target must be wrapped as [bos] tokens... [eos]; the per-example
    loss is the sum of token losses (not the per-token mean).
    """
    if not batch:
        raise ValueError("empty batch")
    vocab, config = params.vocab, params.config
    src_ids, src_pad = _pad_batch([_check_ids(params, s) for s, _ in batch], vocab.pad_id)
    tgt_full = [_check_ids(params, t) for _, t in batch]
    for t in tgt_full:
        if t[0] != vocab.bos_id or t[-1] != vocab.eos_id:
            raise DimensionMismatchError("targets must be wrapped with [bos]/[eos]")
    tgt_ids, _ = _pad_batch(tgt_full, vocab.pad_id)
    dec_in = tgt_ids[:, :-1]
    labels = tgt_ids[:, 1:]
    label_mask = (labels != vocab.pad_id).astype(np.float64)

    def forward(pt) -> Tensor:
        enc = encoder_forward(pt, config, src_ids, src_pad)
        dec = decoder_forward(pt, config, enc, src_pad, dec_in, dec_in == vocab.pad_id)
        logits = ad.matmul(dec, pt["out.w"]) + pt["out.b"]
        logp = ad.log_softmax(logits, axis=-1)
        picked = ad.gather_last(logp, labels)
        return ad.tsum(picked * label_mask) * (-1.0 / len(batch))

    if not want_grads:
        with ad.no_grad():
            loss = forward(_wrap(params))
        value = float(loss.data)
        if not np.isfinite(value):
            raise NonFiniteError(f"generation loss is {value}")
        return value, None
    pt = _wrap(params)
    loss = forward(pt)
    value = float(loss.data)
    if not np.isfinite(value):
        raise NonFiniteError(f"generation loss is {value}")
    loss.backward()
    return value, _collect_grads(pt)


def _rank_logits(pt, config: ModelConfig, src_ids, src_pad, expr_ids, expr_pad, last_pos) -> Tensor:
    enc = encoder_forward(pt, config, src_ids, src_pad)
    dec = decoder_forward(pt, config, enc, src_pad, expr_ids, expr_pad)
    state = ad.select_positions(dec, last_pos)
    hidden = ad.tanh(ad.matmul(state, pt["rank.w1"]) + pt["rank.b1"])
    return ad.matmul(hidden, pt["rank.w2"]) + pt["rank.b2"]


def _rank_batch_arrays(params: ModelParams, pairs: Sequence[tuple[np.ndarray, np.ndarray]]):
    vocab = params.vocab
    src_ids, src_pad = _pad_batch([_check_ids(params, s) for s, _ in pairs], vocab.pad_id)
    exprs = [_check_ids(params, e) for _, e in pairs]
    for e in exprs:
        if e[0] != vocab.bos_id or e[-1] != vocab.eos_id:
            raise DimensionMismatchError("expressions must be wrapped with [bos]/[eos]")
    expr_ids, expr_pad = _pad_batch(exprs, vocab.pad_id)
    last_pos = np.array([len(e) - 1 for e in exprs], dtype=np.int64)
    return src_ids, src_pad, expr_ids, expr_pad, last_pos


def rank_scores(params: ModelParams, pairs: Sequence[tuple[np.ndarray, np.ndarray]]) -> np.ndarray:
    """(N, 2) softmax rows: column 1 is the ranking score Pr(correct | P, S)."""
    arrays = _rank_batch_arrays(params, pairs)
    with ad.no_grad():
        logits = _rank_logits(_wrap(params), params.config, *arrays)
        probs = ad.softmax(logits, axis=-1)
    return probs.data


def rank_score(params: ModelParams, src_ids, expr_ids) -> tuple[float, float]:
    """Probability pair (Pr(wrong), Pr(correct)) for one problem/expression pair."""
    row = rank_scores(params, [(np.asarray(src_ids), np.asarray(expr_ids))])[0]
    return float(row[0]), float(row[1])


def ranking_loss(
    params: ModelParams,
    batch: Sequence[tuple[np.ndarray, np.ndarray, int]],
    want_grads: bool = True,
) -> tuple[float, GradientBundle | None]:
    """Mean cross-entropy of the ranking head on labeled pairs (labels in {0,1})."""
    if not batch:
        raise ValueError("empty batch")
    labels = np.array([label for _, _, label in batch], dtype=np.int64)
    if not np.isin(labels, (0, 1)).all():
        raise ValueError("ranking labels must be 0 or 1")
    arrays = _rank_batch_arrays(params, [(s, e) for s, e, _ in batch])

    def forward(pt) -> Tensor:
        logits = _rank_logits(pt, params.config, *arrays)
        logp = ad.log_softmax(logits, axis=-1)
        return ad.tmean(ad.gather_last(logp, labels)) * -1.0

    if not want_grads:
        with ad.no_grad():
            loss = forward(_wrap(params))
        value = float(loss.data)
        if not np.isfinite(value):
            raise NonFiniteError(f"ranking loss is {value}")
        return value, None
    pt = _wrap(params)
    loss = forward(pt)
    value = float(loss.data)
    if not np.isfinite(value):
        raise NonFiniteError(f"ranking loss is {value}")
    loss.backward()
    return value, _collect_grads(pt)
