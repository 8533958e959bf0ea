"""Gradient-free incremental decoding with per-layer key/value caches.

One `step` consumes one token per row and returns next-token log-probs;
rows can be reordered or dropped between steps, which is what beam search
needs when it reshuffles or retires hypotheses.  Numerically this matches
the full (training-path) decoder forward pass, which the tests check.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .autodiff import gelu_array, log_softmax_array
from .network import MASK_VALUE, ModelConfig, ModelParams, positional_encoding


def _layer_norm(x: np.ndarray, gain: np.ndarray, bias: np.ndarray, eps: float = 1e-5) -> np.ndarray:
    mu = x.mean(axis=-1, keepdims=True)
    centered = x - mu
    var = (centered * centered).mean(axis=-1, keepdims=True)
    return centered / np.sqrt(var + eps) * gain + bias


def _softmax(x: np.ndarray) -> np.ndarray:
    e = np.exp(x - x.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


@dataclass
class DecodeState:
    """Per-row caches; row order matches the caller's hypothesis order."""

    t: int
    k_self: list[np.ndarray]  # (N, h, max_len, dh) per decoder layer
    v_self: list[np.ndarray]
    k_cross: list[np.ndarray]  # (N, h, S, dh) per decoder layer
    v_cross: list[np.ndarray]
    cross_bias: np.ndarray  # (N, 1, S)
    max_len: int

    @property
    def n_rows(self) -> int:
        return self.cross_bias.shape[0]

    def select_rows(self, rows: np.ndarray) -> "DecodeState":
        rows = np.asarray(rows)
        return DecodeState(
            t=self.t,
            k_self=[k[rows] for k in self.k_self],
            v_self=[v[rows] for v in self.v_self],
            k_cross=[k[rows] for k in self.k_cross],
            v_cross=[v[rows] for v in self.v_cross],
            cross_bias=self.cross_bias[rows],
            max_len=self.max_len,
        )


class IncrementalDecoder:
    def __init__(self, params: ModelParams):
        self.params = params
        self.config: ModelConfig = params.config
        self.arrays = params.arrays
        self.scale = math.sqrt(self.config.d_model)
        self.inv_sqrt_dh = 1.0 / math.sqrt(self.config.d_head)

    def _split_heads(self, x: np.ndarray) -> np.ndarray:
        n = x.shape[0]
        h, dh = self.config.n_heads, self.config.d_head
        return x.reshape(n, -1, h, dh).swapaxes(1, 2)

    def start(self, enc_out: np.ndarray, enc_pad: np.ndarray, max_len: int) -> DecodeState:
        """Prepare caches for `enc_out` of shape (N, S, d)."""
        cfg, a = self.config, self.arrays
        n, s, _ = enc_out.shape
        h, dh = cfg.n_heads, cfg.d_head
        k_self = [np.zeros((n, h, max_len, dh)) for _ in range(cfg.n_dec_layers)]
        v_self = [np.zeros((n, h, max_len, dh)) for _ in range(cfg.n_dec_layers)]
        k_cross, v_cross = [], []
        for i in range(cfg.n_dec_layers):
            p = f"dec{i}.cross"
            k_cross.append(self._split_heads(enc_out @ a[f"{p}.wk"] + a[f"{p}.bk"]))
            v_cross.append(self._split_heads(enc_out @ a[f"{p}.wv"] + a[f"{p}.bv"]))
        cross_bias = np.where(enc_pad, MASK_VALUE, 0.0)[:, None, :]
        return DecodeState(0, k_self, v_self, k_cross, v_cross, cross_bias, max_len)

    def step(self, state: DecodeState, last_ids: np.ndarray) -> np.ndarray:
        """Consume one token per row; returns next-token log-probs (N, V)."""
        cfg, a = self.config, self.arrays
        n = len(last_ids)
        h, dh = cfg.n_heads, cfg.d_head
        t = state.t
        if t >= state.max_len:
            raise ValueError("decode state is full")
        x = a["embed"][last_ids] * self.scale + positional_encoding(state.max_len, cfg.d_model)[t]
        for i in range(cfg.n_dec_layers):
            p = f"dec{i}"
            normed = _layer_norm(x, a[f"{p}.ln1.gain"], a[f"{p}.ln1.bias"])
            q = self._split_heads(normed @ a[f"{p}.self.wq"] + a[f"{p}.self.bq"])[:, :, 0]
            state.k_self[i][:, :, t] = self._split_heads(normed @ a[f"{p}.self.wk"] + a[f"{p}.self.bk"])[:, :, 0]
            state.v_self[i][:, :, t] = self._split_heads(normed @ a[f"{p}.self.wv"] + a[f"{p}.self.bv"])[:, :, 0]
            keys = state.k_self[i][:, :, : t + 1]
            values = state.v_self[i][:, :, : t + 1]
            scores = np.einsum("nhd,nhtd->nht", q, keys) * self.inv_sqrt_dh
            ctx = np.einsum("nht,nhtd->nhd", _softmax(scores), values).reshape(n, h * dh)
            x = x + ctx @ a[f"{p}.self.wo"] + a[f"{p}.self.bo"]

            normed = _layer_norm(x, a[f"{p}.ln2.gain"], a[f"{p}.ln2.bias"])
            q = self._split_heads(normed @ a[f"{p}.cross.wq"] + a[f"{p}.cross.bq"])[:, :, 0]
            scores = np.einsum("nhd,nhsd->nhs", q, state.k_cross[i]) * self.inv_sqrt_dh
            scores = scores + state.cross_bias
            ctx = np.einsum("nhs,nhsd->nhd", _softmax(scores), state.v_cross[i]).reshape(n, h * dh)
            x = x + ctx @ a[f"{p}.cross.wo"] + a[f"{p}.cross.bo"]

            normed = _layer_norm(x, a[f"{p}.ln3.gain"], a[f"{p}.ln3.bias"])
            hidden = gelu_array(normed @ a[f"{p}.ff.w1"] + a[f"{p}.ff.b1"])
            x = x + hidden @ a[f"{p}.ff.w2"] + a[f"{p}.ff.b2"]

        x = _layer_norm(x, a["dec.ln.gain"], a["dec.ln.bias"])
        logits = x @ a["out.w"] + a["out.b"]
        state.t = t + 1
        return log_softmax_array(logits, axis=-1)
