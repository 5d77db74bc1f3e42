"""One A3SN encoder layer.

Per head, the layer computes ordinary scaled dot-product attention over a
layer-normalised input, a second read-out of the same attention weights
after multiplying them element-wise by the amplify matrix (so sentence/aspect
cross weights count double), and fuses the two read-outs with sigmoid gates
produced by a width-3 convolution over each read-out::

    head = g_o * head_ori + (1 - g_o) * g_a * head_amp

Heads are concatenated, projected, and passed through
``LN(LN(h) + multihead)`` followed by ``LN(FFN(x) + x)``.

PAD rows of both read-outs are zeroed before gating, so the convolution at
the last real token sees the same zeros whether or not padding follows.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterator, NamedTuple

import numpy as np

from . import tensor as T
from .config import AblationMode
from .encoding import EncodedInput
from .errors import ConfigurationError, DimensionError, EmptyInputError
from .tensor import Tensor

MASK_VALUE = -1e9


def glorot(rng: np.random.Generator, shape: tuple[int, ...], fan_in: int, fan_out: int) -> Tensor:
    limit = math.sqrt(6.0 / (fan_in + fan_out))
    return Tensor(rng.uniform(-limit, limit, size=shape), requires_grad=True)


def _zeros(*shape: int) -> Tensor:
    return Tensor(np.zeros(shape), requires_grad=True)


def _ones(*shape: int) -> Tensor:
    return Tensor(np.ones(shape), requires_grad=True)


@dataclass
class HeadParams:
    w_q: Tensor
    w_k: Tensor
    w_v: Tensor
    gate_o_kernel: Tensor
    gate_o_bias: Tensor
    gate_a_kernel: Tensor
    gate_a_bias: Tensor
    # affine merge of [head_ori, head_amp] used only without gated fusion
    fuse_w: Tensor
    fuse_b: Tensor

    @classmethod
    def init(cls, d_model: int, d_k: int, gate_width: int, rng: np.random.Generator) -> "HeadParams":
        w = gate_width
        return cls(
            w_q=glorot(rng, (d_model, d_k), d_model, d_k),
            w_k=glorot(rng, (d_model, d_k), d_model, d_k),
            w_v=glorot(rng, (d_model, d_k), d_model, d_k),
            gate_o_kernel=glorot(rng, (w, d_k, d_k), w * d_k, w * d_k),
            gate_o_bias=_zeros(d_k),
            gate_a_kernel=glorot(rng, (w, d_k, d_k), w * d_k, w * d_k),
            gate_a_bias=_zeros(d_k),
            fuse_w=glorot(rng, (2 * d_k, d_k), 2 * d_k, d_k),
            fuse_b=_zeros(d_k),
        )


_HEAD_FIELDS = ("w_q", "w_k", "w_v", "gate_o_kernel", "gate_o_bias", "gate_a_kernel", "gate_a_bias", "fuse_w", "fuse_b")


@dataclass
class LayerParams:
    heads: list[HeadParams]
    w_h: Tensor
    ln_in_gamma: Tensor
    ln_in_beta: Tensor
    ln_mid_gamma: Tensor
    ln_mid_beta: Tensor
    ln_out_gamma: Tensor
    ln_out_beta: Tensor
    ffn_w1: Tensor
    ffn_b1: Tensor
    ffn_w2: Tensor
    ffn_b2: Tensor

    @classmethod
    def init(cls, d_model: int, heads: int, d_ff: int, gate_width: int, rng: np.random.Generator) -> "LayerParams":
        if heads < 1 or d_model % heads:
            raise ConfigurationError(f"heads ({heads}) must divide d_model ({d_model})")
        d_k = d_model // heads
        return cls(
            heads=[HeadParams.init(d_model, d_k, gate_width, rng) for _ in range(heads)],
            w_h=glorot(rng, (d_model, d_model), d_model, d_model),
            ln_in_gamma=_ones(d_model),
            ln_in_beta=_zeros(d_model),
            ln_mid_gamma=_ones(d_model),
            ln_mid_beta=_zeros(d_model),
            ln_out_gamma=_ones(d_model),
            ln_out_beta=_zeros(d_model),
            ffn_w1=glorot(rng, (d_model, d_ff), d_model, d_ff),
            ffn_b1=_zeros(d_ff),
            ffn_w2=glorot(rng, (d_ff, d_model), d_ff, d_model),
            ffn_b2=_zeros(d_model),
        )

    @property
    def d_model(self) -> int:
        return self.w_h.shape[1]

    @property
    def d_k(self) -> int:
        return self.heads[0].w_q.shape[1]

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
        for i, head in enumerate(self.heads):
            for name in _HEAD_FIELDS:
                yield f"{prefix}head{i}.{name}", getattr(head, name)
        for name in ("w_h", "ln_in_gamma", "ln_in_beta", "ln_mid_gamma", "ln_mid_beta",
                     "ln_out_gamma", "ln_out_beta", "ffn_w1", "ffn_b1", "ffn_w2", "ffn_b2"):
            yield f"{prefix}{name}", getattr(self, name)


@dataclass
class AttentionTrace:
    """Per-head intermediate arrays of one layer (gates are None without gated fusion)."""

    score_ori: list[np.ndarray]
    score_amp: list[np.ndarray]
    gate_o: list[np.ndarray | None]
    gate_a: list[np.ndarray | None]

    def to_dict(self) -> dict:
        def rows(a):
            return None if a is None else a.tolist()

        return {
            "heads": [
                {
                    "score_ori": rows(so),
                    "score_amp": rows(sa),
                    "gate_o": rows(go),
                    "gate_a": rows(ga),
                }
                for so, sa, go, ga in zip(self.score_ori, self.score_amp, self.gate_o, self.gate_a)
            ]
        }


class AttentionScores(NamedTuple):
    normed: Tensor
    scores: list[Tensor]
    values: list[Tensor]


def key_mask(pad_mask: np.ndarray) -> np.ndarray:
    return np.where(np.asarray(pad_mask) != 0, 0.0, MASK_VALUE)


def attention_scores(h: Tensor, params: LayerParams, pad_mask: np.ndarray, ln_eps: float = 1e-5) -> AttentionScores:
    """Row-softmax of ``Q K^T / sqrt(d_k)`` per head, with PAD keys masked out."""
    pad_mask = np.asarray(pad_mask)
    if pad_mask.shape[0] == 0:
        raise EmptyInputError("attention over an empty sequence")
    if h.ndim != 2 or h.shape != (pad_mask.shape[0], params.d_model):
        raise DimensionError(f"attention_scores: h {h.shape} vs mask {pad_mask.shape}, d_model={params.d_model}")
    normed = T.layer_norm(h, params.ln_in_gamma, params.ln_in_beta, ln_eps)
    mask = Tensor(key_mask(pad_mask))
    inv_sqrt = 1.0 / math.sqrt(params.d_k)
    scores, values = [], []
    for hp in params.heads:
        q = T.matmul(normed, hp.w_q)
        k = T.matmul(normed, hp.w_k)
        logits = T.add_bias(T.scale(T.matmul(q, T.transpose(k)), inv_sqrt), mask)
        scores.append(T.softmax_rows(logits))
        values.append(T.matmul(normed, hp.w_v))
    return AttentionScores(normed, scores, values)


def amplified_attention(score_ori: Tensor, amplify: np.ndarray, values: Tensor) -> tuple[Tensor, Tensor]:
    """Return ``(score_amp @ V, score_amp)`` with ``score_amp = score_ori * amplify``; no renormalisation."""
    amp = np.asarray(amplify, dtype=np.float64)
    if amp.shape != score_ori.shape:
        raise DimensionError(f"amplify {amp.shape} does not match scores {score_ori.shape}")
    score_amp = T.mul(score_ori, amp)
    return T.matmul(score_amp, values), score_amp


def gate_map(x: Tensor, kernel: Tensor, bias: Tensor) -> Tensor:
    return T.sigmoid(T.conv1d_same(x, kernel, bias))


def fuse(gate_o: Tensor, head_ori: Tensor, gate_a: Tensor, head_amp: Tensor) -> Tensor:
    return T.add(T.mul(gate_o, head_ori), T.mul(T.mul(T.sub(1.0, gate_o), gate_a), head_amp))


def gated_fusion(head_ori: Tensor, head_amp: Tensor, hp: HeadParams) -> tuple[Tensor, Tensor, Tensor]:
    """Return ``(head, gate_o, gate_a)``."""
    if head_ori.shape != head_amp.shape:
        raise DimensionError(f"gated_fusion: {head_ori.shape} vs {head_amp.shape}")
    g_o = gate_map(head_ori, hp.gate_o_kernel, hp.gate_o_bias)
    g_a = gate_map(head_amp, hp.gate_a_kernel, hp.gate_a_bias)
    return fuse(g_o, head_ori, g_a, head_amp), g_o, g_a


def ffn(x: Tensor, params: LayerParams, dropout_p: float = 0.0, rng: np.random.Generator | None = None) -> Tensor:
    hidden = T.relu(T.linear(x, params.ffn_w1, params.ffn_b1))
    hidden = T.dropout(hidden, dropout_p, rng)
    return T.linear(hidden, params.ffn_w2, params.ffn_b2)


def layer_forward(
    h: Tensor,
    enc: EncodedInput,
    params: LayerParams,
    mode: AblationMode = AblationMode.FULL,
    dropout_p: float = 0.0,
    training: bool = False,
    rng: np.random.Generator | None = None,
    ln_eps: float = 1e-5,
    double_ln: bool = True,
) -> tuple[Tensor, AttentionTrace]:
    mode = AblationMode.parse(mode)
    if params.d_model != len(params.heads) * params.d_k:
        raise ConfigurationError("d_model must equal heads * d_k")
    if h.ndim != 2 or h.shape[1] != params.d_model:
        raise DimensionError(f"layer_forward: input {h.shape} does not have width {params.d_model}")
    p = dropout_p if training else 0.0
    drng = rng if training else None

    att = attention_scores(h, params, enc.pad_mask, ln_eps)
    row_mask = None
    if not np.all(enc.pad_mask == 1):
        row_mask = np.repeat(np.asarray(enc.pad_mask, dtype=np.float64)[:, None], params.d_k, axis=1)
    trace = AttentionTrace([], [], [], [])
    fused = []
    for hp, score, v in zip(params.heads, att.scores, att.values):
        if p > 0.0 and drng is not None:
            # one dropout mask shared by both read-outs of the same weights
            keep = (drng.random(score.shape) >= p) / (1.0 - p)
            score_amp = T.mul(score, enc.amplify)
            head_ori = T.matmul(T.mul(score, keep), v)
            head_amp = T.matmul(T.mul(score_amp, keep), v)
        else:
            head_ori = T.matmul(score, v)
            head_amp, score_amp = amplified_attention(score, enc.amplify, v)
        if row_mask is not None:
            head_ori = T.mul(head_ori, row_mask)
            head_amp = T.mul(head_amp, row_mask)
        trace.score_ori.append(score.data)
        trace.score_amp.append(score_amp.data)

        g_o = g_a = None
        if mode is AblationMode.FULL:
            head, g_o, g_a = gated_fusion(head_ori, head_amp, hp)
        elif mode is AblationMode.NO_ORIGINAL:
            g_a = gate_map(head_amp, hp.gate_a_kernel, hp.gate_a_bias)
            head = fuse(g_a, head_amp, g_a, head_amp)
        elif mode is AblationMode.NO_AMPLIFIED:
            g_o = gate_map(head_ori, hp.gate_o_kernel, hp.gate_o_bias)
            head = fuse(g_o, head_ori, g_o, head_ori)
        else:
            head = T.linear(T.concat_cols([head_ori, head_amp]), hp.fuse_w, hp.fuse_b)
        trace.gate_o.append(None if g_o is None else g_o.data)
        trace.gate_a.append(None if g_a is None else g_a.data)
        fused.append(head)

    multihead = T.matmul(T.concat_cols(fused), params.w_h)
    residual = att.normed if double_ln else h
    mid = T.layer_norm(T.add(residual, multihead), params.ln_mid_gamma, params.ln_mid_beta, ln_eps)
    out = T.layer_norm(T.add(ffn(mid, params, p, drng), mid), params.ln_out_gamma, params.ln_out_beta, ln_eps)
    return out, trace
