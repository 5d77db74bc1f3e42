"""Finite-difference sweep over every differentiable op, the layer and the model loss."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from . import tensor as T
from .config import AblationMode, TrainConfig
from .encoding import Example, build_vocab, encode
from .errors import ContractError
from .layer import LayerParams, amplified_attention, attention_scores, ffn, gated_fusion, layer_forward
from .model import ModelParams, forward, loss
from .tensor import Tensor, grad_check


@dataclass
class OpCheck:
    name: str
    max_rel_error: float
    n_coords: int
    passed: bool


def _t(rng: np.random.Generator, *shape: int, positive: bool = False) -> Tensor:
    data = rng.uniform(0.5, 2.0, size=shape) if positive else rng.normal(size=shape)
    return Tensor(data, requires_grad=True)


def _project(out: Tensor, rng: np.random.Generator) -> Callable[[Tensor], Tensor]:
    """Fixed random linear functional turning any tensor into a scalar."""
    weights = rng.normal(size=out.shape)
    return lambda y: T.sum_all(T.mul(y, weights))


def _scalar(fn: Callable[..., Tensor], inputs: Sequence[Tensor], rng: np.random.Generator) -> Callable:
    with T.no_grad():
        proj = _project(fn(*inputs), rng)
    return lambda xs: proj(fn(*xs))


def _op_cases(rng: np.random.Generator) -> list[tuple[str, Callable[..., Tensor], list[Tensor]]]:
    """One case per differentiable primitive, each on fresh random inputs."""
    a34, b34 = _t(rng, 3, 4), _t(rng, 3, 4)
    mask = np.array([1.0, 0.0, 1.0, 1.0, 0.0])
    dropout_seed = int(rng.integers(2**31))
    return [
        ("add", T.add, [a34, b34]),
        ("sub", T.sub, [_t(rng, 3, 4), _t(rng, 3, 4)]),
        ("mul", T.mul, [_t(rng, 3, 4), _t(rng, 3, 4)]),
        ("scale", lambda x: T.scale(x, -1.7), [_t(rng, 3, 4)]),
        ("sigmoid", T.sigmoid, [_t(rng, 3, 4)]),
        # keep relu inputs away from the kink so central differences are exact enough
        ("relu", T.relu, [Tensor(rng.choice([-1.0, 1.0], size=(3, 4)) * rng.uniform(0.1, 1.0, size=(3, 4)))]),
        ("log", T.log, [_t(rng, 3, 4, positive=True)]),
        ("matmul", T.matmul, [_t(rng, 3, 4), _t(rng, 4, 2)]),
        ("transpose", T.transpose, [_t(rng, 3, 4)]),
        ("reshape", lambda x: T.reshape(x, (2, 6)), [_t(rng, 3, 4)]),
        ("add_bias", T.add_bias, [_t(rng, 3, 4), _t(rng, 4)]),
        ("linear", T.linear, [_t(rng, 3, 4), _t(rng, 4, 2), _t(rng, 2)]),
        ("softmax_rows", T.softmax_rows, [_t(rng, 3, 4)]),
        ("layer_norm", T.layer_norm, [_t(rng, 3, 4), _t(rng, 4), _t(rng, 4)]),
        ("conv1d_same", T.conv1d_same, [_t(rng, 5, 3), _t(rng, 3, 3, 2), _t(rng, 2)]),
        ("mean_rows", lambda x: T.mean_rows(x, mask), [_t(rng, 5, 3)]),
        ("take_rows", lambda x: T.take_rows(x, np.array([2, 0, 2, 1])), [_t(rng, 3, 4)]),
        ("concat_cols", lambda x, y: T.concat_cols([x, y]), [_t(rng, 3, 2), _t(rng, 3, 4)]),
        ("pick", lambda x: T.pick(x, 2), [_t(rng, 4)]),
        ("sum_all", T.sum_all, [_t(rng, 3, 4)]),
        ("average", lambda x, y, z: T.average([x, y, z]), [_t(rng, 1), _t(rng, 1), _t(rng, 1)]),
        # the mask is redrawn from the same seed on every evaluation
        ("dropout", lambda x: T.dropout(x, 0.3, np.random.default_rng(dropout_seed)), [_t(rng, 3, 4)]),
    ]


def _toy_input(rng: np.random.Generator, max_len: int):
    words = ["good", "bad", "food", "staff", "the", "was"]
    sentence = [words[i] for i in rng.integers(0, len(words), size=4)]
    ex = Example(tuple(sentence), ("food",), "negative")
    vocab = build_vocab([ex, Example(tuple(words), ("staff",), "positive")])
    return encode(ex, vocab, max_len), vocab


def _layer_cases(rng: np.random.Generator, d_model: int, heads: int):
    config = TrainConfig(d_model=d_model, heads=heads, d_ff=2 * d_model, max_len=10, dropout=0.0)
    enc, vocab = _toy_input(rng, config.max_len)
    lp = LayerParams.init(d_model, heads, config.d_ff, config.gate_width, rng)
    # non-trivial affine LN parameters so their gradients are not degenerate
    for t in (lp.ln_in_gamma, lp.ln_in_beta, lp.ln_mid_gamma, lp.ln_mid_beta, lp.ln_out_gamma, lp.ln_out_beta):
        t.data = t.data + 0.3 * rng.normal(size=t.shape)
    n = len(enc)
    d_k = d_model // heads
    hp = lp.heads[0]
    layer_params = [t for _, t in lp.named_parameters()]

    def scores_fn(h, *_):
        att = attention_scores(h, lp, enc.pad_mask)
        return T.concat_cols(att.scores + att.values)

    def amp_fn(score_logits, v):
        return amplified_attention(T.softmax_rows(score_logits), enc.amplify, v)[0]

    def fusion_fn(ho, ha, *_):
        return gated_fusion(ho, ha, hp)[0]

    def ffn_fn(x, *_):
        return ffn(x, lp)

    cases = [
        ("attention_scores", scores_fn, [_t(rng, n, d_model), lp.ln_in_gamma, lp.ln_in_beta, hp.w_q, hp.w_k, hp.w_v]),
        ("amplified_attention", amp_fn, [_t(rng, n, n), _t(rng, n, d_k)]),
        ("gated_fusion", fusion_fn, [_t(rng, n, d_k), _t(rng, n, d_k), hp.gate_o_kernel, hp.gate_o_bias,
                                     hp.gate_a_kernel, hp.gate_a_bias]),
        ("ffn", ffn_fn, [_t(rng, n, d_model), lp.ffn_w1, lp.ffn_b1, lp.ffn_w2, lp.ffn_b2]),
    ]
    for mode in AblationMode:
        def layer_fn(h, *_, mode=mode):
            return layer_forward(h, enc, lp, mode)[0]

        cases.append((f"layer_forward[{mode.value}]", layer_fn, [_t(rng, n, d_model)] + layer_params))
    return cases, config, enc, vocab


def gradcheck_suite(seed: int = 0, d_model: int = 8, heads: int = 2, tol: float = 1e-4) -> list[OpCheck]:
    """Check every primitive, every layer stage and the full model loss once.

    Model-level cases use a padded toy input so masking is exercised.
    """
    if tol <= 0:
        raise ContractError(f"tol must be positive, got {tol}")
    if heads < 1 or d_model % heads:
        raise ContractError(f"heads ({heads}) must divide d_model ({d_model})")
    rng = np.random.default_rng(seed)
    results = []

    def run(name, fn, inputs):
        f = _scalar(fn, inputs, rng)
        report = grad_check(f, inputs, tol=tol)
        results.append(OpCheck(name, report.max_rel_error, report.n_coords, report.passed))

    for name, fn, inputs in _op_cases(rng):
        run(name, fn, inputs)
    cases, config, enc, vocab = _layer_cases(rng, d_model, heads)
    for name, fn, inputs in cases:
        run(name, fn, inputs)

    params = ModelParams.init(len(vocab), config, rng)
    named = params.parameters()

    def model_loss(_):
        return loss(forward(enc, params, config), enc.label_id)

    report = grad_check(model_loss, named, tol=tol)
    results.append(OpCheck("model_loss", report.max_rel_error, report.n_coords, report.passed))
    return results
