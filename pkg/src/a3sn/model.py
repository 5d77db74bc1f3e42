"""Embedding, stacked A3SN layers, mean-pool classifier and checkpoints."""

from __future__ import annotations

import json
import logging
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator

import numpy as np

from . import tensor as T
from .config import AblationMode, TrainConfig
from .encoding import LABELS, EncodedInput, Segment, Vocabulary
from .errors import CheckpointError, ConfigurationError, DataError
from .layer import AttentionTrace, LayerParams, glorot, layer_forward
from .tensor import Tensor

log = logging.getLogger(__name__)

N_CLASSES = len(LABELS)
N_SEGMENTS = len(Segment)
PROB_FLOOR = 1e-12

MAGIC = b"A3SNCKPT"
FORMAT_VERSION = 1


@dataclass
class ModelParams:
    tok_emb: Tensor
    pos_emb: Tensor
    seg_emb: Tensor
    layers: list[LayerParams]
    w_p: Tensor
    b_p: Tensor

    @classmethod
    def init(cls, vocab_size: int, config: TrainConfig, rng: np.random.Generator) -> "ModelParams":
        config.validate()
        d = config.d_model
        return cls(
            tok_emb=glorot(rng, (vocab_size, d), vocab_size, d),
            pos_emb=glorot(rng, (config.max_len, d), config.max_len, d),
            seg_emb=glorot(rng, (N_SEGMENTS, d), N_SEGMENTS, d),
            layers=[LayerParams.init(d, config.heads, config.d_ff, config.gate_width, rng) for _ in range(config.layers)],
            w_p=glorot(rng, (d, N_CLASSES), d, N_CLASSES),
            b_p=Tensor(np.zeros(N_CLASSES), requires_grad=True),
        )

    @property
    def vocab_size(self) -> int:
        return self.tok_emb.shape[0]

    @property
    def d_model(self) -> int:
        return self.tok_emb.shape[1]

    @property
    def max_len(self) -> int:
        return self.pos_emb.shape[0]

    @property
    def heads(self) -> int:
        return len(self.layers[0].heads)

    def named_parameters(self) -> Iterator[tuple[str, Tensor]]:
        yield "tok_emb", self.tok_emb
        yield "pos_emb", self.pos_emb
        yield "seg_emb", self.seg_emb
        for i, layer in enumerate(self.layers):
            yield from layer.named_parameters(f"layer{i}.")
        yield "w_p", self.w_p
        yield "b_p", self.b_p

    def parameters(self) -> list[Tensor]:
        return [t for _, t in self.named_parameters()]

    def zero_grad(self) -> None:
        for t in self.parameters():
            t.grad = None

    def state(self) -> dict[str, np.ndarray]:
        return {name: t.data.copy() for name, t in self.named_parameters()}

    def load_state(self, state: dict[str, np.ndarray]) -> None:
        for name, t in self.named_parameters():
            t.data = state[name].copy()

    def checksum(self) -> str:
        import hashlib

        h = hashlib.sha256()
        for name, t in self.named_parameters():
            h.update(name.encode())
            h.update(t.data.tobytes())
        return h.hexdigest()


@dataclass
class Prediction:
    probs: np.ndarray
    predicted_label: int
    traces: list[AttentionTrace]
    logits_t: Tensor
    probs_t: Tensor

    @property
    def label(self) -> str:
        return LABELS[self.predicted_label]

    def to_dict(self, with_traces: bool = False) -> dict:
        out = {
            "probs": self.probs.tolist(),
            "predicted_label": self.predicted_label,
            "label": self.label,
        }
        if with_traces:
            out["traces"] = [tr.to_dict() for tr in self.traces]
        return out


def embed(enc: EncodedInput, params: ModelParams) -> Tensor:
    """Sum of token, position and segment embeddings."""
    n = len(enc)
    if n > params.max_len:
        raise DataError(f"sequence of length {n} exceeds the position table ({params.max_len})")
    if enc.ids.min() < 0 or enc.ids.max() >= params.vocab_size:
        raise DataError(f"token id out of range for vocabulary of size {params.vocab_size}")
    tok = T.take_rows(params.tok_emb, enc.ids)
    pos = T.take_rows(params.pos_emb, np.arange(n))
    seg = T.take_rows(params.seg_emb, enc.segments)
    return T.add(T.add(tok, pos), seg)


def pool_mask(enc: EncodedInput, pool_special: bool = True) -> np.ndarray:
    if pool_special:
        return enc.pad_mask
    seg = enc.segments
    return ((seg == Segment.SENT) | (seg == Segment.ASP)).astype(np.float64)


def forward(
    enc: EncodedInput,
    params: ModelParams,
    config: TrainConfig,
    mode: AblationMode | str | None = None,
    training: bool = False,
    rng: np.random.Generator | None = None,
) -> Prediction:
    mode = config.mode if mode is None else AblationMode.parse(mode)
    if params.d_model != config.d_model or params.heads != config.heads:
        raise ConfigurationError("parameters do not match the configuration (d_model / heads)")
    h = embed(enc, params)
    traces = []
    for layer in params.layers:
        h, trace = layer_forward(
            h, enc, layer, mode,
            dropout_p=config.dropout, training=training, rng=rng,
            ln_eps=config.ln_eps, double_ln=config.double_ln,
        )
        traces.append(trace)
    pooled = T.mean_rows(h, pool_mask(enc, config.pool_special))
    logits = T.add(T.reshape(T.matmul(T.reshape(pooled, (1, -1)), params.w_p), (N_CLASSES,)), params.b_p)
    probs = T.softmax_rows(logits)
    return Prediction(probs.data.copy(), int(np.argmax(probs.data)), traces, logits, probs)


def loss(pred: Prediction, gold: int) -> Tensor:
    """Negative log-probability of the gold class (clamped at 1e-12)."""
    if not 0 <= gold < N_CLASSES:
        raise DataError(f"gold label {gold} outside 0..{N_CLASSES - 1}")
    p = pred.probs_t.data[gold]
    if p <= PROB_FLOOR:
        log.warning("gold-class probability %.3g clamped to %.0e before log", p, PROB_FLOOR)
    return T.scale(T.log(T.pick(pred.probs_t, gold), floor=PROB_FLOOR), -1.0)


def _header(params: ModelParams, config: TrainConfig | None, vocab: Vocabulary | None) -> dict:
    return {
        "format_version": FORMAT_VERSION,
        "vocab_size": params.vocab_size,
        "d_model": params.d_model,
        "layers": len(params.layers),
        "heads": params.heads,
        "max_len": params.max_len,
        "d_ff": params.layers[0].ffn_w1.shape[1],
        "gate_width": params.layers[0].heads[0].gate_o_kernel.shape[0],
        "config": None if config is None else config.to_dict(),
        "vocab": None if vocab is None else list(vocab.tokens),
        "tensors": [[name, list(t.shape)] for name, t in params.named_parameters()],
    }


def save_params(
    params: ModelParams,
    path: str | Path,
    config: TrainConfig | None = None,
    vocab: Vocabulary | None = None,
) -> None:
    """Write a versioned checkpoint: magic, version, JSON header, raw little-endian f64 payload."""
    header = json.dumps(_header(params, config, vocab), sort_keys=True, separators=(",", ":")).encode()
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<II", FORMAT_VERSION, len(header)))
        fh.write(header)
        for _, t in params.named_parameters():
            fh.write(np.ascontiguousarray(t.data, dtype="<f8").tobytes())


@dataclass
class Checkpoint:
    params: ModelParams
    config: TrainConfig | None
    vocab: Vocabulary | None


def load_checkpoint(path: str | Path, expect: TrainConfig | None = None) -> Checkpoint:
    try:
        blob = Path(path).read_bytes()
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    if blob[:8] != MAGIC or len(blob) < 16:
        raise CheckpointError(f"{path} is not an A3SN checkpoint")
    version, hlen = struct.unpack("<II", blob[8:16])
    if version != FORMAT_VERSION:
        raise CheckpointError(f"checkpoint format version {version} is not supported (expected {FORMAT_VERSION})")
    try:
        header = json.loads(blob[16 : 16 + hlen].decode())
    except ValueError as exc:
        raise CheckpointError(f"{path}: corrupt header") from exc

    saved_cfg = TrainConfig(**header["config"]) if header.get("config") else None
    vocab = Vocabulary(tuple(header["vocab"])) if header.get("vocab") else None
    if expect is not None:
        for key in ("d_model", "layers", "heads", "max_len", "d_ff", "gate_width"):
            if header[key] != getattr(expect, key):
                raise CheckpointError(f"checkpoint {key}={header[key]} but configuration expects {getattr(expect, key)}")
        if vocab is not None and header["vocab_size"] != len(vocab):
            raise CheckpointError("checkpoint vocabulary size disagrees with its token list")

    skeleton_cfg = TrainConfig(
        heads=header["heads"], layers=header["layers"], d_model=header["d_model"],
        d_ff=header["d_ff"], max_len=header["max_len"], gate_width=header["gate_width"],
    )
    params = ModelParams.init(header["vocab_size"], skeleton_cfg, np.random.default_rng(0))
    expected = [[name, list(t.shape)] for name, t in params.named_parameters()]
    if expected != header["tensors"]:
        raise CheckpointError(f"{path}: tensor layout does not match the header dimensions")
    offset = 16 + hlen
    for _, t in params.named_parameters():
        nbytes = t.data.size * 8
        chunk = blob[offset : offset + nbytes]
        if len(chunk) != nbytes:
            raise CheckpointError(f"{path}: payload truncated")
        t.data = np.frombuffer(chunk, dtype="<f8").astype(np.float64).reshape(t.shape)
        offset += nbytes
    if offset != len(blob):
        raise CheckpointError(f"{path}: {len(blob) - offset} trailing bytes after payload")
    return Checkpoint(params, saved_cfg, vocab)


def load_params(path: str | Path, expect: TrainConfig | None = None) -> ModelParams:
    return load_checkpoint(path, expect).params
