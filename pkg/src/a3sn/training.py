"""Adam, the seeded training loop, metrics and the ablation runner."""

from __future__ import annotations

import csv
import io
import logging
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from . import tensor as T
from .config import AblationMode, TrainConfig
from .encoding import LABELS, EncodedInput, Example, Vocabulary, build_vocab, encode
from .errors import DataError, DivergenceError
from .model import ModelParams, forward, loss

log = logging.getLogger(__name__)

N_CLASSES = len(LABELS)


# ---------------------------------------------------------------- optimiser


@dataclass
class AdamState:
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(
    params: Mapping[str, np.ndarray],
    grads: Mapping[str, np.ndarray | None],
    state: AdamState,
    lr: float = 1e-3,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> AdamState:
    """Update ``params`` in place with one bias-corrected Adam step.

    A missing gradient counts as zero.  Raises :class:`DivergenceError` naming
    the first parameter whose gradient is not finite, before touching anything.
    """
    for name, g in grads.items():
        if g is not None and not np.all(np.isfinite(g)):
            raise DivergenceError(f"non-finite gradient for parameter {name!r}")
    state.step += 1
    t = state.step
    bc1 = 1.0 - beta1**t
    bc2 = 1.0 - beta2**t
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            g = np.zeros_like(p)
        if name not in state.m:
            state.m[name] = np.zeros_like(p)
            state.v[name] = np.zeros_like(p)
        m = state.m[name]
        v = state.v[name]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * (g * g)
        p -= lr * (m / bc1) / (np.sqrt(v / bc2) + eps)
    return state


def _model_step(params: ModelParams, state: AdamState, config: TrainConfig) -> None:
    named = list(params.named_parameters())
    adam_step(
        {n: t.data for n, t in named},
        {n: t.grad for n, t in named},
        state,
        lr=config.lr, beta1=config.beta1, beta2=config.beta2, eps=config.eps_adam,
    )


# ------------------------------------------------------------------ metrics


@dataclass
class Metrics:
    accuracy: float
    macro_f1: float
    precision: np.ndarray
    recall: np.ndarray
    f1: np.ndarray
    confusion: np.ndarray  # rows: gold, columns: predicted
    loss: float | None = None

    def to_dict(self) -> dict:
        return {
            "accuracy": self.accuracy,
            "macro_f1": self.macro_f1,
            "loss": self.loss,
            "per_class": {
                lab: {"precision": float(self.precision[i]), "recall": float(self.recall[i]), "f1": float(self.f1[i])}
                for i, lab in enumerate(LABELS)
            },
            "confusion": self.confusion.tolist(),
        }

    def same_as(self, other: "Metrics") -> bool:
        return (
            self.accuracy == other.accuracy
            and self.macro_f1 == other.macro_f1
            and np.array_equal(self.confusion, other.confusion)
            and self.loss == other.loss
        )


def compute_metrics(gold: Sequence[int], predicted: Sequence[int], mean_loss: float | None = None) -> Metrics:
    if len(gold) == 0:
        raise DataError("cannot score an empty prediction set")
    conf = np.zeros((N_CLASSES, N_CLASSES), dtype=np.int64)
    for g, p in zip(gold, predicted):
        conf[g, p] += 1
    tp = np.diag(conf).astype(np.float64)
    col = conf.sum(axis=0)
    row = conf.sum(axis=1)
    precision = np.divide(tp, col, out=np.zeros(N_CLASSES), where=col > 0)
    recall = np.divide(tp, row, out=np.zeros(N_CLASSES), where=row > 0)
    denom = precision + recall
    f1 = np.divide(2 * precision * recall, denom, out=np.zeros(N_CLASSES), where=denom > 0)
    return Metrics(
        accuracy=float(tp.sum() / conf.sum()),
        macro_f1=float(f1.mean()),
        precision=precision,
        recall=recall,
        f1=f1,
        confusion=conf,
        loss=mean_loss,
    )


# ----------------------------------------------------------------- training


@dataclass
class EpochRecord:
    epoch: int
    split: str
    loss: float
    accuracy: float
    macro_f1: float


@dataclass
class TrainResult:
    params: ModelParams
    vocab: Vocabulary
    config: TrainConfig
    history: list[EpochRecord]
    best_epoch: int


def rng_streams(seed: int) -> dict[str, np.random.Generator]:
    """Independent generators for init / split / shuffle / dropout from one root seed."""
    children = np.random.SeedSequence(seed).spawn(4)
    return {name: np.random.default_rng(ss) for name, ss in zip(("init", "split", "shuffle", "dropout"), children)}


def split_validation(dataset: Sequence[Example], config: TrainConfig) -> tuple[list[Example], list[Example]]:
    """Seeded hold-out of ``val_fraction`` of the data (nothing held out below 10 examples)."""
    n = len(dataset)
    n_val = int(round(config.val_fraction * n)) if n >= 10 else 0
    if n_val == 0:
        return list(dataset), []
    order = rng_streams(config.seed)["split"].permutation(n)
    val_idx = set(order[:n_val].tolist())
    train = [ex for i, ex in enumerate(dataset) if i not in val_idx]
    val = [ex for i, ex in enumerate(dataset) if i in val_idx]
    return train, val


def _encode_all(dataset: Sequence[Example], vocab: Vocabulary, max_len: int) -> list[EncodedInput]:
    return [encode(ex, vocab, max_len, pad=False) for ex in dataset]


def _score(encoded: Sequence[EncodedInput], params: ModelParams, config: TrainConfig) -> Metrics:
    gold, pred, total = [], [], 0.0
    with T.no_grad():
        for enc in encoded:
            p = forward(enc, params, config, training=False)
            total += loss(p, enc.label_id).item()
            gold.append(enc.label_id)
            pred.append(p.predicted_label)
    return compute_metrics(gold, pred, total / len(encoded))


def train(
    dataset: Sequence[Example],
    config: TrainConfig,
    val_set: Sequence[Example] | None = None,
    vocab: Vocabulary | None = None,
) -> TrainResult:
    """Train from a seeded initialisation and keep the best validation epoch.

    Without ``val_set`` a seeded ``val_fraction`` hold-out of ``dataset`` is
    used.  Epochs are ranked by validation accuracy, ties by lower validation
    loss, then earlier epoch.  With no validation data the last epoch is kept.
    """
    config.validate()
    if not dataset:
        raise DataError("cannot train on an empty dataset")
    if val_set is None:
        train_set, val_set = split_validation(dataset, config)
    else:
        train_set, val_set = list(dataset), list(val_set)
    if vocab is None:
        vocab = build_vocab(train_set, config.min_count)

    streams = rng_streams(config.seed)
    params = ModelParams.init(len(vocab), config, streams["init"])
    train_enc = _encode_all(train_set, vocab, config.max_len)
    val_enc = _encode_all(val_set, vocab, config.max_len)
    state = AdamState()
    history: list[EpochRecord] = []
    best_key, best_state, best_epoch = None, None, config.epochs

    for epoch in range(1, config.epochs + 1):
        order = streams["shuffle"].permutation(len(train_enc))
        loss_sum, gold, pred = 0.0, [], []
        for b, start in enumerate(range(0, len(order), config.batch_size)):
            batch = [train_enc[i] for i in order[start : start + config.batch_size]]
            losses = []
            for enc in batch:
                p = forward(enc, params, config, training=True, rng=streams["dropout"])
                losses.append(loss(p, enc.label_id))
                gold.append(enc.label_id)
                pred.append(p.predicted_label)
            batch_loss = T.average(losses)
            value = batch_loss.item()
            if not np.isfinite(value):
                raise DivergenceError(f"loss is {value} at epoch {epoch}, batch {b}")
            params.zero_grad()
            batch_loss.backward()
            try:
                _model_step(params, state, config)
            except DivergenceError as exc:
                raise DivergenceError(f"{exc} at epoch {epoch}, batch {b}") from exc
            loss_sum += value * len(batch)
        tm = compute_metrics(gold, pred, loss_sum / len(train_enc))
        history.append(EpochRecord(epoch, "train", tm.loss, tm.accuracy, tm.macro_f1))

        if val_enc:
            vm = _score(val_enc, params, config)
            history.append(EpochRecord(epoch, "val", vm.loss, vm.accuracy, vm.macro_f1))
            key = (vm.accuracy, -vm.loss)
            if best_key is None or key > best_key:
                best_key, best_state, best_epoch = key, params.state(), epoch
        log.info("epoch %d train loss %.4f acc %.4f", epoch, tm.loss, tm.accuracy)

    if best_state is not None:
        params.load_state(best_state)
    params.zero_grad()
    return TrainResult(params, vocab, config, history, best_epoch)


def evaluate(
    dataset: Sequence[Example],
    params: ModelParams,
    config: TrainConfig,
    vocab: Vocabulary,
) -> Metrics:
    """Dropout-free metrics over ``dataset``; parameters are not modified."""
    if not dataset:
        raise DataError("cannot evaluate on an empty dataset")
    return _score(_encode_all(dataset, vocab, params.max_len), params, config)


# ---------------------------------------------------------------- ablations

ABLATION_ORDER = (
    AblationMode.FULL,
    AblationMode.NO_ORIGINAL,
    AblationMode.NO_AMPLIFIED,
    AblationMode.NO_GATED_FUSION,
)


@dataclass
class AblationRow:
    mode: AblationMode
    metrics: Metrics
    best_epoch: int


def run_ablations(
    dataset: Sequence[Example],
    config: TrainConfig,
    test_set: Sequence[Example] | None = None,
) -> list[AblationRow]:
    """Train and score every ablation mode with the same seed and split.

    Without ``test_set`` each mode is scored on the seeded validation hold-out.
    """
    if test_set is None:
        dataset, test_set = split_validation(dataset, config)
        if not test_set:
            raise DataError("dataset too small to hold out an evaluation split")
    rows = []
    for mode in ABLATION_ORDER:
        cfg = config.replace(mode=mode)
        result = train(dataset, cfg)
        rows.append(AblationRow(mode, evaluate(test_set, result.params, cfg, result.vocab), result.best_epoch))
    return rows


def ablation_markdown(rows: Sequence[AblationRow]) -> str:
    lines = ["| Model | Acc. | F1 |", "|---|---:|---:|"]
    for row in rows:
        lines.append(f"| {row.mode.label} | {100 * row.metrics.accuracy:.2f} | {100 * row.metrics.macro_f1:.2f} |")
    return "\n".join(lines) + "\n"


def history_csv(history: Sequence[EpochRecord], config: TrainConfig) -> str:
    buf = io.StringIO()
    classes = ",".join(f"{lab}={i}" for i, lab in enumerate(LABELS))
    buf.write(f"# mode={config.mode.value} seed={config.seed} classes={classes}\n")
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["epoch", "split", "loss", "accuracy", "macro_f1"])
    for r in history:
        writer.writerow([r.epoch, r.split, repr(r.loss), repr(r.accuracy), repr(r.macro_f1)])
    return buf.getvalue()
