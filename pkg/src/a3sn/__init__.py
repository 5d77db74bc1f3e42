"""Amplified aspect-sentence attention for aspect-based sentiment classification."""

from .config import AblationMode, TrainConfig
from .encoding import (
    LABELS,
    EncodedInput,
    Example,
    Segment,
    Vocabulary,
    build_amplify,
    build_vocab,
    decode,
    encode,
    load_jsonl,
    synth_dataset,
)
from .errors import A3SNError
from .model import ModelParams, Prediction, forward, load_params, loss, save_params
from .tensor import Tensor, grad_check, no_grad

__version__ = "0.1.0"
