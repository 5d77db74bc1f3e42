"""Vocabulary, tokenisation and the ``[CLS] sentence [SEP] aspect [SEP]`` layout.

Segment membership is positional: tokens between ``[CLS]`` and the first
``[SEP]`` are sentence tokens, tokens between the two ``[SEP]`` markers are
aspect tokens.  An aspect word that also occurs inside the sentence is a
sentence token at that position.
"""

from __future__ import annotations

import enum
import json
import re
from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import DataError, EncodingError

PAD, CLS, SEP, UNK = 0, 1, 2, 3
RESERVED = ("[PAD]", "[CLS]", "[SEP]", "[UNK]")

LABELS = ("positive", "negative", "neutral")
LABEL_IDS = {name: i for i, name in enumerate(LABELS)}


class Segment(enum.IntEnum):
    CLS = 0
    SENT = 1
    SEP1 = 2
    ASP = 3
    SEP2 = 4
    PAD = 5


_STRIP = re.compile(r"[^\w\s]|_")


def tokenize(text: str) -> list[str]:
    return _STRIP.sub("", text.lower()).split()


@dataclass(frozen=True)
class Example:
    sentence: tuple[str, ...]
    aspect: tuple[str, ...]
    label: str

    def __post_init__(self):
        object.__setattr__(self, "sentence", tuple(self.sentence))
        object.__setattr__(self, "aspect", tuple(self.aspect))
        if not self.aspect:
            raise DataError("example has an empty aspect")
        if self.label not in LABEL_IDS:
            raise DataError(f"unknown polarity {self.label!r}; expected one of {LABELS}")

    @classmethod
    def from_text(cls, text: str, aspect: str, polarity: str) -> "Example":
        return cls(tuple(tokenize(text)), tuple(tokenize(aspect)), polarity)

    @property
    def label_id(self) -> int:
        return LABEL_IDS[self.label]


@dataclass(frozen=True)
class Vocabulary:
    tokens: tuple[str, ...]

    def __post_init__(self):
        if tuple(self.tokens[:4]) != RESERVED:
            raise DataError("vocabulary must start with the reserved tokens")
        object.__setattr__(self, "_index", {t: i for i, t in enumerate(self.tokens)})
        if len(self._index) != len(self.tokens):
            raise DataError("vocabulary contains duplicate tokens")

    def __len__(self) -> int:
        return len(self.tokens)

    def __contains__(self, token: str) -> bool:
        return token in self._index

    def id_of(self, token: str) -> int:
        return self._index.get(token, UNK)

    def token_of(self, idx: int) -> str:
        return self.tokens[idx]


def build_vocab(corpus: Sequence[Example], min_count: int = 1) -> Vocabulary:
    """Frequency-ordered vocabulary (count descending, then lexicographic)."""
    if not corpus:
        raise DataError("cannot build a vocabulary from an empty corpus")
    counts: Counter[str] = Counter()
    for ex in corpus:
        counts.update(ex.sentence)
        counts.update(ex.aspect)
    for tok in RESERVED:
        counts.pop(tok, None)
    kept = sorted((t for t, c in counts.items() if c >= min_count), key=lambda t: (-counts[t], t))
    return Vocabulary(RESERVED + tuple(kept))


@dataclass(frozen=True, eq=False)
class EncodedInput:
    ids: np.ndarray
    segments: np.ndarray
    pad_mask: np.ndarray
    amplify: np.ndarray
    label_id: int

    def __len__(self) -> int:
        return int(self.ids.shape[0])

    def to_bytes(self) -> bytes:
        return b"".join(
            a.tobytes() for a in (self.ids, self.segments, self.pad_mask, self.amplify, np.int64(self.label_id))
        )


def build_amplify(segments: Sequence[int]) -> np.ndarray:
    """Matrix of 2s on sentence/aspect cross pairs and 1s everywhere else."""
    seg = np.asarray(segments)
    sent = seg == Segment.SENT
    asp = seg == Segment.ASP
    cross = np.outer(sent, asp) | np.outer(asp, sent)
    return np.where(cross, 2.0, 1.0)


def check_segments(segments: Sequence[int]) -> None:
    """Raise :class:`EncodingError` unless segments read CLS SENT* SEP1 ASP+ SEP2 PAD*."""
    s = [int(x) for x in segments]
    i, n = 0, len(s)

    def run(kind: Segment) -> int:
        nonlocal i
        start = i
        while i < n and s[i] == kind:
            i += 1
        return i - start

    ok = run(Segment.CLS) == 1
    run(Segment.SENT)
    ok = ok and run(Segment.SEP1) == 1 and run(Segment.ASP) >= 1 and run(Segment.SEP2) == 1
    run(Segment.PAD)
    if not ok or i != n:
        raise EncodingError(f"segment sequence is not CLS SENT* SEP ASP+ SEP PAD*: {s}")


def encode(ex: Example, vocab: Vocabulary, max_len: int, pad: bool = True) -> EncodedInput:
    """Lay out one example, truncating the sentence tail if needed.

    With ``pad=False`` the sequence stops at the second ``[SEP]``.
    """
    n_asp = len(ex.aspect)
    if n_asp > max_len - 3:
        raise EncodingError(f"aspect of {n_asp} tokens does not fit max_len={max_len}")
    sentence = ex.sentence[: max_len - 3 - n_asp]
    n = len(sentence) + n_asp + 3
    total = max_len if pad else n

    ids = np.full(total, PAD, dtype=np.int64)
    segs = np.full(total, Segment.PAD, dtype=np.int64)
    ids[0], segs[0] = CLS, Segment.CLS
    pos = 1
    for tok in sentence:
        ids[pos], segs[pos] = vocab.id_of(tok), Segment.SENT
        pos += 1
    ids[pos], segs[pos] = SEP, Segment.SEP1
    pos += 1
    for tok in ex.aspect:
        ids[pos], segs[pos] = vocab.id_of(tok), Segment.ASP
        pos += 1
    ids[pos], segs[pos] = SEP, Segment.SEP2

    pad_mask = (segs != Segment.PAD).astype(np.float64)
    return EncodedInput(ids, segs, pad_mask, build_amplify(segs), ex.label_id)


def decode(enc: EncodedInput, vocab: Vocabulary) -> tuple[list[str], list[str]]:
    """Recover (sentence tokens, aspect tokens) from an encoded input."""
    sent = [vocab.token_of(int(i)) for i, s in zip(enc.ids, enc.segments) if s == Segment.SENT]
    asp = [vocab.token_of(int(i)) for i, s in zip(enc.ids, enc.segments) if s == Segment.ASP]
    return sent, asp


def tokens_of(enc: EncodedInput, vocab: Vocabulary) -> list[str]:
    return [vocab.token_of(int(i)) for i in enc.ids]


def load_jsonl(path: str | Path) -> list[Example]:
    examples = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                if not isinstance(rec, dict):
                    raise ValueError("record is not an object")
                text, aspect, polarity = rec["text"], rec["aspect"], rec["polarity"]
                if not all(isinstance(v, str) for v in (text, aspect, polarity)):
                    raise ValueError("text/aspect/polarity must be strings")
                examples.append(Example.from_text(text, aspect, polarity))
            except (ValueError, KeyError, DataError) as exc:
                raise DataError(f"{path}:{lineno}: malformed record ({exc})") from exc
    return examples


def dump_jsonl(examples: Iterable[Example], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for ex in examples:
            rec = {"text": " ".join(ex.sentence), "aspect": " ".join(ex.aspect), "polarity": ex.label}
            fh.write(json.dumps(rec) + "\n")


# Synthetic lexicon: every aspect owns one word per polarity, so a sentiment
# word is only informative about the aspect it belongs to.  Leading aspects
# are always included, so small vocabularies keep the waiter/staff pair.
_LEXICON = (
    ("waiter", "friendly", "rude", "tall"),
    ("staff", "supportive", "unhelpful", "uniformed"),
    ("food", "delicious", "bland", "local"),
    ("battery", "durable", "weak", "removable"),
    ("screen", "bright", "dim", "glossy"),
    ("keyboard", "comfortable", "sticky", "backlit"),
    ("pasta", "tasty", "soggy", "thin"),
    ("price", "fair", "steep", "listed"),
    ("menu", "varied", "limited", "printed"),
    ("service", "fast", "slow", "counter"),
    ("camera", "sharp", "blurry", "rear"),
    ("ambience", "cozy", "noisy", "themed"),
    ("speaker", "crisp", "tinny", "external"),
    ("dessert", "heavenly", "stale", "frozen"),
    ("wine", "excellent", "sour", "red"),
    ("delivery", "prompt", "late", "scheduled"),
)
_FILLERS = (
    "the", "our", "but", "and", "was", "a", "it", "is", "with", "to",
    "that", "they", "we", "had", "very", "there", "this", "of", "in", "also",
    "were", "my", "its", "their", "for", "on", "at", "as", "so", "just",
    "quite", "really", "pretty", "rather", "overall", "today", "again", "still", "though", "while",
    "when", "after", "before", "then", "here", "everything", "which", "what", "all", "some",
    "i", "you", "he", "she", "be", "been", "have", "did", "got", "found",
)
MIN_SYNTH_VOCAB = 12
MAX_SYNTH_VOCAB = 88


def _synth_layout(vocab_size: int) -> tuple[int, int]:
    """(aspects, fillers): one aspect with its three words per 12 vocabulary slots."""
    n_aspects = min(len(_LEXICON), max(2, vocab_size // 12))
    return n_aspects, vocab_size - 4 * n_aspects


def synth_dataset(n: int, seed: int, vocab_size: int = 50, distractor_rate: float = 1.0) -> list[Example]:
    """Toy aspect-sentiment task with planted, aspect-adjacent sentiment words.

    Every sentence holds the target aspect immediately preceded by that
    aspect's own word for the label's polarity.  With probability
    ``distractor_rate`` (every sentence by default) a second clause follows
    or precedes it: another aspect with its own word of a different polarity,
    separated by one or two fillers.  The bag of sentence words alone is
    therefore ambiguous, and the label depends on which lexicon entry goes
    with the queried aspect.  A third of ``vocab_size`` goes to aspects and
    their words, the rest to fillers.
    """
    if n <= 0:
        raise DataError(f"synth_dataset needs n > 0, got {n}")
    if not MIN_SYNTH_VOCAB <= vocab_size <= MAX_SYNTH_VOCAB:
        raise DataError(f"vocab_size must lie in [{MIN_SYNTH_VOCAB}, {MAX_SYNTH_VOCAB}], got {vocab_size}")
    if not 0.0 <= distractor_rate <= 1.0:
        raise DataError(f"distractor_rate must lie in [0, 1], got {distractor_rate}")
    n_aspects, n_fillers = _synth_layout(vocab_size)
    lexicon = _LEXICON[:n_aspects]
    fillers = _FILLERS[:n_fillers]
    rng = np.random.default_rng(seed)

    out = []
    for _ in range(n):
        label = int(rng.integers(3))
        t = int(rng.integers(n_aspects))
        sentence = [lexicon[t][1 + label], lexicon[t][0]]
        if rng.random() < distractor_rate:
            o = int(rng.choice([i for i in range(n_aspects) if i != t]))
            other_label = [k for k in range(3) if k != label][rng.integers(2)]
            other = [lexicon[o][1 + other_label], lexicon[o][0]]
            gap = [fillers[j] for j in rng.integers(0, n_fillers, size=rng.integers(1, 3))]
            sentence = sentence + gap + other if rng.random() < 0.5 else other + gap + sentence
        out.append(Example(tuple(sentence), (lexicon[t][0],), LABELS[label]))
    return out
