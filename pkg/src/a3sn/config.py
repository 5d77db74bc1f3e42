"""Run configuration and ablation switches.

Config files are flat ``key = value`` text.  Blank lines and ``#`` comments
are ignored; keys are :class:`TrainConfig` field names (dashes allowed).
"""

from __future__ import annotations

import dataclasses
import enum
from dataclasses import dataclass, fields
from pathlib import Path

from .errors import ConfigurationError


class AblationMode(str, enum.Enum):
    FULL = "full"
    NO_ORIGINAL = "no-original"
    NO_AMPLIFIED = "no-amplified"
    NO_GATED_FUSION = "no-gated-fusion"

    @classmethod
    def parse(cls, value: "str | AblationMode") -> "AblationMode":
        if isinstance(value, cls):
            return value
        key = str(value).strip().lower().replace("_", "-")
        for mode in cls:
            if mode.value == key:
                return mode
        raise ConfigurationError(f"unknown ablation mode {value!r}; expected one of {[m.value for m in cls]}")

    @property
    def label(self) -> str:
        return _MODE_LABELS[self]


_MODE_LABELS = {
    AblationMode.FULL: "A3SN",
    AblationMode.NO_ORIGINAL: "A3SN w/o original attention",
    AblationMode.NO_AMPLIFIED: "A3SN w/o amplified attention",
    AblationMode.NO_GATED_FUSION: "A3SN w/o gated fusion",
}


@dataclass(frozen=True)
class TrainConfig:
    heads: int = 4
    layers: int = 1
    d_model: int = 64
    d_ff: int = 128
    max_len: int = 32
    dropout: float = 0.2
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps_adam: float = 1e-8
    epochs: int = 50
    batch_size: int = 16
    seed: int = 0
    mode: AblationMode = AblationMode.FULL
    ln_eps: float = 1e-5
    gate_width: int = 3
    # LN(LN(h) + MultiHead) as written; False gives the single post-LN LN(h + MultiHead)
    double_ln: bool = True
    # mean pooling over [CLS]/[SEP] as well as content tokens
    pool_special: bool = True
    val_fraction: float = 0.1
    min_count: int = 1

    def __post_init__(self):
        object.__setattr__(self, "mode", AblationMode.parse(self.mode))

    @property
    def d_k(self) -> int:
        return self.d_model // self.heads

    def validate(self) -> "TrainConfig":
        checks = [
            (self.heads >= 1, f"heads must be >= 1, got {self.heads}"),
            (self.heads >= 1 and self.d_model % self.heads == 0,
             f"heads ({self.heads}) must divide d_model ({self.d_model})"),
            (self.layers >= 1, f"layers must be >= 1, got {self.layers}"),
            (self.d_ff >= 1, f"d_ff must be >= 1, got {self.d_ff}"),
            (self.max_len >= 4, f"max_len must be >= 4, got {self.max_len}"),
            (0.0 <= self.dropout < 1.0, f"dropout must lie in [0, 1), got {self.dropout}"),
            (self.lr > 0, f"lr must be positive, got {self.lr}"),
            (0.0 <= self.beta1 < 1.0 and 0.0 <= self.beta2 < 1.0, "Adam betas must lie in [0, 1)"),
            (self.eps_adam > 0, "eps_adam must be positive"),
            (self.epochs >= 1, f"epochs must be >= 1, got {self.epochs}"),
            (self.batch_size >= 1, f"batch_size must be >= 1, got {self.batch_size}"),
            (self.ln_eps > 0, "ln_eps must be positive"),
            (self.gate_width >= 1 and self.gate_width % 2 == 1, f"gate_width must be odd, got {self.gate_width}"),
            (0.0 <= self.val_fraction < 1.0, f"val_fraction must lie in [0, 1), got {self.val_fraction}"),
            (self.min_count >= 1, "min_count must be >= 1"),
        ]
        for ok, msg in checks:
            if not ok:
                raise ConfigurationError(msg)
        return self

    def replace(self, **changes) -> "TrainConfig":
        return dataclasses.replace(self, **changes)

    def with_overrides(self, pairs: dict[str, str]) -> "TrainConfig":
        """Apply string-valued overrides, coercing each to its field's type."""
        types = {f.name: f.type for f in fields(self)}
        changes = {}
        for raw_key, raw in pairs.items():
            key = raw_key.strip().replace("-", "_")
            if key not in types:
                raise ConfigurationError(f"unknown config key {raw_key!r}")
            changes[key] = _coerce(key, types[key], raw.strip())
        return self.replace(**changes)

    @classmethod
    def from_file(cls, path: str | Path) -> "TrainConfig":
        pairs: dict[str, str] = {}
        for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigurationError(f"{path}:{lineno}: expected key=value, got {line!r}")
            key, value = line.split("=", 1)
            pairs[key] = value
        return cls().with_overrides(pairs)

    def to_dict(self) -> dict:
        out = dataclasses.asdict(self)
        out["mode"] = self.mode.value
        return out

    def to_text(self) -> str:
        return "".join(f"{k} = {v}\n" for k, v in self.to_dict().items())


def _coerce(key: str, typ, raw: str):
    name = typ if isinstance(typ, str) else getattr(typ, "__name__", str(typ))
    try:
        if name == "bool":
            low = raw.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if name == "int":
            return int(raw)
        if name == "float":
            return float(raw)
        if name == "AblationMode":
            return AblationMode.parse(raw)
    except ValueError as exc:
        raise ConfigurationError(f"config key {key!r}: cannot parse {raw!r} as {name}") from exc
    return raw
