"""Flat ``key = value`` configuration files and the training configuration.

Keys may carry an architecture prefix (``las.batch_size = 32``) which wins
over the bare key when that architecture is selected.  Precedence, highest
first: command-line flag, prefixed file key, bare file key, built-in default.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, fields
from importlib import resources
from pathlib import Path
from typing import Dict, Mapping, Optional, Union

ARCHS = ("ctc", "las")


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    arch: str = "las"
    epochs: int = 30
    batch_size: int = 8
    lr_init: float = 1e-3
    lr_decay: float = 0.1
    dropout: float = 0.5
    beam_width: int = 8
    enc_layers: int = 2
    enc_units: int = 128
    dec_layers: int = 2
    dec_units: int = 128
    emb_dim: int = 32
    att_dim: int = 128
    clip_norm: float = 5.0
    eval_every: int = 1
    normalize_features: bool = False
    seed: int = 0

    def __post_init__(self):
        if self.arch not in ARCHS:
            raise ConfigError(f"arch must be one of {ARCHS}, got {self.arch!r}")
        for name in ("epochs", "batch_size", "beam_width", "enc_layers", "enc_units",
                     "dec_layers", "dec_units", "emb_dim", "att_dim", "eval_every"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be positive")
        if not 0.0 < self.lr_decay <= 1.0:
            raise ConfigError("lr_decay must lie in (0, 1]")
        if self.lr_init <= 0:
            raise ConfigError("lr_init must be positive")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError("dropout must lie in [0, 1)")

    def to_dict(self) -> Dict[str, object]:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: Mapping[str, object]) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in known})

    def replace(self, **kw) -> "TrainConfig":
        return dataclasses.replace(self, **kw)


_TYPES = {f.name: f.type for f in fields(TrainConfig)}


def _coerce(key: str, raw: str):
    kind = _TYPES[key]
    try:
        if kind in ("int", int):
            return int(raw)
        if kind in ("float", float):
            return float(raw)
        if kind in ("bool", bool):
            low = raw.strip().lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
    except ValueError:
        raise ConfigError(f"bad value for {key}: {raw!r}") from None
    return raw.strip()


def parse_config_text(text: str, source: str = "<config>") -> Dict[str, str]:
    values: Dict[str, str] = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        bare = key.split(".", 1)[1] if key.split(".", 1)[0] in ARCHS and "." in key else key
        if bare not in _TYPES:
            raise ConfigError(f"{source}:{lineno}: unknown key {key!r}")
        values[key] = value
    return values


def preset_path(name: str) -> Path:
    return Path(str(resources.files("cslid") / "presets" / f"{name}.cfg"))


def load_config_file(path: Union[str, Path]) -> Dict[str, str]:
    p = Path(path)
    if not p.exists() and not p.suffix:
        # bare preset names: "paper", "desk"
        p = preset_path(str(path))
    try:
        text = p.read_text(encoding="utf-8")
    except OSError as e:
        raise ConfigError(f"cannot read config {path}: {e}") from None
    return parse_config_text(text, str(p))


def resolve_config(
    arch: Optional[str] = None,
    file_values: Optional[Mapping[str, str]] = None,
    overrides: Optional[Mapping[str, object]] = None,
) -> TrainConfig:
    file_values = dict(file_values or {})
    overrides = {k: v for k, v in (overrides or {}).items() if v is not None}
    arch = overrides.get("arch") or arch or file_values.get("arch") or TrainConfig.arch
    if arch not in ARCHS:
        raise ConfigError(f"arch must be one of {ARCHS}, got {arch!r}")
    merged: Dict[str, object] = {}
    for key, raw in file_values.items():
        if "." not in key:
            merged[key] = _coerce(key, raw)
    for key, raw in file_values.items():
        prefix, _, bare = key.partition(".")
        if bare and prefix == arch:
            merged[bare] = _coerce(bare, raw)
    merged.update(overrides)
    merged["arch"] = arch
    return TrainConfig.from_dict(merged)
