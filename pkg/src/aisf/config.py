"""Run configuration: defaults, validation, config-file parsing."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Union

from aisf.errors import ConfigError

_TRUE = {"1", "true", "yes", "on"}
_FALSE = {"0", "false", "no", "off"}


@dataclass
class RunConfig:
    """Everything a training/eval run needs; the amodal head is always on."""

    embed_dim: int = 64
    roi_h: int = 14
    roi_w: int = 14
    heads: int = 1
    encoder_layers: int = 1
    decoder_layers: int = 1
    occluder: bool = True
    visible: bool = True
    invisible: bool = True
    learning_rate: float = 0.0025
    batch_size: int = 1
    iterations: int = 2000
    seed: int = 0
    dataset: str = ""
    backbone: str = "conv"
    samples_per_bin: int = 2
    decoder_ffn: bool = False
    layer_norm: bool = True
    checkpoint_interval: int = 500

    @property
    def mask_h(self) -> int:
        return 2 * self.roi_h

    @property
    def mask_w(self) -> int:
        return 2 * self.roi_w

    @property
    def token_count(self) -> int:
        return self.mask_h * self.mask_w

    @property
    def ffn_dim(self) -> int:
        return 2 * self.embed_dim

    @property
    def query_roles(self) -> tuple[str, ...]:
        roles = []
        if self.occluder:
            roles.append("occluder")
        if self.visible:
            roles.append("visible")
        roles.append("amodal")
        return tuple(roles)

    @property
    def head_names(self) -> tuple[str, ...]:
        heads = list(self.query_roles)
        if self.invisible:
            heads.append("invisible")
        return tuple(heads)

    @property
    def backbone_stride(self) -> int:
        return 4 if self.backbone == "conv" else 1

    def validate(self) -> "RunConfig":
        def positive(name, value):
            if value <= 0:
                raise ConfigError(f"{name} must be positive, got {value}")

        positive("embed_dim", self.embed_dim)
        positive("roi_h", self.roi_h)
        positive("roi_w", self.roi_w)
        positive("heads", self.heads)
        positive("encoder_layers", self.encoder_layers)
        positive("decoder_layers", self.decoder_layers)
        positive("learning_rate", self.learning_rate)
        positive("batch_size", self.batch_size)
        positive("samples_per_bin", self.samples_per_bin)
        positive("checkpoint_interval", self.checkpoint_interval)
        if self.iterations < 0:
            raise ConfigError(f"iterations must be >= 0, got {self.iterations}")
        if self.embed_dim % 4:
            raise ConfigError(f"embed_dim must be divisible by 4, got {self.embed_dim}")
        if self.embed_dim % self.heads:
            raise ConfigError(
                f"embed_dim {self.embed_dim} not divisible by heads {self.heads}")
        if self.invisible and not self.visible:
            raise ConfigError("the invisible head needs the visible query enabled")
        if self.backbone not in ("conv", "identity"):
            raise ConfigError(f"backbone must be 'conv' or 'identity', got {self.backbone!r}")
        return self

    def to_dict(self) -> dict[str, Any]:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "RunConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d).validate()

    def replace(self, **kw) -> "RunConfig":
        return dataclasses.replace(self, **kw).validate()


def _parse_value(field: dataclasses.Field, raw: str, where: str) -> Any:
    raw = raw.strip()
    if field.type in ("bool", bool):
        low = raw.lower()
        if low in _TRUE:
            return True
        if low in _FALSE:
            return False
        raise ConfigError(f"{where}: expected a boolean for {field.name!r}, got {raw!r}")
    try:
        if field.type in ("int", int):
            return int(raw)
        if field.type in ("float", float):
            return float(raw)
    except ValueError:
        raise ConfigError(f"{where}: bad value {raw!r} for {field.name!r}") from None
    return raw


def load_config_file(path: Union[str, Path]) -> dict[str, Any]:
    """Parse a UTF-8 `key = value` file into a config override dict."""
    fields = {f.name: f for f in dataclasses.fields(RunConfig)}
    overrides: dict[str, Any] = {}
    text = Path(path).read_text(encoding="utf-8")
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        if "=" not in stripped:
            raise ConfigError(f"{path}:{lineno}: expected 'key = value', got {line!r}")
        key, _, value = stripped.partition("=")
        key = key.strip()
        if key not in fields:
            raise ConfigError(f"{path}:{lineno}: unknown config key {key!r}")
        overrides[key] = _parse_value(fields[key], value, f"{path}:{lineno}")
    return overrides


def build_config(file_path=None, overrides=None) -> RunConfig:
    """File values first, then explicit overrides (CLI flags) on top."""
    merged: dict[str, Any] = {}
    if file_path:
        merged.update(load_config_file(file_path))
    if overrides:
        merged.update({k: v for k, v in overrides.items() if v is not None})
    return RunConfig.from_dict({**RunConfig().to_dict(), **merged})
