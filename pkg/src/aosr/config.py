"""Plain-text ``key = value`` configuration with [model] [synth] [train] [loss] [metrics] sections."""

from __future__ import annotations

import configparser
from dataclasses import dataclass, fields
from typing import Dict, Optional

from .errors import ConfigError
from .losses import LossConfig
from .net import NetConfig
from .synth import DEFAULT_SAND_BOX
from .trainer import TrainConfig


@dataclass
class SynthConfig:
    patch_size: int = 64
    count: int = 10
    beta_min: float = 0.3
    beta_max: float = 0.6
    airlight_r: str = "%g,%g" % DEFAULT_SAND_BOX[0]
    airlight_g: str = "%g,%g" % DEFAULT_SAND_BOX[1]
    airlight_b: str = "%g,%g" % DEFAULT_SAND_BOX[2]
    depth: str = "procedural:random"

    @property
    def box(self):
        out = []
        for name in ("airlight_r", "airlight_g", "airlight_b"):
            parts = getattr(self, name).split(",")
            if len(parts) != 2:
                raise ConfigError(f"{name} must be 'lo,hi', got {getattr(self, name)!r}")
            out.append((float(parts[0]), float(parts[1])))
        return tuple(out)


@dataclass
class MetricsConfig:
    psnr_peak: float = 1.0


SECTIONS = {
    "model": NetConfig,
    "synth": SynthConfig,
    "train": TrainConfig,
    "loss": LossConfig,
    "metrics": MetricsConfig,
}


def _parse_value(section, key, raw, default):
    raw = raw.strip()
    try:
        if isinstance(default, bool):
            low = raw.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
        if isinstance(default, (tuple, list)):
            return tuple(type(default[0])(v) for v in raw.split(","))
        if default is None:
            if raw.lower() == "none":
                return None
            return tuple(float(v) for v in raw.split(","))
        return raw
    except ValueError as exc:
        raise ConfigError(f"[{section}] {key}: cannot parse {raw!r}") from exc


def parse_config(text: str) -> Dict[str, Dict]:
    cp = configparser.ConfigParser(inline_comment_prefixes=("#",), comment_prefixes=("#",),
                                   interpolation=None, delimiters=("=",))
    cp.optionxform = str
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"malformed config: {exc}") from exc
    out: Dict[str, Dict] = {}
    for section in cp.sections():
        if section not in SECTIONS:
            raise ConfigError(f"unknown config section [{section}]")
        defaults = {f.name: f.default for f in fields(SECTIONS[section])}
        values = {}
        for key, raw in cp.items(section):
            if key not in defaults:
                raise ConfigError(f"unknown config key '{key}' in [{section}]")
            values[key] = _parse_value(section, key, raw, defaults[key])
        out[section] = values
    return out


def load_config(path: Optional[str]) -> Dict[str, object]:
    """Return one populated dataclass per section (defaults when absent)."""
    raw: Dict[str, Dict] = {}
    if path is not None:
        try:
            with open(path) as fh:
                raw = parse_config(fh.read())
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
    cfg = {}
    for name, cls in SECTIONS.items():
        values = raw.get(name, {})
        cfg[name] = cls.from_dict(values) if hasattr(cls, "from_dict") else cls(**values)
    return cfg


def describe_defaults() -> str:
    lines = ["configuration keys (file sections, with defaults):"]
    for name, cls in SECTIONS.items():
        lines.append(f"  [{name}]")
        for f in fields(cls):
            default = f.default
            if isinstance(default, (tuple, list)):
                default = ",".join(str(v) for v in default)
            lines.append(f"    {f.name} = {default}")
    return "\n".join(lines)
