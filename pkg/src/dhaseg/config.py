"""Flat key=value run configuration with bit-exact round-tripping and hashing."""
from __future__ import annotations

import dataclasses
import hashlib
from dataclasses import dataclass
from pathlib import Path

from .adapt import ADAPT_MODES


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    master_seed: int = 0
    out_dir: str = "runs/default"
    canvas: int = 64
    num_classes: int = 5
    n_source: int = 300
    n_per_style: int = 150
    n_open: int = 100
    k: str = "auto"  # "auto" (silhouette over 2..5) or a fixed integer
    lambda_gan: float = 1.0
    lambda_sem: float = 10.0
    lambda_style: float = 10.0
    lambda_out: float = 0.01
    lambda_task: float = 1.0
    scheme: str = "short"
    adapt_mode: str = "domain_wise"
    fseg_iterations: int = 1600
    hallucinate_iterations: int = 1600
    adapt_iterations: int = 3000
    checkpoint_every: int = 500

    def __post_init__(self):
        if self.k != "auto":
            try:
                kv = int(self.k)
            except ValueError:
                raise ConfigError(f"k must be 'auto' or an integer, got {self.k!r}")
            if kv < 1:
                raise ConfigError("k must be >= 1")
        if self.scheme not in ("short", "long"):
            raise ConfigError(f"unknown scheme {self.scheme!r}")
        if self.adapt_mode not in ADAPT_MODES:
            raise ConfigError(f"unknown adapt_mode {self.adapt_mode!r}")
        for name in ("lambda_gan", "lambda_sem", "lambda_style", "lambda_out",
                     "lambda_task"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be non-negative")

    def fixed_k(self) -> int | None:
        return None if self.k == "auto" else int(self.k)


_FIELDS = {f.name: f for f in dataclasses.fields(RunConfig)}


def serialize_config(config: RunConfig) -> str:
    lines = []
    for f in dataclasses.fields(RunConfig):
        v = getattr(config, f.name)
        lines.append(f"{f.name}={v!r}" if isinstance(v, float) else f"{f.name}={v}")
    return "\n".join(lines) + "\n"


def parse_config(text: str) -> RunConfig:
    values = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key=value, got {raw!r}")
        key, val = (s.strip() for s in line.split("=", 1))
        if key not in _FIELDS:
            raise ConfigError(f"line {lineno}: unknown config key {key!r}")
        if key in values:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        ftype = _FIELDS[key].type
        try:
            if ftype == "int":
                values[key] = int(val)
            elif ftype == "float":
                values[key] = float(val)
            else:
                values[key] = val
        except ValueError:
            raise ConfigError(f"line {lineno}: bad value for {key!r}: {val!r}")
    return RunConfig(**values)


def load_config(path: Path) -> RunConfig:
    return parse_config(Path(path).read_text(encoding="utf-8"))


def save_config(config: RunConfig, path: Path) -> None:
    Path(path).write_text(serialize_config(config), encoding="utf-8")


def config_hash(config: RunConfig) -> str:
    return hashlib.sha256(serialize_config(config).encode()).hexdigest()[:16]
