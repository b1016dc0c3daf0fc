"""Flat ``key = value`` run configuration shared by every CLI command.

One namespace covers the generator, network, loss weights and trainer.
``input_dim`` is shared by the generator and the network; ``seed`` is taken
from the command line.  Lines starting with ``#`` are comments.
"""
from __future__ import annotations

from dataclasses import dataclass, fields, replace

from .net import NetworkConfig
from .objectives import LossWeights
from .seqgen import GeneratorConfig
from .trainer import TrainConfig

_SECTIONS = {
    "generator": GeneratorConfig,
    "network": NetworkConfig,
    "weights": LossWeights,
    "train": TrainConfig,
}
_SKIP = {"train": {"weights", "seed"}, "network": {"input_dim"}}


class ConfigError(ValueError):
    pass


def _keys() -> dict[str, str]:
    out = {}
    for section, cls in _SECTIONS.items():
        for f in fields(cls):
            if f.name not in _SKIP.get(section, ()):
                out[f.name] = section
    return out


KEYS = _keys()


def _convert(raw: str, default):
    raw = raw.strip()
    if isinstance(default, bool):
        if raw.lower() in ("true", "1", "yes"):
            return True
        if raw.lower() in ("false", "0", "no"):
            return False
        raise ValueError(f"not a boolean: {raw!r}")
    if isinstance(default, tuple):
        kind = type(default[0]) if default else float
        return tuple(kind(p) for p in raw.split(",") if p.strip())
    return type(default)(raw)


@dataclass(frozen=True)
class RunConfig:
    generator: GeneratorConfig = GeneratorConfig()
    network: NetworkConfig = NetworkConfig()
    train: TrainConfig = TrainConfig()

    @property
    def net(self) -> NetworkConfig:
        """Network config with ``input_dim`` taken from the generator."""
        return replace(self.network, input_dim=self.generator.input_dim)

    def with_overrides(self, values: dict[str, str]) -> "RunConfig":
        parts = {s: {} for s in _SECTIONS}
        for key, raw in values.items():
            if key not in KEYS:
                raise ConfigError(f"unknown config key {key!r}")
            section = KEYS[key]
            current = {"generator": self.generator, "network": self.network,
                       "weights": self.train.weights, "train": self.train}[section]
            try:
                parts[section][key] = _convert(raw, getattr(current, key))
            except ValueError as exc:
                raise ConfigError(f"bad value for {key}: {exc}") from exc
        try:
            weights = replace(self.train.weights, **parts["weights"])
            return RunConfig(
                replace(self.generator, **parts["generator"]),
                replace(self.network, **parts["network"]),
                replace(self.train, weights=weights, **parts["train"]),
            )
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc

    def echo(self) -> str:
        lines = []
        for key, section in KEYS.items():
            obj = {"generator": self.generator, "network": self.network,
                   "weights": self.train.weights, "train": self.train}[section]
            value = getattr(obj, key)
            if isinstance(value, tuple):
                value = ",".join(str(v) for v in value)
            elif isinstance(value, bool):
                value = str(value).lower()
            lines.append(f"{key} = {value}")
        return "\n".join(lines) + "\n"


def parse(text: str) -> dict[str, str]:
    values = {}
    for n, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {n}: expected 'key = value'")
        key, raw = (s.strip() for s in line.split("=", 1))
        if key in values:
            raise ConfigError(f"line {n}: duplicate key {key!r}")
        values[key] = raw
    return values


def load(path=None) -> RunConfig:
    if path is None:
        return RunConfig()
    try:
        text = open(path, encoding="utf-8").read()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return RunConfig().with_overrides(parse(text))
