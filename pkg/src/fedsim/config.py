"""Flat configuration records shared by the session protocol, CLI and manifests.

A record is a plain dict of scalar or list values whose keys are the union of
:class:`DataConfig`, :class:`fedsim.nn.NetworkSpec` and
:class:`fedsim.engine.FLConfig` field names, plus ``seed``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, fields, replace

from .datasets import KINDS, PARTITION_MODES
from .engine import FLConfig, canonical_algorithm
from .errors import ConfigError
from .nn import NetworkSpec

PROTOCOL_VERSION = "fedsim/1"

PARTITION_ALIASES = {
    "iid": "iid",
    "dirichlet": "dirichlet_label",
    "dirichlet_label": "dirichlet_label",
    "skewed": "uniform_class_skewed_size",
    "uniform_class_skewed_size": "uniform_class_skewed_size",
}

HOT_KEYS = frozenset({
    "dropout_prob", "client_fraction", "local_epochs", "client_lr", "mu",
    "server_lr", "dp_clip", "dp_sigma", "federated_enabled", "algorithm",
})


@dataclass(frozen=True)
class DataConfig:
    dataset: str = "gauss"
    n_points: int = 500
    noise: float = 0.0
    train_ratio: float = 0.5
    partition: str = "dirichlet_label"
    alpha_label: float = 0.5
    alpha_size: float = 0.5

    def validate(self) -> DataConfig:
        if self.dataset not in KINDS:
            raise ConfigError(f"dataset must be one of {KINDS}", "dataset")
        if self.n_points < 4:
            raise ConfigError("n_points must be at least 4", "n_points")
        if not 0 <= self.noise <= 0.5:
            raise ConfigError("noise must lie in [0, 0.5]", "noise")
        if not 0 < self.train_ratio < 1:
            raise ConfigError("train_ratio must lie in (0, 1)", "train_ratio")
        if self.partition not in PARTITION_MODES:
            raise ConfigError(f"partition must be one of {PARTITION_MODES}", "partition")
        if not (self.alpha_label > 0 and math.isfinite(self.alpha_label)):
            raise ConfigError("alpha_label must be positive", "alpha_label")
        if not (self.alpha_size > 0 and math.isfinite(self.alpha_size)):
            raise ConfigError("alpha_size must be positive", "alpha_size")
        return self


_SECTIONS = {
    "data": DataConfig,
    "network": NetworkSpec,
    "fl": FLConfig,
}
_OWNER = {f.name: name for name, cls in _SECTIONS.items() for f in fields(cls)}
_DEFAULTS = {f.name: f.default for cls in _SECTIONS.values() for f in fields(cls)}
ALL_KEYS = frozenset(_OWNER) | {"seed"}


def coerce(key: str, value):
    """Convert a raw record/CLI value to the type the config field expects."""
    if key not in ALL_KEYS:
        raise ConfigError(f"unknown config key {key!r}", key)
    try:
        if key == "seed":
            return int(value)
        if key == "algorithm":
            return canonical_algorithm(value)
        if key == "partition":
            if value not in PARTITION_ALIASES:
                raise ConfigError(f"unknown partition mode {value!r}", key)
            return PARTITION_ALIASES[value]
        if key in ("hidden_layers", "input_features"):
            if isinstance(value, str):
                value = [v for v in value.split(",") if v.strip()]
            items = tuple(v.strip() if isinstance(v, str) else v for v in value)
            return tuple(_strict_int(v) for v in items) if key == "hidden_layers" else items
        if key == "server_lr" and value is None:
            return None
        default = _DEFAULTS[key]
        if isinstance(default, bool):
            return _bool(value)
        if isinstance(default, int):
            return _strict_int(value)
        if isinstance(default, float) or default is None:
            return float(value)
        return str(value)
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad value {value!r} for {key}: {exc}", key) from None


def _strict_int(v) -> int:
    if isinstance(v, bool):
        raise ValueError("expected an integer")
    if isinstance(v, float):
        if not v.is_integer():
            raise ValueError("expected an integer")
        return int(v)
    return int(v)


def _bool(v) -> bool:
    if isinstance(v, bool):
        return v
    if isinstance(v, str) and v.lower() in ("true", "1", "yes", "on"):
        return True
    if isinstance(v, str) and v.lower() in ("false", "0", "no", "off"):
        return False
    if isinstance(v, int) and v in (0, 1):
        return bool(v)
    raise ValueError("expected a boolean")


@dataclass(frozen=True)
class SessionConfig:
    data: DataConfig = DataConfig()
    network: NetworkSpec = NetworkSpec()
    fl: FLConfig = FLConfig()
    seed: int = 0

    @classmethod
    def from_record(cls, record: dict | None = None) -> SessionConfig:
        parts: dict[str, dict] = {name: {} for name in _SECTIONS}
        seed = 0
        for key, value in (record or {}).items():
            value = coerce(key, value)
            if key == "seed":
                seed = value
            else:
                parts[_OWNER[key]][key] = value
        cfg = cls(
            data=DataConfig(**parts["data"]),
            network=NetworkSpec(**parts["network"]),
            fl=FLConfig(**parts["fl"]),
            seed=seed,
        )
        return cfg.validate()

    def validate(self) -> SessionConfig:
        self.data.validate()
        self.network.validate()
        self.fl.validate()
        if self.fl.n_clients > round(self.data.n_points * self.data.train_ratio):
            raise ConfigError("more clients than training points", "n_clients")
        return self

    def with_value(self, key: str, value) -> SessionConfig:
        value = coerce(key, value)
        if key == "seed":
            return replace(self, seed=value)
        section = _OWNER[key]
        return replace(self, **{section: replace(getattr(self, section), **{key: value})})

    def to_record(self) -> dict:
        rec: dict = {}
        for name in _SECTIONS:
            obj = getattr(self, name)
            for f in fields(obj):
                v = getattr(obj, f.name)
                if isinstance(v, tuple):
                    v = list(v)
                elif isinstance(v, float) and math.isinf(v):
                    v = "inf"
                rec[f.name] = v
        rec["seed"] = self.seed
        return rec
