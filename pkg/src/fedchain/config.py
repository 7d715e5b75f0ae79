"""Experiment configuration: YAML in, validated frozen dataclasses out."""
from __future__ import annotations

from dataclasses import asdict, dataclass, field, fields, replace
from importlib import resources
from typing import Optional

import yaml

from .fl.data import Scheme
from .fl.model import Method
from .ledger import DEFAULT_SCHEDULE


class ConfigError(ValueError):
    """Invalid configuration; ``field`` is the dotted path of the offending key."""

    def __init__(self, field: str, message: str):
        super().__init__(f"{field}: {message}")
        self.field = field


@dataclass(frozen=True)
class DatasetSpec:
    n_samples: int = 4000
    n_features: int = 16
    class_proportions: tuple = (0.25, 0.25, 0.25, 0.25)
    class_sep: float = 1.3
    modes_per_class: int = 3


@dataclass(frozen=True)
class PartitionSpec:
    scheme: str = "iid"
    concentration: float = 0.5


@dataclass(frozen=True)
class Failure:
    node: int
    round: int


@dataclass(frozen=True)
class CasSpec:
    latency_us: float = 0.0
    persist: bool = False


@dataclass(frozen=True)
class ExperimentConfig:
    seed: int = 1
    n_collaborators: int = 10
    rounds: int = 10
    local_epochs: int = 2
    method: str = "fedavg"
    mu: float = 0.001
    learning_rate: float = 0.01
    batch_size: int = 32
    hidden: tuple = (32,)
    weighted_mean: bool = False
    centralized_baseline: bool = True
    scheduler: str = "sequential"
    partition: PartitionSpec = field(default_factory=PartitionSpec)
    dataset: DatasetSpec = field(default_factory=DatasetSpec)
    failures: tuple = ()
    gas_schedule: dict = field(default_factory=dict)
    cas: CasSpec = field(default_factory=CasSpec)

    @property
    def shapes(self):
        n_classes = len(self.dataset.class_proportions)
        return (self.dataset.n_features, *self.hidden, n_classes)

    @property
    def failure_map(self) -> dict:
        return {f.node: f.round for f in self.failures}

    def to_dict(self) -> dict:
        d = asdict(self)
        d["hidden"] = list(self.hidden)
        d["dataset"]["class_proportions"] = list(self.dataset.class_proportions)
        d["failures"] = [asdict(f) for f in self.failures]
        return d

    def with_failures(self, k: int, at_round: int = 1) -> "ExperimentConfig":
        return replace(self, failures=tuple(Failure(i, at_round) for i in range(k)))


_SECTIONS = {"partition": PartitionSpec, "dataset": DatasetSpec, "cas": CasSpec}


def _check_keys(raw: dict, cls, prefix=""):
    known = {f.name for f in fields(cls)}
    for key in raw:
        if key not in known:
            raise ConfigError(prefix + str(key), "unknown key")


def _typed(value, kind, path):
    if kind is bool:
        if not isinstance(value, bool):
            raise ConfigError(path, f"expected true/false, got {value!r}")
        return value
    if kind is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(path, f"expected an integer, got {value!r}")
        return value
    if kind is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(path, f"expected a number, got {value!r}")
        return float(value)
    if kind is str:
        if not isinstance(value, str):
            raise ConfigError(path, f"expected a string, got {value!r}")
        return value
    return value


_SCALARS = {
    "seed": int, "n_collaborators": int, "rounds": int, "local_epochs": int,
    "method": str, "mu": float, "learning_rate": float, "batch_size": int,
    "weighted_mean": bool, "centralized_baseline": bool, "scheduler": str,
}
_SECTION_SCALARS = {
    "dataset": {"n_samples": int, "n_features": int, "class_sep": float, "modes_per_class": int},
    "partition": {"scheme": str, "concentration": float},
    "cas": {"latency_us": float, "persist": bool},
}


def from_dict(raw: Optional[dict]) -> ExperimentConfig:
    raw = dict(raw or {})
    _check_keys(raw, ExperimentConfig)
    kwargs = {}
    for key, kind in _SCALARS.items():
        if key in raw:
            kwargs[key] = _typed(raw[key], kind, key)

    if "hidden" in raw:
        hidden = raw["hidden"]
        if not isinstance(hidden, list) or not hidden:
            raise ConfigError("hidden", "expected a non-empty list of layer widths")
        kwargs["hidden"] = tuple(_typed(h, int, f"hidden[{i}]") for i, h in enumerate(hidden))

    for name, cls in _SECTIONS.items():
        if name not in raw:
            continue
        section = raw[name]
        if not isinstance(section, dict):
            raise ConfigError(name, "expected a mapping")
        _check_keys(section, cls, name + ".")
        sub = {k: _typed(section[k], t, f"{name}.{k}")
               for k, t in _SECTION_SCALARS[name].items() if k in section}
        if name == "dataset" and "class_proportions" in section:
            props = section["class_proportions"]
            if not isinstance(props, list):
                raise ConfigError("dataset.class_proportions", "expected a list")
            sub["class_proportions"] = tuple(
                _typed(p, float, f"dataset.class_proportions[{i}]") for i, p in enumerate(props))
        kwargs[name] = cls(**sub)

    if "failures" in raw:
        items = raw["failures"] or []
        if not isinstance(items, list):
            raise ConfigError("failures", "expected a list of {node, round}")
        parsed = []
        for i, item in enumerate(items):
            if not isinstance(item, dict) or set(item) != {"node", "round"}:
                raise ConfigError(f"failures[{i}]", "expected exactly the keys node and round")
            parsed.append(Failure(_typed(item["node"], int, f"failures[{i}].node"),
                                  _typed(item["round"], int, f"failures[{i}].round")))
        kwargs["failures"] = tuple(parsed)

    if "gas_schedule" in raw:
        gas = raw["gas_schedule"] or {}
        if not isinstance(gas, dict):
            raise ConfigError("gas_schedule", "expected a mapping")
        kwargs["gas_schedule"] = gas

    cfg = ExperimentConfig(**kwargs)
    validate(cfg)
    return cfg


def validate(cfg: ExperimentConfig) -> ExperimentConfig:
    for name in ("n_collaborators", "rounds", "batch_size"):
        if getattr(cfg, name) < 1:
            raise ConfigError(name, "must be positive")
    if cfg.local_epochs < 1:
        raise ConfigError("local_epochs", "must be positive")
    if cfg.seed < 0:
        raise ConfigError("seed", "must be non-negative")
    try:
        Method(cfg.method)
    except ValueError:
        raise ConfigError("method", f"expected fedavg or fedprox, got {cfg.method!r}") from None
    if cfg.mu < 0:
        raise ConfigError("mu", "must be non-negative")
    if not cfg.learning_rate > 0:
        raise ConfigError("learning_rate", "must be positive")
    if any(h < 1 for h in cfg.hidden):
        raise ConfigError("hidden", "layer widths must be positive")
    if cfg.scheduler not in ("sequential", "threads"):
        raise ConfigError("scheduler", "expected sequential or threads")

    ds = cfg.dataset
    if ds.n_features < 1:
        raise ConfigError("dataset.n_features", "must be positive")
    if ds.modes_per_class < 1:
        raise ConfigError("dataset.modes_per_class", "must be positive")
    props = ds.class_proportions
    if len(props) < 2 or any(p < 0 for p in props) or abs(sum(props) - 1.0) > 1e-9:
        raise ConfigError("dataset.class_proportions", "need >= 2 non-negative entries summing to 1")
    if ds.n_samples < len(props):
        raise ConfigError("dataset.n_samples", "must be at least the number of classes")
    n_train = ds.n_samples - round(0.2 * ds.n_samples)
    if cfg.n_collaborators > n_train:
        raise ConfigError("n_collaborators", f"exceeds the {n_train} training rows")

    try:
        Scheme(cfg.partition.scheme)
    except ValueError:
        raise ConfigError("partition.scheme", "expected iid or label_skew") from None
    if cfg.partition.concentration <= 0:
        raise ConfigError("partition.concentration", "must be positive")
    if cfg.cas.latency_us < 0:
        raise ConfigError("cas.latency_us", "must be non-negative")

    seen = set()
    for i, f in enumerate(cfg.failures):
        if not 0 <= f.node < cfg.n_collaborators:
            raise ConfigError(f"failures[{i}].node", f"must be in [0, {cfg.n_collaborators})")
        if not 1 <= f.round <= cfg.rounds:
            raise ConfigError(f"failures[{i}].round", f"must be in [1, {cfg.rounds}]")
        if f.node in seen:
            raise ConfigError(f"failures[{i}].node", "node listed twice")
        seen.add(f.node)

    try:
        DEFAULT_SCHEDULE.with_overrides(cfg.gas_schedule)
    except Exception as exc:
        raise ConfigError("gas_schedule", str(exc)) from None
    return cfg


def loads(text: str) -> ExperimentConfig:
    try:
        raw = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError("<file>", f"not valid YAML: {exc}") from None
    if raw is not None and not isinstance(raw, dict):
        raise ConfigError("<file>", "top level must be a mapping")
    return from_dict(raw)


def load(path) -> tuple[ExperimentConfig, str]:
    """Parse ``path``; returns the config and the exact text it was read from."""
    with open(path, encoding="utf-8") as fh:
        text = fh.read()
    return loads(text), text


def dumps(cfg: ExperimentConfig) -> str:
    return yaml.safe_dump(cfg.to_dict(), sort_keys=False)


def default_config_text() -> str:
    return resources.files("fedchain").joinpath("configs/default.yaml").read_text(encoding="utf-8")
