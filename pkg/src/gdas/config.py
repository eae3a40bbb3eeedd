"""Run configuration: one YAML file, every default expanded on write."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field, fields
from pathlib import Path

import yaml

from . import sampler
from .data import GENERATORS, Dataset, make_dataset, split_dataset
from .engine import SearchConfig, TrainConfig
from .network import NetworkPlan
from .ops import CANDIDATE_OPS
from .search_space import SearchSpaceSpec


class ConfigError(ValueError):
    def __init__(self, field_name: str, message: str):
        super().__init__(f"{field_name}: {message}")
        self.field = field_name


@dataclass
class DatasetConfig:
    kind: str = "oriented_edges"
    n_examples: int = 512
    test_examples: int = 256
    image_size: int = 8
    num_classes: int = 4
    noise: float = 0.15
    length: int = 5
    distractors: int = 1
    split_fraction: float = 0.5
    seed: int | None = None

    def generator_kwargs(self) -> dict:
        kw = dict(image_size=self.image_size, num_classes=self.num_classes, noise=self.noise)
        if self.kind == "oriented_edges":
            kw.update(length=self.length, distractors=self.distractors)
        return kw


@dataclass
class SpaceConfig:
    B: int = 2
    T: int = 1
    ops: list = field(default_factory=lambda: ["identity", "sep_conv_3x3", "max_pool_3x3"])


@dataclass
class NetworkConfig:
    C: int = 4
    N: int = 1
    stem_multiplier: int = 3


@dataclass
class OracleConfig:
    epochs: int = 100
    batch_size: int = 32
    lr_max: float = 0.025
    lr_min: float = 1e-3
    momentum: float = 0.9
    weight_decay: float = 3e-4
    cap: int = 10_000
    workers: int = 1


@dataclass
class DeriveConfig:
    exclude_zeroize: bool = False


@dataclass
class ValidateConfig:
    tau: float = 1.0
    gradcheck_seeds: int = 5
    marginal_draws: int = 100_000


@dataclass
class RunConfig:
    dataset: DatasetConfig
    seed: int = 0
    output_dir: str = "runs/default"
    figures: bool = True
    space: SpaceConfig = field(default_factory=SpaceConfig)
    network: NetworkConfig = field(default_factory=NetworkConfig)
    search: SearchConfig = field(default_factory=SearchConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    oracle: OracleConfig = field(default_factory=OracleConfig)
    derive: DeriveConfig = field(default_factory=DeriveConfig)
    validate: ValidateConfig = field(default_factory=ValidateConfig)

    # derived objects -------------------------------------------------
    @property
    def data_seed(self) -> int:
        if self.dataset.seed is not None:
            return int(self.dataset.seed)
        return sampler.derive_seed(self.seed, "dataset") % (2 ** 31)

    def space_spec(self) -> SearchSpaceSpec:
        return SearchSpaceSpec(B=self.space.B, T=self.space.T, ops=tuple(self.space.ops))

    def plan(self) -> NetworkPlan:
        d = self.dataset
        return NetworkPlan(C=self.network.C, N=self.network.N, B=self.space.B, num_classes=d.num_classes,
                           in_channels=1, stem_multiplier=self.network.stem_multiplier)

    def make_data(self) -> Dataset:
        d = self.dataset
        return make_dataset(d.kind, n=d.n_examples, seed=self.data_seed, **d.generator_kwargs())

    def make_test_data(self) -> Dataset:
        d = self.dataset
        return make_dataset(d.kind, n=d.test_examples, seed=sampler.derive_seed(self.data_seed, "test") % (2 ** 31),
                            **d.generator_kwargs())

    def make_split(self):
        return split_dataset(self.make_data(), self.dataset.split_fraction,
                             seed=sampler.derive_seed(self.data_seed, "split") % (2 ** 31))

    def search_config(self) -> SearchConfig:
        return dataclasses.replace(self.search, seed=self.seed)

    def oracle_budget(self) -> TrainConfig:
        o = self.oracle
        return TrainConfig(epochs=o.epochs, batch_size=o.batch_size, lr_max=o.lr_max, lr_min=o.lr_min,
                           momentum=o.momentum, weight_decay=o.weight_decay)

    # serialization ---------------------------------------------------
    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["search"]["a_betas"] = list(self.search.a_betas)
        d["search"]["seed"] = self.seed
        d["dataset"]["seed"] = self.data_seed
        return d

    def to_yaml(self) -> str:
        return yaml.safe_dump(self.to_dict(), sort_keys=False, default_flow_style=False)


_SECTIONS = {
    "dataset": DatasetConfig,
    "space": SpaceConfig,
    "network": NetworkConfig,
    "search": SearchConfig,
    "train": TrainConfig,
    "oracle": OracleConfig,
    "derive": DeriveConfig,
    "validate": ValidateConfig,
}

_SCALARS = {"seed": int, "output_dir": str, "figures": bool}


def _coerce(path: str, value, default):
    """Coerce ``value`` to the type of ``default``; raise ConfigError naming ``path``."""
    if default is None:
        if value is None:
            return None
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(path, f"expected an integer or null, got {value!r}")
        return value
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(path, f"expected true/false, got {value!r}")
        return value
    if isinstance(default, int):
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(path, f"expected an integer, got {value!r}")
        return value
    if isinstance(default, float):
        if isinstance(value, str):
            # YAML 1.1 reads exponents without a dot ("1e-3") as strings
            try:
                value = float(value)
            except ValueError:
                pass
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(path, f"expected a number, got {value!r}")
        return float(value)
    if isinstance(default, str):
        if not isinstance(value, str):
            raise ConfigError(path, f"expected a string, got {value!r}")
        return value
    if isinstance(default, (list, tuple)):
        if not isinstance(value, (list, tuple)):
            raise ConfigError(path, f"expected a list, got {value!r}")
        return type(default)(value)
    return value


def _build_section(name: str, cls, raw) -> object:
    if raw is None:
        raw = {}
    if not isinstance(raw, dict):
        raise ConfigError(name, f"expected a mapping, got {type(raw).__name__}")
    kwargs = {}
    known = {f.name: f for f in fields(cls)}
    for key in raw:
        if key not in known:
            raise ConfigError(f"{name}.{key}", "unknown field")
    for fname, f in known.items():
        if f.default is not dataclasses.MISSING:
            default = f.default
        elif f.default_factory is not dataclasses.MISSING:  # type: ignore[misc]
            default = f.default_factory()  # type: ignore[misc]
        else:
            default = None
        if fname in raw:
            kwargs[fname] = _coerce(f"{name}.{fname}", raw[fname], default)
    try:
        return cls(**kwargs)
    except (ValueError, TypeError) as e:
        raise ConfigError(name, str(e)) from e


def from_dict(raw: dict, overrides: dict | None = None) -> RunConfig:
    """Build a validated RunConfig; ``overrides`` maps dotted paths to values and wins."""
    if not isinstance(raw, dict):
        raise ConfigError("<root>", "config must be a mapping")
    raw = {k: (dict(v) if isinstance(v, dict) else v) for k, v in raw.items()}
    for path, value in (overrides or {}).items():
        if value is None:
            continue
        head, _, tail = path.partition(".")
        if tail:
            raw.setdefault(head, {})
            if not isinstance(raw[head], dict):
                raise ConfigError(head, "expected a mapping")
            raw[head][tail] = value
        else:
            raw[head] = value
    for key in raw:
        if key not in _SECTIONS and key not in _SCALARS:
            raise ConfigError(key, "unknown field")
    if "dataset" not in raw or raw["dataset"] is None:
        raise ConfigError("dataset", "missing required field")
    kwargs = {}
    for key, typ in _SCALARS.items():
        if key in raw:
            default = {"seed": 0, "output_dir": "", "figures": True}[key]
            kwargs[key] = _coerce(key, raw[key], default)
    for name, cls in _SECTIONS.items():
        if name in raw or name == "dataset":
            kwargs[name] = _build_section(name, cls, raw.get(name))
    cfg = RunConfig(**kwargs)
    _validate(cfg)
    return cfg


def _validate(cfg: RunConfig) -> None:
    d = cfg.dataset
    if d.kind not in GENERATORS:
        raise ConfigError("dataset.kind", f"unknown kind {d.kind!r}; expected one of {sorted(GENERATORS)}")
    if d.n_examples < 2:
        raise ConfigError("dataset.n_examples", "need at least 2 examples")
    if d.test_examples < 1:
        raise ConfigError("dataset.test_examples", "must be >= 1")
    if not 0 < d.split_fraction < 1:
        raise ConfigError("dataset.split_fraction", "must be in (0, 1)")
    if not 2 <= d.num_classes <= 4:
        raise ConfigError("dataset.num_classes", "must be between 2 and 4")
    if d.image_size < 4:
        raise ConfigError("dataset.image_size", "must be >= 4")
    if d.noise < 0:
        raise ConfigError("dataset.noise", "must be >= 0")
    if d.length % 2 == 0 or not 1 <= d.length <= d.image_size:
        raise ConfigError("dataset.length", "must be odd and no larger than image_size")
    if d.distractors < 0:
        raise ConfigError("dataset.distractors", "must be >= 0")
    bad = [o for o in cfg.space.ops if o not in CANDIDATE_OPS]
    if bad:
        raise ConfigError("space.ops", f"unknown op(s) {bad}")
    try:
        cfg.space_spec()
    except ValueError as e:
        raise ConfigError("space", str(e)) from e
    if cfg.space.T > 2:
        raise ConfigError("space.T", "T cannot exceed the 2 predecessors of the first node")
    try:
        cfg.plan()
    except ValueError as e:
        raise ConfigError("network", str(e)) from e
    if cfg.oracle.workers < 1:
        raise ConfigError("oracle.workers", "must be >= 1")


def load(path: str | Path, overrides: dict | None = None) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as e:
        raise ConfigError("<file>", f"cannot read {path}: {e}") from e
    try:
        raw = yaml.safe_load(text)
    except yaml.YAMLError as e:
        raise ConfigError("<file>", f"invalid YAML: {e}") from e
    return from_dict(raw or {}, overrides)
