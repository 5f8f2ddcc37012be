"""Run configuration and its flat ``section.key = value`` text format.

Example::

    # desk-scale run
    model.use_mic = true
    optim.lr = 2e-4
    loss.gamma = 0.001
    train.epochs = 2
    data.train = synthetic
    output.dir = runs/tiny

Unknown sections or keys are errors.
"""
import hashlib
import json
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

from .model import ModelConfig
from .objective import LossWeights


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class OptimConfig:
    lr: float = 2e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    halve_every: int = 200  # epochs
    grad_clip: float = 0.0  # max global grad norm; 0 disables


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 2
    batch_size: int = 8
    patch_size: int = 64
    augment: bool = True
    seed: int = 0
    device: str = "cpu"
    eval_every: int = 1  # epochs; 0 disables per-epoch evaluation
    threads: int = 0  # 0 keeps the torch default


@dataclass(frozen=True)
class DataConfig:
    # "synthetic" or a folder with hazy/ and gt/ subfolders
    train: str = "synthetic"
    # empty: evaluate on the (unaugmented) training pairs
    val: str = ""
    synthetic_pairs: int = 8
    synthetic_size: int = 64
    synthetic_seed: int = 0


@dataclass(frozen=True)
class OutputConfig:
    dir: str = "runs/default"


@dataclass(frozen=True)
class RunConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    optim: OptimConfig = field(default_factory=OptimConfig)
    loss: LossWeights = field(default_factory=LossWeights)
    train: TrainConfig = field(default_factory=TrainConfig)
    data: DataConfig = field(default_factory=DataConfig)
    output: OutputConfig = field(default_factory=OutputConfig)

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        sections = {f.name: f.type for f in fields(cls)}
        kwargs = {}
        for name, values in d.items():
            if name not in sections:
                raise ConfigError(f"unknown config section {name!r}")
            kwargs[name] = _build_section(name, _SECTION_TYPES[name], values)
        return cls(**kwargs)

    def with_overrides(self, **sections):
        """``cfg.with_overrides(train={"epochs": 3})``"""
        d = self.to_dict()
        for name, values in sections.items():
            if name not in d:
                raise ConfigError(f"unknown config section {name!r}")
            d[name].update(values)
        return RunConfig.from_dict(d)

    def hash(self) -> str:
        """Digest of everything that affects results (the output dir does not)."""
        d = self.to_dict()
        d.pop("output")
        blob = json.dumps(d, sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]

    def to_text(self) -> str:
        lines = []
        for section, values in self.to_dict().items():
            for key, value in values.items():
                lines.append(f"{section}.{key} = {_format(value)}")
        return "\n".join(lines) + "\n"


_SECTION_TYPES = {
    "model": ModelConfig,
    "optim": OptimConfig,
    "loss": LossWeights,
    "train": TrainConfig,
    "data": DataConfig,
    "output": OutputConfig,
}


def _build_section(name, cls, values):
    known = {f.name: f for f in fields(cls)}
    for key in values:
        if key not in known:
            raise ConfigError(f"unknown config key {name}.{key}")
    coerced = {}
    for key, value in values.items():
        want = known[key].type
        want = want if isinstance(want, type) else {"int": int, "float": float, "bool": bool, "str": str}.get(want, str)
        coerced[key] = _coerce(f"{name}.{key}", value, want)
    try:
        return cls(**coerced)
    except ValueError as e:
        raise ConfigError(f"invalid {name} section: {e}") from e


def _coerce(key, value, want):
    if want is bool:
        if isinstance(value, bool):
            return value
        raise ConfigError(f"{key} expects true/false, got {value!r}")
    if want is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{key} expects an integer, got {value!r}")
        return value
    if want is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{key} expects a number, got {value!r}")
        return float(value)
    return str(value)


def _format(value):
    if isinstance(value, bool):
        return "true" if value else "false"
    return str(value)


def _parse_value(text):
    if text in ("true", "false"):
        return text == "true"
    if len(text) >= 2 and text[0] == text[-1] and text[0] in "\"'":
        return text[1:-1]
    for conv in (int, float):
        try:
            return conv(text)
        except ValueError:
            pass
    return text


def parse_config_text(text: str) -> RunConfig:
    sections = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'section.key = value', got {raw.strip()!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        if key.count(".") != 1:
            raise ConfigError(f"line {lineno}: key {key!r} must look like section.key")
        section, name = key.split(".")
        bucket = sections.setdefault(section, {})
        if name in bucket:
            raise ConfigError(f"line {lineno}: duplicate key {key}")
        bucket[name] = _parse_value(value)
    return RunConfig.from_dict(sections)


def load_config(path) -> RunConfig:
    return parse_config_text(Path(path).read_text())


def save_config(cfg: RunConfig, path):
    Path(path).write_text(f"# config_hash = {cfg.hash()}\n" + cfg.to_text())


def replace_model(cfg: RunConfig, model: ModelConfig) -> RunConfig:
    return replace(cfg, model=model)
