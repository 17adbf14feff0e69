"""Run configuration: nested dataclasses that flatten to dotted keys.

Config files are INI; section ``[model]`` key ``global_dim`` is the flat key
``model.global_dim``.
"""

from __future__ import annotations

import configparser
import dataclasses
from dataclasses import dataclass, field

from .model import ModelConfig
from .training import TrainConfig


@dataclass
class TrainSection:
    steps: int = 12_500
    batch_size: int = 16
    set_sizes: tuple[int, ...] = (3, 4, 5, 6)
    lr: float = 5e-4
    seed: int = 0


@dataclass
class DataSection:
    classes: tuple[str, ...] = ()
    labels: bool = False
    n_points: int = 10_000
    split_seed: int = 0
    eval_seed: int = 42
    radial_sd: float = 0.1
    angular_sd: float = 0.3


@dataclass
class IoSection:
    log_interval: int = 100


@dataclass
class RunConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainSection = field(default_factory=TrainSection)
    data: DataSection = field(default_factory=DataSection)
    io: IoSection = field(default_factory=IoSection)

    @classmethod
    def preset(cls, name: str) -> "RunConfig":
        if name == "toy":
            return cls()
        if name == "pointcloud":
            return cls(
                model=ModelConfig(entity_dim=3, global_dim=90, n_stacks=6, hidden=(128, 128),
                                  deepset_features=128, deepset_out=100, batchnorm=True),
                train=TrainSection(steps=5_000, set_sizes=(1000,)),
            )
        raise ValueError(f"unknown preset {name!r} (toy, pointcloud)")

    def validate(self) -> "RunConfig":
        m, t = self.model, self.train
        ModelConfig(**self.model.to_dict())  # re-run its checks
        if t.lr <= 0:
            raise ValueError("train.lr must be positive")
        if not t.set_sizes or min(t.set_sizes) < 1:
            raise ValueError("train.set_sizes must be a non-empty list of positive sizes")
        if t.batch_size < 1 or self.io.log_interval < 1:
            raise ValueError("train.batch_size and io.log_interval must be >= 1")
        if self.data.labels and m.num_classes < 1:
            raise ValueError("data.labels requires model.num_classes and model.label_dim")
        return self

    def train_config(self) -> TrainConfig:
        t = self.train
        return TrainConfig(t.steps, t.batch_size, tuple(t.set_sizes), t.lr, self.io.log_interval)

    def to_flat(self) -> dict[str, object]:
        out = {}
        for sec in dataclasses.fields(self):
            obj = getattr(self, sec.name)
            for f in dataclasses.fields(obj):
                v = getattr(obj, f.name)
                out[f"{sec.name}.{f.name}"] = list(v) if isinstance(v, tuple) else v
        return out

    @classmethod
    def from_flat(cls, flat: dict, base: "RunConfig | None" = None) -> "RunConfig":
        cfg = base if base is not None else cls()
        sections = {}
        for sec in dataclasses.fields(cfg):
            obj = getattr(cfg, sec.name)
            sections[sec.name] = {f.name: getattr(obj, f.name) for f in dataclasses.fields(obj)}
        for key, raw in flat.items():
            sec, _, name = key.partition(".")
            if sec not in sections or name not in sections[sec]:
                raise KeyError(f"unknown config key {key!r}")
            sections[sec][name] = _coerce(raw, sections[sec][name], key)
        return cls(
            model=ModelConfig(**sections["model"]),
            train=TrainSection(**sections["train"]),
            data=DataSection(**sections["data"]),
            io=IoSection(**sections["io"]),
        )

    def with_overrides(self, flat: dict) -> "RunConfig":
        return RunConfig.from_flat(flat, base=self)


def _coerce(raw, default, key):
    if not isinstance(raw, str):
        return tuple(raw) if isinstance(default, tuple) else type(default)(raw)
    text = raw.strip()
    try:
        if isinstance(default, bool):
            if text.lower() in ("1", "true", "yes", "on"):
                return True
            if text.lower() in ("0", "false", "no", "off"):
                return False
            raise ValueError(text)
        if isinstance(default, tuple):
            items = [t.strip() for t in text.strip("[]()").split(",") if t.strip()]
            if key in ("train.set_sizes", "model.hidden"):
                return tuple(int(t) for t in items)
            return tuple(t.strip("'\"") for t in items)
        return type(default)(text)
    except ValueError:
        raise ValueError(f"bad value {raw!r} for {key}") from None


def read_config_file(path) -> dict[str, str]:
    parser = configparser.ConfigParser()
    parser.optionxform = str  # keep key case
    with open(path) as fh:
        parser.read_file(fh)
    return {f"{sec}.{k}": v for sec in parser.sections() for k, v in parser[sec].items()}


def write_config_file(path, cfg: RunConfig) -> None:
    parser = configparser.ConfigParser()
    parser.optionxform = str
    for key, v in cfg.to_flat().items():
        sec, _, name = key.partition(".")
        if not parser.has_section(sec):
            parser.add_section(sec)
        parser[sec][name] = ", ".join(map(str, v)) if isinstance(v, list) else str(v)
    with open(path, "w") as fh:
        parser.write(fh)


def config_diff(a: RunConfig, b: RunConfig, ignore=("train.steps", "io.")) -> dict[str, tuple]:
    fa, fb = a.to_flat(), b.to_flat()
    return {k: (fa[k], fb[k]) for k in fa
            if fa[k] != fb[k] and not any(k == i or (i.endswith(".") and k.startswith(i)) for i in ignore)}
