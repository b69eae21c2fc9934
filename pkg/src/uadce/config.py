"""Experiment configuration: nested dataclasses loaded from TOML.

Only the seed and output directory may be overridden from the environment
(``UADCE_SEED``, ``UADCE_OUT``).
"""

from __future__ import annotations

import copy
import os
from dataclasses import asdict, dataclass, field, fields, replace

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from .equilibrium import SelectionPolicy
from .protocol import ProtocolConfig

ABLATIONS = ("no-uad", "no-ce", "no-aw", "no-unlabeled", "finetune", "cnn-head", "random-exemplars")


class ConfigError(ValueError):
    pass


@dataclass
class DataConfig:
    source: str = "synthetic"          # "synthetic" or a manifest path (directory, .csv, .npy)
    class_count: int = 10
    samples_per_class: int = 1200
    dimension: int = 16
    separation: float = 4.0
    seed: int = 0


@dataclass
class OptimConfig:
    base_lr: float = 0.05
    base_epochs: int = 50
    base_milestones: tuple = (30, 40)
    lr: float = 0.02
    supervised_epochs: int = 10
    extra_epochs: int = 5
    batch_size: int = 32
    momentum: float = 0.9
    weight_decay: float = 5e-4
    labeled_first: bool = False      # True: consume each part (labeled, pseudo) in turn instead of mixing


@dataclass
class UncertaintyConfig:
    pass_count: int = 10
    noise_scale: float = 0.1
    relative_noise: bool = True        # scale by per-feature std of the base training data
    keep_fraction: float = 0.75
    keep_most_uncertain: bool = False


@dataclass
class DistillConfig:
    zeta_base: float = 1.0
    temperature: float = 2.0
    zeta_override: float | None = None


@dataclass
class MemoryConfig:
    per_class_budget: int = 20
    selection: str = "herding"         # or "random"


@dataclass
class ModelConfig:
    backbone: dict = field(default_factory=lambda: {"kind": "mlp", "hidden": [64, 64], "feature_dim": 32})
    freeze_groups: int = 1
    nme_normalize: bool = False
    nme_exemplars_only: bool = False
    cnn_head_eval: bool = False


@dataclass
class ExperimentConfig:
    protocol: ProtocolConfig = field(default_factory=lambda: ProtocolConfig(6, 2, 5, 3, 100, test_fraction=0.5))
    data: DataConfig = field(default_factory=DataConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    optim: OptimConfig = field(default_factory=OptimConfig)
    selection: SelectionPolicy = field(default_factory=lambda: SelectionPolicy(iteration_budget=10, iterations=8))
    uncertainty: UncertaintyConfig = field(default_factory=UncertaintyConfig)
    distill: DistillConfig = field(default_factory=DistillConfig)
    memory: MemoryConfig = field(default_factory=MemoryConfig)
    seed: int = 0
    out: str = "runs/default"
    ablations: tuple = ()

    def __post_init__(self):
        bad = [a for a in self.ablations if a not in ABLATIONS]
        if bad:
            raise ConfigError(f"unknown ablation(s) {bad}; choose from {ABLATIONS}")
        o = self.optim
        if min(o.base_lr, o.lr) <= 0 or o.momentum < 0 or o.weight_decay < 0:
            raise ConfigError("learning rates must be positive")
        if min(o.base_epochs, o.supervised_epochs, o.extra_epochs) < 0 or o.batch_size < 1:
            raise ConfigError("epoch counts must be >= 0 and batch_size >= 1")

    def with_overrides(self, seed=None, out=None, ablations=None) -> "ExperimentConfig":
        cfg = copy.deepcopy(self)
        if seed is not None:
            cfg.seed = int(seed)
            cfg.protocol = replace(cfg.protocol, seed=int(seed))
        if out is not None:
            cfg.out = str(out)
        if ablations is not None:
            cfg.ablations = tuple(ablations)
            cfg.__post_init__()
        return cfg

    def to_dict(self) -> dict:
        d = asdict(self)
        d["ablations"] = list(self.ablations)
        return d


_SECTIONS = {
    "protocol": ProtocolConfig,
    "data": DataConfig,
    "model": ModelConfig,
    "optim": OptimConfig,
    "selection": SelectionPolicy,
    "uncertainty": UncertaintyConfig,
    "distill": DistillConfig,
    "memory": MemoryConfig,
}


def _build(cls, values: dict, default):
    known = {f.name for f in fields(cls)}
    unknown = set(values) - known
    if unknown:
        raise ConfigError(f"unknown keys in [{cls.__name__}]: {sorted(unknown)}")
    merged = {f.name: getattr(default, f.name) for f in fields(cls)}
    merged.update(values)
    for k, v in merged.items():
        if isinstance(v, list) and k != "backbone":
            merged[k] = tuple(v)
        elif k == "proportions" and v is not None:
            merged[k] = {int(c): float(p) for c, p in v.items()}
    return cls(**merged)


def config_from_dict(data: dict, base: ExperimentConfig | None = None) -> ExperimentConfig:
    base = base or ExperimentConfig()
    kwargs = {}
    for name, cls in _SECTIONS.items():
        section = data.get(name, {})
        kwargs[name] = _build(cls, section, getattr(base, name))
    top = {k: v for k, v in data.items() if k not in _SECTIONS}
    unknown = set(top) - {"seed", "out", "ablations", "preset"}
    if unknown:
        raise ConfigError(f"unknown top-level keys: {sorted(unknown)}")
    return ExperimentConfig(
        **kwargs,
        seed=int(top.get("seed", base.seed)),
        out=str(top.get("out", base.out)),
        ablations=tuple(top.get("ablations", base.ablations)),
    )


def load_config(path, env=os.environ) -> ExperimentConfig:
    with open(path, "rb") as fh:
        data = tomllib.load(fh)
    base = preset(data["preset"]) if "preset" in data else None
    cfg = config_from_dict(data, base)
    return apply_env(cfg, env)


def apply_env(cfg: ExperimentConfig, env=os.environ) -> ExperimentConfig:
    seed = env.get("UADCE_SEED")
    out = env.get("UADCE_OUT")
    return cfg.with_overrides(seed=int(seed) if seed else None, out=out or None)


def preset(name: str) -> ExperimentConfig:
    """Named starting points. ``desk`` runs in seconds; the others describe
    the full-size benchmarks structurally and need a manifest on disk."""
    if name == "desk":
        return ExperimentConfig()
    if name in ("cifar100", "miniimagenet"):
        return ExperimentConfig(
            protocol=ProtocolConfig(60, 5, 5, 9, 500),
            data=DataConfig(source=f"data/{name}"),
            model=ModelConfig(backbone={"kind": "resnet18", "input_shape": [3, 32, 32] if name == "cifar100"
                                        else [3, 84, 84], "feature_dim": 512}, freeze_groups=4),
            optim=OptimConfig(base_lr=0.1, base_epochs=160, base_milestones=(80, 120), lr=0.001,
                              supervised_epochs=100, extra_epochs=10,
                              batch_size=32 if name == "cifar100" else 128),
            selection=SelectionPolicy(iteration_budget=10, iterations=35 if name == "cifar100" else 16),
            distill=DistillConfig(zeta_base=1.0 if name == "cifar100" else 2.0),
            out=f"runs/{name}",
        )
    if name == "cub200":
        return ExperimentConfig(
            protocol=ProtocolConfig(100, 10, 5, 11, 1000),
            data=DataConfig(source="data/cub200"),
            model=ModelConfig(backbone={"kind": "resnet18", "input_shape": [3, 224, 224], "feature_dim": 512},
                              freeze_groups=4),
            optim=OptimConfig(base_lr=0.001, base_epochs=160, base_milestones=(80, 120), lr=0.0005,
                              supervised_epochs=60, extra_epochs=20, batch_size=32),
            selection=SelectionPolicy(iteration_budget=10, iterations=16),
            distill=DistillConfig(zeta_base=2.0),
            out="runs/cub200",
        )
    raise ConfigError(f"unknown preset {name!r}")
