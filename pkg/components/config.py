#!/usr/bin/env python3
"""
Configuration Component - YAML run configuration

Every key has a default, so an empty file (or no file) is a valid config.
Unknown keys are rejected with their dotted path.
"""

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional

import yaml

from components.dtrans import DTransConfig
from components.errors import ConfigError, ContractError
from components.evaluation import MODES, TASKS
from components.losses import LossConfig
from components.optim import OptimizerState
from components.synthdata import GeneratorConfig

LOG_LEVELS = ("DEBUG", "INFO", "WARNING", "ERROR")


@dataclass
class DataConfig:
    train_path: str = "data/train.yaml"
    test_path: str = "data/test.yaml"


@dataclass
class OptimizerConfig:
    lr: float = 1e-5
    betas: List[float] = field(default_factory=lambda: [0.9, 0.999])
    eps: float = 1e-8
    weight_decay: float = 1e-2
    max_grad_norm: float = 5.0
    epochs: int = 10

    def __post_init__(self):
        if self.epochs < 1:
            raise ContractError(f"epochs must be >= 1, got {self.epochs}")
        if self.max_grad_norm <= 0:
            raise ContractError(f"max_grad_norm must be positive, got {self.max_grad_norm}")
        if len(self.betas) != 2:
            raise ContractError(f"betas needs two values, got {self.betas}")
        self.new_state()

    def new_state(self) -> OptimizerState:
        return OptimizerState(lr=self.lr, betas=tuple(self.betas), eps=self.eps,
                              weight_decay=self.weight_decay, max_grad_norm=self.max_grad_norm)


@dataclass
class EvalConfig:
    k_list: List[int] = field(default_factory=lambda: [10, 20, 50])
    modes: List[str] = field(default_factory=lambda: ["with", "no"])
    eval_every: int = 0
    workers: int = 1
    per_group_constraint: bool = False

    def __post_init__(self):
        if not self.k_list or any(int(k) < 1 for k in self.k_list):
            raise ContractError(f"k_list must hold positive integers, got {self.k_list}")
        for mode in self.modes:
            if mode not in MODES:
                raise ContractError(f"unknown mode '{mode}' (expected one of {MODES})")
        if self.eval_every < 0 or self.workers < 1:
            raise ContractError("eval_every must be >= 0 and workers >= 1")


@dataclass
class AblationConfig:
    seeds: List[int] = field(default_factory=lambda: [0, 1, 2, 3, 4])
    topk_values: List[int] = field(default_factory=lambda: [2, 4, 6, 8, 10])
    epochs: Optional[int] = None

    def __post_init__(self):
        if not self.seeds:
            raise ContractError("ablation needs at least one seed")


@dataclass
class LoggingConfig:
    level: str = "INFO"
    timestamps: bool = True

    def __post_init__(self):
        self.level = str(self.level).upper()
        if self.level not in LOG_LEVELS:
            raise ContractError(f"unknown log level '{self.level}' (expected one of {LOG_LEVELS})")


_SECTIONS = {
    "data": DataConfig,
    "generator": GeneratorConfig,
    "model": DTransConfig,
    "loss": LossConfig,
    "optimizer": OptimizerConfig,
    "eval": EvalConfig,
    "ablation": AblationConfig,
    "logging": LoggingConfig,
}


@dataclass
class RunConfig:
    """Everything one gen/train/eval/ablate run needs"""

    task: str = "predcls"
    seed: int = 0
    output_dir: str = "runs/default"
    data: DataConfig = field(default_factory=DataConfig)
    generator: GeneratorConfig = field(default_factory=GeneratorConfig)
    model: DTransConfig = field(default_factory=DTransConfig)
    loss: LossConfig = field(default_factory=LossConfig)
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)
    ablation: AblationConfig = field(default_factory=AblationConfig)
    logging: LoggingConfig = field(default_factory=LoggingConfig)
    base_dir: str = field(default=".", compare=False)

    def resolve(self, path: str) -> Path:
        """Resolve a config-relative path"""
        p = Path(path)
        return p if p.is_absolute() else Path(self.base_dir) / p

    @property
    def train_path(self) -> Path:
        return self.resolve(self.data.train_path)

    @property
    def test_path(self) -> Path:
        return self.resolve(self.data.test_path)

    @property
    def output_path(self) -> Path:
        return self.resolve(self.output_dir)

    def to_dict(self) -> Dict[str, Any]:
        """Plain-data snapshot (for checkpoints and logs)"""
        snapshot = dataclasses.asdict(self)
        snapshot.pop("base_dir")
        return snapshot

    def replace(self, **sections) -> "RunConfig":
        """Copy with whole sections or top-level values swapped"""
        return dataclasses.replace(self, **sections)


def _build_section(name: str, cls, values: Any):
    if values is None:
        values = {}
    if not isinstance(values, dict):
        raise ConfigError(f"section '{name}' must be a mapping, got {type(values).__name__}")
    known = {f.name for f in dataclasses.fields(cls) if f.init}
    for key in values:
        if key not in known:
            raise ConfigError(f"unknown configuration key '{name}.{key}'")
    try:
        return cls(**values)
    except ConfigError:
        raise
    except (ContractError, TypeError, ValueError) as e:
        raise ConfigError(f"invalid '{name}' section: {e}") from e


def config_from_dict(raw: Optional[Dict[str, Any]], base_dir: str = ".") -> RunConfig:
    """
    Build a RunConfig from parsed YAML

    Raises:
        ConfigError: On unknown keys or invalid values
    """
    raw = dict(raw or {})
    top = {"task", "seed", "output_dir"} | set(_SECTIONS)
    for key in raw:
        if key not in top:
            raise ConfigError(f"unknown configuration key '{key}'")
    task = raw.get("task", "predcls")
    if task not in TASKS:
        raise ConfigError(f"unknown task '{task}' (expected one of {TASKS})")
    seed = raw.get("seed", 0)
    if not isinstance(seed, int) or isinstance(seed, bool):
        raise ConfigError(f"seed must be an integer, got {seed!r}")

    generator = dict(raw.get("generator") or {})
    generator.setdefault("seed", seed)
    sections = {name: _build_section(name, cls, generator if name == "generator" else raw.get(name))
                for name, cls in _SECTIONS.items()}
    return RunConfig(task=task, seed=seed, output_dir=str(raw.get("output_dir", "runs/default")),
                     base_dir=str(base_dir), **sections)


def load_config(path=None, seed: Optional[int] = None, output_dir: Optional[str] = None) -> RunConfig:
    """
    Load a YAML run config and apply command-line overrides

    Args:
        path: config file; None gives the defaults
        seed (int, optional): overrides `seed` (and the generator seed)
        output_dir (str, optional): overrides `output_dir`

    Raises:
        FileNotFoundError: If the file does not exist
        ConfigError: On malformed YAML, unknown keys or invalid values
    """
    raw, base_dir = {}, "."
    if path is not None:
        path = Path(path)
        if not path.exists():
            raise FileNotFoundError(f"Config file not found: {path}")
        try:
            raw = yaml.safe_load(path.read_text(encoding="utf-8")) or {}
        except yaml.YAMLError as e:
            raise ConfigError(f"invalid YAML in {path}: {e}") from e
        if not isinstance(raw, dict):
            raise ConfigError(f"{path} must contain a mapping")
        base_dir = str(path.parent)
    if seed is not None:
        raw["seed"] = seed
        generator = dict(raw.get("generator") or {})
        generator["seed"] = seed
        raw["generator"] = generator
    if output_dir is not None:
        raw["output_dir"] = str(Path(output_dir).resolve())
    return config_from_dict(raw, base_dir)
