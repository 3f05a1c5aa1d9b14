# lab/experiment.py
"""
Experiment Configuration

Declarative record driving one pruning run, plus its YAML codec.
Every field is optional; unknown keys and out-of-range values raise
ConfigError.
"""

import dataclasses
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, Optional, Tuple, Type, Union

import yaml

from lab.errors import ConfigError
from lab.network import LRSchedule, MLPSpec, ScheduleKind

logger = logging.getLogger(__name__)

SCHEMES = ('imp', 'lrr', 'lrr_rewind_bn', 'imp_keep_signs')
CRITERIA = ('magnitude_global', 'magnitude_layerwise', 'random_balanced', 'snip', 'synflow')
TASK_KINDS = ('synthetic', 'idx', 'file')


def _require(condition: bool, message: str) -> None:
    if not condition:
        raise ConfigError(message)


@dataclass(frozen=True)
class TaskConfig:
    """
    Where the data comes from.

    synthetic: Gaussian mixture generated from `seed`.
    idx: four IDX files (train/test images and labels).
    file: an .npz written by the gen-data command.
    """
    kind: str = 'synthetic'
    classes: int = 10
    dim: int = 64
    n_train: int = 2000
    n_test: int = 1000
    separation: float = 0.35
    seed: int = 0
    path: Optional[str] = None
    train_images: Optional[str] = None
    train_labels: Optional[str] = None
    test_images: Optional[str] = None
    test_labels: Optional[str] = None

    def __post_init__(self):
        _require(self.kind in TASK_KINDS, f"task.kind must be one of {TASK_KINDS}, got {self.kind!r}")
        _require(self.classes >= 2, "task.classes must be >= 2")
        _require(self.dim >= 1 and self.n_train >= 1 and self.n_test >= 1,
                 "task.dim, task.n_train and task.n_test must be positive")
        _require(self.separation >= 0, "task.separation must be non-negative")
        if self.kind == 'file':
            _require(self.path is not None, "task.path is required for kind 'file'")
        if self.kind == 'idx':
            _require(
                all([self.train_images, self.train_labels, self.test_images, self.test_labels]),
                "task kind 'idx' needs train/test image and label paths"
            )


@dataclass(frozen=True)
class ModelConfig:
    """Hidden widths; input and output widths come from the task"""
    hidden: Tuple[int, ...] = (256, 256)
    batchnorm: bool = True
    bias: bool = True

    def __post_init__(self):
        object.__setattr__(self, 'hidden', tuple(int(h) for h in self.hidden))
        _require(all(h >= 1 for h in self.hidden), "model.hidden widths must be positive")

    def to_spec(self, input_width: int, output_width: int) -> MLPSpec:
        return MLPSpec(
            layer_widths=(input_width, *self.hidden, output_width),
            use_batchnorm=(self.batchnorm,) * len(self.hidden),
            use_bias=self.bias,
        )


@dataclass(frozen=True)
class ScheduleConfig:
    kind: str = 'cosine_warmup'
    base_lr: float = 0.1
    warmup_epochs: int = 2
    epochs: int = 30
    milestones: Tuple[int, ...] = ()
    factor: float = 0.1

    def __post_init__(self):
        object.__setattr__(self, 'milestones', tuple(int(m) for m in self.milestones))
        kinds = tuple(k.value for k in ScheduleKind)
        _require(self.kind in kinds, f"schedule.kind must be one of {kinds}, got {self.kind!r}")
        self.to_schedule()

    def to_schedule(self) -> LRSchedule:
        return LRSchedule(
            kind=ScheduleKind(self.kind),
            base_lr=self.base_lr,
            warmup_epochs=self.warmup_epochs,
            total_epochs=self.epochs,
            step_milestones=self.milestones,
            step_factor=self.factor,
        )


@dataclass(frozen=True)
class OptimizerConfig:
    momentum: float = 0.9
    # desk-scale default, not the ResNet values
    weight_decay: float = 1e-4
    batch_size: int = 128

    def __post_init__(self):
        _require(0 <= self.momentum < 1, "optimizer.momentum must lie in [0, 1)")
        _require(self.weight_decay >= 0, "optimizer.weight_decay must be non-negative")
        _require(self.batch_size >= 2, "optimizer.batch_size must be >= 2")


@dataclass(frozen=True)
class PruningConfig:
    """
    scheme: imp (weight rewinding), lrr, lrr_rewind_bn, imp_keep_signs
    keep_fraction is ignored when target_sparsity is given; then every level
    keeps (1 - target_sparsity) ** (1 / levels) of the remaining weights.
    rewind_epoch is the warmup epoch k whose state the rewinding policies restore.
    """
    scheme: str = 'imp'
    criterion: str = 'magnitude_global'
    keep_fraction: float = 0.8
    target_sparsity: Optional[float] = None
    levels: int = 10
    rewind_epoch: int = 5

    def __post_init__(self):
        _require(self.scheme in SCHEMES, f"pruning.scheme must be one of {SCHEMES}, got {self.scheme!r}")
        _require(self.criterion in CRITERIA,
                 f"pruning.criterion must be one of {CRITERIA}, got {self.criterion!r}")
        _require(0 < self.keep_fraction < 1, "pruning.keep_fraction must lie in (0, 1)")
        if self.target_sparsity is not None:
            _require(0 < self.target_sparsity < 1, "pruning.target_sparsity must lie in (0, 1)")
        _require(self.levels >= 0, "pruning.levels must be non-negative")
        _require(self.rewind_epoch >= 0, "pruning.rewind_epoch must be non-negative")

    @property
    def level_keep_fraction(self) -> float:
        if self.target_sparsity is None or self.levels == 0:
            return self.keep_fraction
        return (1.0 - self.target_sparsity) ** (1.0 / self.levels)


@dataclass(frozen=True)
class PerturbConfig:
    """Flip `fraction` of the kept signs per layer right before training `level`"""
    level: Optional[int] = None
    fraction: float = 0.3

    def __post_init__(self):
        _require(0 <= self.fraction <= 1, "perturb.fraction must lie in [0, 1]")
        if self.level is not None:
            _require(self.level >= 1, "perturb.level must be >= 1")


@dataclass(frozen=True)
class TransplantConfig:
    """Run directories to take the per-level masks and/or signs from"""
    mask_run: Optional[str] = None
    signs_run: Optional[str] = None


@dataclass(frozen=True)
class ExperimentConfig:
    task: TaskConfig = field(default_factory=TaskConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    schedule: ScheduleConfig = field(default_factory=ScheduleConfig)
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)
    pruning: PruningConfig = field(default_factory=PruningConfig)
    perturb: PerturbConfig = field(default_factory=PerturbConfig)
    transplant: TransplantConfig = field(default_factory=TransplantConfig)
    seed: int = 0
    seeds: int = 1
    output_root: Optional[str] = None

    def __post_init__(self):
        _require(self.seeds >= 1, "seeds must be >= 1")
        _require(self.pruning.rewind_epoch <= self.schedule.epochs,
                 "pruning.rewind_epoch cannot exceed schedule.epochs")
        if self.perturb.level is not None:
            _require(self.perturb.level <= self.pruning.levels,
                     "perturb.level cannot exceed pruning.levels")

    def run_name(self) -> str:
        parts = [self.pruning.scheme, self.pruning.criterion]
        if self.perturb.level is not None:
            parts.append(f"perturb{self.perturb.level}")
        if self.transplant.mask_run:
            parts.append('maskxfer')
        if self.transplant.signs_run:
            parts.append('signxfer')
        parts.append(f"seed{self.seed}")
        return '_'.join(parts)

    def with_overrides(self, **sections: Dict[str, Any]) -> 'ExperimentConfig':
        """Copy with some fields of nested sections replaced, e.g. pruning={'levels': 3}"""
        changes = {}
        for name, values in sections.items():
            current = getattr(self, name)
            if dataclasses.is_dataclass(current):
                changes[name] = dataclasses.replace(current, **values)
            else:
                changes[name] = values
        return dataclasses.replace(self, **changes)


# YAML CODEC

def _to_plain(value: Any) -> Any:
    if dataclasses.is_dataclass(value):
        return {f.name: _to_plain(getattr(value, f.name)) for f in dataclasses.fields(value)}
    if isinstance(value, tuple):
        return [_to_plain(v) for v in value]
    return value


def _from_plain(cls: Type, data: Any, where: str):
    if data is None:
        return cls()
    if not isinstance(data, dict):
        raise ConfigError(f"{where or 'config'} must be a mapping, got {type(data).__name__}")
    fields = {f.name: f for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - set(fields))
    if unknown:
        raise ConfigError(f"unknown key(s) in {where or 'config'}: {', '.join(unknown)}")

    kwargs = {}
    for name, value in data.items():
        default = fields[name].default_factory if fields[name].default_factory is not dataclasses.MISSING else None
        nested = default() if default is not None else None
        if dataclasses.is_dataclass(nested):
            kwargs[name] = _from_plain(type(nested), value, f"{where}.{name}" if where else name)
        elif isinstance(value, list):
            kwargs[name] = tuple(value)
        else:
            kwargs[name] = value
    try:
        return cls(**kwargs)
    except TypeError as e:
        raise ConfigError(f"invalid {where or 'config'}: {e}") from e


def config_to_dict(config: ExperimentConfig) -> Dict[str, Any]:
    return _to_plain(config)


def config_from_dict(data: Optional[Dict[str, Any]]) -> ExperimentConfig:
    return _from_plain(ExperimentConfig, data, '')


def dump_config(config: ExperimentConfig) -> str:
    return yaml.safe_dump(config_to_dict(config), sort_keys=False)


def parse_config(text: str) -> ExperimentConfig:
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as e:
        raise ConfigError(f"config is not valid YAML: {e}") from e
    return config_from_dict(data)


def load_config(path: Union[str, Path]) -> ExperimentConfig:
    """Read and validate a YAML config file (OSError propagates)"""
    text = Path(path).read_text(encoding='utf-8')
    logger.debug(f"Loaded config from {path}")
    return parse_config(text)
