# progressive_distill/config.py

import logging
import os
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Dict, Mapping, Optional, Sequence, Tuple, Union

import yaml

from .curriculum import Schedule, StageSpec, ablate, default_schedule, enforce_schedule
from .data import SyntheticTaskSpec
from .errors import ConfigurationError
from .optimizer import OptimizerConfig
from .transformer import ModelConfig, TaskKind

logger = logging.getLogger(__name__)

SCHEMA_VERSION = 1

# Environment defaults
DEFAULT_OUTPUT_DIR = os.environ.get("PROGRESSIVE_DISTILL_OUTPUT_DIR", "runs")
DEFAULT_MONITOR_URL = os.environ.get("PROGRESSIVE_DISTILL_MONITOR_URL", "http://127.0.0.1:8080")

DESK_TEACHER = {"num_layers": 4, "hidden_size": 64, "num_heads": 4, "ffn_size": 128}
DESK_STUDENT = {"num_layers": 2, "hidden_size": 32, "num_heads": 2, "ffn_size": 64}


def output_root() -> Path:
    return Path(os.environ.get("PROGRESSIVE_DISTILL_OUTPUT_DIR", DEFAULT_OUTPUT_DIR))


@dataclass(frozen=True)
class PhaseConfig:
    steps: int
    optimizer: OptimizerConfig

    @classmethod
    def from_dict(cls, data: Mapping, default_steps: int, default_optimizer: OptimizerConfig) -> "PhaseConfig":
        data = dict(data or {})
        unknown = set(data) - {"steps", "optimizer"}
        if unknown:
            raise ConfigurationError(f"unknown phase keys: {sorted(unknown)}")
        steps = int(data.get("steps", default_steps))
        if steps < 1:
            raise ConfigurationError(f"phase steps must be >= 1, got {steps}")
        overrides = dict(data.get("optimizer") or {})
        defaults = default_optimizer.to_dict()
        if {"warmup_steps", "warmup_proportion"} & set(overrides):
            defaults.pop("warmup_steps", None)
            defaults.pop("warmup_proportion", None)
        return cls(steps, OptimizerConfig.from_dict({**defaults, **overrides}))

    def to_dict(self) -> Dict:
        return {"steps": self.steps, "optimizer": self.optimizer.to_dict()}


@dataclass(frozen=True)
class DataConfig:
    """Either a synthetic spec or files on disk (vocab, corpus, task directory)."""

    synthetic: Optional[SyntheticTaskSpec] = None
    vocab_path: Optional[str] = None
    corpus_path: Optional[str] = None
    task_dir: Optional[str] = None
    task_kind: TaskKind = TaskKind.CLASSIFICATION
    num_labels: int = 2
    subsample: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "task_kind", TaskKind(self.task_kind))
        files = (self.vocab_path, self.corpus_path, self.task_dir)
        if self.synthetic is None and not all(files):
            raise ConfigurationError("data needs either a synthetic spec or vocab, corpus and task_dir paths")
        if self.synthetic is not None and any(files):
            raise ConfigurationError("data cannot mix a synthetic spec with file paths")
        if not 0.0 < self.subsample <= 1.0:
            raise ConfigurationError(f"data.subsample must lie in (0, 1], got {self.subsample}")

    def to_dict(self) -> Dict:
        out: Dict[str, Any] = {"task_kind": self.task_kind.value, "num_labels": self.num_labels}
        if self.subsample != 1.0:
            out["subsample"] = self.subsample
        if self.synthetic is not None:
            spec = {k: getattr(self.synthetic, k) for k in self.synthetic.__dataclass_fields__}
            out["synthetic"] = {k: list(v) if isinstance(v, tuple) else v for k, v in spec.items()}
        else:
            out.update(vocab=self.vocab_path, corpus=self.corpus_path, task_dir=self.task_dir)
        return out


@dataclass(frozen=True)
class RunConfig:
    teacher: Dict
    student: Dict
    schedule: Schedule
    data: DataConfig
    pretrain: PhaseConfig
    finetune: PhaseConfig
    seed: int = 0
    output_dir: str = DEFAULT_OUTPUT_DIR
    max_seq_len: int = 32
    eval_interval: int = 100
    allow_violations: bool = False
    finetune_after: Optional[PhaseConfig] = None
    temperature: float = 1.0
    dropped: Tuple[str, ...] = field(default_factory=tuple)

    def model_configs(self, vocab_size: int) -> Tuple[ModelConfig, ModelConfig]:
        """Teacher and student configs with data-derived defaults filled in."""
        shared = {
            "vocab_size": vocab_size,
            "max_seq_len": self.max_seq_len,
            "task_kind": self.data.task_kind,
            "num_labels": self.data.num_labels,
        }
        try:
            return (
                ModelConfig.from_dict({**shared, **self.teacher}),
                ModelConfig.from_dict({**shared, **self.student}),
            )
        except TypeError as e:
            raise ConfigurationError(f"incomplete model config: {e}") from e

    def with_seed(self, seed: int) -> "RunConfig":
        return replace(self, seed=seed)

    def to_dict(self) -> Dict:
        out = {
            "schema_version": SCHEMA_VERSION,
            "seed": self.seed,
            "output_dir": self.output_dir,
            "max_seq_len": self.max_seq_len,
            "eval_interval": self.eval_interval,
            "allow_violations": self.allow_violations or bool(self.dropped),
            "temperature": self.temperature,
            "teacher": dict(self.teacher),
            "student": dict(self.student),
            "data": self.data.to_dict(),
            "teacher_training": {"pretrain": self.pretrain.to_dict(), "finetune": self.finetune.to_dict()},
            "schedule": [stage.to_dict() for stage in self.schedule],
        }
        if self.finetune_after is not None:
            out["finetune_after"] = self.finetune_after.to_dict()
        return out


_TOP_KEYS = {
    "schema_version", "seed", "output_dir", "max_seq_len", "eval_interval", "allow_violations",
    "temperature", "teacher", "student", "data", "teacher_training", "schedule", "ablate", "finetune_after",
}


def _resolve(path: Optional[str], base_dir: Optional[Path]) -> Optional[str]:
    if path is None:
        return None
    candidate = Path(path)
    if not candidate.is_absolute() and base_dir is not None:
        candidate = base_dir / candidate
    return str(candidate)


def _data_config(raw: Mapping, base_dir: Optional[Path]) -> DataConfig:
    raw = dict(raw or {"synthetic": {}})
    unknown = set(raw) - {"synthetic", "vocab", "corpus", "task_dir", "task_kind", "num_labels", "subsample"}
    if unknown:
        raise ConfigurationError(f"unknown data keys: {sorted(unknown)}")
    synthetic = None
    if "synthetic" in raw:
        try:
            synthetic = SyntheticTaskSpec(**(raw["synthetic"] or {}))
        except TypeError as e:
            raise ConfigurationError(f"bad synthetic spec: {e}") from e
    return DataConfig(
        synthetic=synthetic,
        vocab_path=_resolve(raw.get("vocab"), base_dir),
        corpus_path=_resolve(raw.get("corpus"), base_dir),
        task_dir=_resolve(raw.get("task_dir"), base_dir),
        task_kind=TaskKind(raw.get("task_kind", TaskKind.CLASSIFICATION.value)),
        num_labels=int(raw.get("num_labels", 2)),
        subsample=float(raw.get("subsample", 1.0)),
    )


def parse_run_config(raw: Mapping, base_dir: Optional[Path] = None, allow_violations: Optional[bool] = None) -> RunConfig:
    """
    Build a RunConfig from a parsed YAML mapping.

    The schedule is validated in strict mode unless ``allow_violations`` is set
    (in the file or by the caller) or stages are dropped through ``ablate``.

    Raises:
        ConfigurationError: unknown keys, wrong schema version, bad values.
        ScheduleViolationError: strict validation failed.
    """
    if not isinstance(raw, Mapping):
        raise ConfigurationError("run config must be a mapping at the top level")
    version = raw.get("schema_version", SCHEMA_VERSION)
    if version != SCHEMA_VERSION:
        raise ConfigurationError(f"unsupported schema_version {version}; this build reads {SCHEMA_VERSION}")
    unknown = set(raw) - _TOP_KEYS
    if unknown:
        raise ConfigurationError(f"unknown run config keys: {sorted(unknown)}")

    data = _data_config(raw.get("data"), base_dir)
    try:
        stages = raw.get("schedule")
        schedule = Schedule(tuple(StageSpec.from_dict(s) for s in stages)) if stages else default_schedule(data.task_kind)
    except (TypeError, ValueError) as e:
        raise ConfigurationError(f"bad schedule: {e}") from e

    dropped = tuple(raw.get("ablate") or ())
    if dropped:
        schedule = ablate(dropped, schedule)
    permissive = bool(raw.get("allow_violations", False)) if allow_violations is None else allow_violations
    enforce_schedule(schedule, advisory=permissive or bool(dropped))

    training = dict(raw.get("teacher_training") or {})
    unknown = set(training) - {"pretrain", "finetune"}
    if unknown:
        raise ConfigurationError(f"unknown teacher_training keys: {sorted(unknown)}")
    pretrain = PhaseConfig.from_dict(
        training.get("pretrain"), 1500, OptimizerConfig(learning_rate=1e-3, batch_size=32, warmup_steps=100)
    )
    finetune = PhaseConfig.from_dict(
        training.get("finetune"), 800, OptimizerConfig(learning_rate=5e-4, batch_size=32, warmup_proportion=0.1)
    )
    finetune_after = None
    if raw.get("finetune_after"):
        finetune_after = PhaseConfig.from_dict(raw["finetune_after"], 500, finetune.optimizer)

    config = RunConfig(
        teacher={**DESK_TEACHER, **(raw.get("teacher") or {})},
        student={**DESK_STUDENT, **(raw.get("student") or {})},
        schedule=schedule,
        data=data,
        pretrain=pretrain,
        finetune=finetune,
        seed=int(raw.get("seed", 0)),
        output_dir=str(raw.get("output_dir") or output_root()),
        max_seq_len=int(raw.get("max_seq_len", 32)),
        eval_interval=int(raw.get("eval_interval", 100)),
        allow_violations=permissive,
        finetune_after=finetune_after,
        temperature=float(raw.get("temperature", 1.0)),
        dropped=dropped,
    )
    if config.temperature <= 0:
        raise ConfigurationError(f"temperature must be positive, got {config.temperature}")
    synthetic = config.data.synthetic
    if synthetic is not None and synthetic.longest_framed_example > config.max_seq_len:
        raise ConfigurationError(
            f"synthetic task examples frame to {synthetic.longest_framed_example} tokens but max_seq_len is "
            f"{config.max_seq_len}; labelled text would be truncated"
        )
    return config


def _read_yaml(path: Union[str, Path]) -> Any:
    path = Path(path)
    try:
        return yaml.safe_load(path.read_text(encoding="utf-8"))
    except OSError as e:
        raise ConfigurationError(f"cannot read config {path}: {e}") from e
    except yaml.YAMLError as e:
        raise ConfigurationError(f"{path} is not valid YAML: {e}") from e


def load_run_config(
    path: Union[str, Path], allow_violations: Optional[bool] = None, drop: Sequence[str] = ()
) -> RunConfig:
    """Parse a run config file; ``drop`` adds stage names to its ablate list."""
    path = Path(path)
    raw = _read_yaml(path) or {}
    if drop:
        if not isinstance(raw, Mapping):
            raise ConfigurationError("run config must be a mapping at the top level")
        raw = {**raw, "ablate": list(raw.get("ablate") or []) + list(drop)}
    return parse_run_config(raw, path.parent, allow_violations)


def save_run_config(config: RunConfig, path: Union[str, Path]):
    Path(path).write_text(yaml.safe_dump(config.to_dict(), sort_keys=False), encoding="utf-8")


def load_model_config(path: Union[str, Path]) -> ModelConfig:
    """A bare model config file, either top-level keys or under ``model:``."""
    raw = _read_yaml(path)
    if not isinstance(raw, Mapping):
        raise ConfigurationError(f"{path} must hold a mapping")
    raw = raw.get("model", raw)
    try:
        return ModelConfig.from_dict(raw)
    except TypeError as e:
        raise ConfigurationError(f"{path}: incomplete model config: {e}") from e
