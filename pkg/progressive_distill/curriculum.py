"""
Stage definitions and the schedule contract.

A stage is a (teacher, data, alpha) triple plus its training budget. A
schedule is an ordered list of stages in which consecutive stages differ in
exactly one of the three components.
"""

import logging
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Tuple

from .errors import ConfigurationError, ScheduleViolationError, join_problems
from .losses import TeacherKind
from .optimizer import OptimizerConfig
from .transformer import TaskKind

logger = logging.getLogger(__name__)

STAGE_ORDER = ("GD", "GED", "TAD", "TSD")
ONE_CHANGE_RULE = "only one of teacher, data and objective (alpha) may change between consecutive stages"


class DataKind(str, Enum):
    GENERAL = "general"
    TASK = "task"


@dataclass(frozen=True)
class StageSpec:
    """
    One curriculum stage.

    ``alpha == 1`` on general data is representable so schedules can be
    scanned exhaustively; validate_schedule reports it and the trainer
    refuses to run it.
    """

    name: str
    teacher_kind: TeacherKind
    data_kind: DataKind
    alpha: int
    steps: int
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)

    def __post_init__(self):
        object.__setattr__(self, "teacher_kind", TeacherKind(self.teacher_kind))
        object.__setattr__(self, "data_kind", DataKind(self.data_kind))
        if self.alpha not in (0, 1):
            raise ConfigurationError(f"stage {self.name}: alpha must be 0 or 1, got {self.alpha}")
        if self.steps < 1:
            raise ConfigurationError(f"stage {self.name}: steps must be >= 1, got {self.steps}")

    @property
    def components(self) -> Tuple[TeacherKind, DataKind, int]:
        return self.teacher_kind, self.data_kind, self.alpha

    def problems(self) -> List[str]:
        if self.alpha == 1 and self.data_kind != DataKind.TASK:
            return [f"stage {self.name}: alpha=1 needs task data (hard labels exist only there)"]
        return []

    def to_dict(self) -> Dict:
        return {
            "name": self.name,
            "teacher": self.teacher_kind.value,
            "data": self.data_kind.value,
            "alpha": self.alpha,
            "steps": self.steps,
            "optimizer": self.optimizer.to_dict(),
        }

    @classmethod
    def from_dict(cls, data: Mapping) -> "StageSpec":
        data = dict(data)
        unknown = set(data) - {"name", "teacher", "data", "alpha", "steps", "optimizer"}
        if unknown:
            raise ConfigurationError(f"unknown stage keys: {sorted(unknown)}")
        try:
            return cls(
                name=str(data["name"]),
                teacher_kind=TeacherKind(data["teacher"]),
                data_kind=DataKind(data["data"]),
                alpha=int(data["alpha"]),
                steps=int(data["steps"]),
                optimizer=OptimizerConfig.from_dict(data.get("optimizer") or {}),
            )
        except KeyError as e:
            raise ConfigurationError(f"stage is missing required key {e.args[0]!r}") from e
        except ValueError as e:
            raise ConfigurationError(f"stage {data.get('name', '?')}: {e}") from e


@dataclass(frozen=True)
class Schedule:
    stages: Tuple[StageSpec, ...]

    def __post_init__(self):
        object.__setattr__(self, "stages", tuple(self.stages))
        if not self.stages:
            raise ConfigurationError("a schedule needs at least one stage")

    def __iter__(self):
        return iter(self.stages)

    def __len__(self) -> int:
        return len(self.stages)

    @property
    def names(self) -> List[str]:
        return [stage.name for stage in self.stages]

    def stage(self, name: str) -> StageSpec:
        for stage in self.stages:
            if stage.name == name:
                return stage
        raise ConfigurationError(f"schedule has no stage {name!r} (stages: {self.names})")


@dataclass(frozen=True)
class Transition:
    index: int
    before: str
    after: str
    changed: Tuple[str, ...]

    def describe(self) -> str:
        changed = ", ".join(self.changed) if self.changed else "nothing"
        return f"{self.before} -> {self.after} changes {len(self.changed)} component(s): {changed}"


@dataclass
class ScheduleReport:
    violations: List[Transition] = field(default_factory=list)
    stage_problems: List[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations and not self.stage_problems

    def __str__(self) -> str:
        if self.ok:
            return "schedule ok"
        problems = [t.describe() for t in self.violations] + self.stage_problems
        return f"schedule violates the curriculum contract ({ONE_CHANGE_RULE}): {join_problems(problems)}"


def changed_components(before: StageSpec, after: StageSpec) -> Tuple[str, ...]:
    names = ("teacher", "data", "alpha")
    return tuple(n for n, a, b in zip(names, before.components, after.components) if a != b)


def validate_schedule(schedule: Schedule) -> ScheduleReport:
    """Check every stage and every consecutive transition against the one-change rule."""
    report = ScheduleReport()
    for stage in schedule:
        report.stage_problems.extend(stage.problems())
    for index, (before, after) in enumerate(zip(schedule.stages, schedule.stages[1:]), start=1):
        changed = changed_components(before, after)
        if len(changed) != 1:
            report.violations.append(Transition(index, before.name, after.name, changed))
    return report


def enforce_schedule(schedule: Schedule, advisory: bool = False) -> ScheduleReport:
    """
    Strict mode raises on any violation. Advisory mode, used for ablations,
    logs transition violations and lets the schedule run; a stage that cannot
    be trained (alpha=1 on general data) is rejected in both modes.
    """
    report = validate_schedule(schedule)
    if report.ok:
        return report
    if advisory and not report.stage_problems:
        for transition in report.violations:
            logger.warning(f"⚠️ Advisory schedule check: {transition.describe()}")
        return report
    raise ScheduleViolationError(report)


def default_schedule(task_kind: TaskKind = TaskKind.CLASSIFICATION) -> Schedule:
    """GD -> GED -> TAD -> TSD with desk-scale budgets."""
    TaskKind(task_kind)
    corpus_opt = OptimizerConfig(learning_rate=1e-3, batch_size=32, warmup_steps=50)
    return Schedule(
        (
            StageSpec("GD", TeacherKind.PRETRAINED, DataKind.GENERAL, 0, 2000, corpus_opt),
            StageSpec("GED", TeacherKind.FINETUNED, DataKind.GENERAL, 0, 2000, corpus_opt),
            StageSpec(
                "TAD", TeacherKind.FINETUNED, DataKind.TASK, 0, 500,
                OptimizerConfig(learning_rate=5e-4, batch_size=16, warmup_proportion=0.1),
            ),
            StageSpec(
                "TSD", TeacherKind.FINETUNED, DataKind.TASK, 1, 500,
                OptimizerConfig(learning_rate=3e-4, batch_size=16, warmup_proportion=0.1),
            ),
        )
    )


def ablate(which: Iterable[str], base: Optional[Schedule] = None) -> Schedule:
    """
    ``base`` without the named stages, checked in advisory mode.

    Raises:
        ConfigurationError: a name is not in ``base`` or nothing would remain.
    """
    base = base or default_schedule()
    drop = {name.strip().upper() for name in which if name.strip()}
    unknown = drop - set(base.names)
    if unknown:
        raise ConfigurationError(f"cannot drop unknown stage(s) {sorted(unknown)}; schedule has {base.names}")
    kept = [stage for stage in base if stage.name not in drop]
    if not kept:
        raise ConfigurationError(f"dropping {sorted(drop)} removes every stage")
    schedule = Schedule(tuple(kept))
    enforce_schedule(schedule, advisory=True)
    return schedule


def keep_stages(names: Sequence[str], base: Optional[Schedule] = None) -> Schedule:
    """The stages of ``base`` named in ``names``, in ``base`` order."""
    base = base or default_schedule()
    wanted = {name.upper() for name in names}
    return ablate([n for n in base.names if n not in wanted], base)


def progressive_arms(base: Optional[Schedule] = None) -> Dict[str, Schedule]:
    """Growing prefixes of ``base``: GD, GD+GED, GD+GED+TAD, GD+GED+TAD+TSD."""
    base = base or default_schedule()
    return {"+".join(base.names[: n]): Schedule(base.stages[: n]) for n in range(1, len(base) + 1)}


def with_steps(schedule: Schedule, steps: Mapping[str, int]) -> Schedule:
    """``schedule`` with the step budgets of the named stages replaced."""
    unknown = set(steps) - set(schedule.names)
    if unknown:
        raise ConfigurationError(f"no stage(s) {sorted(unknown)} in schedule {schedule.names}")
    return Schedule(tuple(replace(s, steps=steps.get(s.name, s.steps)) for s in schedule))
