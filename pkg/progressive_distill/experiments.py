"""
Desk-scale studies over the curriculum.

Each study prepares data and one teacher pair, then distills a fresh student
per (arm, seed). Results come back as a DataFrame with one row per run.
"""

import logging
from dataclasses import replace
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import pandas as pd

from .config import PhaseConfig, RunConfig
from .coordinator import DistillationCoordinator, TeacherArtifacts, load_stage_data, train_teachers
from .curriculum import Schedule, ablate, keep_stages, progressive_arms
from .data import subsample_task
from .errors import ConfigurationError
from .trainer import StageData

logger = logging.getLogger(__name__)

RESULT_COLUMNS = ["study", "arm", "seed", "dev_accuracy", "ood_accuracy", "dev_mcc"]
DEFAULT_SEEDS = (0, 1, 2, 3, 4)


class Arm:
    """One experimental condition: a schedule plus optional config overrides."""

    def __init__(self, name: str, schedule: Schedule, finetune_after: Optional[PhaseConfig] = None, student: Optional[Dict] = None):
        self.name = name
        self.schedule = schedule
        self.finetune_after = finetune_after
        self.student = student

    def apply(self, config: RunConfig, seed: int, output_dir: Path) -> RunConfig:
        return replace(
            config,
            schedule=self.schedule,
            seed=seed,
            output_dir=str(output_dir),
            allow_violations=True,
            finetune_after=self.finetune_after,
            student=self.student if self.student is not None else config.student,
        )


class Study:
    def __init__(self, name: str, config: RunConfig, progress: bool = False):
        self.name = name
        self.config = config
        self.root = Path(config.output_dir) / name
        self.progress = progress
        self._data: Optional[StageData] = None
        self._teachers: Optional[TeacherArtifacts] = None

    def prepare(self) -> Tuple[StageData, TeacherArtifacts]:
        """Data and teacher pair, built once and shared by every arm and seed."""
        if self._data is None:
            self._data = load_stage_data(self.config)
        if self._teachers is None:
            logger.info(f"🚀 {self.name}: training shared teacher pair")
            self._teachers = train_teachers(self.config, self._data, self.root / "teachers", self.progress)
        return self._data, self._teachers

    def run(self, arms: Sequence[Arm], seeds: Sequence[int], data: Optional[StageData] = None, extra: Optional[Dict] = None) -> List[Dict]:
        base_data, teachers = self.prepare()
        data = data or base_data
        rows = []
        for arm in arms:
            for seed in seeds:
                suffix = "" if not extra else "-" + "-".join(f"{k}{v}" for k, v in extra.items())
                run_config = arm.apply(self.config, seed, self.root)
                coordinator = DistillationCoordinator(
                    f"{_slug(arm.name)}{suffix}-seed{seed}", run_config, teachers=teachers, data=data, progress=self.progress
                )
                summary = coordinator.coordinate()
                metrics = summary["metrics"]
                rows.append(
                    {
                        "study": self.name,
                        "arm": arm.name,
                        "seed": seed,
                        "dev_accuracy": metrics.get("dev_accuracy"),
                        "ood_accuracy": metrics.get("ood_accuracy"),
                        "dev_mcc": metrics.get("dev_mcc"),
                        **(extra or {}),
                    }
                )
                logger.info(f"📊 {self.name} / {arm.name} / seed {seed}: {metrics}")
        return rows


def _slug(name: str) -> str:
    return name.replace(" ", "_").replace("&", "and").replace("/", "").replace("+", "_")


def _frame(rows: List[Dict]) -> pd.DataFrame:
    frame = pd.DataFrame(rows)
    return frame[[c for c in RESULT_COLUMNS if c in frame.columns] + [c for c in frame.columns if c not in RESULT_COLUMNS]]


def curriculum_benefit(config: RunConfig, seeds: Sequence[int] = DEFAULT_SEEDS, progress: bool = False) -> pd.DataFrame:
    """Full four-stage curriculum against task-specific distillation alone."""
    base = config.schedule
    arms = [Arm("full", base), Arm("tsd_only", keep_stages(["TSD"], base))]
    return _frame(Study("curriculum_benefit", config, progress).run(arms, seeds))


def general_data_ablation(config: RunConfig, seeds: Sequence[int] = DEFAULT_SEEDS, progress: bool = False) -> pd.DataFrame:
    base = config.schedule
    arms = [
        Arm("full", base),
        Arm("w/o GD", ablate(["GD"], base)),
        Arm("w/o GED", ablate(["GED"], base)),
        Arm("w/o GD&GED", ablate(["GD", "GED"], base)),
    ]
    return _frame(Study("general_data_ablation", config, progress).run(arms, seeds))


def task_data_ablation(config: RunConfig, seeds: Sequence[int] = DEFAULT_SEEDS, progress: bool = False) -> pd.DataFrame:
    """Drops TAD, or replaces TAD and TSD by plain finetuning with the TSD budget."""
    base = config.schedule
    tsd = base.stage("TSD")
    arms = [
        Arm("full", base),
        Arm("w/o TAD", ablate(["TAD"], base)),
        Arm("w/o TAD&TSD + FT", ablate(["TAD", "TSD"], base), finetune_after=PhaseConfig(tsd.steps, tsd.optimizer)),
    ]
    return _frame(Study("task_data_ablation", config, progress).run(arms, seeds))


def ged_generalization(config: RunConfig, seeds: Sequence[int] = DEFAULT_SEEDS, progress: bool = False) -> pd.DataFrame:
    """In-domain dev against shifted ood accuracy, with and without GED."""
    base = config.schedule
    arms = [
        Arm("GD+GED+TSD", keep_stages(["GD", "GED", "TSD"], base)),
        Arm("GD+TAD+TSD", keep_stages(["GD", "TAD", "TSD"], base)),
        Arm("GD+TSD", keep_stages(["GD", "TSD"], base)),
    ]
    return _frame(Study("ged_generalization", config, progress).run(arms, seeds))


def low_resource_trend(
    config: RunConfig,
    seeds: Sequence[int] = DEFAULT_SEEDS,
    fractions: Sequence[float] = (0.1, 1.0),
    progress: bool = False,
) -> pd.DataFrame:
    """
    With-GED against without-GED on stratified subsamples of the task train split.

    The teacher pair is trained once on the full split; only the student
    stages see the subsample.
    """
    bad = [f for f in fractions if not 0.0 < f <= 1.0]
    if bad:
        raise ConfigurationError(f"fractions must lie in (0, 1], got {bad}")
    base = config.schedule
    arms = [Arm("with_ged", base), Arm("without_ged", ablate(["GED"], base))]
    study = Study("low_resource_trend", config, progress)
    data, _ = study.prepare()
    rows = []
    for fraction in fractions:
        subsampled = replace(data, task=subsample_task(data.task, fraction, config.seed))
        rows.extend(study.run(arms, seeds, data=subsampled, extra={"fraction": fraction}))
    return _frame(rows)


def ged_gain(frame: pd.DataFrame, metric: str = "dev_accuracy") -> pd.Series:
    """Mean with-GED minus mean without-GED per fraction."""
    means = frame.groupby(["fraction", "arm"])[metric].mean().unstack("arm")
    return (means["with_ged"] - means["without_ged"]).rename("gain")


def student_capacity(config: RunConfig, seeds: Sequence[int] = DEFAULT_SEEDS, progress: bool = False) -> pd.DataFrame:
    """Default student against a student with the teacher's dimensions."""
    arms = [Arm("default_student", config.schedule), Arm("teacher_sized", config.schedule, student=dict(config.teacher))]
    return _frame(Study("student_capacity", config, progress).run(arms, seeds))


def progressive_contribution(config: RunConfig, seeds: Sequence[int] = DEFAULT_SEEDS, progress: bool = False) -> pd.DataFrame:
    """
    Growing prefixes of the schedule, one arm per added stage.

    Prefixes that stop before TSD keep an untrained task head, so their task
    metrics sit at chance level.
    """
    arms = [Arm(name, schedule) for name, schedule in progressive_arms(config.schedule).items()]
    return _frame(Study("progressive_contribution", config, progress).run(arms, seeds))


def summarize(frame: pd.DataFrame) -> pd.DataFrame:
    """Mean and std per arm (and fraction, when present) of every metric column."""
    keys = ["arm"] + (["fraction"] if "fraction" in frame.columns else [])
    metrics = [c for c in ("dev_accuracy", "ood_accuracy", "dev_mcc") if c in frame.columns and frame[c].notna().any()]
    table = frame.groupby(keys, sort=False)[metrics].agg(["mean", "std"])
    table.columns = [f"{metric}_{stat}" for metric, stat in table.columns]
    return table.reset_index()


STUDIES: Dict[str, Callable[..., pd.DataFrame]] = {
    "curriculum-benefit": curriculum_benefit,
    "general-data-ablation": general_data_ablation,
    "task-data-ablation": task_data_ablation,
    "ged-generalization": ged_generalization,
    "low-resource": low_resource_trend,
    "student-capacity": student_capacity,
    "progressive": progressive_contribution,
}
