"""
Distillation Coordinator

Runs one distillation experiment end to end inside its own run directory:
1. Prepare data (synthetic generation or files on disk)
2. Pretrain and finetune the teacher pair (or reuse a prepared pair)
3. Run the curriculum on a fresh student, streaming metrics.tsv
4. Verify the teacher checkpoints and in-memory weights were not touched
5. Save the student checkpoint and summary.json
"""

import logging
import threading
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Dict, Optional, Union

from .checkpoint import file_digest, load_checkpoint, save_checkpoint, weights_digest
from .config import RunConfig, load_run_config, save_run_config
from .curriculum import StageSpec
from .data import (
    TaskDataset,
    generate_synthetic,
    read_corpus,
    read_task_file,
    read_vocab,
    subsample_task,
    synthetic_vocab,
    write_corpus,
    write_task_file,
    write_vocab,
)
from .errors import CheckpointError, DataError
from .losses import TeacherKind
from .metrics import METRICS_FILE, MetricsWriter, write_summary
from .trainer import (
    PipelineResult,
    StageData,
    StudentState,
    TrainHooks,
    evaluate_student,
    finetune_teacher,
    pretrain_teacher,
    primary_metric,
    run_pipeline,
)
from .transformer import ModelConfig, TransformerWeights, freeze

logger = logging.getLogger(__name__)

PRETRAINED_CKPT = "teacher_pretrained.ckpt"
FINETUNED_CKPT = "teacher_finetuned.ckpt"
STUDENT_CKPT = "student.ckpt"
TASK_SPLITS = ("train", "dev", "ood")


def load_stage_data(config: RunConfig) -> StageData:
    """Vocabulary, general corpus and task splits for a run, subsampled when configured."""
    data = config.data
    if data.synthetic is not None:
        vocab = synthetic_vocab(data.synthetic)
        corpus, task = generate_synthetic(data.synthetic)
    else:
        vocab = read_vocab(data.vocab_path)
        corpus = read_corpus(data.corpus_path, vocab)
        task_dir = Path(data.task_dir)
        splits = {}
        for split in TASK_SPLITS:
            path = task_dir / f"{split}.tsv"
            if path.exists():
                splits[split] = read_task_file(path, vocab, data.task_kind)
        if "train" not in splits:
            raise DataError(f"{task_dir} has no train.tsv")
        task = TaskDataset(data.task_kind, data.num_labels, splits)
    if data.subsample < 1.0:
        task = subsample_task(task, data.subsample, config.seed)
    return StageData(vocab=vocab, corpus=corpus, task=task, max_len=config.max_seq_len)


def export_data(data: StageData, out_dir: Union[str, Path]) -> Path:
    """Write vocab.txt, corpus.txt and one TSV per task split."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    write_vocab(out_dir / "vocab.txt", data.vocab)
    write_corpus(out_dir / "corpus.txt", data.corpus, data.vocab)
    for split, examples in data.task.splits.items():
        write_task_file(out_dir / f"{split}.tsv", examples, data.vocab)
    logger.info(f"✅ Exported data to {out_dir}")
    return out_dir


@dataclass
class TeacherArtifacts:
    config: ModelConfig
    pretrained: TransformerWeights
    finetuned: TransformerWeights
    pretrained_path: Path
    finetuned_path: Path
    dev_metric: Optional[float] = None

    def pairs(self) -> Dict[TeacherKind, tuple]:
        return {
            TeacherKind.PRETRAINED: (self.config, self.pretrained),
            TeacherKind.FINETUNED: (self.config, self.finetuned),
        }

    def digests(self) -> Dict[str, str]:
        """Checkpoint files on disk and the in-memory arrays distillation reads."""
        digests = {str(p): file_digest(p) for p in (self.pretrained_path, self.finetuned_path)}
        digests["pretrained weights"] = weights_digest(self.pretrained)
        digests["finetuned weights"] = weights_digest(self.finetuned)
        return digests


def train_teachers(config: RunConfig, data: StageData, out_dir: Union[str, Path], progress: bool = False) -> TeacherArtifacts:
    """Pretrain T_g by masked-token prediction, finetune it into T_f, save both frozen."""
    out_dir = Path(out_dir)
    teacher_config, _ = config.model_configs(data.vocab.size)
    pretrained, _ = pretrain_teacher(
        teacher_config, data.corpus, data.vocab, config.pretrain.optimizer, config.pretrain.steps,
        data.max_len, data.pair_mode, hooks=TrainHooks(progress=progress),
    )
    pretrained_path = save_checkpoint(out_dir / PRETRAINED_CKPT, teacher_config, pretrained, metadata={"role": "pretrained"})

    finetuned, report = finetune_teacher(
        teacher_config, pretrained, data.task, data.vocab, config.finetune.optimizer, config.finetune.steps,
        data.max_len, hooks=TrainHooks(progress=progress),
    )
    dev = report.dev_metrics[-1][1] if report.dev_metrics else None
    finetuned_path = save_checkpoint(
        out_dir / FINETUNED_CKPT, teacher_config, finetuned, metadata={"role": "finetuned", "dev_metric": dev}
    )
    if dev is not None:
        logger.info(f"📊 Finetuned teacher dev metric: {dev:.4f}")
    return TeacherArtifacts(teacher_config, freeze(pretrained), freeze(finetuned), pretrained_path, finetuned_path, dev)


def load_teachers(config: ModelConfig, teacher_dir: Union[str, Path]) -> TeacherArtifacts:
    teacher_dir = Path(teacher_dir)
    pretrained = load_checkpoint(teacher_dir / PRETRAINED_CKPT, config, requires_grad=False)
    finetuned = load_checkpoint(teacher_dir / FINETUNED_CKPT, config, requires_grad=False)
    return TeacherArtifacts(
        config, pretrained.weights, finetuned.weights,
        teacher_dir / PRETRAINED_CKPT, teacher_dir / FINETUNED_CKPT,
        finetuned.metadata.get("dev_metric"),
    )


class DistillationCoordinator:
    """
    Coordinates one run directory: data, teachers, curriculum, artifacts.
    """

    def __init__(
        self,
        run_id: str,
        config: RunConfig,
        teachers: Optional[TeacherArtifacts] = None,
        data: Optional[StageData] = None,
        stop_event: Optional[threading.Event] = None,
        status_callback: Optional[Callable[[str], None]] = None,
        progress: bool = False,
    ):
        """
        Initialize the coordinator.

        Args:
            run_id: Name of the run directory under ``config.output_dir``.
            config: Parsed run configuration.
            teachers: A prepared teacher pair to reuse instead of training one.
            data: Prepared data to reuse instead of loading it again.
            stop_event: Set by the run monitor to end training between steps.
            status_callback: Receives human-readable progress messages.
        """
        self.run_id = run_id
        self.config = config
        self.run_dir = Path(config.output_dir) / run_id
        self.teachers = teachers
        self.data = data
        self.stop_event = stop_event or threading.Event()
        self.status_callback = status_callback
        self.progress = progress
        self.status = "pending"
        self.error: Optional[str] = None
        self.result: Optional[PipelineResult] = None

        logger.info(f"Initialized Distillation Coordinator for run {self.run_id}")

    def _status(self, message: str):
        logger.info(message)
        if self.status_callback is not None:
            self.status_callback(message)

    @property
    def metrics_path(self) -> Path:
        return self.run_dir / METRICS_FILE

    def coordinate(self) -> Dict:
        """Main flow; returns the summary written to summary.json."""
        self.status = "running"
        try:
            self.run_dir.mkdir(parents=True, exist_ok=True)
            save_run_config(self.config, self.run_dir / "config.yaml")
            self._status(f"🚀 Starting run {self.run_id}: schedule {'+'.join(self.config.schedule.names)}")

            # Phase 1: Data
            if self.data is None:
                self.data = load_stage_data(self.config)

            # Phase 2: Teachers
            if self.teachers is None:
                self._status("Training teacher pair (pretrain, then finetune)")
                self.teachers = train_teachers(self.config, self.data, self.run_dir, self.progress)
            before = self.teachers.digests()

            # Phase 3: Curriculum
            summary = self.distill()

            # Phase 4: Teacher immutability
            after = self.teachers.digests()
            if before != after:
                changed = [p for p in before if before[p] != after.get(p)]
                raise CheckpointError(f"teacher checkpoint(s) or weights changed during distillation: {changed}")

            self.status = "stopped" if summary.get("stopped") else "completed"
            self._status(f"✅ Run {self.run_id} {self.status}")
            return summary
        except Exception as e:
            self.status = "failed"
            self.error = str(e)
            logger.error(f"❌ Run {self.run_id} failed: {e}")
            raise

    def distill(self) -> Dict:
        config, data = self.config, self.data
        _, student_config = config.model_configs(data.vocab.size)
        if self.metrics_path.exists():
            self.metrics_path.unlink()
        writer = MetricsWriter(self.metrics_path)
        writer.append([])

        def hooks_for(stage: StageSpec, student: StudentState) -> TrainHooks:
            return TrainHooks(
                evaluate=self._dev_evaluator(student),
                eval_interval=config.eval_interval,
                on_rows=writer.append,
                stop_event=self.stop_event,
                progress=self.progress,
            )

        finetune_after = None
        if config.finetune_after is not None:
            finetune_after = (config.finetune_after.optimizer, config.finetune_after.steps)

        self.result = run_pipeline(
            config.schedule,
            student_config,
            self.teachers.pairs(),
            data,
            config.seed,
            allow_violations=config.allow_violations or bool(config.dropped),
            hooks_for=hooks_for,
            finetune_after=finetune_after,
            temperature=config.temperature,
        )
        if finetune_after is not None and self.result.reports[-1].stage == "finetune-student":
            writer.append(self.result.reports[-1].rows())
        student = self.result.student
        extra = {name: t.data for name, t in student.maps.named_parameters()}
        save_checkpoint(
            self.run_dir / STUDENT_CKPT, student.config, student.weights, extra=extra,
            metadata={"run_id": self.run_id, "schedule": config.schedule.names, "seed": config.seed},
        )
        summary = {
            "run_id": self.run_id,
            "seed": config.seed,
            "schedule": config.schedule.names,
            "stages": [
                {"stage": r.stage, "steps": len(r.steps), "final_loss": r.loss_total[-1] if r.loss_total else None,
                 "wall_time": r.wall_time}
                for r in self.result.reports
            ],
            "teacher_dev_metric": self.teachers.dev_metric,
            "metrics": self.result.metrics,
            "stopped": any(r.stopped for r in self.result.reports),
        }
        write_summary(self.run_dir, summary)
        self._status(f"📊 Final metrics: " + ", ".join(f"{k}={v:.4f}" for k, v in self.result.metrics.items()))
        return summary

    def _dev_evaluator(self, student: StudentState) -> Optional[Callable[[], float]]:
        data = self.data
        if data.task is None or not data.task.splits.get("dev"):
            return None

        def evaluate() -> float:
            return primary_metric(evaluate_student(student.config, student.weights, data.task, "dev", data.vocab, data.max_len))

        return evaluate

    def stop(self):
        self.stop_event.set()


def create_distillation_coordinator(
    config: Union[str, Path, RunConfig],
    run_id: Optional[str] = None,
    allow_violations: Optional[bool] = None,
    **kwargs,
) -> DistillationCoordinator:
    """
    Factory function to create a coordinator from a config file or object.

    Args:
        config: Path to a run config YAML or a parsed RunConfig.
        run_id: Run directory name; defaults to "<stages>-seed<seed>".
        allow_violations: Overrides the config's schedule validation mode.

    Returns:
        DistillationCoordinator instance
    """
    if not isinstance(config, RunConfig):
        config = load_run_config(config, allow_violations)
    run_id = run_id or f"{'+'.join(config.schedule.names)}-seed{config.seed}"
    return DistillationCoordinator(run_id, config, **kwargs)
