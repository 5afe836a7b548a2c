"""
Training loops: teacher pretraining and finetuning, distillation stages and
the full curriculum pipeline.
"""

import logging
import threading
import time
from dataclasses import dataclass, field, replace
from typing import Callable, Dict, Iterator, List, Optional, Sequence, Tuple

import numpy as np
from tqdm import tqdm

from .curriculum import DataKind, Schedule, StageSpec, enforce_schedule
from .data import (
    Batch,
    GeneralCorpus,
    TaskDataset,
    Vocab,
    build_batch,
    general_items,
    iterate_batches,
    mask_batch,
)
from .errors import ConfigurationError, DataError, LabelError, ScheduleViolationError
from .functional import cross_entropy
from .losses import (
    DistillModels,
    LossBreakdown,
    MappingParams,
    TeacherKind,
    create_mapping_params,
    hard_label_loss,
    stage_loss_components,
)
from .metrics import MetricsRow, accuracy, f1_binary, mcc, mean_squared_error, pearson
from .optimizer import AdamState, OptimizerConfig, step_parameters
from .tensor import Tape, Tensor, backward
from .transformer import (
    ModelConfig,
    TaskKind,
    TransformerWeights,
    clone_weights,
    create_weights,
    encoder_forward,
    mlm_forward,
)

logger = logging.getLogger(__name__)

DEFAULT_MASK_RATE = 0.15
TeacherPair = Tuple[ModelConfig, TransformerWeights]


@dataclass
class TrainReport:
    """Loss history of one training phase; soft/hard stay empty when the phase never computes them."""

    stage: str
    seed: int
    steps: List[int] = field(default_factory=list)
    loss_total: List[float] = field(default_factory=list)
    loss_latent: List[float] = field(default_factory=list)
    loss_soft: List[float] = field(default_factory=list)
    loss_hard: List[float] = field(default_factory=list)
    dev_metrics: List[Tuple[int, float]] = field(default_factory=list)
    checkpoint: Optional[str] = None
    wall_time: float = 0.0
    stopped: bool = False

    def rows(self) -> List[MetricsRow]:
        dev = dict(self.dev_metrics)
        soft = self.loss_soft or [0.0] * len(self.steps)
        hard = self.loss_hard or [0.0] * len(self.steps)
        return [
            MetricsRow(
                step=s, stage=self.stage, loss_total=t, loss_latent=lat,
                loss_soft=so, loss_hard=h, dev_metric=dev.get(s),
            )
            for s, t, lat, so, h in zip(self.steps, self.loss_total, self.loss_latent, soft, hard)
        ]


@dataclass
class TrainHooks:
    """
    Callbacks shared by every loop.

    ``evaluate`` returns the dev metric and runs every ``eval_interval`` steps
    and after the last step; ``on_rows`` receives the metrics rows accumulated
    since the previous evaluation; ``stop_event`` ends the loop between steps.
    """

    evaluate: Optional[Callable[[], float]] = None
    eval_interval: int = 0
    on_rows: Optional[Callable[[List[MetricsRow]], None]] = None
    stop_event: Optional[threading.Event] = None
    progress: bool = False


@dataclass
class StageData:
    vocab: Vocab
    corpus: Optional[GeneralCorpus]
    task: Optional[TaskDataset]
    max_len: int

    @property
    def pair_mode(self) -> bool:
        return bool(self.task and self.task.pair_mode)


@dataclass
class StudentState:
    config: ModelConfig
    weights: TransformerWeights
    maps: MappingParams

    def trainable(self) -> List[Tuple[str, Tensor]]:
        return self.weights.named_parameters() + self.maps.trainable_parameters()


def _optimize(
    name: str,
    steps: int,
    opt: OptimizerConfig,
    params: Sequence[Tuple[str, Tensor]],
    loss_fn: Callable[[np.random.Generator], LossBreakdown],
    hooks: Optional[TrainHooks],
    record_labels: bool,
) -> TrainReport:
    hooks = hooks or TrainHooks()
    rng = np.random.default_rng(opt.seed)
    state = AdamState()
    report = TrainReport(stage=name, seed=opt.seed)
    flushed = 0
    started = time.perf_counter()
    logger.info(f"🚀 {name}: {steps} steps, lr {opt.learning_rate:g}, batch {opt.batch_size}")

    for step in tqdm(range(1, steps + 1), desc=name, disable=not hooks.progress, leave=False):
        if hooks.stop_event is not None and hooks.stop_event.is_set():
            logger.warning(f"⚠️ {name}: stop requested, ending after step {step - 1}")
            report.stopped = True
            break
        for _, tensor in params:
            tensor.grad = None
        with Tape() as tape:
            breakdown = loss_fn(rng)
        backward(breakdown.total, tape)
        step_parameters(params, state, opt, step, steps)

        values = breakdown.as_floats()
        report.steps.append(step)
        report.loss_total.append(values["total"])
        report.loss_latent.append(values["latent"])
        if record_labels:
            report.loss_soft.append(values["soft"])
            report.loss_hard.append(values["hard"])
        logger.debug(f"{name} step {step}: " + ", ".join(f"{k}={v:.6f}" for k, v in values.items()))

        interval_hit = hooks.eval_interval and step % hooks.eval_interval == 0
        if interval_hit or step == steps:
            if hooks.evaluate is not None:
                metric = float(hooks.evaluate())
                report.dev_metrics.append((step, metric))
                logger.info(f"📊 {name} step {step}: loss {values['total']:.4f}, dev {metric:.4f}")
            if hooks.on_rows is not None:
                rows = report.rows()
                hooks.on_rows(rows[flushed:])
                flushed = len(rows)

    if hooks.on_rows is not None and flushed < len(report.steps):
        hooks.on_rows(report.rows()[flushed:])
    report.wall_time = time.perf_counter() - started
    last = f"{report.loss_total[-1]:.4f}" if report.loss_total else "n/a"
    logger.info(f"✅ {name} finished in {report.wall_time:.1f}s, final loss {last}")
    return report


# ─────────────────────────────────────────────
# TEACHERS
# ─────────────────────────────────────────────


def mlm_loss(
    config: ModelConfig,
    weights: TransformerWeights,
    batch: Batch,
    vocab: Vocab,
    rate: float,
    rng: np.random.Generator,
) -> Tensor:
    """Cross entropy of the original ids at masked positions of ``batch``."""
    masked, positions, originals = mask_batch(batch, vocab, rate, rng)
    logits = mlm_forward(
        config, weights, masked.token_ids, positions, masked.segment_ids, masked.attention_mask, rng
    )
    return cross_entropy(logits, originals)


def pretrain_teacher(
    config: ModelConfig,
    corpus: GeneralCorpus,
    vocab: Vocab,
    opt: OptimizerConfig,
    steps: int,
    max_len: int,
    pair_mode: bool = False,
    mask_rate: float = DEFAULT_MASK_RATE,
    hooks: Optional[TrainHooks] = None,
) -> Tuple[TransformerWeights, TrainReport]:
    """
    Masked-token pretraining from a fresh initialization seeded by ``opt.seed``.

    Pair-task runs train on consecutive sentence pairs so segment B embeddings
    are learned too. The MLM loss is reported as the hard component.

    Raises:
        DataError: the corpus holds no sentences.
    """
    if not corpus.documents or not corpus.sentences():
        raise DataError("cannot pretrain on an empty corpus")
    if config.vocab_size < vocab.size:
        raise ConfigurationError(f"model vocab {config.vocab_size} is smaller than data vocab {vocab.size}")
    weights = create_weights(config, opt.seed)

    def loss_fn(rng: np.random.Generator) -> LossBreakdown:
        items = general_items(corpus, opt.batch_size, pair_mode, rng)
        batch = build_batch(items, vocab, max_len, pair_mode)
        loss = mlm_loss(config, weights, batch, vocab, mask_rate, rng)
        return LossBreakdown(total=loss, latent=Tensor(0.0), soft=Tensor(0.0), hard=loss)

    report = _optimize("pretrain", steps, opt, weights.named_parameters(), loss_fn, hooks, record_labels=True)
    return weights, report


def _supervised(
    name: str,
    config: ModelConfig,
    weights: TransformerWeights,
    dataset: TaskDataset,
    vocab: Vocab,
    opt: OptimizerConfig,
    steps: int,
    max_len: int,
    hooks: Optional[TrainHooks],
) -> TrainReport:
    train = dataset.split("train")
    if not train or any(ex.label is None for ex in train):
        raise LabelError(f"{name} needs a fully labeled train split")
    batches: Optional[Iterator[Batch]] = None

    def loss_fn(rng: np.random.Generator) -> LossBreakdown:
        nonlocal batches
        if batches is None:
            batches = iterate_batches(train, vocab, max_len, dataset.pair_mode, opt.batch_size, rng)
        batch = next(batches)
        trace = encoder_forward(config, weights, batch.token_ids, batch.segment_ids, batch.attention_mask, rng)
        loss = hard_label_loss(trace.logits, batch.labels, config.task_kind)
        return LossBreakdown(total=loss, latent=Tensor(0.0), soft=Tensor(0.0), hard=loss)

    return _optimize(name, steps, opt, weights.named_parameters(), loss_fn, hooks, record_labels=True)


def finetune_teacher(
    config: ModelConfig,
    pretrained: TransformerWeights,
    dataset: TaskDataset,
    vocab: Vocab,
    opt: OptimizerConfig,
    steps: int,
    max_len: int,
    hooks: Optional[TrainHooks] = None,
) -> Tuple[TransformerWeights, TrainReport]:
    """Hard-label training of a copy of ``pretrained``; the pretrained weights are left untouched."""
    weights = clone_weights(config, pretrained, requires_grad=True)
    hooks = hooks or TrainHooks()
    if hooks.evaluate is None and "dev" in dataset.splits:
        hooks.evaluate = lambda: primary_metric(evaluate_student(config, weights, dataset, "dev", vocab, max_len))
    report = _supervised("finetune-teacher", config, weights, dataset, vocab, opt, steps, max_len, hooks)
    return weights, report


def finetune_student(
    config: ModelConfig,
    weights: TransformerWeights,
    dataset: TaskDataset,
    vocab: Vocab,
    opt: OptimizerConfig,
    steps: int,
    max_len: int,
    hooks: Optional[TrainHooks] = None,
) -> TrainReport:
    """Plain hard-label finetuning of the student in place, no teacher involved."""
    return _supervised("finetune-student", config, weights, dataset, vocab, opt, steps, max_len, hooks)


# ─────────────────────────────────────────────
# EVALUATION
# ─────────────────────────────────────────────


def predict(
    config: ModelConfig,
    weights: TransformerWeights,
    examples: Sequence,
    vocab: Vocab,
    max_len: int,
    pair_mode: bool,
    batch_size: int = 64,
) -> np.ndarray:
    """Task-head logits for ``examples``, dropout off."""
    outputs = []
    for start in range(0, len(examples), batch_size):
        batch = build_batch(examples[start : start + batch_size], vocab, max_len, pair_mode)
        trace = encoder_forward(config, weights, batch.token_ids, batch.segment_ids, batch.attention_mask)
        outputs.append(trace.logits.numpy())
    return np.concatenate(outputs, axis=0) if outputs else np.zeros((0, config.output_size))


def evaluate_student(
    config: ModelConfig,
    weights: TransformerWeights,
    dataset: TaskDataset,
    split: str,
    vocab: Vocab,
    max_len: int,
) -> Dict[str, float]:
    """
    Classification: accuracy, plus mcc and f1 for binary tasks.
    Regression: pearson and mse.
    """
    examples = dataset.split(split)
    if not examples:
        raise DataError(f"split {split!r} is empty")
    labels = np.asarray([ex.label for ex in examples])
    logits = predict(config, weights, examples, vocab, max_len, dataset.pair_mode)
    if dataset.kind == TaskKind.REGRESSION:
        scores = logits[:, 0]
        metrics = {"mse": mean_squared_error(scores, labels)}
        try:
            metrics["pearson"] = pearson(scores, labels)
        except DataError:
            metrics["pearson"] = 0.0
        return metrics
    preds = logits.argmax(axis=-1)
    metrics = {"accuracy": accuracy(preds, labels.astype(np.int64))}
    if dataset.num_labels == 2:
        metrics["mcc"] = mcc(preds, labels.astype(np.int64))
        metrics["f1"] = f1_binary(preds, labels.astype(np.int64))
    return metrics


def primary_metric(metrics: Dict[str, float]) -> float:
    return metrics["accuracy"] if "accuracy" in metrics else metrics["pearson"]


# ─────────────────────────────────────────────
# DISTILLATION
# ─────────────────────────────────────────────


def new_student(
    student_config: ModelConfig, teacher_config: ModelConfig, seed: int, mapping_init: str = "identity"
) -> StudentState:
    rng = np.random.default_rng(seed)
    weights = create_weights(student_config, rng)
    maps = create_mapping_params(teacher_config, student_config, trainable=True, init=mapping_init, rng=rng)
    return StudentState(student_config, weights, maps)


def _stage_batches(stage: StageSpec, data: StageData, rng: np.random.Generator) -> Iterator[Batch]:
    batch_size = stage.optimizer.batch_size
    if stage.data_kind == DataKind.GENERAL:
        if data.corpus is None:
            raise DataError(f"stage {stage.name} needs a general corpus")
        while True:
            items = general_items(data.corpus, batch_size, data.pair_mode, rng)
            yield build_batch(items, data.vocab, data.max_len, data.pair_mode)
    if data.task is None:
        raise DataError(f"stage {stage.name} needs task data")
    train = data.task.split("train")
    if stage.alpha == 1 and any(ex.label is None for ex in train):
        raise LabelError(f"stage {stage.name} has alpha=1 but the task data is unlabeled")
    yield from iterate_batches(train, data.vocab, data.max_len, data.pair_mode, batch_size, rng)


def train_stage(
    stage: StageSpec,
    student: StudentState,
    teachers: Dict[TeacherKind, TeacherPair],
    data: StageData,
    hooks: Optional[TrainHooks] = None,
    temperature: float = 1.0,
) -> TrainReport:
    """
    Minimize the stage loss over ``stage.steps`` batches, updating the student
    and its mapping matrices in place. Teachers are read only.

    Raises:
        ScheduleViolationError: the stage itself is malformed (alpha=1 on general data).
        ConfigurationError: the stage's teacher is not available.
        LabelError: alpha=1 with unlabeled task data.
    """
    problems = stage.problems()
    if problems:
        raise ScheduleViolationError(message="; ".join(problems))
    if stage.teacher_kind not in teachers:
        raise ConfigurationError(f"stage {stage.name} needs the {stage.teacher_kind.value} teacher")
    for _, (_, teacher_weights) in teachers.items():
        if any(t.requires_grad for _, t in teacher_weights.named_parameters()):
            raise ConfigurationError("teacher weights must be frozen before distillation")

    models = DistillModels(student.config, student.weights, dict(teachers), temperature)
    batches: Optional[Iterator[Batch]] = None

    def loss_fn(rng: np.random.Generator) -> LossBreakdown:
        nonlocal batches
        if batches is None:
            batches = _stage_batches(stage, data, rng)
        batch = next(batches)
        return stage_loss_components(batch, stage.teacher_kind, stage.data_kind, stage.alpha, models, student.maps, rng)

    return _optimize(
        stage.name, stage.steps, stage.optimizer, student.trainable(), loss_fn, hooks, record_labels=stage.alpha == 1
    )


@dataclass
class PipelineResult:
    student: StudentState
    reports: List[TrainReport]
    metrics: Dict[str, float] = field(default_factory=dict)

    def rows(self) -> List[MetricsRow]:
        return [row for report in self.reports for row in report.rows()]


def run_pipeline(
    schedule: Schedule,
    student_config: ModelConfig,
    teachers: Dict[TeacherKind, TeacherPair],
    data: StageData,
    seed: int,
    allow_violations: bool = False,
    hooks_for: Optional[Callable[[StageSpec, StudentState], TrainHooks]] = None,
    finetune_after: Optional[Tuple[OptimizerConfig, int]] = None,
    temperature: float = 1.0,
) -> PipelineResult:
    """
    Run every stage in order on one student, threading its weights and
    mapping matrices through, then score dev and ood splits.

    Stage seeds are ``seed + stage index`` so every stage draws its own batches.

    Raises:
        ScheduleViolationError: validation failed; nothing has been trained.
    """
    enforce_schedule(schedule, advisory=allow_violations)
    teacher_config = next(iter(teachers.values()))[0] if teachers else None
    if teacher_config is None:
        raise ConfigurationError("run_pipeline needs at least one teacher")
    student = new_student(student_config, teacher_config, seed)
    reports = []
    for index, stage in enumerate(schedule):
        stage = _reseeded(stage, seed + index)
        hooks = hooks_for(stage, student) if hooks_for else None
        report = train_stage(stage, student, teachers, data, hooks, temperature)
        reports.append(report)
        if report.stopped:
            break

    if finetune_after is not None and not (reports and reports[-1].stopped):
        if data.task is None:
            raise DataError("finetuning after distillation needs task data")
        opt, steps = finetune_after
        opt = OptimizerConfig.from_dict({**opt.to_dict(), "seed": seed + len(schedule)})
        reports.append(
            finetune_student(student.config, student.weights, data.task, data.vocab, opt, steps, data.max_len)
        )

    metrics: Dict[str, float] = {}
    if data.task is not None:
        for split in ("dev", "ood"):
            if split in data.task.splits and data.task.splits[split]:
                scored = evaluate_student(student.config, student.weights, data.task, split, data.vocab, data.max_len)
                metrics.update({f"{split}_{k}": v for k, v in scored.items()})
    logger.info(f"✅ Pipeline {'+'.join(schedule.names)} done: " + ", ".join(f"{k}={v:.4f}" for k, v in metrics.items()))
    return PipelineResult(student, reports, metrics)


def _reseeded(stage: StageSpec, seed: int) -> StageSpec:
    return replace(stage, optimizer=OptimizerConfig.from_dict({**stage.optimizer.to_dict(), "seed": seed}))
