"""
Distillation loss algebra.

Latent loss aligns every student layer l with teacher layer k = l * c through
a per-layer head-mixing matrix M_l (teacher heads x student heads) and a
hidden projection N_l (student hidden x teacher hidden), both under mean
squared error. Soft and hard label losses act on task logits, and the stage
loss combines them as latent + alpha * (soft + hard).
"""

import logging
from dataclasses import dataclass
from enum import Enum
from typing import Dict, List, Mapping, Optional, Tuple, Union

import numpy as np

from .errors import ConfigurationError, LabelError, ShapeError
from .functional import cross_entropy, kl_div, mse
from .tensor import Tensor
from .transformer import (
    ForwardTrace,
    ModelConfig,
    TaskKind,
    TransformerWeights,
    encoder_forward,
    truncated_normal,
)

logger = logging.getLogger(__name__)

__all__ = [
    "TaskKind", "TeacherKind", "LayerMap", "MappingParams", "LossBreakdown", "DistillModels",
    "layer_map", "create_mapping_params", "attention_loss", "hidden_loss", "latent_loss",
    "soft_label_loss", "hard_label_loss", "stage_loss", "stage_loss_components",
]


class TeacherKind(str, Enum):
    PRETRAINED = "pretrained"
    FINETUNED = "finetuned"


def layer_map(l: int, teacher_layers: int, student_layers: int) -> int:
    """
    Teacher layer k = l * (L_T / L_S) mimicked by student layer l (1-based).

    Raises:
        ConfigurationError: L_T is not a multiple of L_S or l is out of range.
    """
    if student_layers < 1 or teacher_layers % student_layers:
        raise ConfigurationError(
            f"teacher depth {teacher_layers} is not a multiple of student depth {student_layers}; "
            f"pick depths where the teacher has an integer number of layers per student layer"
        )
    if not 1 <= l <= student_layers:
        raise ConfigurationError(f"student layer {l} outside [1, {student_layers}]")
    return l * (teacher_layers // student_layers)


@dataclass(frozen=True)
class LayerMap:
    teacher_layers: int
    student_layers: int

    def __post_init__(self):
        layer_map(1, self.teacher_layers, self.student_layers)

    @property
    def stride(self) -> int:
        return self.teacher_layers // self.student_layers

    def pairs(self) -> List[Tuple[int, int]]:
        """(student layer, teacher layer), both 1-based."""
        return [(l, l * self.stride) for l in range(1, self.student_layers + 1)]

    @classmethod
    def between(cls, teacher: ModelConfig, student: ModelConfig) -> "LayerMap":
        return cls(teacher.num_layers, student.num_layers)


@dataclass
class MappingParams:
    head_maps: List[Tensor]
    hidden_maps: List[Tensor]
    trainable: bool = True

    def named_parameters(self) -> List[Tuple[str, Tensor]]:
        named = [(f"mapping.head.{i}", m) for i, m in enumerate(self.head_maps)]
        named.extend((f"mapping.hidden.{i}", n) for i, n in enumerate(self.hidden_maps))
        return named

    def trainable_parameters(self) -> List[Tuple[str, Tensor]]:
        return self.named_parameters() if self.trainable else []

    @classmethod
    def from_named(cls, tensors: Mapping[str, Union[np.ndarray, Tensor]], trainable: bool = True) -> "MappingParams":
        def collect(prefix: str) -> List[Tensor]:
            out = []
            index = 0
            while f"{prefix}.{index}" in tensors:
                value = tensors[f"{prefix}.{index}"]
                data = value.data if isinstance(value, Tensor) else value
                out.append(Tensor(data, requires_grad=trainable, name=f"{prefix}.{index}"))
                index += 1
            return out

        return cls(collect("mapping.head"), collect("mapping.hidden"), trainable)


def create_mapping_params(
    teacher: ModelConfig,
    student: ModelConfig,
    trainable: bool = True,
    init: str = "identity",
    rng: Optional[np.random.Generator] = None,
) -> MappingParams:
    """
    One M_l (h_T x h_S) and one N_l (d_S x d_T) per student layer.

    ``init="identity"`` uses the (padded) identity, which is the exact identity
    whenever the two dimensions agree; ``init="normal"`` draws truncated
    normal values with the student's initializer range.
    """
    if init not in ("identity", "normal"):
        raise ConfigurationError(f"unknown mapping init {init!r}")
    if init == "normal" and rng is None:
        raise ConfigurationError("normal mapping init needs a random generator")
    LayerMap.between(teacher, student)

    def matrix(rows: int, cols: int, name: str) -> Tensor:
        if init == "identity":
            data = np.eye(rows, cols)
        else:
            data = truncated_normal(rng, (rows, cols), student.initializer_range)
        return Tensor(data, requires_grad=trainable, name=name)

    layers = range(student.num_layers)
    return MappingParams(
        head_maps=[matrix(teacher.num_heads, student.num_heads, f"mapping.head.{i}") for i in layers],
        hidden_maps=[matrix(student.hidden_size, teacher.hidden_size, f"mapping.hidden.{i}") for i in layers],
        trainable=trainable,
    )


def _check_traces(teacher_trace: ForwardTrace, student_trace: ForwardTrace, maps: MappingParams, lm: LayerMap):
    if teacher_trace.num_layers != lm.teacher_layers or student_trace.num_layers != lm.student_layers:
        raise ShapeError(
            f"traces have {teacher_trace.num_layers}/{student_trace.num_layers} layers, "
            f"layer map expects {lm.teacher_layers}/{lm.student_layers}"
        )
    if len(maps.head_maps) != lm.student_layers or len(maps.hidden_maps) != lm.student_layers:
        raise ShapeError(f"mapping params cover {len(maps.head_maps)} layers, student has {lm.student_layers}")
    if lm.student_layers:
        t_batch = teacher_trace.hiddens[0].shape[:2]
        s_batch = student_trace.hiddens[0].shape[:2]
        if t_batch != s_batch:
            raise ShapeError(f"teacher batch {t_batch} and student batch {s_batch} differ")


def attention_loss(
    teacher_trace: ForwardTrace, student_trace: ForwardTrace, maps: MappingParams, lm: LayerMap
) -> Tensor:
    """Sum over student layers l and teacher heads a of mse(A^T_{k,a}, (M_l A^S_l)_a)."""
    _check_traces(teacher_trace, student_trace, maps, lm)
    total: Optional[Tensor] = None
    for l, k in lm.pairs():
        teacher_attention = teacher_trace.attentions[k - 1].detach()
        student_attention = student_trace.attentions[l - 1]
        head_map = maps.head_maps[l - 1]
        batch, student_heads, seq_len, _ = student_attention.shape
        teacher_heads = teacher_attention.shape[1]
        if head_map.shape != (teacher_heads, student_heads):
            raise ShapeError(f"M_{l} has shape {head_map.shape}, expected {(teacher_heads, student_heads)}")
        flat = student_attention.reshape(batch, student_heads, seq_len * seq_len)
        mixed = (head_map @ flat).reshape(batch, teacher_heads, seq_len, seq_len)
        for a in range(teacher_heads):
            term = mse(teacher_attention[:, a], mixed[:, a])
            total = term if total is None else total + term
    return total if total is not None else Tensor(0.0)


def hidden_loss(
    teacher_trace: ForwardTrace, student_trace: ForwardTrace, maps: MappingParams, lm: LayerMap
) -> Tensor:
    """Sum over student layers l of mse(H^T_k, H^S_l N_l)."""
    _check_traces(teacher_trace, student_trace, maps, lm)
    total: Optional[Tensor] = None
    for l, k in lm.pairs():
        teacher_hidden = teacher_trace.hiddens[k - 1].detach()
        projected = student_trace.hiddens[l - 1] @ maps.hidden_maps[l - 1]
        term = mse(teacher_hidden, projected)
        total = term if total is None else total + term
    return total if total is not None else Tensor(0.0)


def latent_loss(
    teacher_trace: ForwardTrace, student_trace: ForwardTrace, maps: MappingParams, lm: LayerMap
) -> Tensor:
    return attention_loss(teacher_trace, student_trace, maps, lm) + hidden_loss(
        teacher_trace, student_trace, maps, lm
    )


def soft_label_loss(z_teacher: Tensor, z_student: Tensor, kind: TaskKind, temperature: float = 1.0) -> Tensor:
    """KL(teacher || student) for classification, mse for regression; the teacher side is detached."""
    if z_teacher.shape != z_student.shape:
        raise ShapeError(f"soft label logits differ in shape: {z_teacher.shape} vs {z_student.shape}")
    target = z_teacher.detach()
    if TaskKind(kind) == TaskKind.REGRESSION:
        return mse(target, z_student)
    if temperature != 1.0:
        return kl_div(target * (1.0 / temperature), z_student * (1.0 / temperature))
    return kl_div(target, z_student)


def hard_label_loss(z_student: Tensor, labels, kind: TaskKind) -> Tensor:
    """Cross entropy against class ids, or mse against scalar regression targets."""
    if labels is None:
        raise LabelError("hard label loss needs labels")
    if TaskKind(kind) == TaskKind.REGRESSION:
        targets = np.asarray(labels, dtype=np.float64).reshape(z_student.shape)
        if not np.isfinite(targets).all():
            raise LabelError("regression targets must be finite")
        return mse(Tensor(targets), z_student)
    return cross_entropy(z_student, labels)


@dataclass
class LossBreakdown:
    total: Tensor
    latent: Tensor
    soft: Optional[Tensor] = None
    hard: Optional[Tensor] = None

    def as_floats(self) -> Dict[str, float]:
        return {
            "total": self.total.item(),
            "latent": self.latent.item(),
            "soft": 0.0 if self.soft is None else self.soft.item(),
            "hard": 0.0 if self.hard is None else self.hard.item(),
        }


@dataclass
class DistillModels:
    """Student being trained plus the frozen teachers available to a stage."""

    student_config: ModelConfig
    student_weights: TransformerWeights
    teachers: Dict[TeacherKind, Tuple[ModelConfig, TransformerWeights]]
    temperature: float = 1.0

    def teacher(self, kind: TeacherKind) -> Tuple[ModelConfig, TransformerWeights]:
        kind = TeacherKind(kind)
        if kind not in self.teachers:
            raise ConfigurationError(f"no {kind.value} teacher available for this stage")
        return self.teachers[kind]


def stage_loss_components(
    batch,
    teacher_kind: TeacherKind,
    data_kind,
    alpha: int,
    models: DistillModels,
    maps: MappingParams,
    rng: Optional[np.random.Generator] = None,
    teacher_trace: Optional[ForwardTrace] = None,
) -> LossBreakdown:
    """
    L = latent + alpha * (soft + hard) over one batch.

    Args:
        batch: data.Batch with token/segment ids, attention mask and optional labels.
        teacher_kind: Which frozen teacher provides the targets.
        data_kind: General or task data; only recorded, the batch already holds it.
        alpha: 0 (latent only) or 1 (latent + soft + hard).
        models: Student and teachers.
        maps: Head and hidden mapping matrices.
        rng: Dropout generator for the student; None disables dropout.
        teacher_trace: Precomputed teacher trace for this batch, if any.

    Raises:
        ConfigurationError: alpha outside {0, 1}.
        LabelError: alpha is 1 and the batch carries no labels.
    """
    if alpha not in (0, 1):
        raise ConfigurationError(f"alpha must be 0 or 1, got {alpha}")
    if alpha == 1 and batch.labels is None:
        raise LabelError(f"alpha=1 needs labeled data, got an unlabeled {data_kind} batch")

    teacher_config, teacher_weights = models.teacher(teacher_kind)
    if teacher_trace is None:
        teacher_trace = encoder_forward(
            teacher_config, teacher_weights, batch.token_ids, batch.segment_ids, batch.attention_mask
        )
    teacher_trace = teacher_trace.detached()
    student_trace = encoder_forward(
        models.student_config, models.student_weights, batch.token_ids, batch.segment_ids, batch.attention_mask, rng
    )
    lm = LayerMap.between(teacher_config, models.student_config)
    latent = latent_loss(teacher_trace, student_trace, maps, lm)
    if alpha == 0:
        return LossBreakdown(total=latent, latent=latent)

    kind = models.student_config.task_kind
    soft = soft_label_loss(teacher_trace.logits, student_trace.logits, kind, models.temperature)
    hard = hard_label_loss(student_trace.logits, batch.labels, kind)
    return LossBreakdown(total=latent + (soft + hard), latent=latent, soft=soft, hard=hard)


def stage_loss(
    batch,
    teacher_kind: TeacherKind,
    data_kind,
    alpha: int,
    models: DistillModels,
    maps: MappingParams,
    rng: Optional[np.random.Generator] = None,
) -> Tensor:
    return stage_loss_components(batch, teacher_kind, data_kind, alpha, models, maps, rng).total
