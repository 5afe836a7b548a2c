"""
Post-layer-norm transformer encoder that exposes its internals.

Every forward pass returns a ForwardTrace carrying the per-layer attention
distributions and hidden states, the quantities that latent distillation
compares between teacher and student. All functions are batch-first: token
ids are (batch, seq) and hidden states (batch, seq, hidden).
"""

import logging
import math
from collections import OrderedDict
from dataclasses import asdict, dataclass, field, fields
from enum import Enum
from typing import Dict, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np

from .errors import ConfigurationError, DataError, ShapeError
from .functional import dropout, gelu, layer_norm, softmax_rows, tanh
from .tensor import Tensor, index_select

logger = logging.getLogger(__name__)


class TaskKind(str, Enum):
    CLASSIFICATION = "classification"
    REGRESSION = "regression"


@dataclass(frozen=True)
class ModelConfig:
    num_layers: int
    hidden_size: int
    ffn_size: int
    num_heads: int
    vocab_size: int
    max_seq_len: int
    type_vocab_size: int = 2
    num_labels: int = 2
    task_kind: TaskKind = TaskKind.CLASSIFICATION
    dropout: float = 0.0
    layer_norm_eps: float = 1e-12
    initializer_range: float = 0.02

    def __post_init__(self):
        object.__setattr__(self, "task_kind", TaskKind(self.task_kind))
        if self.num_layers < 0:
            raise ConfigurationError(f"num_layers must be >= 0, got {self.num_layers}")
        for name in ("hidden_size", "ffn_size", "num_heads", "vocab_size", "max_seq_len", "type_vocab_size", "num_labels"):
            if getattr(self, name) < 1:
                raise ConfigurationError(f"{name} must be >= 1, got {getattr(self, name)}")
        if self.hidden_size % self.num_heads:
            raise ConfigurationError(
                f"hidden_size {self.hidden_size} is not divisible by num_heads {self.num_heads}"
            )
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigurationError(f"dropout must lie in [0, 1), got {self.dropout}")
        if self.layer_norm_eps <= 0:
            raise ConfigurationError(f"layer_norm_eps must be positive, got {self.layer_norm_eps}")

    @property
    def head_size(self) -> int:
        return self.hidden_size // self.num_heads

    @property
    def output_size(self) -> int:
        return 1 if self.task_kind == TaskKind.REGRESSION else self.num_labels

    def to_dict(self) -> Dict:
        data = asdict(self)
        data["task_kind"] = self.task_kind.value
        return data

    @classmethod
    def from_dict(cls, data: Mapping) -> "ModelConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigurationError(f"unknown model config keys: {sorted(unknown)}")
        return cls(**dict(data))


@dataclass
class LayerWeights:
    query_weight: Tensor
    query_bias: Tensor
    key_weight: Tensor
    key_bias: Tensor
    value_weight: Tensor
    value_bias: Tensor
    output_weight: Tensor
    output_bias: Tensor
    attention_ln_gain: Tensor
    attention_ln_bias: Tensor
    ffn_in_weight: Tensor
    ffn_in_bias: Tensor
    ffn_out_weight: Tensor
    ffn_out_bias: Tensor
    ffn_ln_gain: Tensor
    ffn_ln_bias: Tensor


@dataclass
class TransformerWeights:
    word_embeddings: Tensor
    position_embeddings: Tensor
    segment_embeddings: Tensor
    embedding_ln_gain: Tensor
    embedding_ln_bias: Tensor
    layers: List[LayerWeights]
    pooler_weight: Tensor
    pooler_bias: Tensor
    classifier_weight: Tensor
    classifier_bias: Tensor
    mlm_bias: Tensor

    def named_parameters(self) -> List[Tuple[str, Tensor]]:
        """Parameters in manifest order; names match ``parameter_shapes``."""
        named = [(name, getattr(self, attr)) for name, attr in _TOP_LEVEL_BEFORE_LAYERS]
        for index, layer in enumerate(self.layers):
            for f in fields(LayerWeights):
                named.append((f"layers.{index}.{f.name}", getattr(layer, f.name)))
        named.extend((name, getattr(self, attr)) for name, attr in _TOP_LEVEL_AFTER_LAYERS)
        return named

    def state_dict(self) -> "OrderedDict[str, np.ndarray]":
        return OrderedDict((name, tensor.data) for name, tensor in self.named_parameters())


_TOP_LEVEL_BEFORE_LAYERS = (
    ("embeddings.word", "word_embeddings"),
    ("embeddings.position", "position_embeddings"),
    ("embeddings.segment", "segment_embeddings"),
    ("embeddings.ln_gain", "embedding_ln_gain"),
    ("embeddings.ln_bias", "embedding_ln_bias"),
)
_TOP_LEVEL_AFTER_LAYERS = (
    ("pooler.weight", "pooler_weight"),
    ("pooler.bias", "pooler_bias"),
    ("classifier.weight", "classifier_weight"),
    ("classifier.bias", "classifier_bias"),
    ("mlm.bias", "mlm_bias"),
)


def parameter_shapes(config: ModelConfig) -> "OrderedDict[str, Tuple[int, ...]]":
    d, d_ff = config.hidden_size, config.ffn_size
    shapes = OrderedDict(
        [
            ("embeddings.word", (config.vocab_size, d)),
            ("embeddings.position", (config.max_seq_len, d)),
            ("embeddings.segment", (config.type_vocab_size, d)),
            ("embeddings.ln_gain", (d,)),
            ("embeddings.ln_bias", (d,)),
        ]
    )
    layer_shapes = {
        "query_weight": (d, d), "query_bias": (d,),
        "key_weight": (d, d), "key_bias": (d,),
        "value_weight": (d, d), "value_bias": (d,),
        "output_weight": (d, d), "output_bias": (d,),
        "attention_ln_gain": (d,), "attention_ln_bias": (d,),
        "ffn_in_weight": (d, d_ff), "ffn_in_bias": (d_ff,),
        "ffn_out_weight": (d_ff, d), "ffn_out_bias": (d,),
        "ffn_ln_gain": (d,), "ffn_ln_bias": (d,),
    }
    for index in range(config.num_layers):
        for f in fields(LayerWeights):
            shapes[f"layers.{index}.{f.name}"] = layer_shapes[f.name]
    shapes["pooler.weight"] = (d, d)
    shapes["pooler.bias"] = (d,)
    shapes["classifier.weight"] = (d, config.output_size)
    shapes["classifier.bias"] = (config.output_size,)
    shapes["mlm.bias"] = (config.vocab_size,)
    return shapes


def truncated_normal(rng: np.random.Generator, shape: Tuple[int, ...], std: float) -> np.ndarray:
    """Normal(0, std) redrawn until every sample lies within two standard deviations."""
    values = rng.normal(0.0, std, size=shape)
    outside = np.abs(values) > 2 * std
    while outside.any():
        values[outside] = rng.normal(0.0, std, size=int(outside.sum()))
        outside = np.abs(values) > 2 * std
    return values


def weights_from_named(
    config: ModelConfig, tensors: Mapping[str, Union[np.ndarray, Tensor]], requires_grad: bool = True
) -> TransformerWeights:
    """
    Assemble weights from a name -> array mapping, checking every shape against ``config``.

    Extra names (for example mapping matrices stored beside the student) are ignored.

    Raises:
        ShapeError: a tensor is missing or has the wrong shape.
    """
    expected = parameter_shapes(config)
    built: Dict[str, Tensor] = {}
    for name, shape in expected.items():
        if name not in tensors:
            raise ShapeError(f"missing parameter {name} for config with {config.num_layers} layers")
        value = tensors[name]
        array = value.data if isinstance(value, Tensor) else np.asarray(value)
        if tuple(array.shape) != shape:
            raise ShapeError(f"parameter {name} has shape {tuple(array.shape)}, config expects {shape}")
        built[name] = Tensor(array, requires_grad=requires_grad, name=name)

    layers = [
        LayerWeights(**{f.name: built[f"layers.{i}.{f.name}"] for f in fields(LayerWeights)})
        for i in range(config.num_layers)
    ]
    top = {attr: built[name] for name, attr in _TOP_LEVEL_BEFORE_LAYERS + _TOP_LEVEL_AFTER_LAYERS}
    return TransformerWeights(layers=layers, **top)


def create_weights(config: ModelConfig, rng: Union[np.random.Generator, int]) -> TransformerWeights:
    """
    Freshly initialized weights: truncated normal (std = initializer_range) for
    matrices and embeddings, zero biases, unit layer-norm gains.
    """
    rng = np.random.default_rng(rng) if not isinstance(rng, np.random.Generator) else rng
    arrays = OrderedDict()
    for name, shape in parameter_shapes(config).items():
        if name.endswith("ln_gain"):
            arrays[name] = np.ones(shape)
        elif len(shape) == 1:
            arrays[name] = np.zeros(shape)
        else:
            arrays[name] = truncated_normal(rng, shape, config.initializer_range)
    return weights_from_named(config, arrays, requires_grad=True)


def clone_weights(config: ModelConfig, weights: TransformerWeights, requires_grad: bool = True) -> TransformerWeights:
    return weights_from_named(
        config, {name: t.data.copy() for name, t in weights.named_parameters()}, requires_grad=requires_grad
    )


def freeze(weights: TransformerWeights) -> TransformerWeights:
    for _, tensor in weights.named_parameters():
        tensor.requires_grad = False
        tensor.grad = None
    return weights


@dataclass
class ForwardTrace:
    attentions: List[Tensor]
    hiddens: List[Tensor]
    logits: Tensor
    embedding_output: Tensor
    pooled: Optional[Tensor] = None
    attention_mask: Optional[np.ndarray] = field(default=None, repr=False)

    @property
    def num_layers(self) -> int:
        return len(self.hiddens)

    def detached(self) -> "ForwardTrace":
        return ForwardTrace(
            attentions=[a.detach() for a in self.attentions],
            hiddens=[h.detach() for h in self.hiddens],
            logits=self.logits.detach(),
            embedding_output=self.embedding_output.detach(),
            pooled=None if self.pooled is None else self.pooled.detach(),
            attention_mask=self.attention_mask,
        )


def _as_batch(ids, name: str) -> np.ndarray:
    array = np.asarray(ids, dtype=np.int64)
    if array.ndim == 1:
        array = array[None, :]
    if array.ndim != 2:
        raise DataError(f"{name} must be (batch, seq), got shape {array.shape}")
    return array


def embed(
    config: ModelConfig,
    weights: TransformerWeights,
    token_ids,
    segment_ids=None,
    rng: Optional[np.random.Generator] = None,
) -> Tensor:
    """
    H_0: layer norm of token + position + segment embeddings.

    Raises:
        DataError: an id is out of range or the sequence exceeds max_seq_len.
    """
    tokens = _as_batch(token_ids, "token_ids")
    segments = np.zeros_like(tokens) if segment_ids is None else _as_batch(segment_ids, "segment_ids")
    if segments.shape != tokens.shape:
        raise DataError(f"segment_ids shape {segments.shape} does not match token_ids {tokens.shape}")
    seq_len = tokens.shape[1]
    if seq_len > config.max_seq_len:
        raise DataError(f"sequence length {seq_len} exceeds max_seq_len {config.max_seq_len}")
    if tokens.size and (tokens.min() < 0 or tokens.max() >= config.vocab_size):
        raise DataError(f"token id out of range [0, {config.vocab_size})")
    if segments.size and (segments.min() < 0 or segments.max() >= config.type_vocab_size):
        raise DataError(f"segment id out of range [0, {config.type_vocab_size})")

    summed = (
        index_select(weights.word_embeddings, tokens)
        + index_select(weights.position_embeddings, np.arange(seq_len))
        + index_select(weights.segment_embeddings, segments)
    )
    normed = layer_norm(summed, weights.embedding_ln_gain, weights.embedding_ln_bias, config.layer_norm_eps)
    return dropout(normed, config.dropout, rng)


def mha_layer(
    config: ModelConfig,
    layer: LayerWeights,
    hidden: Tensor,
    attention_mask: Optional[np.ndarray] = None,
    rng: Optional[np.random.Generator] = None,
) -> Tuple[Tensor, Tensor]:
    """
    Multi-head self-attention sublayer.

    Returns:
        (A, H') where A is (batch, heads, seq, seq) attention distributions and
        H' = LayerNorm(H + concat_a(A_a V_a) W^O).
    """
    if hidden.ndim != 3 or hidden.shape[-1] != config.hidden_size:
        raise ShapeError(f"mha_layer expects (batch, seq, {config.hidden_size}), got {hidden.shape}")
    batch, seq_len, width = hidden.shape
    heads, head_size = config.num_heads, config.head_size

    def split_heads(x: Tensor) -> Tensor:
        return x.reshape(batch, seq_len, heads, head_size).transpose(0, 2, 1, 3)

    query = split_heads(hidden @ layer.query_weight + layer.query_bias)
    key = split_heads(hidden @ layer.key_weight + layer.key_bias)
    value = split_heads(hidden @ layer.value_weight + layer.value_bias)

    scores = (query @ key.transpose(0, 1, 3, 2)) * (1.0 / math.sqrt(head_size))
    key_mask = None
    if attention_mask is not None:
        key_mask = np.asarray(attention_mask, dtype=bool).reshape(batch, 1, 1, seq_len)
    attention = softmax_rows(scores, key_mask)

    context = (attention @ value).transpose(0, 2, 1, 3).reshape(batch, seq_len, width)
    projected = dropout(context @ layer.output_weight + layer.output_bias, config.dropout, rng)
    out = layer_norm(hidden + projected, layer.attention_ln_gain, layer.attention_ln_bias, config.layer_norm_eps)
    return attention, out


def ffn_layer(
    config: ModelConfig, layer: LayerWeights, hidden: Tensor, rng: Optional[np.random.Generator] = None
) -> Tensor:
    """LayerNorm(H' + W2 gelu(W1 H' + b1) + b2), row by row."""
    inner = gelu(hidden @ layer.ffn_in_weight + layer.ffn_in_bias)
    out = dropout(inner @ layer.ffn_out_weight + layer.ffn_out_bias, config.dropout, rng)
    return layer_norm(hidden + out, layer.ffn_ln_gain, layer.ffn_ln_bias, config.layer_norm_eps)


def encode(
    config: ModelConfig,
    weights: TransformerWeights,
    token_ids,
    segment_ids=None,
    attention_mask: Optional[np.ndarray] = None,
    rng: Optional[np.random.Generator] = None,
) -> Tuple[Tensor, List[Tensor], List[Tensor]]:
    """Embedding output plus per-layer attentions and hidden states, without any head."""
    hidden = embed(config, weights, token_ids, segment_ids, rng)
    embedding_output = hidden
    attentions: List[Tensor] = []
    hiddens: List[Tensor] = []
    for layer in weights.layers:
        attention, hidden = mha_layer(config, layer, hidden, attention_mask, rng)
        hidden = ffn_layer(config, layer, hidden, rng)
        attentions.append(attention)
        hiddens.append(hidden)
    return embedding_output, attentions, hiddens


def encoder_forward(
    config: ModelConfig,
    weights: TransformerWeights,
    token_ids,
    segment_ids=None,
    attention_mask: Optional[np.ndarray] = None,
    rng: Optional[np.random.Generator] = None,
) -> ForwardTrace:
    """Full forward pass: trace of every layer plus task logits from the pooled first position."""
    embedding_output, attentions, hiddens = encode(config, weights, token_ids, segment_ids, attention_mask, rng)
    final = hiddens[-1] if hiddens else embedding_output
    pooled = tanh(final[:, 0, :] @ weights.pooler_weight + weights.pooler_bias)
    logits = pooled @ weights.classifier_weight + weights.classifier_bias
    mask = None if attention_mask is None else np.asarray(attention_mask, dtype=bool)
    return ForwardTrace(attentions, hiddens, logits, embedding_output, pooled, mask)


def mlm_forward(
    config: ModelConfig,
    weights: TransformerWeights,
    token_ids,
    masked_positions: Sequence,
    segment_ids=None,
    attention_mask: Optional[np.ndarray] = None,
    rng: Optional[np.random.Generator] = None,
) -> Tensor:
    """
    Vocabulary logits at masked positions; decoder tied to the word embeddings.

    Args:
        masked_positions: ints when ``token_ids`` is a single sequence, otherwise
            (row, position) pairs.

    Returns:
        (len(masked_positions), vocab_size) logits.
    """
    tokens = _as_batch(token_ids, "token_ids")
    batch, seq_len = tokens.shape
    positions = list(masked_positions)
    if not positions:
        return Tensor(np.zeros((0, config.vocab_size)))
    if np.asarray(token_ids).ndim == 1:
        rows = np.zeros(len(positions), dtype=np.int64)
        cols = np.asarray(positions, dtype=np.int64)
    else:
        pairs = np.asarray(positions, dtype=np.int64).reshape(-1, 2)
        rows, cols = pairs[:, 0], pairs[:, 1]
    if rows.min() < 0 or rows.max() >= batch or cols.min() < 0 or cols.max() >= seq_len:
        raise DataError(f"masked position out of range for batch {batch} x seq {seq_len}")

    embedding_output, _, hiddens = encode(config, weights, tokens, segment_ids, attention_mask, rng)
    final = hiddens[-1] if hiddens else embedding_output
    selected = final[rows, cols]
    return selected @ weights.word_embeddings.T + weights.mlm_bias


def param_count(config: ModelConfig) -> int:
    """
    Embeddings (token, position, segment, layer norm), every encoder layer and
    the pooler. Task head and MLM bias are not counted.
    """
    d, d_ff = config.hidden_size, config.ffn_size
    embeddings = (config.vocab_size + config.max_seq_len + config.type_vocab_size) * d + 2 * d
    per_layer = 4 * (d * d + d) + (d * d_ff + d_ff) + (d_ff * d + d) + 4 * d
    pooler = d * d + d
    return embeddings + config.num_layers * per_layer + pooler


def flop_breakdown(config: ModelConfig, seq_len: int) -> Dict[str, int]:
    """Multiply-accumulate counts of one forward pass over all layers, per component."""
    if not 1 <= seq_len <= config.max_seq_len:
        raise DataError(f"seq_len must lie in [1, {config.max_seq_len}], got {seq_len}")
    d, d_ff, s = config.hidden_size, config.ffn_size, seq_len
    return {
        "attention_projections": config.num_layers * 4 * s * d * d,
        "attention_scores": config.num_layers * 2 * s * s * d,
        "ffn": config.num_layers * 2 * s * d * d_ff,
    }


def flop_estimate(config: ModelConfig, seq_len: int) -> int:
    return sum(flop_breakdown(config, seq_len).values())
