"""
Tokenization, general-corpus handling, consecutive-pair sampling, MLM masking,
batch construction and the synthetic task family used for desk-scale runs.

File formats (UTF-8, symbols separated by single spaces):
- corpus: one sentence per line, a blank line between documents
- task: one example per line, tab-separated ``text_a[\\ttext_b]\\tlabel``
"""

import logging
import string
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterator, List, Optional, Sequence, Tuple, Union

import numpy as np

from .errors import DataError, LabelError
from .transformer import TaskKind

logger = logging.getLogger(__name__)

SPECIAL_TOKENS = ("[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]")
Sentence = Tuple[int, ...]
SeedLike = Union[int, np.random.Generator]


def _rng(seed: SeedLike) -> np.random.Generator:
    return seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)


@dataclass(frozen=True)
class Vocab:
    """Dense symbol table; the five reserved tokens always take ids 0-4."""

    symbols: Tuple[str, ...]
    _index: Dict[str, int] = field(default_factory=dict, init=False, repr=False, compare=False)

    def __post_init__(self):
        if tuple(self.symbols[: len(SPECIAL_TOKENS)]) != SPECIAL_TOKENS:
            raise DataError(f"vocab must start with the reserved tokens {SPECIAL_TOKENS}")
        if len(set(self.symbols)) != len(self.symbols):
            raise DataError("vocab symbols must be distinct")
        object.__setattr__(self, "_index", {s: i for i, s in enumerate(self.symbols)})

    @classmethod
    def build(cls, content_symbols: Sequence[str]) -> "Vocab":
        return cls(SPECIAL_TOKENS + tuple(content_symbols))

    @property
    def size(self) -> int:
        return len(self.symbols)

    @property
    def pad_id(self) -> int:
        return 0

    @property
    def unk_id(self) -> int:
        return 1

    @property
    def cls_id(self) -> int:
        return 2

    @property
    def sep_id(self) -> int:
        return 3

    @property
    def mask_id(self) -> int:
        return 4

    @property
    def special_ids(self) -> frozenset:
        return frozenset(range(len(SPECIAL_TOKENS)))

    @property
    def content_ids(self) -> np.ndarray:
        return np.arange(len(SPECIAL_TOKENS), self.size)

    def id_of(self, symbol: str) -> int:
        return self._index.get(symbol, self.unk_id)

    def symbol(self, token_id: int) -> str:
        return self.symbols[token_id]


def tokenize(text: str, vocab: Vocab) -> List[int]:
    """Whitespace-separated symbols to ids; unknown symbols map to [UNK]."""
    return [vocab.id_of(token) for token in text.split()]


def detokenize(ids: Sequence[int], vocab: Vocab) -> str:
    return " ".join(vocab.symbol(int(i)) for i in ids)


@dataclass(frozen=True)
class GeneralCorpus:
    documents: Tuple[Tuple[Sentence, ...], ...]

    def __post_init__(self):
        docs = tuple(tuple(tuple(int(t) for t in sentence) for sentence in doc) for doc in self.documents)
        for d, doc in enumerate(docs):
            for s, sentence in enumerate(doc):
                if not sentence:
                    raise DataError(f"document {d} sentence {s} is empty")
        object.__setattr__(self, "documents", docs)

    def sentences(self) -> List[Sentence]:
        return [sentence for doc in self.documents for sentence in doc]


@dataclass(frozen=True)
class TaskExample:
    text_a: Sentence
    text_b: Optional[Sentence] = None
    label: Optional[Union[int, float]] = None


@dataclass(frozen=True)
class TaskDataset:
    kind: TaskKind
    num_labels: int
    splits: Dict[str, Tuple[TaskExample, ...]]

    def __post_init__(self):
        object.__setattr__(self, "kind", TaskKind(self.kind))
        for name, examples in self.splits.items():
            for example in examples:
                _validate_label(example.label, self.kind, self.num_labels, name)

    @property
    def pair_mode(self) -> bool:
        return any(ex.text_b is not None for examples in self.splits.values() for ex in examples)

    def split(self, name: str) -> Tuple[TaskExample, ...]:
        if name not in self.splits:
            raise DataError(f"task dataset has no {name!r} split (available: {sorted(self.splits)})")
        return self.splits[name]

    def with_split(self, name: str, examples: Sequence[TaskExample]) -> "TaskDataset":
        splits = dict(self.splits)
        splits[name] = tuple(examples)
        return TaskDataset(self.kind, self.num_labels, splits)


def _validate_label(label, kind: TaskKind, num_labels: int, split: str):
    if label is None:
        return
    if kind == TaskKind.CLASSIFICATION:
        if int(label) != label or not 0 <= int(label) < num_labels:
            raise LabelError(f"{split} label {label!r} is not a class id in [0, {num_labels})")
    elif not np.isfinite(float(label)):
        raise LabelError(f"{split} regression target {label!r} is not finite")


def sample_consecutive_pairs(corpus: GeneralCorpus, n: int, seed: SeedLike) -> List[Tuple[Sentence, Sentence]]:
    """
    Draw ``n`` pairs of adjacent sentences, uniformly over eligible positions,
    with replacement. Pairs never span two documents.

    Raises:
        DataError: no document has two sentences.
    """
    eligible = [(d, i) for d, doc in enumerate(corpus.documents) for i in range(len(doc) - 1)]
    if not eligible:
        raise DataError("no document has two consecutive sentences to pair")
    picks = _rng(seed).integers(0, len(eligible), size=n)
    pairs = []
    for pick in picks:
        d, i = eligible[int(pick)]
        doc = corpus.documents[d]
        pairs.append((doc[i], doc[i + 1]))
    return pairs


def mask_tokens(
    sequence: Sequence[int], vocab: Vocab, rate: float, seed: SeedLike
) -> Tuple[List[int], List[int], List[int]]:
    """
    BERT-style corruption: each non-special position is selected with
    probability ``rate``; selected positions become [MASK] 80% of the time, a
    random content symbol 10%, and stay unchanged 10%.

    Returns:
        (masked sequence, selected positions, original ids at those positions)
    """
    if not 0.0 < rate < 1.0:
        raise DataError(f"mask rate must lie in (0, 1), got {rate}")
    rng = _rng(seed)
    ids = [int(t) for t in sequence]
    special = vocab.special_ids
    content = vocab.content_ids
    selected = rng.random(len(ids)) < rate
    action = rng.random(len(ids))
    replacement = rng.integers(0, len(content), size=len(ids))

    masked = list(ids)
    positions: List[int] = []
    originals: List[int] = []
    for i, token in enumerate(ids):
        if token in special or not selected[i]:
            continue
        positions.append(i)
        originals.append(token)
        if action[i] < 0.8:
            masked[i] = vocab.mask_id
        elif action[i] < 0.9:
            masked[i] = int(content[replacement[i]])
    return masked, positions, originals


@dataclass
class Batch:
    token_ids: np.ndarray
    segment_ids: np.ndarray
    attention_mask: np.ndarray
    labels: Optional[np.ndarray] = None

    @property
    def size(self) -> int:
        return int(self.token_ids.shape[0])


BatchItem = Union[TaskExample, Tuple[Sequence[int], Sequence[int]], Sequence[int]]


def _normalize_item(item: BatchItem) -> TaskExample:
    if isinstance(item, TaskExample):
        return item
    item = tuple(item)
    if len(item) == 2 and not isinstance(item[0], (int, np.integer)):
        return TaskExample(tuple(item[0]), tuple(item[1]))
    return TaskExample(tuple(int(t) for t in item))


def frame(example: TaskExample, vocab: Vocab, max_len: int, pair_mode: bool) -> Tuple[List[int], List[int]]:
    """
    ``[CLS] A [SEP]`` or ``[CLS] A [SEP] B [SEP]`` with segment ids; text B is
    truncated first, then text A, until the framed sequence fits ``max_len``.
    """
    a = list(example.text_a)
    b = list(example.text_b) if example.text_b is not None else None
    if pair_mode and b is None:
        raise DataError("pair-mode batch got an item without a second text")
    if not pair_mode and b is not None:
        raise DataError("single-text batch got a sentence pair; build it with pair_mode=True")
    budget = max_len - (3 if pair_mode else 2)
    if budget < 1:
        raise DataError(f"max_len {max_len} leaves no room for text after framing")
    excess = len(a) + (len(b) if b else 0) - budget
    if excess > 0:
        cut_b = min(excess, len(b)) if b else 0
        if b:
            b = b[: len(b) - cut_b]
        a = a[: len(a) - (excess - cut_b)]

    tokens = [vocab.cls_id] + a + [vocab.sep_id]
    segments = [0] * len(tokens)
    if pair_mode:
        tokens += b + [vocab.sep_id]
        segments += [1] * (len(b) + 1)
    return tokens, segments


def build_batch(items: Sequence[BatchItem], vocab: Vocab, max_len: int, pair_mode: bool) -> Batch:
    """
    Frame, truncate and right-pad ``items`` to the longest framed item.

    Labels are attached only when every item carries one.
    """
    if not items:
        raise DataError("cannot build a batch from zero items")
    examples = [_normalize_item(item) for item in items]
    framed = [frame(ex, vocab, max_len, pair_mode) for ex in examples]
    width = max(len(tokens) for tokens, _ in framed)

    token_ids = np.full((len(framed), width), vocab.pad_id, dtype=np.int64)
    segment_ids = np.zeros((len(framed), width), dtype=np.int64)
    attention_mask = np.zeros((len(framed), width), dtype=bool)
    for row, (tokens, segments) in enumerate(framed):
        token_ids[row, : len(tokens)] = tokens
        segment_ids[row, : len(segments)] = segments
        attention_mask[row, : len(tokens)] = True

    labels = None
    if all(ex.label is not None for ex in examples):
        labels = np.asarray([ex.label for ex in examples])
    return Batch(token_ids, segment_ids, attention_mask, labels)


def mask_batch(
    batch: Batch, vocab: Vocab, rate: float, seed: SeedLike
) -> Tuple[Batch, List[Tuple[int, int]], np.ndarray]:
    """
    Apply ``mask_tokens`` row by row to a framed batch.

    At least one position is always selected so every batch carries a target.

    Returns:
        (masked batch, (row, position) pairs, original ids at those pairs)
    """
    rng = _rng(seed)
    token_ids = batch.token_ids.copy()
    positions: List[Tuple[int, int]] = []
    originals: List[int] = []
    for row in range(batch.size):
        length = int(batch.attention_mask[row].sum())
        masked, cols, orig = mask_tokens(token_ids[row, :length], vocab, rate, rng)
        token_ids[row, :length] = masked
        positions.extend((row, col) for col in cols)
        originals.extend(orig)
    if not positions:
        candidates = [
            (r, c) for r in range(batch.size) for c in range(batch.token_ids.shape[1])
            if batch.attention_mask[r, c] and int(batch.token_ids[r, c]) not in vocab.special_ids
        ]
        if not candidates:
            raise DataError("batch holds no maskable tokens")
        r, c = candidates[int(rng.integers(0, len(candidates)))]
        originals.append(int(token_ids[r, c]))
        token_ids[r, c] = vocab.mask_id
        positions.append((r, c))
    masked_batch = Batch(token_ids, batch.segment_ids, batch.attention_mask, batch.labels)
    return masked_batch, positions, np.asarray(originals, dtype=np.int64)


def iterate_batches(
    items: Sequence[BatchItem],
    vocab: Vocab,
    max_len: int,
    pair_mode: bool,
    batch_size: int,
    rng: np.random.Generator,
) -> Iterator[Batch]:
    """Endless shuffled epochs over ``items``."""
    if not items:
        raise DataError("cannot iterate over an empty item list")
    while True:
        order = rng.permutation(len(items))
        for start in range(0, len(order), batch_size):
            chunk = [items[i] for i in order[start : start + batch_size]]
            yield build_batch(chunk, vocab, max_len, pair_mode)


def general_items(corpus: GeneralCorpus, n: int, pair_mode: bool, seed: SeedLike) -> List[BatchItem]:
    """General-data inputs: consecutive pairs for pair tasks, single sentences otherwise."""
    rng = _rng(seed)
    if pair_mode:
        return list(sample_consecutive_pairs(corpus, n, rng))
    sentences = corpus.sentences()
    if not sentences:
        raise DataError("general corpus is empty")
    return [sentences[int(i)] for i in rng.integers(0, len(sentences), size=n)]


def subsample_size(n: int, fraction: float) -> int:
    """round(n * fraction), halves rounding up."""
    return int(np.floor(n * fraction + 0.5))


def subsample_task(dataset: TaskDataset, fraction: float, seed: SeedLike) -> TaskDataset:
    """
    Stratified subsample of the train split; dev and ood stay untouched.

    The total is ``subsample_size(len(train), fraction)``, allocated across labels
    by largest remainder so every class keeps its proportion within one example.

    Raises:
        DataError: fraction outside (0, 1], or a class would vanish.
    """
    if not 0.0 < fraction <= 1.0:
        raise DataError(f"fraction must lie in (0, 1], got {fraction}")
    train = dataset.split("train")
    if fraction == 1.0:
        return dataset
    rng = _rng(seed)
    total = subsample_size(len(train), fraction)

    if dataset.kind == TaskKind.REGRESSION:
        if total < 1:
            raise DataError(f"fraction {fraction} of {len(train)} examples leaves nothing")
        chosen = np.sort(rng.choice(len(train), size=total, replace=False))
        return dataset.with_split("train", [train[i] for i in chosen])

    groups: Dict[int, List[int]] = {}
    for index, example in enumerate(train):
        groups.setdefault(int(example.label), []).append(index)
    labels = sorted(groups)
    exact = {label: len(groups[label]) * total / len(train) for label in labels}
    counts = {label: int(np.floor(exact[label])) for label in labels}
    leftover = total - sum(counts.values())
    for label in sorted(labels, key=lambda lab: (-(exact[lab] - counts[lab]), lab))[:leftover]:
        counts[label] += 1
    vanished = [label for label in labels if counts[label] == 0]
    if vanished:
        raise DataError(f"fraction {fraction} leaves no examples of class(es) {vanished}")

    chosen: List[int] = []
    for label in labels:
        chosen.extend(rng.choice(groups[label], size=counts[label], replace=False).tolist())
    logger.info(f"📉 Subsampled train split to {len(chosen)}/{len(train)} examples ({fraction:.0%})")
    return dataset.with_split("train", [train[i] for i in sorted(chosen)])


# ─────────────────────────────────────────────
# SYNTHETIC TASK FAMILY
# ─────────────────────────────────────────────


@dataclass(frozen=True)
class SyntheticTaskSpec:
    """
    Markov-chain "grammar" over content symbols plus a majority labeling rule.

    The first ``marked_symbols`` content symbols form class A, the next
    ``marked_symbols`` class B, the rest are neutral. A sequence is labeled 1
    when it holds more class-A than class-B symbols. The ood split shifts the
    length range by ``ood_length_shift`` and multiplies the transition weight
    of neutral symbols by ``1 + ood_neutral_boost``.
    """

    seed: int = 0
    num_symbols: int = 24
    marked_symbols: int = 6
    num_documents: int = 300
    sentences_per_document: Tuple[int, int] = (3, 8)
    sentence_length: Tuple[int, int] = (6, 20)
    task_length: Tuple[int, int] = (8, 16)
    train_size: int = 2000
    dev_size: int = 400
    ood_size: int = 400
    ood_length_shift: int = 6
    ood_neutral_boost: float = 2.0
    min_margin: int = 2
    pair_task: bool = False
    transition_concentration: float = 0.3

    def __post_init__(self):
        for name in ("sentences_per_document", "sentence_length", "task_length"):
            object.__setattr__(self, name, tuple(getattr(self, name)))
        problems = []
        if self.marked_symbols < 1 or self.num_symbols < 2 * self.marked_symbols + 1:
            problems.append("need at least one neutral symbol beside the two marked classes")
        for name in ("sentences_per_document", "sentence_length", "task_length"):
            low, high = getattr(self, name)
            if low < 1 or high < low:
                problems.append(f"{name} must be a range with 1 <= low <= high, got {(low, high)}")
        if self.task_length[1] < self.min_margin or self.min_margin < 1:
            problems.append(f"min_margin {self.min_margin} cannot be met by task_length {self.task_length}")
        for name in ("num_documents", "train_size", "dev_size", "ood_size"):
            if getattr(self, name) < 1:
                problems.append(f"{name} must be >= 1")
        if self.task_length[0] + self.ood_length_shift < 1:
            problems.append("ood_length_shift makes ood sequences empty")
        if self.transition_concentration <= 0 or self.ood_neutral_boost < 0:
            problems.append("transition_concentration must be > 0 and ood_neutral_boost >= 0")
        if problems:
            raise DataError("degenerate synthetic spec: " + "; ".join(problems))

    @property
    def longest_framed_example(self) -> int:
        """Token count of the longest task example after CLS/SEP framing."""
        longest = max(self.task_length[1], self.task_length[1] + self.ood_length_shift)
        return 2 * longest + 3 if self.pair_task else longest + 2


def synthetic_vocab(spec: SyntheticTaskSpec) -> Vocab:
    letters = string.ascii_lowercase
    if spec.num_symbols <= len(letters):
        return Vocab.build(letters[: spec.num_symbols])
    return Vocab.build([f"t{i}" for i in range(spec.num_symbols)])


def majority_label(sequence: Sequence[int], spec: SyntheticTaskSpec) -> int:
    """1 when class-A symbols outnumber class-B symbols, else 0 (ties included)."""
    first = len(SPECIAL_TOKENS)
    offsets = np.asarray(sequence) - first
    class_a = int(np.sum((offsets >= 0) & (offsets < spec.marked_symbols)))
    class_b = int(np.sum((offsets >= spec.marked_symbols) & (offsets < 2 * spec.marked_symbols)))
    return int(class_a > class_b)


def _margin(sequence: np.ndarray, spec: SyntheticTaskSpec) -> int:
    offsets = sequence - len(SPECIAL_TOKENS)
    class_a = np.sum((offsets >= 0) & (offsets < spec.marked_symbols))
    class_b = np.sum((offsets >= spec.marked_symbols) & (offsets < 2 * spec.marked_symbols))
    return int(abs(class_a - class_b))


class _MarkovGrammar:
    def __init__(self, spec: SyntheticTaskSpec, rng: np.random.Generator, neutral_boost: float = 0.0):
        n = spec.num_symbols
        self.spec = spec
        self.start = rng.dirichlet(np.ones(n))
        self.transitions = rng.dirichlet(np.full(n, spec.transition_concentration), size=n)
        if neutral_boost:
            weight = np.ones(n)
            weight[2 * spec.marked_symbols :] += neutral_boost
            self.start = self.start * weight / (self.start * weight).sum()
            boosted = self.transitions * weight
            self.transitions = boosted / boosted.sum(axis=1, keepdims=True)

    def boosted(self, neutral_boost: float) -> "_MarkovGrammar":
        clone = _MarkovGrammar.__new__(_MarkovGrammar)
        clone.spec = self.spec
        weight = np.ones(self.spec.num_symbols)
        weight[2 * self.spec.marked_symbols :] += neutral_boost
        clone.start = self.start * weight / (self.start * weight).sum()
        boosted = self.transitions * weight
        clone.transitions = boosted / boosted.sum(axis=1, keepdims=True)
        return clone

    def sample(self, rng: np.random.Generator, length: int) -> np.ndarray:
        out = np.empty(length, dtype=np.int64)
        state = rng.choice(self.spec.num_symbols, p=self.start)
        out[0] = state
        for i in range(1, length):
            state = rng.choice(self.spec.num_symbols, p=self.transitions[state])
            out[i] = state
        return out + len(SPECIAL_TOKENS)


def _swap_classes(sequence: np.ndarray, spec: SyntheticTaskSpec) -> np.ndarray:
    offsets = sequence - len(SPECIAL_TOKENS)
    m = spec.marked_symbols
    swapped = offsets.copy()
    swapped[(offsets >= 0) & (offsets < m)] += m
    swapped[(offsets >= m) & (offsets < 2 * m)] -= m
    return swapped + len(SPECIAL_TOKENS)


def _labeled_sequence(
    grammar: _MarkovGrammar, rng: np.random.Generator, lengths: Tuple[int, int], target: int, attempts: int = 1000
) -> Sentence:
    spec = grammar.spec
    for _ in range(attempts):
        sequence = grammar.sample(rng, int(rng.integers(lengths[0], lengths[1] + 1)))
        if _margin(sequence, spec) < spec.min_margin:
            continue
        if majority_label(sequence, spec) != target:
            sequence = _swap_classes(sequence, spec)
        return tuple(int(t) for t in sequence)
    raise DataError(f"could not draw a sequence with margin >= {spec.min_margin} in {attempts} attempts")


def _task_split(
    grammar: _MarkovGrammar,
    rng: np.random.Generator,
    size: int,
    lengths: Tuple[int, int],
    seen: set,
) -> Tuple[TaskExample, ...]:
    spec = grammar.spec
    examples = []
    targets = rng.permutation(np.arange(size) % 2)
    for target in targets:
        for _ in range(100):
            if spec.pair_task:
                class_a = int(rng.integers(0, 2))
                class_b = class_a if target == 1 else 1 - class_a
                example = TaskExample(
                    _labeled_sequence(grammar, rng, lengths, class_a),
                    _labeled_sequence(grammar, rng, lengths, class_b),
                    int(target),
                )
            else:
                example = TaskExample(_labeled_sequence(grammar, rng, lengths, int(target)), None, int(target))
            key = (example.text_a, example.text_b)
            if key not in seen:
                seen.add(key)
                examples.append(example)
                break
        else:
            raise DataError("synthetic grammar keeps producing duplicate examples; widen task_length")
    return tuple(examples)


def generate_synthetic(spec: SyntheticTaskSpec) -> Tuple[GeneralCorpus, TaskDataset]:
    """
    General corpus and labeled task splits (train/dev/ood) over one shared vocabulary.

    Byte-reproducible for a fixed ``spec.seed``; splits never share an example.
    """
    rng = np.random.default_rng(spec.seed)
    grammar = _MarkovGrammar(spec, rng)
    shifted = grammar.boosted(spec.ood_neutral_boost)

    documents = []
    for _ in range(spec.num_documents):
        count = int(rng.integers(spec.sentences_per_document[0], spec.sentences_per_document[1] + 1))
        documents.append(
            tuple(
                tuple(int(t) for t in grammar.sample(rng, int(rng.integers(spec.sentence_length[0], spec.sentence_length[1] + 1))))
                for _ in range(count)
            )
        )
    corpus = GeneralCorpus(tuple(documents))

    seen: set = set()
    ood_lengths = (spec.task_length[0] + spec.ood_length_shift, spec.task_length[1] + spec.ood_length_shift)
    splits = {
        "train": _task_split(grammar, rng, spec.train_size, spec.task_length, seen),
        "dev": _task_split(grammar, rng, spec.dev_size, spec.task_length, seen),
        "ood": _task_split(shifted, rng, spec.ood_size, ood_lengths, seen),
    }
    logger.info(
        f"🧪 Generated synthetic data: {len(documents)} documents, "
        f"{', '.join(f'{k}={len(v)}' for k, v in splits.items())}"
    )
    return corpus, TaskDataset(TaskKind.CLASSIFICATION, 2, splits)


# ─────────────────────────────────────────────
# FILE FORMATS
# ─────────────────────────────────────────────


def write_corpus(path: Union[str, Path], corpus: GeneralCorpus, vocab: Vocab):
    blocks = ["\n".join(detokenize(sentence, vocab) for sentence in doc) for doc in corpus.documents]
    Path(path).write_text("\n\n".join(blocks) + "\n", encoding="utf-8")


def read_corpus(path: Union[str, Path], vocab: Vocab) -> GeneralCorpus:
    documents: List[Tuple[Sentence, ...]] = []
    current: List[Sentence] = []
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if line.strip():
            current.append(tuple(tokenize(line, vocab)))
        elif current:
            documents.append(tuple(current))
            current = []
    if current:
        documents.append(tuple(current))
    if not documents:
        raise DataError(f"corpus file {path} holds no sentences")
    return GeneralCorpus(tuple(documents))


def write_vocab(path: Union[str, Path], vocab: Vocab):
    """Content symbols, one per line; the reserved tokens are implicit."""
    content = vocab.symbols[len(SPECIAL_TOKENS):]
    Path(path).write_text("\n".join(content) + "\n", encoding="utf-8")


def read_vocab(path: Union[str, Path]) -> Vocab:
    symbols = [line.strip() for line in Path(path).read_text(encoding="utf-8").splitlines() if line.strip()]
    return Vocab.build([s for s in symbols if s not in SPECIAL_TOKENS])


def write_task_file(path: Union[str, Path], examples: Sequence[TaskExample], vocab: Vocab):
    lines = []
    for ex in examples:
        fields = [detokenize(ex.text_a, vocab)]
        if ex.text_b is not None:
            fields.append(detokenize(ex.text_b, vocab))
        fields.append(str(ex.label))
        lines.append("\t".join(fields))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_task_file(path: Union[str, Path], vocab: Vocab, kind: TaskKind) -> Tuple[TaskExample, ...]:
    kind = TaskKind(kind)
    examples = []
    for number, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), start=1):
        if not line.strip():
            continue
        fields = line.split("\t")
        if len(fields) not in (2, 3):
            raise DataError(f"{path}:{number}: expected 2 or 3 tab-separated fields, got {len(fields)}")
        try:
            label = int(fields[-1]) if kind == TaskKind.CLASSIFICATION else float(fields[-1])
        except ValueError as e:
            raise LabelError(f"{path}:{number}: bad label {fields[-1]!r}") from e
        text_b = tuple(tokenize(fields[1], vocab)) if len(fields) == 3 else None
        examples.append(TaskExample(tuple(tokenize(fields[0], vocab)), text_b, label))
    return tuple(examples)
