from collections import Counter
from dataclasses import replace

import numpy as np
import pytest

from progressive_distill.data import (
    GeneralCorpus,
    SyntheticTaskSpec,
    TaskDataset,
    TaskExample,
    Vocab,
    build_batch,
    detokenize,
    frame,
    generate_synthetic,
    iterate_batches,
    majority_label,
    mask_batch,
    mask_tokens,
    read_corpus,
    read_task_file,
    read_vocab,
    sample_consecutive_pairs,
    subsample_size,
    subsample_task,
    synthetic_vocab,
    tokenize,
    write_corpus,
    write_task_file,
    write_vocab,
)
from progressive_distill.errors import DataError, LabelError
from progressive_distill.transformer import TaskKind


@pytest.fixture
def vocab():
    return Vocab.build(list("abcdefgh"))


def _labeled(counts):
    examples = []
    for label, n in counts.items():
        examples.extend(TaskExample((5 + label, 6, 7 + i % 3), None, label) for i in range(n))
    return TaskDataset(TaskKind.CLASSIFICATION, 2, {"train": tuple(examples), "dev": tuple(examples[:4])})


class TestVocab:
    def test_reserved_ids(self, vocab):
        assert [vocab.pad_id, vocab.unk_id, vocab.cls_id, vocab.sep_id, vocab.mask_id] == [0, 1, 2, 3, 4]
        assert vocab.size == 13
        assert list(vocab.content_ids) == list(range(5, 13))

    def test_tokenize(self, vocab):
        assert tokenize("", vocab) == []
        assert tokenize("a c zz", vocab) == [5, 7, vocab.unk_id]
        assert detokenize([5, 7], vocab) == "a c"

    def test_must_start_with_reserved_tokens(self):
        with pytest.raises(DataError):
            Vocab(("a", "b"))

    def test_file_round_trip(self, vocab, tmp_path):
        write_vocab(tmp_path / "vocab.txt", vocab)
        assert read_vocab(tmp_path / "vocab.txt") == vocab


class TestConsecutivePairs:
    def test_pairs_stay_inside_documents(self):
        corpus = GeneralCorpus((((5,), (6,), (7,)), ((8,), (9,))))
        pairs = sample_consecutive_pairs(corpus, 500, seed=0)
        assert set(pairs) == {((5,), (6,)), ((6,), (7,)), ((8,), (9,))}

    def test_uniform_over_eligible_positions(self):
        corpus = GeneralCorpus((((5,), (6,), (7,)), ((8,), (9,))))
        counts = Counter(sample_consecutive_pairs(corpus, 10_000, seed=1))
        expected = 10_000 / 3
        sigma = np.sqrt(10_000 * (1 / 3) * (2 / 3))
        assert all(abs(c - expected) < 3 * sigma for c in counts.values())

    def test_needs_two_sentence_document(self):
        with pytest.raises(DataError):
            sample_consecutive_pairs(GeneralCorpus((((5,),), ((6,),))), 3, seed=0)


class TestMasking:
    def test_specials_never_selected(self, vocab):
        sequence = [vocab.cls_id] + [5] * 50 + [vocab.sep_id]
        _, positions, _ = mask_tokens(sequence, vocab, 0.9, seed=0)
        assert 0 not in positions and len(sequence) - 1 not in positions

    def test_selection_rate_and_split(self, vocab):
        n = 100_000
        sequence = np.random.default_rng(0).integers(5, 13, size=n)
        masked, positions, originals = mask_tokens(sequence, vocab, 0.15, seed=3)
        sigma = np.sqrt(n * 0.15 * 0.85)
        assert abs(len(positions) - 0.15 * n) < 3 * sigma
        assert originals == [int(sequence[p]) for p in positions]
        selected = len(positions)
        as_mask = sum(masked[p] == vocab.mask_id for p in positions)
        assert abs(as_mask - 0.8 * selected) < 3 * np.sqrt(selected * 0.8 * 0.2)

    def test_reproducible(self, vocab):
        sequence = list(range(5, 13)) * 4
        assert mask_tokens(sequence, vocab, 0.3, seed=7) == mask_tokens(sequence, vocab, 0.3, seed=7)

    def test_rate_bounds(self, vocab):
        with pytest.raises(DataError):
            mask_tokens([5, 6], vocab, 0.0, seed=0)

    def test_mask_batch_always_has_a_target(self, vocab):
        batch = build_batch([(5, 6)], vocab, 8, pair_mode=False)
        masked, positions, originals = mask_batch(batch, vocab, 0.01, seed=0)
        assert len(positions) >= 1
        assert all(col in (1, 2) for _, col in positions)
        assert set(originals.tolist()) <= {5, 6}
        assert batch.token_ids[0, 1] == 5


class TestBatching:
    def test_single_framing(self, vocab):
        batch = build_batch([(5, 6)], vocab, 8, pair_mode=False)
        assert batch.token_ids.tolist() == [[2, 5, 6, 3]]
        assert batch.segment_ids.tolist() == [[0, 0, 0, 0]]
        assert batch.labels is None

    def test_pair_framing_and_padding(self, vocab):
        batch = build_batch([((5,), (6, 7)), ((8, 9, 10), (11,))], vocab, 16, pair_mode=True)
        assert batch.token_ids[0].tolist() == [2, 5, 3, 6, 7, 3, 0]
        assert batch.segment_ids[0].tolist() == [0, 0, 0, 1, 1, 1, 0]
        assert batch.attention_mask[0].tolist() == [True] * 6 + [False]

    def test_truncates_second_text_first(self, vocab):
        tokens, segments = frame(TaskExample((5, 6, 7), (8, 9, 10)), vocab, 7, pair_mode=True)
        assert tokens == [2, 5, 6, 7, 3, 8, 3]
        tokens, _ = frame(TaskExample((5, 6, 7, 8, 9)), vocab, 4, pair_mode=False)
        assert tokens == [2, 5, 6, 3]

    def test_lossless_within_max_len(self, vocab):
        items = [TaskExample((5, 6, 7), None, 1), TaskExample((8,), None, 0)]
        batch = build_batch(items, vocab, 8, pair_mode=False)
        for row, item in zip(batch.token_ids, items):
            content = [t for t in row.tolist() if t not in vocab.special_ids]
            assert tuple(content) == item.text_a
        assert batch.labels.tolist() == [1, 0]

    def test_mode_mismatch(self, vocab):
        with pytest.raises(DataError):
            build_batch([TaskExample((5,), (6,))], vocab, 8, pair_mode=False)
        with pytest.raises(DataError):
            build_batch([TaskExample((5,))], vocab, 8, pair_mode=True)
        with pytest.raises(DataError):
            build_batch([], vocab, 8, pair_mode=False)

    def test_iterate_batches_covers_epoch(self, vocab):
        items = [TaskExample((5 + i % 8,), None, i % 2) for i in range(10)]
        batches = iterate_batches(items, vocab, 4, False, 4, np.random.default_rng(0))
        sizes = [next(batches).size for _ in range(3)]
        assert sizes == [4, 4, 2]


class TestSubsample:
    def test_size_rounds_half_up(self):
        assert subsample_size(5, 0.5) == 3
        assert subsample_size(392_702, 0.01) == 3927

    def test_full_fraction_is_identity(self):
        dataset = _labeled({0: 10, 1: 10})
        assert subsample_task(dataset, 1.0, seed=0) is dataset

    def test_stratified(self):
        dataset = _labeled({0: 70, 1: 30})
        sub = subsample_task(dataset, 0.1, seed=0)
        counts = Counter(ex.label for ex in sub.split("train"))
        assert counts == {0: 7, 1: 3}
        assert sub.split("dev") == dataset.split("dev")

    def test_half_of_balanced(self):
        sub = subsample_task(_labeled({0: 500, 1: 500}), 0.5, seed=1)
        assert Counter(ex.label for ex in sub.split("train")) == {0: 250, 1: 250}

    def test_vanishing_class(self):
        with pytest.raises(DataError, match="class"):
            subsample_task(_labeled({0: 95, 1: 5}), 0.1, seed=0)

    def test_fraction_bounds(self):
        with pytest.raises(DataError):
            subsample_task(_labeled({0: 5, 1: 5}), 0.0, seed=0)


class TestSynthetic:
    def test_majority_rule(self, tiny_spec):
        # content offsets 0-1 are class A, 2-3 class B
        assert majority_label([5, 5, 7], tiny_spec) == 1
        assert majority_label([5, 7, 8], tiny_spec) == 0
        assert majority_label([5, 7, 11], tiny_spec) == 0

    def test_reproducible(self, tiny_spec):
        assert generate_synthetic(tiny_spec) == generate_synthetic(tiny_spec)

    def test_splits(self, tiny_spec):
        corpus, task = generate_synthetic(tiny_spec)
        train, dev, ood = task.split("train"), task.split("dev"), task.split("ood")
        assert (len(train), len(dev), len(ood)) == (24, 12, 12)
        keys = [{(ex.text_a, ex.text_b) for ex in split} for split in (train, dev, ood)]
        assert not (keys[0] & keys[1]) and not (keys[0] & keys[2]) and not (keys[1] & keys[2])
        for split in (train, dev, ood):
            assert sum(ex.label for ex in split) == len(split) // 2
            assert all(ex.label == majority_label(ex.text_a, tiny_spec) for ex in split)
        assert len(corpus.documents) == tiny_spec.num_documents

    def test_ood_is_shifted(self, tiny_spec):
        _, task = generate_synthetic(tiny_spec)
        train_len = np.mean([len(ex.text_a) for ex in task.split("train")])
        ood_len = np.mean([len(ex.text_a) for ex in task.split("ood")])
        assert ood_len - train_len == pytest.approx(tiny_spec.ood_length_shift, abs=1.5)
        assert min(len(ex.text_a) for ex in task.split("ood")) >= tiny_spec.task_length[0] + tiny_spec.ood_length_shift

    def test_pair_task(self, tiny_spec):
        _, task = generate_synthetic(replace(tiny_spec, pair_task=True))
        assert task.pair_mode
        for ex in task.split("train"):
            same = majority_label(ex.text_a, tiny_spec) == majority_label(ex.text_b, tiny_spec)
            assert ex.label == int(same)

    def test_degenerate_spec(self):
        with pytest.raises(DataError):
            SyntheticTaskSpec(num_symbols=4, marked_symbols=2)
        with pytest.raises(DataError):
            SyntheticTaskSpec(task_length=(0, 3))

    def test_longest_framed_example(self):
        assert SyntheticTaskSpec(task_length=(8, 16), ood_length_shift=6).longest_framed_example == 24
        assert SyntheticTaskSpec(task_length=(8, 16), ood_length_shift=-4).longest_framed_example == 18
        assert SyntheticTaskSpec(task_length=(4, 10), ood_length_shift=2, pair_task=True).longest_framed_example == 27

    def test_vocab_letters(self, tiny_spec):
        assert synthetic_vocab(tiny_spec).symbols[5:] == tuple("abcdefgh")


class TestFiles:
    def test_corpus_round_trip(self, tiny_data, tmp_path):
        write_corpus(tmp_path / "corpus.txt", tiny_data.corpus, tiny_data.vocab)
        assert read_corpus(tmp_path / "corpus.txt", tiny_data.vocab) == tiny_data.corpus

    def test_task_file_round_trip(self, tiny_data, tmp_path):
        examples = tiny_data.task.split("dev")
        write_task_file(tmp_path / "dev.tsv", examples, tiny_data.vocab)
        assert read_task_file(tmp_path / "dev.tsv", tiny_data.vocab, "classification") == examples

    def test_bad_label(self, vocab, tmp_path):
        (tmp_path / "bad.tsv").write_text("a b\tmaybe\n", encoding="utf-8")
        with pytest.raises(LabelError):
            read_task_file(tmp_path / "bad.tsv", vocab, "classification")

    def test_label_out_of_range(self):
        with pytest.raises(LabelError):
            TaskDataset(TaskKind.CLASSIFICATION, 2, {"train": (TaskExample((5,), None, 2),)})

    def test_empty_corpus_file(self, vocab, tmp_path):
        (tmp_path / "empty.txt").write_text("\n\n", encoding="utf-8")
        with pytest.raises(DataError):
            read_corpus(tmp_path / "empty.txt", vocab)
