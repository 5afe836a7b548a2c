import shutil
from dataclasses import replace
from pathlib import Path

import numpy as np
import pytest

from progressive_distill.config import load_run_config
from progressive_distill.data import SyntheticTaskSpec, generate_synthetic, synthetic_vocab
from progressive_distill.losses import TeacherKind
from progressive_distill.trainer import StageData
from progressive_distill.transformer import ModelConfig, clone_weights, create_weights, freeze

CONFIG_DIR = Path(__file__).resolve().parent.parent / "configs"


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def tiny_spec():
    """A synthetic task small enough for per-test training runs."""
    return SyntheticTaskSpec(
        seed=0,
        num_symbols=8,
        marked_symbols=2,
        num_documents=12,
        sentences_per_document=(2, 4),
        sentence_length=(3, 6),
        task_length=(4, 8),
        train_size=24,
        dev_size=12,
        ood_size=12,
        ood_length_shift=2,
        min_margin=1,
    )


@pytest.fixture
def tiny_data(tiny_spec):
    corpus, task = generate_synthetic(tiny_spec)
    return StageData(vocab=synthetic_vocab(tiny_spec), corpus=corpus, task=task, max_len=16)


@pytest.fixture
def teacher_config(tiny_data):
    return ModelConfig(num_layers=2, hidden_size=8, ffn_size=16, num_heads=2, vocab_size=tiny_data.vocab.size, max_seq_len=16)


@pytest.fixture
def student_config(tiny_data):
    return ModelConfig(num_layers=1, hidden_size=4, ffn_size=8, num_heads=2, vocab_size=tiny_data.vocab.size, max_seq_len=16)


@pytest.fixture
def teachers(teacher_config):
    """Frozen random pretrained/finetuned pair; training quality is irrelevant for plumbing tests."""
    pretrained = create_weights(teacher_config, 7)
    finetuned = clone_weights(teacher_config, create_weights(teacher_config, 8))
    return {
        TeacherKind.PRETRAINED: (teacher_config, freeze(pretrained)),
        TeacherKind.FINETUNED: (teacher_config, freeze(finetuned)),
    }


@pytest.fixture
def smoke_config(tmp_path):
    config = load_run_config(CONFIG_DIR / "smoke.yaml")
    return replace(config, output_dir=str(tmp_path / "runs"))


@pytest.fixture
def config_copy(tmp_path):
    """Copy a file from configs/ into tmp_path and return its new path."""

    def _copy(name: str) -> Path:
        target = tmp_path / name
        shutil.copy(CONFIG_DIR / name, target)
        return target

    return _copy
