from pathlib import Path

import pytest
import yaml

from progressive_distill.config import (
    load_model_config,
    load_run_config,
    output_root,
    parse_run_config,
    save_run_config,
)
from progressive_distill.errors import ConfigurationError, ScheduleViolationError
from progressive_distill.transformer import TaskKind

CONFIG_DIR = Path(__file__).resolve().parent.parent / "configs"


class TestRunConfig:
    def test_smoke_loads(self, smoke_config):
        assert smoke_config.schedule.names == ["GD", "GED", "TAD", "TSD"]
        assert smoke_config.pretrain.steps == 5
        assert smoke_config.pretrain.optimizer.warmup_steps == 1
        assert smoke_config.data.synthetic.sentence_length == (4, 10)
        assert not smoke_config.allow_violations

    def test_model_configs(self, smoke_config):
        teacher, student = smoke_config.model_configs(vocab_size=15)
        assert (teacher.num_layers, teacher.hidden_size) == (2, 16)
        assert (student.num_layers, student.hidden_size) == (1, 8)
        assert teacher.vocab_size == student.vocab_size == 15
        assert student.max_seq_len == 16
        assert student.task_kind == TaskKind.CLASSIFICATION

    def test_jump_rejected_in_strict_mode(self):
        with pytest.raises(ScheduleViolationError):
            load_run_config(CONFIG_DIR / "jump.yaml")

    def test_jump_allowed_with_flag(self):
        config = load_run_config(CONFIG_DIR / "jump.yaml", allow_violations=True)
        assert config.schedule.names == ["GD", "TSD"]
        assert config.allow_violations

    def test_drop_general_stages(self):
        config = load_run_config(CONFIG_DIR / "smoke.yaml", drop=["GD", "GED"])
        assert config.schedule.names == ["TAD", "TSD"]
        assert config.dropped == ("GD", "GED")

    def test_missing_schedule_uses_default(self):
        config = parse_run_config({"data": {"synthetic": {}}})
        assert config.schedule.names == ["GD", "GED", "TAD", "TSD"]
        assert config.finetune.steps == 800

    def test_unknown_key(self):
        with pytest.raises(ConfigurationError, match="unknown"):
            parse_run_config({"lerning_rate": 1.0})

    def test_unknown_stage_key(self):
        stage = {"name": "GD", "teacher": "pretrained", "data": "general", "alpha": 0, "steps": 1, "lr": 1}
        with pytest.raises(ConfigurationError):
            parse_run_config({"schedule": [stage]})

    def test_schema_version(self):
        with pytest.raises(ConfigurationError, match="schema_version"):
            parse_run_config({"schema_version": 2})

    def test_mixed_data_sources(self):
        with pytest.raises(ConfigurationError):
            parse_run_config({"data": {"synthetic": {}, "vocab": "vocab.txt"}})

    def test_subsample_bounds(self):
        with pytest.raises(ConfigurationError):
            parse_run_config({"data": {"synthetic": {}, "subsample": 0}})

    def test_pair_task_longer_than_max_seq_len(self):
        synthetic = {"task_length": [8, 16], "ood_length_shift": 6, "pair_task": True}
        with pytest.raises(ConfigurationError, match="truncated"):
            parse_run_config({"max_seq_len": 32, "data": {"synthetic": synthetic}})

    def test_task_exactly_filling_max_seq_len(self):
        config = parse_run_config({"max_seq_len": 24, "data": {"synthetic": {"task_length": [8, 16], "ood_length_shift": 6}}})
        assert config.data.synthetic.longest_framed_example == 24

    def test_output_dir_from_environment(self, monkeypatch, tmp_path):
        monkeypatch.setenv("PROGRESSIVE_DISTILL_OUTPUT_DIR", str(tmp_path / "elsewhere"))
        assert output_root() == tmp_path / "elsewhere"
        assert parse_run_config({}).output_dir == str(tmp_path / "elsewhere")

    def test_file_paths_resolved_against_config(self, tmp_path):
        (tmp_path / "run.yaml").write_text(
            yaml.safe_dump({"data": {"vocab": "v.txt", "corpus": "c.txt", "task_dir": "task"}}), encoding="utf-8"
        )
        config = load_run_config(tmp_path / "run.yaml")
        assert config.data.vocab_path == str(tmp_path / "v.txt")
        assert config.data.task_dir == str(tmp_path / "task")

    def test_invalid_yaml(self, tmp_path):
        (tmp_path / "bad.yaml").write_text("schedule: [\n", encoding="utf-8")
        with pytest.raises(ConfigurationError, match="YAML"):
            load_run_config(tmp_path / "bad.yaml")


class TestPhaseOverrides:
    def test_warmup_proportion_replaces_default_warmup_steps(self):
        config = parse_run_config({"teacher_training": {"pretrain": {"optimizer": {"warmup_proportion": 0.2}}}})
        assert config.pretrain.optimizer.warmup_proportion == 0.2
        assert config.pretrain.optimizer.warmup_steps is None
        assert config.pretrain.optimizer.learning_rate == 1e-3

    def test_unrelated_override_keeps_default_warmup(self):
        config = parse_run_config({"teacher_training": {"finetune": {"optimizer": {"batch_size": 4}}}})
        assert config.finetune.optimizer.warmup_proportion == 0.1
        assert config.finetune.optimizer.batch_size == 4

    def test_bad_steps(self):
        with pytest.raises(ConfigurationError):
            parse_run_config({"teacher_training": {"pretrain": {"steps": 0}}})


class TestPersistence:
    def test_save_load_round_trip(self, smoke_config, tmp_path):
        save_run_config(smoke_config, tmp_path / "config.yaml")
        assert load_run_config(tmp_path / "config.yaml") == smoke_config

    def test_model_config_file(self):
        config = load_model_config(CONFIG_DIR / "paramcount_base.yaml")
        assert (config.num_layers, config.hidden_size, config.num_heads) == (12, 768, 12)

    def test_model_config_incomplete(self, tmp_path):
        (tmp_path / "m.yaml").write_text("model: {num_layers: 2}\n", encoding="utf-8")
        with pytest.raises(ConfigurationError):
            load_model_config(tmp_path / "m.yaml")
