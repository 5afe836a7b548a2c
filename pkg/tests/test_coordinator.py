import json
import threading
from dataclasses import replace

import pytest

from progressive_distill.checkpoint import load_checkpoint
from progressive_distill.config import load_run_config
from progressive_distill.coordinator import (
    FINETUNED_CKPT,
    PRETRAINED_CKPT,
    STUDENT_CKPT,
    DistillationCoordinator,
    create_distillation_coordinator,
    export_data,
    load_stage_data,
    load_teachers,
)
from progressive_distill.data import GeneralCorpus
from progressive_distill.errors import CheckpointError, DataError
from progressive_distill.metrics import read_metrics


@pytest.fixture
def completed(smoke_config):
    coordinator = DistillationCoordinator("smoke", smoke_config)
    summary = coordinator.coordinate()
    return coordinator, summary


class TestCoordinator:
    def test_run_directory_artifacts(self, completed):
        coordinator, summary = completed
        run_dir = coordinator.run_dir
        for name in ("metrics.tsv", "summary.json", "config.yaml", STUDENT_CKPT, PRETRAINED_CKPT, FINETUNED_CKPT):
            assert (run_dir / name).exists(), name
        assert coordinator.status == "completed"
        assert json.loads((run_dir / "summary.json").read_text()) == json.loads(json.dumps(summary))
        assert {"dev_accuracy", "ood_accuracy"} <= set(summary["metrics"])

    def test_metrics_rows_cover_every_step(self, completed):
        coordinator, _ = completed
        rows = read_metrics(coordinator.metrics_path)
        assert [r.stage for r in rows] == ["GD"] * 5 + ["GED"] * 5 + ["TAD"] * 5 + ["TSD"] * 5
        assert [r.step for r in rows if r.stage == "TSD"] == [1, 2, 3, 4, 5]
        assert all(r.dev_metric is not None for r in rows if r.step == 5)

    def test_student_checkpoint_holds_maps(self, completed):
        coordinator, _ = completed
        loaded = load_checkpoint(coordinator.run_dir / STUDENT_CKPT)
        assert loaded.config.num_layers == 1
        assert any(name.startswith("mapping.hidden.") for name in loaded.extra)
        assert loaded.metadata["schedule"] == ["GD", "GED", "TAD", "TSD"]

    def test_teachers_reused_and_untouched(self, completed, smoke_config):
        first, _ = completed
        teachers = load_teachers(first.teachers.config, first.run_dir)
        before = teachers.digests()
        again = DistillationCoordinator("reuse", smoke_config, teachers=teachers, data=first.data)
        again.coordinate()
        assert teachers.digests() == before
        assert not (again.run_dir / PRETRAINED_CKPT).exists()

    def test_in_memory_teacher_change_detected(self, completed, smoke_config):
        first, _ = completed
        teachers = load_teachers(first.teachers.config, first.run_dir)

        def tamper(message):
            if message.startswith("📊"):
                teachers.finetuned.word_embeddings.data[0, 0] += 1.0

        again = DistillationCoordinator("tampered", smoke_config, teachers=teachers, data=first.data, status_callback=tamper)
        with pytest.raises(CheckpointError, match="finetuned weights"):
            again.coordinate()
        assert again.status == "failed"

    def test_preset_stop_event(self, smoke_config):
        stop = threading.Event()
        stop.set()
        coordinator = DistillationCoordinator("stopped", smoke_config, stop_event=stop)
        summary = coordinator.coordinate()
        assert coordinator.status == "stopped"
        assert summary["stopped"]
        assert summary["stages"][0]["steps"] == 0

    def test_status_callback(self, smoke_config):
        messages = []
        DistillationCoordinator("cb", smoke_config, status_callback=messages.append).coordinate()
        assert any("Starting run cb" in m for m in messages)
        assert any("completed" in m for m in messages)

    def test_failure_sets_status(self, smoke_config, tmp_path):
        coordinator = DistillationCoordinator("bad", smoke_config)
        coordinator.data = load_stage_data(smoke_config)
        coordinator.data.corpus = GeneralCorpus(())
        with pytest.raises(DataError):
            coordinator.coordinate()
        assert coordinator.status == "failed" and coordinator.error


class TestFactoryAndData:
    def test_default_run_id(self, config_copy):
        coordinator = create_distillation_coordinator(config_copy("smoke.yaml"))
        assert coordinator.run_id == "GD+GED+TAD+TSD-seed0"

    def test_exported_files_load_back(self, smoke_config, tmp_path):
        data = load_stage_data(smoke_config)
        export_data(data, tmp_path / "data")
        (tmp_path / "run.yaml").write_text(
            "data: {vocab: data/vocab.txt, corpus: data/corpus.txt, task_dir: data}\n", encoding="utf-8"
        )
        from_files = load_stage_data(load_run_config(tmp_path / "run.yaml"))
        assert from_files.vocab == data.vocab
        assert from_files.corpus == data.corpus
        assert from_files.task.split("dev") == data.task.split("dev")

    def test_subsample_only_touches_train(self, smoke_config):
        full = load_stage_data(smoke_config)
        half = load_stage_data(replace(smoke_config, data=replace(smoke_config.data, subsample=0.5)))
        assert len(half.task.split("train")) == len(full.task.split("train")) // 2
        assert half.task.split("dev") == full.task.split("dev")
