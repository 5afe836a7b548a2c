import hashlib
import json
import struct

import numpy as np
import pytest

from progressive_distill.checkpoint import FORMAT_VERSION, file_digest, load_checkpoint, save_checkpoint, weights_digest
from progressive_distill.errors import CheckpointError, CheckpointVersionError, ChecksumError, ShapeError
from progressive_distill.optimizer import AdamState
from progressive_distill.transformer import create_weights


@pytest.fixture
def saved(tmp_path, teacher_config):
    weights = create_weights(teacher_config, 3)
    state = AdamState(step=2, first_moment={"a": np.arange(3.0)}, second_moment={"a": np.full(3, 0.5)})
    extra = {"mapping.hidden.0": np.eye(8, 4)}
    path = save_checkpoint(tmp_path / "model.ckpt", teacher_config, weights, state, extra, {"stage": "TSD", "seed": 0})
    return path, weights


def _rewrite_version(path, version):
    raw = bytearray(path.read_bytes()[:-32])
    struct.pack_into("<I", raw, 4, version)
    path.write_bytes(bytes(raw) + hashlib.sha256(raw).digest())


class TestRoundTrip:
    def test_restores_everything(self, saved, teacher_config):
        path, weights = saved
        loaded = load_checkpoint(path)
        assert loaded.config == teacher_config
        for (name, original), (_, restored) in zip(weights.named_parameters(), loaded.weights.named_parameters()):
            np.testing.assert_array_equal(original.data, restored.data, err_msg=name)
        np.testing.assert_array_equal(loaded.extra["mapping.hidden.0"], np.eye(8, 4))
        assert loaded.optimizer_state.step == 2
        np.testing.assert_array_equal(loaded.optimizer_state.second_moment["a"], 0.5)
        assert loaded.metadata == {"stage": "TSD", "seed": 0}

    def test_resave_is_byte_identical(self, saved, tmp_path):
        path, _ = saved
        loaded = load_checkpoint(path)
        again = save_checkpoint(
            tmp_path / "again.ckpt", loaded.config, loaded.weights, loaded.optimizer_state, loaded.extra, loaded.metadata
        )
        assert path.read_bytes() == again.read_bytes()
        assert file_digest(path) == file_digest(again)

    def test_weights_digest_tracks_arrays(self, saved):
        path, weights = saved
        loaded = load_checkpoint(path, requires_grad=False)
        assert weights_digest(loaded.weights) == weights_digest(weights)
        loaded.weights.layers[0].query_bias.data[0] += 1e-12
        assert weights_digest(loaded.weights) != weights_digest(weights)

    def test_frozen_load(self, saved):
        loaded = load_checkpoint(saved[0], requires_grad=False)
        assert not any(t.requires_grad for _, t in loaded.weights.named_parameters())

    def test_no_temporary_file_left(self, saved):
        path, _ = saved
        assert [p.name for p in path.parent.iterdir()] == [path.name]


class TestCorruption:
    def test_bit_flip_reports_covered_range(self, saved):
        path, _ = saved
        raw = bytearray(path.read_bytes())
        raw[len(raw) // 2] ^= 0x01
        path.write_bytes(bytes(raw))
        with pytest.raises(ChecksumError) as excinfo:
            load_checkpoint(path)
        assert (excinfo.value.start, excinfo.value.end) == (0, len(raw) - 32)

    def test_bad_magic(self, saved):
        path, _ = saved
        raw = bytearray(path.read_bytes())
        raw[:4] = b"XXXX"
        path.write_bytes(bytes(raw))
        with pytest.raises(CheckpointError, match="magic"):
            load_checkpoint(path)

    def test_future_version(self, saved):
        path, _ = saved
        _rewrite_version(path, FORMAT_VERSION + 1)
        with pytest.raises(CheckpointVersionError):
            load_checkpoint(path)

    def test_truncated(self, saved):
        path, _ = saved
        path.write_bytes(path.read_bytes()[:10])
        with pytest.raises(CheckpointError):
            load_checkpoint(path)

    def test_missing_file(self, tmp_path):
        with pytest.raises(CheckpointError):
            load_checkpoint(tmp_path / "absent.ckpt")

    def test_config_mismatch(self, saved, student_config):
        with pytest.raises(ShapeError):
            load_checkpoint(saved[0], expected_config=student_config)

    def test_header_is_json(self, saved):
        raw = saved[0].read_bytes()
        (header_len,) = struct.unpack_from("<Q", raw, 8)
        header = json.loads(raw[16 : 16 + header_len])
        assert header["extra"] == ["mapping.hidden.0"]
        assert header["tensors"][0]["offset"] == 0
