import numpy as np
import pytest

from progressive_distill.errors import ConfigurationError, DataError, ShapeError
from progressive_distill.gradcheck import finite_diff_check
from progressive_distill.tensor import Tensor
from progressive_distill.transformer import (
    ModelConfig,
    TaskKind,
    create_weights,
    encoder_forward,
    flop_breakdown,
    flop_estimate,
    mha_layer,
    mlm_forward,
    param_count,
    parameter_shapes,
    weights_from_named,
)

BASE = dict(num_layers=12, hidden_size=768, ffn_size=3072, num_heads=12, vocab_size=30522, max_seq_len=512)
TINY = dict(num_layers=4, hidden_size=312, ffn_size=1200, num_heads=12, vocab_size=30522, max_seq_len=512)


@pytest.fixture
def small():
    return ModelConfig(num_layers=2, hidden_size=8, ffn_size=16, num_heads=2, vocab_size=11, max_seq_len=10)


class TestParamCount:
    def test_base_encoder(self):
        count = param_count(ModelConfig(**BASE))
        assert count == 109_482_240
        assert abs(count - 109e6) / 109e6 < 0.02

    def test_tiny_encoder(self):
        count = param_count(ModelConfig(**TINY))
        assert count == 14_350_248
        assert abs(count - 14.5e6) / 14.5e6 < 0.02

    def test_matches_manifest_without_heads(self, small):
        shapes = parameter_shapes(small)
        counted = sum(int(np.prod(s)) for n, s in shapes.items() if not n.startswith(("classifier.", "mlm.")))
        assert param_count(small) == counted

    def test_flops(self, small):
        breakdown = flop_breakdown(small, 4)
        assert flop_estimate(small, 4) == sum(breakdown.values())
        assert breakdown["ffn"] == 2 * 2 * 4 * 8 * 16
        with pytest.raises(DataError):
            flop_estimate(small, 11)


class TestConfig:
    def test_heads_must_divide_hidden(self):
        with pytest.raises(ConfigurationError, match="divisible"):
            ModelConfig(num_layers=1, hidden_size=10, ffn_size=8, num_heads=3, vocab_size=5, max_seq_len=4)

    def test_dict_round_trip(self, small):
        assert ModelConfig.from_dict(small.to_dict()) == small

    def test_unknown_keys(self, small):
        with pytest.raises(ConfigurationError):
            ModelConfig.from_dict({**small.to_dict(), "heads": 3})

    def test_regression_head_has_one_output(self):
        config = ModelConfig(1, 4, 8, 2, 7, 6, task_kind="regression")
        assert config.task_kind == TaskKind.REGRESSION
        assert parameter_shapes(config)["classifier.weight"] == (4, 1)


class TestForward:
    def test_trace_shapes(self, small):
        weights = create_weights(small, 0)
        trace = encoder_forward(small, weights, np.ones((3, 5), dtype=int))
        assert trace.num_layers == 2
        assert all(a.shape == (3, 2, 5, 5) for a in trace.attentions)
        assert all(h.shape == (3, 5, 8) for h in trace.hiddens)
        assert trace.logits.shape == (3, 2)

    def test_padded_batch_attention_rows(self, small, rng):
        weights = create_weights(small, 0)
        tokens = rng.integers(5, 11, size=(2, 6))
        mask = np.array([[True] * 6, [True] * 3 + [False] * 3])
        tokens[1, 3:] = 0
        trace = encoder_forward(small, weights, tokens, attention_mask=mask)
        for attention in trace.attentions:
            np.testing.assert_allclose(attention.data.sum(axis=-1), 1.0, atol=1e-6)
            assert np.all(attention.data[1, :, :, 3:] == 0.0)

    def test_padding_does_not_change_valid_positions(self, small, rng):
        weights = create_weights(small, 0)
        tokens = rng.integers(5, 11, size=(1, 4))
        alone = encoder_forward(small, weights, tokens)
        padded_tokens = np.concatenate([tokens, np.zeros((1, 3), dtype=int)], axis=1)
        mask = np.array([[True] * 4 + [False] * 3])
        padded = encoder_forward(small, weights, padded_tokens, attention_mask=mask)
        np.testing.assert_allclose(padded.hiddens[-1].data[:, :4], alone.hiddens[-1].data, atol=1e-12)

    def test_deterministic_for_fixed_seed(self, small, rng):
        tokens = rng.integers(0, 11, size=(2, 5))
        first = encoder_forward(small, create_weights(small, 3), tokens)
        second = encoder_forward(small, create_weights(small, 3), tokens)
        np.testing.assert_array_equal(first.logits.data, second.logits.data)

    def test_input_validation(self, small):
        weights = create_weights(small, 0)
        with pytest.raises(DataError):
            encoder_forward(small, weights, np.ones((1, 11), dtype=int))
        with pytest.raises(DataError):
            encoder_forward(small, weights, np.array([[1, 11]]))
        with pytest.raises(DataError):
            encoder_forward(small, weights, np.array([[1, 2]]), segment_ids=np.array([[0, 2]]))

    def test_mha_rejects_wrong_width(self, small):
        weights = create_weights(small, 0)
        with pytest.raises(ShapeError):
            mha_layer(small, weights.layers[0], Tensor(np.zeros((1, 3, 4))))

    def test_mlm_logits_per_masked_position(self, small):
        weights = create_weights(small, 0)
        logits = mlm_forward(small, weights, np.ones((2, 5), dtype=int), [(0, 1), (1, 3), (1, 4)])
        assert logits.shape == (3, 11)
        single = mlm_forward(small, weights, [2, 5, 6, 3], [1, 2])
        assert single.shape == (2, 11)
        with pytest.raises(DataError):
            mlm_forward(small, weights, np.ones((2, 5), dtype=int), [(2, 0)])


class TestWeights:
    def test_missing_parameter(self, small):
        named = dict(create_weights(small, 0).state_dict())
        del named["layers.1.ffn_in_bias"]
        with pytest.raises(ShapeError, match="layers.1.ffn_in_bias"):
            weights_from_named(small, named)

    def test_shape_mismatch_against_other_config(self, small):
        other = ModelConfig(num_layers=2, hidden_size=4, ffn_size=16, num_heads=2, vocab_size=11, max_seq_len=10)
        with pytest.raises(ShapeError):
            weights_from_named(other, create_weights(small, 0).state_dict())

    def test_initialization(self, small):
        weights = create_weights(small, 0)
        assert np.all(np.abs(weights.word_embeddings.data) <= 2 * small.initializer_range)
        assert np.all(weights.layers[0].ffn_ln_gain.data == 1.0)
        assert np.all(weights.layers[0].query_bias.data == 0.0)


class TestGradients:
    @pytest.mark.parametrize(
        "pick",
        [
            lambda w: w.layers[0].query_weight,
            lambda w: w.layers[0].value_weight,
            lambda w: w.layers[1].ffn_in_weight,
            lambda w: w.layers[1].attention_ln_gain,
            lambda w: w.word_embeddings,
            lambda w: w.pooler_weight,
        ],
    )
    def test_encoder_parameters(self, pick, rng):
        config = ModelConfig(
            num_layers=2, hidden_size=8, ffn_size=16, num_heads=2, vocab_size=11, max_seq_len=10, initializer_range=0.5
        )
        weights = create_weights(config, 1)
        # every vocab row is gathered so no embedding gradient is exactly zero
        tokens = rng.permutation(np.r_[np.arange(11), 5]).reshape(2, 6)
        mask = np.array([[True] * 6, [True] * 4 + [False] * 2])
        projection = rng.normal(size=(2, 2))
        readout = rng.normal(size=(2, 6, 8))

        def loss(_):
            trace = encoder_forward(config, weights, tokens, attention_mask=mask)
            return (trace.logits * projection).sum() + (trace.hiddens[0] * readout).sum()

        assert finite_diff_check(loss, pick(weights)) < 1e-4
