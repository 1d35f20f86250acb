import numpy as np
import pytest
from pytest import approx

from cola.errors import DataFormatError
from cola.model import (
    ModelConfig,
    actionness,
    backward,
    embed_features,
    forward,
    init_params,
    load_checkpoint,
    save_checkpoint,
)
from cola.numerics import conv1d_forward, relu


@pytest.fixture
def small_config():
    return ModelConfig(feature_dim=1, num_classes=2, dropout_rate=0.5)


@pytest.fixture
def small_params(small_config):
    return init_params(small_config, np.random.default_rng(0))


class TestEmbed:
    def test_zero_input_zero_bias(self, small_config, small_params):
        small_params.embed_b.value[:] = 0.0
        _, out = embed_features(np.zeros((5, 2)), small_params, small_config)
        assert not out.any()

    def test_negative_bias_clamped(self, small_config, small_params):
        small_params.embed_b.value[:] = -1.0
        _, out = embed_features(np.zeros((5, 2)), small_params, small_config)
        assert not out.any()

    def test_matches_conv_relu_composition(self, small_config, small_params):
        raw = np.random.default_rng(1).normal(size=(4, 2))
        _, out = embed_features(raw, small_params, small_config)
        expected = relu(conv1d_forward(raw, small_params.embed_w.value,
                                       small_params.embed_b.value))
        np.testing.assert_allclose(out, expected)
        assert np.all(out >= 0)

    def test_column_mismatch_raises(self, small_config, small_params):
        with pytest.raises(ValueError):
            embed_features(np.zeros((5, 3)), small_params, small_config)


class TestClassify:
    def test_zero_embedded_gives_bias_rows(self, small_config, small_params):
        small_params.embed_w.value[:] = 0.0
        small_params.embed_b.value[:] = 0.0
        small_params.cls_b.value[:] = [0.3, -0.7]
        out = forward(np.ones((5, 2)), small_params, small_config)
        np.testing.assert_allclose(out.tcas, np.tile([0.3, -0.7], (5, 1)))

    def test_inference_ignores_rng(self, small_config, small_params):
        raw = np.random.default_rng(2).normal(size=(6, 2))
        a = forward(raw, small_params, small_config, training=False,
                    rng=np.random.default_rng(0))
        b = forward(raw, small_params, small_config, training=False,
                    rng=np.random.default_rng(123))
        np.testing.assert_array_equal(a.tcas, b.tcas)

    def test_golden_matrix(self):
        # frozen output of the first verified run (seed 7 weights, seed 3 input)
        config = ModelConfig(feature_dim=1, num_classes=2, dropout_rate=0.0)
        params = init_params(config, np.random.default_rng(7))
        raw = np.random.default_rng(3).normal(size=(6, 2))
        out = forward(raw, params, config)
        golden = np.array([
            [-0.7847523499177813, 0.16824509328514084],
            [-0.5256939935089486, 0.009753960727425655],
            [0.0, 0.0],
            [-0.12706411888231428, 0.0023576043111512954],
            [-0.025062912149306574, 0.024412040319041418],
            [-0.052909909115575374, 0.05153586410516063],
        ])
        np.testing.assert_allclose(out.tcas, golden, atol=1e-12)


class TestActionness:
    def test_zero_rows_half(self):
        np.testing.assert_allclose(actionness(np.zeros((4, 3))), np.full(4, 0.5))

    def test_saturation(self):
        out = actionness(np.array([[50.0, 0.0]]))
        assert out[0] == approx(1.0, abs=1e-9)

    def test_hand_example(self):
        out = actionness(np.array([[1.0, -1.0], [2.0, 0.0]]))
        np.testing.assert_allclose(out, [0.5, 0.8807970779778823], atol=1e-10)

    def test_permutation_invariant(self):
        rng = np.random.default_rng(4)
        tcas = rng.normal(size=(7, 5))
        shuffled = tcas[:, rng.permutation(5)]
        np.testing.assert_allclose(actionness(tcas), actionness(shuffled))

    def test_lengths_agree(self, small_config, small_params):
        raw = np.random.default_rng(5).normal(size=(9, 2))
        out = forward(raw, small_params, small_config)
        assert len(out.actionness) == out.tcas.shape[0] == out.embedded.shape[0] == 9


class TestBackwardShapes:
    def test_grads_accumulate(self, small_config, small_params):
        raw = np.random.default_rng(6).normal(size=(5, 2))
        out = forward(raw, small_params, small_config, training=True,
                      rng=np.random.default_rng(0))
        d_tcas = np.ones_like(out.tcas)
        backward(raw, out, small_params, small_config, d_tcas)
        first = small_params.cls_w.grad.copy()
        assert first.any()
        backward(raw, out, small_params, small_config, d_tcas)
        np.testing.assert_allclose(small_params.cls_w.grad, 2 * first)

    def test_training_forward_requires_rng(self, small_config, small_params):
        with pytest.raises(ValueError):
            forward(np.zeros((4, 2)), small_params, small_config, training=True)


class TestCheckpoint:
    def test_round_trip(self, tmp_path, small_config, small_params):
        path = tmp_path / "model.ckpt"
        save_checkpoint(path, small_config, small_params)
        config, params = load_checkpoint(path)
        assert config == small_config
        for (_, a), (_, b) in zip(params.named_slots(), small_params.named_slots()):
            np.testing.assert_array_equal(a.value, b.value)
            assert not a.grad.any() and a.step_count == 0

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "bad.ckpt"
        path.write_bytes(b"NOTMAGIC" + b"\x00" * 64)
        with pytest.raises(DataFormatError, match="byte 0"):
            load_checkpoint(path)

    def test_truncated(self, tmp_path, small_config, small_params):
        path = tmp_path / "model.ckpt"
        save_checkpoint(path, small_config, small_params)
        data = path.read_bytes()
        path.write_bytes(data[:len(data) // 2])
        with pytest.raises(DataFormatError):
            load_checkpoint(path)

    def test_trailing_bytes_rejected(self, tmp_path, small_config, small_params):
        path = tmp_path / "model.ckpt"
        save_checkpoint(path, small_config, small_params)
        path.write_bytes(path.read_bytes() + b"x")
        with pytest.raises(DataFormatError, match="trailing"):
            load_checkpoint(path)
