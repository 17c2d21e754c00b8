import numpy as np
import pytest

from patchcontrast import model as M
from patchcontrast.errors import FormatError, ShapeError


def make_config(side=64, classes=5):
    return M.ModelConfig(encoder=M.EncoderConfig(input_side=side), num_classes=classes)


class TestShapes:
    def test_canonical_trace_1129(self):
        trace = M.encoder_shape_trace(M.EncoderConfig(input_side=1129), 1129)
        assert trace == [283, 141, 70, 35, 17, 8]

    def test_desk_trace_128(self):
        assert M.encoder_shape_trace(M.EncoderConfig(), 128) == [32, 16, 8, 4, 2, 1]

    def test_trace_64_skips_final_pool(self):
        assert M.encoder_shape_trace(M.EncoderConfig(), 64) == [16, 8, 4, 2, 1, 1]

    def test_full_forward_at_1129(self):
        config = make_config(side=1129)
        params = M.init_params(config, seed=0)
        x = np.random.default_rng(0).uniform(0, 1, size=(1, 1, 1129, 1129)).astype(np.float32)
        h = M.encoder_forward(params, x, config, training=False)
        assert h.shape == (1, 128)
        assert np.isfinite(h).all()

    def test_parameter_count_independent_of_side(self):
        counts = {M.parameter_count(make_config(side=s)) for s in (64, 128, 1129)}
        assert len(counts) == 1

    def test_bad_input_shapes(self):
        config = make_config()
        params = M.init_params(config, seed=0)
        with pytest.raises(ShapeError):
            M.encoder_forward(params, np.zeros((2, 3, 64, 64), dtype=np.float32), config)
        with pytest.raises(ShapeError):
            M.encoder_forward(params, np.zeros((2, 1, 64, 32), dtype=np.float32), config)


class TestInit:
    def test_same_seed_identical(self):
        config = make_config()
        a = M.init_params(config, seed=3)
        b = M.init_params(config, seed=3)
        assert a.keys() == b.keys()
        for k in a:
            np.testing.assert_array_equal(a[k], b[k])

    def test_bn_affines_at_identity(self):
        params = M.init_params(make_config(), seed=1)
        for name, value in params.items():
            leaf = name.rsplit(".", 1)[-1]
            if leaf == "gamma":
                np.testing.assert_array_equal(value, 1.0)
            elif leaf == "beta":
                np.testing.assert_array_equal(value, 0.0)
            elif leaf == "bias":
                np.testing.assert_array_equal(value, 0.0)

    def test_forward_finite_on_random_input(self):
        config = make_config()
        params = M.init_params(config, seed=2)
        x = np.random.default_rng(1).uniform(0, 1, (4, 1, 64, 64)).astype(np.float32)
        h = M.encoder_forward(params, x, config, training=True)
        z = M.projection_forward(params, h, training=True)
        logits = M.linear_head_forward(params, h)
        for out in (h, z, logits):
            assert np.isfinite(out).all()

    def test_zero_input_gives_finite_constant_features(self):
        config = make_config()
        params = M.init_params(config, seed=4)
        h = M.encoder_forward(params, np.zeros((2, 1, 64, 64), dtype=np.float32), config, training=True)
        assert np.isfinite(h).all()
        np.testing.assert_allclose(h[0], h[1], atol=1e-6)


class TestForwardContracts:
    def test_eval_mode_batch_independence(self):
        config = make_config()
        params = M.init_params(config, seed=5)
        rng = np.random.default_rng(2)
        a = rng.uniform(0, 1, (2, 1, 64, 64)).astype(np.float32)
        b = rng.uniform(0, 1, (3, 1, 64, 64)).astype(np.float32)
        h_a = M.encoder_forward(params, a, config, training=False)
        h_all = M.encoder_forward(params, np.concatenate([a, b]), config, training=False)
        np.testing.assert_allclose(h_all[:2], h_a, atol=1e-6)

    def test_projection_rows_unit_norm(self):
        config = make_config()
        params = M.init_params(config, seed=6)
        h = np.random.default_rng(3).normal(size=(7, 128)).astype(np.float32)
        z = M.projection_forward(params, h, training=True)
        np.testing.assert_allclose(np.linalg.norm(z, axis=1), 1.0, atol=1e-5)

    def test_projection_single_sample_eval_mode(self):
        config = make_config()
        params = M.init_params(config, seed=7)
        z = M.projection_forward(params, np.ones((1, 128), dtype=np.float32), training=False)
        assert z.shape == (1, 128)
        assert np.isfinite(z).all()

    def test_head_zero_params_zero_logits(self):
        config = make_config()
        params = M.init_params(config, seed=8)
        params["head.weight"][:] = 0
        params["head.bias"][:] = 0
        logits = M.linear_head_forward(params, np.ones((3, 128), dtype=np.float32))
        np.testing.assert_array_equal(logits, 0.0)

    def test_head_identity_passthrough(self):
        config = M.ModelConfig(num_classes=128)
        params = M.init_params(config, seed=9)
        params["head.weight"] = np.eye(128, dtype=np.float32)
        params["head.bias"] = np.zeros(128, dtype=np.float32)
        h = np.random.default_rng(4).normal(size=(2, 128)).astype(np.float32)
        np.testing.assert_allclose(M.linear_head_forward(params, h), h, rtol=1e-6)

    def test_argmax_invariant_to_constant_bias_shift(self):
        config = make_config()
        params = M.init_params(config, seed=10)
        h = np.random.default_rng(5).normal(size=(6, 128)).astype(np.float32)
        before = M.linear_head_forward(params, h).argmax(axis=1)
        params["head.bias"] = params["head.bias"] + 0.7
        after = M.linear_head_forward(params, h).argmax(axis=1)
        np.testing.assert_array_equal(before, after)


class TestCheckpoint:
    def test_round_trip_bit_exact(self, tmp_path):
        config = make_config()
        params = M.init_params(config, seed=11)
        path = str(tmp_path / "model.ckpt")
        M.save_params(path, params, config, seed=11)
        loaded, loaded_config, seed = M.load_params(path)
        assert loaded_config == config
        assert seed == 11
        assert loaded.keys() == params.keys()
        for k in params:
            assert loaded[k].tobytes() == params[k].tobytes()

    def test_outputs_identical_after_round_trip(self, tmp_path):
        config = make_config()
        params = M.init_params(config, seed=12)
        path = str(tmp_path / "model.ckpt")
        M.save_params(path, params, config, seed=12)
        loaded, _, _ = M.load_params(path)
        x = np.random.default_rng(6).uniform(0, 1, (2, 1, 64, 64)).astype(np.float32)
        a = M.encoder_forward(params, x, config, training=False)
        b = M.encoder_forward(loaded, x, config, training=False)
        assert a.tobytes() == b.tobytes()

    def test_bad_magic_rejected(self, tmp_path):
        path = tmp_path / "bad.ckpt"
        path.write_bytes(b"not a checkpoint\n")
        with pytest.raises(FormatError):
            M.load_tensors(str(path))

    def test_missing_tensor_rejected(self, tmp_path):
        config = make_config()
        params = M.init_params(config, seed=13)
        params.pop("head.bias")
        path = str(tmp_path / "model.ckpt")
        M.save_tensors(path, params, meta={"model_config": config.to_dict(), "seed": 13})
        with pytest.raises(FormatError, match="head.bias"):
            M.load_params(path)


def test_projection_gradient_matches_finite_differences():
    from patchcontrast import gradcheck

    assert gradcheck.check_projection_head(np.random.default_rng(14)) < 1e-4
