import numpy as np
import pytest

from patchcontrast.errors import OptimError
from patchcontrast.optim import OptimState, lars_step, scaled_lr, sgd_step


class TestScaledLr:
    def test_reference_batch(self):
        assert scaled_lr(128) == 0.01

    def test_paper_batch_is_exact(self):
        assert scaled_lr(4096) == 0.32

    def test_linear_scaling(self):
        assert scaled_lr(256) == 0.02

    def test_invalid(self):
        with pytest.raises(OptimError):
            scaled_lr(0)


class TestLars:
    def test_zero_gradient_fixed_point(self):
        params = {"layer.weight": np.array([1.0, -2.0])}
        state = OptimState(lr=0.1)
        lars_step(params, {"layer.weight": np.zeros(2)}, state)
        np.testing.assert_array_equal(params["layer.weight"], [1.0, -2.0])

    def test_scalar_hand_example(self):
        # w=2, g=1, lr=0.1, mu=0, wd=0: trust = 2, step = 0.2, w' = 1.8
        params = {"layer.weight": np.array([2.0])}
        state = OptimState(lr=0.1, momentum=0.0)
        lars_step(params, {"layer.weight": np.array([1.0])}, state)
        assert abs(params["layer.weight"][0] - 1.8) < 1e-7

    def test_gradient_scale_invariance(self):
        rng = np.random.default_rng(0)
        w = rng.normal(size=(4, 3))
        g = rng.normal(size=(4, 3))
        updated = {}
        for scale in (1.0, 10.0):
            params = {"layer.weight": w.copy()}
            state = OptimState(lr=0.05, momentum=0.0)
            lars_step(params, {"layer.weight": scale * g}, state)
            updated[scale] = params["layer.weight"]
        np.testing.assert_allclose(updated[1.0], updated[10.0], rtol=1e-7)

    def test_exempt_leaves_bypass_trust_ratio(self):
        params = {"layer.bias": np.array([4.0]), "bn.gamma": np.array([4.0])}
        grads = {"layer.bias": np.array([1.0]), "bn.gamma": np.array([1.0])}
        state = OptimState(lr=0.1, momentum=0.0)
        lars_step(params, grads, state)
        np.testing.assert_allclose(params["layer.bias"], 3.9)  # plain lr * g
        np.testing.assert_allclose(params["bn.gamma"], 3.9)

    def test_nonfinite_gradient_names_tensor(self):
        params = {"encoder.block1.conv1.weight": np.ones(3)}
        grads = {"encoder.block1.conv1.weight": np.array([1.0, np.nan, 0.0])}
        with pytest.raises(OptimError, match="encoder.block1.conv1.weight"):
            lars_step(params, grads, OptimState(lr=0.1))

    def test_trust_ratio_disabled_matches_sgd(self):
        rng = np.random.default_rng(1)
        w0 = rng.normal(size=(5, 4))
        grad_seq = [rng.normal(size=(5, 4)) for _ in range(5)]

        lars_params = {"layer.weight": w0.copy()}
        lars_state = OptimState(lr=0.03, momentum=0.9, weight_decay=0.01, use_trust_ratio=False)
        sgd_params = {"layer.weight": w0.copy()}
        sgd_state = OptimState(lr=0.03, momentum=0.9, weight_decay=0.01)
        for g in grad_seq:
            lars_step(lars_params, {"layer.weight": g}, lars_state)
            sgd_step(sgd_params, {"layer.weight": g}, sgd_state)
            np.testing.assert_allclose(
                lars_params["layer.weight"], sgd_params["layer.weight"], rtol=1e-6, atol=1e-9
            )


class TestSgd:
    def test_vanilla_step(self):
        params = {"w": np.array([1.0, 2.0])}
        sgd_step(params, {"w": np.array([0.5, -0.5])}, OptimState(lr=0.1, momentum=0.0))
        np.testing.assert_allclose(params["w"], [0.95, 2.05])

    def test_zero_lr_no_change(self):
        params = {"w": np.array([1.0])}
        sgd_step(params, {"w": np.array([3.0])}, OptimState(lr=0.0))
        np.testing.assert_array_equal(params["w"], [1.0])

    def test_momentum_matches_hand_unrolled_recurrence(self):
        lr, mu = 0.1, 0.9
        g1, g2 = 2.0, -1.0
        params = {"w": np.array([5.0])}
        state = OptimState(lr=lr, momentum=mu)
        sgd_step(params, {"w": np.array([g1])}, state)
        sgd_step(params, {"w": np.array([g2])}, state)
        v1 = g1
        w1 = 5.0 - lr * v1
        v2 = mu * v1 + g2
        w2 = w1 - lr * v2
        assert abs(params["w"][0] - w2) < 1e-7

    def test_weight_decay_enters_update(self):
        params = {"w": np.array([2.0])}
        sgd_step(params, {"w": np.array([0.0])}, OptimState(lr=0.1, momentum=0.0, weight_decay=0.5))
        np.testing.assert_allclose(params["w"], 2.0 - 0.1 * 0.5 * 2.0)
