"""Central finite-difference validation of every analytic backward pass.

Each check builds small random float64 inputs, contracts the op's output with
a fixed random tensor to obtain a scalar, and compares the analytic gradient
against central differences (step 1e-5). The numeric side only ever evaluates
forward passes, so it is independent of the backward code it validates.
Reported error is max|analytic - numeric| / max(|analytic|, |numeric|, eps).

Non-smooth points (ReLU kinks, pooling ties) are excluded by nudging inputs
away from them; the contracts only cover differentiable points.
"""

from __future__ import annotations

import numpy as np

from . import model, ops
from .losses import supervised_contrastive_loss

FD_STEP = 1e-5
TOLERANCE = 1e-4


def numeric_gradient(f, x: np.ndarray, step: float = FD_STEP) -> np.ndarray:
    """Central differences of a scalar function, coordinate by coordinate."""
    grad = np.zeros_like(x, dtype=np.float64)
    flat = x.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + step
        f_plus = f()
        flat[i] = orig - step
        f_minus = f()
        flat[i] = orig
        gflat[i] = (f_plus - f_minus) / (2.0 * step)
    return grad


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    scale = max(float(np.abs(analytic).max()), float(np.abs(numeric).max()), 1e-12)
    return float(np.abs(analytic - numeric).max()) / scale


def _away_from_zero(x: np.ndarray, margin: float = 1e-2) -> np.ndarray:
    return x + np.sign(x) * margin


def check_conv2d(rng: np.random.Generator) -> float:
    x = rng.normal(size=(2, 2, 5, 5))
    w = rng.normal(size=(3, 2, 3, 3))
    b = rng.normal(size=3)
    stride, padding = int(rng.integers(1, 3)), int(rng.integers(0, 2))
    out, cache = ops.conv2d(x, w, b, stride, padding)
    contract = rng.normal(size=out.shape)
    dx, dw, db = ops.conv2d_backward(contract, cache)
    f = lambda: float((ops.conv2d(x, w, b, stride, padding)[0] * contract).sum())
    return max(
        relative_error(dx, numeric_gradient(f, x)),
        relative_error(dw, numeric_gradient(f, w)),
        relative_error(db, numeric_gradient(f, b)),
    )


def check_maxpool2d(rng: np.random.Generator) -> float:
    # spread values so no window comes within the FD step of a tie
    x = rng.permutation(4 * 2 * 6 * 6).astype(np.float64).reshape(4, 2, 6, 6) * 0.1
    out, cache = ops.maxpool2d(x)
    contract = rng.normal(size=out.shape)
    dx = ops.maxpool2d_backward(contract, cache)
    f = lambda: float((ops.maxpool2d(x)[0] * contract).sum())
    return relative_error(dx, numeric_gradient(f, x))


def check_batchnorm2d(rng: np.random.Generator) -> float:
    x = rng.normal(size=(3, 2, 4, 4))
    gamma = rng.normal(size=2) + 1.5
    beta = rng.normal(size=2)
    running = (np.zeros(2), np.ones(2))

    def forward():
        out, _ = ops.batchnorm2d(
            x, gamma, beta, running[0].copy(), running[1].copy(), training=True
        )
        return out

    out, cache = ops.batchnorm2d(x, gamma, beta, running[0].copy(), running[1].copy(), training=True)
    contract = rng.normal(size=out.shape)
    dx, dgamma, dbeta = ops.batchnorm2d_backward(contract, cache)
    f = lambda: float((forward() * contract).sum())
    return max(
        relative_error(dx, numeric_gradient(f, x)),
        relative_error(dgamma, numeric_gradient(f, gamma)),
        relative_error(dbeta, numeric_gradient(f, beta)),
    )


def check_relu(rng: np.random.Generator) -> float:
    x = _away_from_zero(rng.normal(size=(4, 6)))
    out, cache = ops.relu(x)
    contract = rng.normal(size=out.shape)
    dx = ops.relu_backward(contract, cache)
    f = lambda: float((ops.relu(x)[0] * contract).sum())
    return relative_error(dx, numeric_gradient(f, x))


def check_dense(rng: np.random.Generator) -> float:
    x = rng.normal(size=(4, 3))
    w = rng.normal(size=(3, 2))
    b = rng.normal(size=2)
    out, cache = ops.dense(x, w, b)
    contract = rng.normal(size=out.shape)
    dx, dw, db = ops.dense_backward(contract, cache)
    f = lambda: float((ops.dense(x, w, b)[0] * contract).sum())
    return max(
        relative_error(dx, numeric_gradient(f, x)),
        relative_error(dw, numeric_gradient(f, w)),
        relative_error(db, numeric_gradient(f, b)),
    )


def check_global_avg_pool(rng: np.random.Generator) -> float:
    x = rng.normal(size=(3, 2, 4, 5))
    out, cache = ops.global_avg_pool(x)
    contract = rng.normal(size=out.shape)
    dx = ops.global_avg_pool_backward(contract, cache)
    f = lambda: float((ops.global_avg_pool(x)[0] * contract).sum())
    return relative_error(dx, numeric_gradient(f, x))


def check_l2_normalize(rng: np.random.Generator) -> float:
    x = rng.normal(size=(4, 5)) + 0.5  # keep rows well away from the eps clamp
    out, cache = ops.l2_normalize(x)
    contract = rng.normal(size=out.shape)
    dx = ops.l2_normalize_backward(contract, cache)
    f = lambda: float((ops.l2_normalize(x)[0] * contract).sum())
    return relative_error(dx, numeric_gradient(f, x))


def check_projection_head(rng: np.random.Generator) -> float:
    config = model.ModelConfig(
        encoder=model.EncoderConfig(filters=(4, 8)),
        projection=model.ProjectionConfig(hidden_dim=6, output_dim=5),
        num_classes=2,
    )
    params = {
        k: v.astype(np.float64)
        for k, v in model.init_params(config, seed=int(rng.integers(1 << 30))).items()
        if k.startswith("projection.")
    }
    features = rng.normal(size=(4, config.encoder.feature_dim))
    plan = model.projection_plan()

    def forward():
        out, _ = model.run_forward(plan, params, features, training=True, update_running=False)
        return out

    out, caches = model.run_forward(plan, params, features, training=True, update_running=False)
    contract = rng.normal(size=out.shape)
    dfeatures, grads = model.run_backward(plan, caches, contract)
    f = lambda: float((forward() * contract).sum())
    worst = relative_error(dfeatures, numeric_gradient(f, features))
    for name in ("projection.fc1.weight", "projection.fc2.weight", "projection.bn.gamma"):
        worst = max(worst, relative_error(grads[name], numeric_gradient(f, params[name])))
    return worst


def check_contrastive_loss(rng: np.random.Generator) -> float:
    n = int(rng.integers(4, 9))
    raw = rng.normal(size=(n, 6))
    labels = rng.integers(0, 3, size=n)
    temperature = float(rng.uniform(0.2, 1.5))

    def forward():
        z, _ = ops.l2_normalize(raw)
        return supervised_contrastive_loss(z, labels, temperature).value

    z, norm_cache = ops.l2_normalize(raw)
    result = supervised_contrastive_loss(z, labels, temperature)
    # chain through the normalization so FD wrt the raw matrix is well-defined
    draw = ops.l2_normalize_backward(result.grad, norm_cache)
    return relative_error(draw, numeric_gradient(forward, raw))


CHECKS = {
    "conv2d": check_conv2d,
    "maxpool2d": check_maxpool2d,
    "batchnorm2d": check_batchnorm2d,
    "relu": check_relu,
    "dense": check_dense,
    "global_avg_pool": check_global_avg_pool,
    "l2_normalize": check_l2_normalize,
    "projection_head": check_projection_head,
    "contrastive_loss": check_contrastive_loss,
}


def run_suite(trials: int = 20, seed: int = 0) -> dict[str, float]:
    """Max relative error per op over ``trials`` random instances each."""
    results: dict[str, float] = {}
    for index, (name, check) in enumerate(CHECKS.items()):
        rng = np.random.default_rng([seed, index])
        results[name] = max(check(rng) for _ in range(trials))
    return results
