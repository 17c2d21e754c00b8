"""Layer-wise adaptive rate scaling (LARS) and a plain SGD baseline.

LARS rescales each tensor's step by the trust ratio ||w|| / (||g|| + wd*||w||
+ eps) so large-batch training keeps per-layer updates proportionate to the
weights. Bias and batch-norm parameters bypass the ratio, following common
practice. The learning-rate rule is the linear batch-size scaling
eta = 0.01 * batch_size / 128, constant over training.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import OptimError

EXEMPT_LEAVES = ("bias", "gamma", "beta")


def scaled_lr(batch_size: int) -> float:
    """Constant learning rate 0.01 * batch_size / 128."""
    if batch_size < 1:
        raise OptimError(f"batch size must be >= 1, got {batch_size}")
    return 0.01 * batch_size / 128.0


@dataclass
class OptimState:
    lr: float
    momentum: float = 0.9
    weight_decay: float = 0.0
    trust_eps: float = 1e-9
    use_trust_ratio: bool = True
    exempt_leaves: tuple[str, ...] = EXEMPT_LEAVES
    buffers: dict[str, np.ndarray] = field(default_factory=dict)
    step_count: int = 0

    def buffer(self, name: str, like: np.ndarray) -> np.ndarray:
        if name not in self.buffers:
            self.buffers[name] = np.zeros_like(like)
        return self.buffers[name]


def _check_finite(name: str, grad: np.ndarray) -> None:
    if not np.all(np.isfinite(grad)):
        raise OptimError(f"non-finite gradient for tensor {name}")


def lars_step(params: dict[str, np.ndarray], grads: dict[str, np.ndarray], state: OptimState) -> None:
    """One LARS update, in place.

    Per tensor: lambda = ||w|| / (||g|| + wd*||w|| + eps) (1 for exempt
    tensors), v <- mu*v + lambda*lr*(g + wd*w), w <- w - v.
    """
    for name, grad in grads.items():
        _check_finite(name, grad)
        w = params[name]
        exempt = name.rsplit(".", 1)[-1] in state.exempt_leaves
        if state.use_trust_ratio and not exempt:
            w_norm = float(np.linalg.norm(w))
            g_norm = float(np.linalg.norm(grad))
            trust = w_norm / (g_norm + state.weight_decay * w_norm + state.trust_eps)
        else:
            trust = 1.0
        update = grad if state.weight_decay == 0.0 else grad + state.weight_decay * w
        v = state.buffer(name, w)
        v *= state.momentum
        v += (trust * state.lr) * update
        w -= v
    state.step_count += 1


def sgd_step(params: dict[str, np.ndarray], grads: dict[str, np.ndarray], state: OptimState) -> None:
    """Momentum SGD: v <- mu*v + g + wd*w, w <- w - lr*v."""
    for name, grad in grads.items():
        _check_finite(name, grad)
        w = params[name]
        update = grad if state.weight_decay == 0.0 else grad + state.weight_decay * w
        v = state.buffer(name, w)
        v *= state.momentum
        v += update
        w -= state.lr * v
    state.step_count += 1


def optimizer_step(kind: str, params, grads, state: OptimState) -> None:
    if kind == "lars":
        lars_step(params, grads, state)
    elif kind == "sgd":
        sgd_step(params, grads, state)
    else:
        raise OptimError(f"unknown optimizer {kind!r}")
