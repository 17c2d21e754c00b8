"""Network assembly: convolutional encoder, projection MLP, linear classifier.

Networks are flat layer plans over the operators in :mod:`patchcontrast.ops`,
with parameters kept in a plain name->array dict. The encoder is six blocks of
two convolutions each (the very first convolution is a 5x5/stride-4 stem, all
others 3x3/stride-1 with same-padding), every convolution followed by batch
norm and ReLU, 2x2 max-pooling after blocks 1-5, and a global average pool
down to the feature vector. Pooling is skipped once the spatial extent has
collapsed to 1x1 so small desk-scale inputs remain usable; the parameter count
never depends on the input side.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field

import numpy as np

from . import ops
from .errors import FormatError, ShapeError


@dataclass(frozen=True)
class EncoderConfig:
    input_side: int = 128
    filters: tuple[int, ...] = (16, 32, 64, 64, 128, 128)
    stem_kernel: int = 5
    stem_stride: int = 4
    stem_padding: int = 2
    kernel: int = 3

    @property
    def feature_dim(self) -> int:
        return self.filters[-1]


@dataclass(frozen=True)
class ProjectionConfig:
    hidden_dim: int = 128
    output_dim: int = 128


@dataclass(frozen=True)
class ModelConfig:
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    projection: ProjectionConfig = field(default_factory=ProjectionConfig)
    num_classes: int = 2

    def to_dict(self) -> dict:
        return {
            "encoder": vars(self.encoder) | {"filters": list(self.encoder.filters)},
            "projection": vars(self.projection),
            "num_classes": self.num_classes,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        enc = dict(d["encoder"])
        enc["filters"] = tuple(enc["filters"])
        return cls(
            encoder=EncoderConfig(**enc),
            projection=ProjectionConfig(**d["projection"]),
            num_classes=int(d["num_classes"]),
        )


@dataclass(frozen=True)
class LayerSpec:
    kind: str  # conv | bn | relu | pool | gap | dense | l2norm
    name: str = ""
    stride: int = 1
    padding: int = 0


def encoder_plan(config: EncoderConfig) -> list[LayerSpec]:
    plan: list[LayerSpec] = []
    for b, _ in enumerate(config.filters, start=1):
        for conv_idx in (1, 2):
            prefix = f"encoder.block{b}"
            if b == 1 and conv_idx == 1:
                plan.append(
                    LayerSpec("conv", f"{prefix}.conv1", config.stem_stride, config.stem_padding)
                )
            else:
                plan.append(LayerSpec("conv", f"{prefix}.conv{conv_idx}", 1, config.kernel // 2))
            plan.append(LayerSpec("bn", f"{prefix}.bn{conv_idx}"))
            plan.append(LayerSpec("relu"))
        if b < len(config.filters):
            plan.append(LayerSpec("pool"))
    plan.append(LayerSpec("gap"))
    return plan


def projection_plan() -> list[LayerSpec]:
    return [
        LayerSpec("dense", "projection.fc1"),
        LayerSpec("bn", "projection.bn"),
        LayerSpec("relu"),
        LayerSpec("dense", "projection.fc2"),
        LayerSpec("l2norm"),
    ]


def head_plan() -> list[LayerSpec]:
    return [LayerSpec("dense", "head")]


def encoder_shape_trace(config: EncoderConfig, side: int) -> list[int]:
    """Spatial side after the stem and after each (possibly skipped) pool."""
    s = (side + 2 * config.stem_padding - config.stem_kernel) // config.stem_stride + 1
    if s < 1:
        raise ShapeError(f"input side {side} collapses to {s} at the stem")
    trace = [s]
    for _ in range(len(config.filters) - 1):
        s = s // 2 if s >= 2 else s
        trace.append(s)
    return trace


def parameter_shapes(config: ModelConfig) -> dict[str, tuple[int, ...]]:
    shapes: dict[str, tuple[int, ...]] = {}
    enc = config.encoder
    in_ch = 1
    for b, out_ch in enumerate(enc.filters, start=1):
        for conv_idx in (1, 2):
            k = enc.stem_kernel if (b == 1 and conv_idx == 1) else enc.kernel
            shapes[f"encoder.block{b}.conv{conv_idx}.weight"] = (out_ch, in_ch, k, k)
            shapes[f"encoder.block{b}.conv{conv_idx}.bias"] = (out_ch,)
            for stat in ("gamma", "beta", "running_mean", "running_var"):
                shapes[f"encoder.block{b}.bn{conv_idx}.{stat}"] = (out_ch,)
            in_ch = out_ch
    d_e = enc.feature_dim
    hidden, d_p = config.projection.hidden_dim, config.projection.output_dim
    shapes["projection.fc1.weight"] = (d_e, hidden)
    shapes["projection.fc1.bias"] = (hidden,)
    for stat in ("gamma", "beta", "running_mean", "running_var"):
        shapes[f"projection.bn.{stat}"] = (hidden,)
    shapes["projection.fc2.weight"] = (hidden, d_p)
    shapes["projection.fc2.bias"] = (d_p,)
    shapes["head.weight"] = (d_e, config.num_classes)
    shapes["head.bias"] = (config.num_classes,)
    return shapes


def parameter_count(config: ModelConfig) -> int:
    return sum(int(np.prod(s)) for s in parameter_shapes(config).values())


def init_params(config: ModelConfig, seed: int, dtype=np.float32) -> dict[str, np.ndarray]:
    """Kaiming fan-in normal weights, zero biases, identity batch-norm affines."""
    rng = np.random.default_rng(seed)
    params: dict[str, np.ndarray] = {}
    for name, shape in parameter_shapes(config).items():
        leaf = name.rsplit(".", 1)[-1]
        if leaf == "weight":
            if len(shape) == 4:
                fan_in = shape[1] * shape[2] * shape[3]
            else:
                fan_in = shape[0]
            params[name] = rng.normal(0.0, np.sqrt(2.0 / fan_in), size=shape).astype(dtype)
        elif leaf in ("bias", "beta", "running_mean"):
            params[name] = np.zeros(shape, dtype=dtype)
        elif leaf in ("gamma", "running_var"):
            params[name] = np.ones(shape, dtype=dtype)
        else:  # pragma: no cover - parameter_shapes controls the names
            raise ShapeError(f"unknown parameter leaf {name}")
    return params


TRAINABLE_LEAVES = ("weight", "bias", "gamma", "beta")


def trainable_names(params: dict[str, np.ndarray]) -> list[str]:
    return [n for n in params if n.rsplit(".", 1)[-1] in TRAINABLE_LEAVES]


def apply_layer(
    spec: LayerSpec,
    params: dict[str, np.ndarray],
    x: np.ndarray,
    training: bool,
    update_running: bool = True,
    bn_batch_stats: tuple[np.ndarray, np.ndarray] | None = None,
):
    """Run one layer forward; returns (out, cache). Caches feed apply_layer_backward."""
    if spec.kind == "conv":
        return ops.conv2d(
            x, params[f"{spec.name}.weight"], params[f"{spec.name}.bias"], spec.stride, spec.padding
        )
    if spec.kind == "bn":
        squeeze = x.ndim == 2
        x4 = x[:, :, None, None] if squeeze else x
        out, cache = ops.batchnorm2d(
            x4,
            params[f"{spec.name}.gamma"],
            params[f"{spec.name}.beta"],
            params[f"{spec.name}.running_mean"],
            params[f"{spec.name}.running_var"],
            training,
            batch_stats=bn_batch_stats,
            update_running=update_running,
        )
        if squeeze:
            out = out[:, :, 0, 0]
        return out, (cache, squeeze)
    if spec.kind == "relu":
        return ops.relu(x)
    if spec.kind == "pool":
        if x.shape[2] == 1 and x.shape[3] == 1:
            return x, None  # spatial extent already collapsed; pooling skipped
        return ops.maxpool2d(x)
    if spec.kind == "gap":
        return ops.global_avg_pool(x)
    if spec.kind == "dense":
        return ops.dense(x, params[f"{spec.name}.weight"], params[f"{spec.name}.bias"])
    if spec.kind == "l2norm":
        return ops.l2_normalize(x)
    raise ShapeError(f"unknown layer kind {spec.kind}")


def apply_layer_backward(
    spec: LayerSpec,
    cache,
    dout: np.ndarray,
    grads: dict[str, np.ndarray],
    bn_shared_sums: tuple[np.ndarray, np.ndarray, int] | None = None,
) -> np.ndarray:
    """Run one layer backward, accumulating parameter grads into ``grads``."""
    if spec.kind == "conv":
        dx, dw, db = ops.conv2d_backward(dout, cache)
        _accumulate(grads, f"{spec.name}.weight", dw)
        _accumulate(grads, f"{spec.name}.bias", db)
        return dx
    if spec.kind == "bn":
        bn_cache, squeeze = cache
        d4 = dout[:, :, None, None] if squeeze else dout
        dx, dgamma, dbeta = ops.batchnorm2d_backward(d4, bn_cache, shared_sums=bn_shared_sums)
        _accumulate(grads, f"{spec.name}.gamma", dgamma)
        _accumulate(grads, f"{spec.name}.beta", dbeta)
        return dx[:, :, 0, 0] if squeeze else dx
    if spec.kind == "relu":
        return ops.relu_backward(dout, cache)
    if spec.kind == "pool":
        if cache is None:
            return dout
        return ops.maxpool2d_backward(dout, cache)
    if spec.kind == "gap":
        return ops.global_avg_pool_backward(dout, cache)
    if spec.kind == "dense":
        dx, dw, db = ops.dense_backward(dout, cache)
        _accumulate(grads, f"{spec.name}.weight", dw)
        _accumulate(grads, f"{spec.name}.bias", db)
        return dx
    if spec.kind == "l2norm":
        return ops.l2_normalize_backward(dout, cache)
    raise ShapeError(f"unknown layer kind {spec.kind}")


def _accumulate(grads: dict[str, np.ndarray], name: str, value: np.ndarray) -> None:
    if name in grads:
        grads[name] += value
    else:
        grads[name] = value


def run_forward(
    plan: list[LayerSpec],
    params: dict[str, np.ndarray],
    x: np.ndarray,
    training: bool,
    update_running: bool = True,
):
    caches = []
    for spec in plan:
        x, cache = apply_layer(spec, params, x, training, update_running)
        caches.append(cache)
    return x, caches


def run_backward(plan: list[LayerSpec], caches: list, dout: np.ndarray):
    grads: dict[str, np.ndarray] = {}
    for spec, cache in zip(reversed(plan), reversed(caches)):
        dout = apply_layer_backward(spec, cache, dout, grads)
    return dout, grads


def _check_batch(x: np.ndarray, side: int) -> None:
    if x.ndim != 4 or x.shape[1] != 1:
        raise ShapeError(f"expected (N, 1, side, side) batch, got {x.shape}")
    if x.shape[2] != x.shape[3]:
        raise ShapeError(f"expected square patches, got {x.shape}")


def encoder_forward(
    params: dict[str, np.ndarray], x: np.ndarray, config: ModelConfig, training: bool = False
) -> np.ndarray:
    """Map a patch batch (N, 1, P, P) to feature vectors (N, feature_dim)."""
    _check_batch(x, config.encoder.input_side)
    trace = encoder_shape_trace(config.encoder, x.shape[2])
    if trace[-1] < 1:
        raise ShapeError(f"input side {x.shape[2]} is incompatible; shape trace {trace}")
    out, _ = run_forward(encoder_plan(config.encoder), params, x, training)
    return out


def projection_forward(
    params: dict[str, np.ndarray], features: np.ndarray, training: bool = False
) -> np.ndarray:
    """Map features to unit-norm projection vectors (N, output_dim)."""
    out, _ = run_forward(projection_plan(), params, features, training)
    return out


def linear_head_forward(params: dict[str, np.ndarray], features: np.ndarray) -> np.ndarray:
    """Class logits from features; a single affine map."""
    out, _ = ops.dense(features, params["head.weight"], params["head.bias"])
    return out


# --- checkpoint format -----------------------------------------------------
#
# A checkpoint is a UTF-8 JSON header describing every tensor (name, dtype,
# shape, byte offset into the payload) plus arbitrary metadata, followed by
# the raw little-endian payload:
#
#   PCCKPT1 <header-bytes>\n
#   {json header}
#   <payload>

_MAGIC = "PCCKPT1"


def save_tensors(path: str, tensors: dict[str, np.ndarray], meta: dict | None = None) -> None:
    entries = []
    payload = bytearray()
    for name, arr in tensors.items():
        arr = np.ascontiguousarray(arr)
        if arr.dtype == np.float64:
            data = arr.astype("<f8").tobytes()
            dtype = "float64"
        else:
            data = arr.astype("<f4").tobytes()
            dtype = "float32"
        entries.append(
            {"name": name, "dtype": dtype, "shape": list(arr.shape), "offset": len(payload), "nbytes": len(data)}
        )
        payload.extend(data)
    header = json.dumps({"meta": meta or {}, "tensors": entries}, sort_keys=True).encode("utf-8")
    tmp = path + ".tmp"
    with open(tmp, "wb") as f:
        f.write(f"{_MAGIC} {len(header)}\n".encode("ascii"))
        f.write(header)
        f.write(bytes(payload))
    os.replace(tmp, path)


def load_tensors(path: str) -> tuple[dict[str, np.ndarray], dict]:
    with open(path, "rb") as f:
        first = f.readline().decode("ascii", errors="replace").strip()
        parts = first.split()
        if len(parts) != 2 or parts[0] != _MAGIC:
            raise FormatError(f"{path}: not a checkpoint (bad magic line {first!r})")
        header_len = int(parts[1])
        header = json.loads(f.read(header_len).decode("utf-8"))
        payload = f.read()
    tensors: dict[str, np.ndarray] = {}
    for entry in header["tensors"]:
        dt = np.dtype("<f8") if entry["dtype"] == "float64" else np.dtype("<f4")
        start, nbytes = entry["offset"], entry["nbytes"]
        if start + nbytes > len(payload):
            raise FormatError(f"{path}: tensor {entry['name']} extends past payload end")
        arr = np.frombuffer(payload[start : start + nbytes], dtype=dt).reshape(entry["shape"])
        tensors[entry["name"]] = arr.astype(dt.newbyteorder("="))
    return tensors, header["meta"]


def save_params(path: str, params: dict[str, np.ndarray], config: ModelConfig, seed: int) -> None:
    save_tensors(path, params, meta={"model_config": config.to_dict(), "seed": seed})


def load_params(path: str) -> tuple[dict[str, np.ndarray], ModelConfig, int]:
    tensors, meta = load_tensors(path)
    config = ModelConfig.from_dict(meta["model_config"])
    expected = parameter_shapes(config)
    for name, shape in expected.items():
        if name not in tensors:
            raise FormatError(f"{path}: missing tensor {name}")
        if tuple(tensors[name].shape) != shape:
            raise FormatError(f"{path}: tensor {name} has shape {tensors[name].shape}, expected {shape}")
    return {n: tensors[n] for n in expected}, config, int(meta.get("seed", 0))
