"""Training arms and simulated synchronous data-parallel execution.

Three arms share one step machinery:

* ``pretrain_contrastive`` - encoder + projection trained with the supervised
  contrastive loss.
* ``train_probe`` - projection discarded, encoder frozen in eval mode, a
  linear classifier trained with cross-entropy on the features.
* ``train_scratch`` - encoder + linear classifier trained end-to-end with
  cross-entropy; its epoch budget should equal pretrain + probe so total
  iterations match.

``data_parallel_step`` splits the global batch over K simulated workers. Each
worker runs forward/backward on its shard; per-item loss gradients are scaled
by K before the backward so the arithmetic mean of worker gradients equals the
full-batch gradient. Batch-norm either normalizes by shard-local statistics
(running estimates updated from the shard mean - the default) or by pooled
global statistics exchanged before normalizing (``bn_sync=True``), in which
case the K-worker step is mathematically the single-worker step.

Every run is a deterministic function of its config and seeds: epoch-level RNG
streams are derived from (seed, purpose, epoch), so resuming from a checkpoint
continues bit-exactly.
"""

from __future__ import annotations

import hashlib
import logging
import os
import time
from dataclasses import dataclass, field, fields, replace

import numpy as np

from . import model as model_lib
from . import ops
from .augment import (
    TRANSLATION_MAX_MM,
    apply_pipeline,
    center_crop,
    draw_params,
    required_source_side,
)
from .corpus import Corpus, SplitSpec, sample_balanced_epoch
from .errors import ConfigError, TrainingError
from .evaluate import compute_metrics, write_metrics_csv
from .losses import softmax_cross_entropy, supervised_contrastive_loss
from .model import LayerSpec, ModelConfig, apply_layer, apply_layer_backward
from .optim import OptimState, optimizer_step, scaled_lr

logger = logging.getLogger(__name__)

_SAMPLE_STREAM = 1
_AUGMENT_STREAM = 2
BN_MOMENTUM = 0.1

ARMS = ("contrastive", "scratch", "probe")


@dataclass(frozen=True)
class TrainConfig:
    arm: str = "contrastive"
    epochs: int = 10
    batch_size: int = 64
    per_class_per_epoch: int = 64
    patch_side: int = 64
    temperature: float = 0.07
    workers: int = 1
    bn_sync: bool = False
    optimizer: str = "lars"
    learning_rate: float = 0.0  # 0 -> scaled_lr(batch_size)
    momentum: float = 0.9
    weight_decay: float = 0.0
    seed: int = 0
    init_seed: int = 0
    projection_hidden: int = 128
    projection_dim: int = 128
    sharpen_flip_sign: bool = False
    checkpoint_every: int = 0  # epochs between rolling checkpoints; 0 = final only

    def validate(self) -> None:
        if self.arm not in ARMS:
            raise ConfigError(f"arm must be one of {ARMS}, got {self.arm!r}")
        if self.epochs < 0:
            raise ConfigError(f"epochs must be >= 0, got {self.epochs}")
        if self.batch_size < 1 or self.workers < 1:
            raise ConfigError("batch_size and workers must be >= 1")
        if self.batch_size % self.workers:
            raise ConfigError(
                f"batch_size {self.batch_size} not divisible by workers {self.workers}"
            )
        if self.temperature <= 0:
            raise ConfigError(f"temperature must be positive, got {self.temperature}")
        if self.optimizer not in ("lars", "sgd"):
            raise ConfigError(f"optimizer must be lars or sgd, got {self.optimizer!r}")

    def resolved_lr(self) -> float:
        return self.learning_rate if self.learning_rate > 0 else scaled_lr(self.batch_size)

    def to_text(self) -> str:
        lines = []
        for f in fields(self):
            value = getattr(self, f.name)
            if isinstance(value, bool):
                value = "true" if value else "false"
            lines.append(f"{f.name}={value}")
        return "\n".join(lines) + "\n"

    def config_hash(self) -> str:
        return hashlib.sha256(self.to_text().encode("utf-8")).hexdigest()


def parse_config_text(text: str, base: TrainConfig | None = None) -> TrainConfig:
    """Parse the flat key=value run-config format; unknown keys are rejected."""
    config = base or TrainConfig()
    known = {f.name: f.type for f in fields(TrainConfig)}
    updates = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key=value, got {line!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if key not in known:
            raise ConfigError(f"line {lineno}: unknown config key {key!r}")
        updates[key] = coerce_config_value(key, value)
    return replace(config, **updates)


def coerce_config_value(key: str, value: str):
    current = getattr(TrainConfig(), key)
    if isinstance(current, bool):
        if value.lower() in ("true", "1", "yes"):
            return True
        if value.lower() in ("false", "0", "no"):
            return False
        raise ConfigError(f"key {key}: expected a boolean, got {value!r}")
    if isinstance(current, int):
        return int(value)
    if isinstance(current, float):
        return float(value)
    return value


def canonical_config(arm: str) -> TrainConfig:
    """Full-scale reference settings: batch 4096 on 32 workers, 150/30/180 epochs."""
    epochs = {"contrastive": 150, "probe": 30, "scratch": 180}[arm]
    return TrainConfig(
        arm=arm,
        epochs=epochs,
        batch_size=4096,
        per_class_per_epoch=1200,
        patch_side=1129,
        temperature=0.07,
        workers=32,
    )


def desk_config(arm: str, **overrides) -> TrainConfig:
    """Laptop-scale settings used by the acceptance experiment."""
    epochs = {"contrastive": 10, "probe": 5, "scratch": 15}[arm]
    base = TrainConfig(arm=arm, epochs=epochs, batch_size=64, per_class_per_epoch=192,
                       patch_side=64, workers=1)
    return replace(base, **overrides)


@dataclass
class RunLog:
    config_hash: str
    rows: list[tuple[int, float, float, float]] = field(default_factory=list)

    def append(self, epoch: int, loss: float, lr: float, seconds: float) -> None:
        self.rows.append((epoch, loss, lr, seconds))

    def to_csv_text(self) -> str:
        lines = ["epoch,loss,lr,seconds"]
        for epoch, loss, lr, seconds in self.rows:
            lines.append(f"{epoch},{loss:.6f},{lr:.6g},{seconds:.3f}")
        return "\n".join(lines) + "\n"

    def content_hash(self) -> str:
        """Hash of the deterministic columns (wall time excluded)."""
        text = ";".join(f"{e},{loss:.10e},{lr:.10e}" for e, loss, lr, _ in self.rows)
        return hashlib.sha256(text.encode("ascii")).hexdigest()


def _stream_rng(seed: int, stream: int, epoch: int) -> np.random.Generator:
    return np.random.default_rng([seed, stream, epoch])


def make_model_config(config: TrainConfig, num_classes: int) -> ModelConfig:
    return ModelConfig(
        encoder=model_lib.EncoderConfig(input_side=config.patch_side),
        projection=model_lib.ProjectionConfig(
            hidden_dim=config.projection_hidden, output_dim=config.projection_dim
        ),
        num_classes=num_classes,
    )


def check_corpus_for_training(corpus: Corpus, config: TrainConfig) -> None:
    sides = {e.side for e in corpus.manifest.entries}
    if not sides:
        raise ConfigError("corpus is empty")
    needed = required_source_side(config.patch_side, TRANSLATION_MAX_MM, corpus.manifest.resolution_um)
    smallest = min(sides)
    if smallest < needed:
        raise ConfigError(
            f"stored patch side {smallest} too small for augmented training at "
            f"input side {config.patch_side}: need >= {needed}"
        )


def augmented_batch(
    corpus: Corpus, indices, rng: np.random.Generator, config: TrainConfig
) -> tuple[np.ndarray, np.ndarray]:
    """Load, augment and stack one batch; params drawn in batch order."""
    patches = []
    labels = []
    resolution = corpus.manifest.resolution_um
    for i in indices:
        pixels = corpus.patch_pixels(i)
        params = draw_params(rng)
        out = apply_pipeline(
            pixels,
            params,
            config.patch_side,
            resolution_um=resolution,
            sharpen_toward_blur=not config.sharpen_flip_sign,
        )
        patches.append(out.astype(np.float32))
        labels.append(corpus.manifest.entries[i].label)
    x = np.stack(patches)[:, None, :, :]
    return x, np.array(labels, dtype=np.int64)


def eval_batch(corpus: Corpus, indices, patch_side: int) -> tuple[np.ndarray, np.ndarray]:
    patches = [center_crop(corpus.patch_pixels(i), patch_side).astype(np.float32) for i in indices]
    labels = [corpus.manifest.entries[i].label for i in indices]
    return np.stack(patches)[:, None, :, :], np.array(labels, dtype=np.int64)


# --- simulated synchronous data parallelism ---------------------------------


def _channel_stats(x: np.ndarray) -> tuple[np.ndarray, np.ndarray, int]:
    x4 = x if x.ndim == 4 else x[:, :, None, None]
    n, _, h, w = x4.shape
    count = n * h * w
    total = x4.sum(axis=(0, 2, 3), dtype=np.float64)
    total_sq = (x4.astype(np.float64) ** 2).sum(axis=(0, 2, 3))
    return total, total_sq, count


def _update_running(params: dict, name: str, mean: np.ndarray, var: np.ndarray) -> None:
    rm, rv = params[f"{name}.running_mean"], params[f"{name}.running_var"]
    rm *= 1.0 - BN_MOMENTUM
    rm += (BN_MOMENTUM * mean).astype(rm.dtype)
    rv *= 1.0 - BN_MOMENTUM
    rv += (BN_MOMENTUM * var).astype(rv.dtype)


def data_parallel_step(
    plan: list[LayerSpec],
    params: dict[str, np.ndarray],
    x: np.ndarray,
    loss_fn,
    workers: int,
    bn_sync: bool = False,
):
    """One synchronous training step over ``workers`` simulated shards.

    ``loss_fn`` maps the gathered network output for the full batch to
    ``(loss_value, gradient)``. Returns ``(loss_value, grads)`` where grads is
    the arithmetic mean of per-worker gradients reduced in worker order;
    batch-norm running statistics in ``params`` are updated once per layer.
    """
    n = x.shape[0]
    if n % workers:
        raise ConfigError(f"batch size {n} not divisible by {workers} workers")
    acts = list(np.split(x, workers))
    layer_caches: list[list] = []

    for spec in plan:
        caches_w = []
        if spec.kind == "bn":
            name = spec.name
            dtype = acts[0].dtype
            if bn_sync:
                totals = [_channel_stats(a) for a in acts]
                count = sum(t[2] for t in totals)
                total = sum((t[0] for t in totals), np.zeros_like(totals[0][0]))
                total_sq = sum((t[1] for t in totals), np.zeros_like(totals[0][1]))
                mean = (total / count).astype(dtype)
                var = np.maximum(total_sq / count - (total / count) ** 2, 0.0).astype(dtype)
                for w in range(workers):
                    out, cache = apply_layer(
                        spec, params, acts[w], training=True, update_running=False,
                        bn_batch_stats=(mean, var),
                    )
                    acts[w] = out
                    caches_w.append(cache)
                _update_running(params, name, mean, var)
            else:
                shard_means, shard_vars = [], []
                for w in range(workers):
                    out, cache = apply_layer(
                        spec, params, acts[w], training=True, update_running=False
                    )
                    acts[w] = out
                    (_, _, _, _, stats), _ = cache
                    shard_means.append(stats[0])
                    shard_vars.append(stats[1])
                    caches_w.append(cache)
                mean = sum(shard_means[1:], shard_means[0].copy()) / workers
                var = sum(shard_vars[1:], shard_vars[0].copy()) / workers
                _update_running(params, name, mean, var)
        else:
            for w in range(workers):
                out, cache = apply_layer(spec, params, acts[w], training=True)
                acts[w] = out
                caches_w.append(cache)
        layer_caches.append(caches_w)

    gathered = np.concatenate(acts, axis=0)
    loss, dgathered = loss_fn(gathered)
    # scale per-worker upstream by K so the worker-mean equals the full gradient
    douts = [workers * d for d in np.split(dgathered, workers)]
    worker_grads: list[dict[str, np.ndarray]] = [{} for _ in range(workers)]

    for spec, caches_w in zip(reversed(plan), reversed(layer_caches)):
        if spec.kind == "bn" and bn_sync:
            sums = []
            for w in range(workers):
                bn_cache, squeeze = caches_w[w]
                d4 = douts[w][:, :, None, None] if squeeze else douts[w]
                sums.append(ops.bn_backward_sums(d4, bn_cache))
            count = sum(s[2] for s in sums)
            shared = (
                sum((s[0] for s in sums[1:]), sums[0][0].copy()),
                sum((s[1] for s in sums[1:]), sums[0][1].copy()),
                count,
            )
            for w in range(workers):
                douts[w] = apply_layer_backward(
                    spec, caches_w[w], douts[w], worker_grads[w], bn_shared_sums=shared
                )
        else:
            for w in range(workers):
                douts[w] = apply_layer_backward(spec, caches_w[w], douts[w], worker_grads[w])

    grads: dict[str, np.ndarray] = {}
    for name in worker_grads[0]:
        acc = worker_grads[0][name].copy()
        for w in range(1, workers):
            acc += worker_grads[w][name]
        grads[name] = acc / workers
    return loss, grads


# --- training arms ----------------------------------------------------------


def _make_opt_state(config: TrainConfig) -> OptimState:
    return OptimState(
        lr=config.resolved_lr(),
        momentum=config.momentum,
        weight_decay=config.weight_decay,
    )


def _epoch_batches(refs: list[int], batch_size: int):
    n_batches = len(refs) // batch_size
    if n_batches == 0:
        raise ConfigError(
            f"epoch sample of {len(refs)} patches smaller than batch size {batch_size}"
        )
    for b in range(n_batches):
        yield refs[b * batch_size : (b + 1) * batch_size]


def _train_loop(
    config: TrainConfig,
    corpus: Corpus,
    split: SplitSpec,
    params: dict[str, np.ndarray],
    plan: list[LayerSpec],
    loss_builder,
    opt_state: OptimState,
    runlog: RunLog,
    start_epoch: int,
    model_config: ModelConfig,
    out_path: str | None,
    stop_after_epoch: int | None = None,
) -> None:
    check_corpus_for_training(corpus, config)
    end_epoch = config.epochs if stop_after_epoch is None else min(config.epochs, stop_after_epoch)
    for epoch in range(start_epoch, end_epoch):
        tick = time.time()
        refs = sample_balanced_epoch(
            corpus.manifest, split, config.per_class_per_epoch, [config.seed, _SAMPLE_STREAM, epoch]
        )
        aug_rng = _stream_rng(config.seed, _AUGMENT_STREAM, epoch)
        losses = []
        for step, batch_refs in enumerate(_epoch_batches(refs, config.batch_size)):
            x, y = augmented_batch(corpus, batch_refs, aug_rng, config)
            loss, grads = data_parallel_step(
                plan, params, x, loss_builder(y), config.workers, config.bn_sync
            )
            if not np.isfinite(loss):
                raise TrainingError(f"non-finite loss at epoch {epoch} step {step}")
            optimizer_step(config.optimizer, params, grads, opt_state)
            losses.append(loss)
        runlog.append(epoch, float(np.mean(losses)), opt_state.lr, time.time() - tick)
        last = epoch == end_epoch - 1
        if out_path and (last or (config.checkpoint_every and (epoch + 1) % config.checkpoint_every == 0)):
            save_checkpoint(out_path, params, opt_state, runlog, config, epoch + 1, model_config)


def pretrain_contrastive(
    config: TrainConfig,
    corpus: Corpus,
    split: SplitSpec,
    out_path: str | None = None,
    resume_from: str | None = None,
    stop_after_epoch: int | None = None,
):
    """Contrastive pretraining of encoder + projection; returns (params, runlog).

    ``stop_after_epoch`` halts early (checkpointing at the stop point) without
    changing the config, mimicking an interrupted run that can be resumed.
    """
    config = replace(config, arm="contrastive")
    config.validate()
    num_classes = corpus.manifest.class_count
    if config.batch_size < 2 * num_classes:
        logger.warning(
            "batch size %d below 2x class count %d; batches may lack positives",
            config.batch_size,
            num_classes,
        )
    model_config = make_model_config(config, num_classes)
    params, opt_state, runlog, start_epoch = _init_or_resume(config, model_config, resume_from)
    plan = model_lib.encoder_plan(model_config.encoder) + model_lib.projection_plan()

    def loss_builder(labels):
        def fn(z):
            result = supervised_contrastive_loss(z, labels, config.temperature)
            return result.value, result.grad

        return fn

    _train_loop(
        config, corpus, split, params, plan, loss_builder, opt_state, runlog,
        start_epoch, model_config, out_path, stop_after_epoch,
    )
    return params, runlog


def train_scratch(
    config: TrainConfig,
    corpus: Corpus,
    split: SplitSpec,
    out_path: str | None = None,
    resume_from: str | None = None,
    stop_after_epoch: int | None = None,
):
    """End-to-end cross-entropy training of encoder + linear head."""
    config = replace(config, arm="scratch")
    config.validate()
    model_config = make_model_config(config, corpus.manifest.class_count)
    params, opt_state, runlog, start_epoch = _init_or_resume(config, model_config, resume_from)
    plan = model_lib.encoder_plan(model_config.encoder) + model_lib.head_plan()

    def loss_builder(labels):
        return lambda logits: softmax_cross_entropy(logits, labels)

    _train_loop(
        config, corpus, split, params, plan, loss_builder, opt_state, runlog,
        start_epoch, model_config, out_path, stop_after_epoch,
    )
    return params, runlog


def head_step(params: dict[str, np.ndarray], features: np.ndarray, labels: np.ndarray):
    """Forward/backward of the linear head alone; returns (loss, grads)."""
    logits, cache = ops.dense(features, params["head.weight"], params["head.bias"])
    loss, dlogits = softmax_cross_entropy(logits, labels)
    _, dw, db = ops.dense_backward(dlogits, cache)
    return loss, {"head.weight": dw, "head.bias": db}


def fit_linear_head(
    features: np.ndarray,
    labels: np.ndarray,
    params: dict[str, np.ndarray],
    epochs: int,
    batch_size: int,
    opt_state: OptimState,
    optimizer: str = "lars",
    seed: int = 0,
) -> list[float]:
    """Train head.weight/head.bias on fixed features; returns per-epoch losses."""
    n = features.shape[0]
    history = []
    for epoch in range(epochs):
        order = np.random.default_rng([seed, epoch]).permutation(n)
        losses = []
        for b in range(max(1, n // batch_size)):
            idx = order[b * batch_size : (b + 1) * batch_size]
            if idx.size == 0:
                continue
            loss, grads = head_step(params, features[idx], labels[idx])
            optimizer_step(optimizer, params, grads, opt_state)
            losses.append(loss)
        history.append(float(np.mean(losses)))
    return history


def train_probe(
    config: TrainConfig,
    corpus: Corpus,
    split: SplitSpec,
    encoder_params: dict[str, np.ndarray],
    out_path: str | None = None,
):
    """Linear probe on frozen encoder features (projection head discarded).

    The encoder runs in eval mode with its running statistics frozen; only
    head.weight and head.bias receive updates. Returns (params, runlog).
    """
    config = replace(config, arm="probe")
    config.validate()
    check_corpus_for_training(corpus, config)
    model_config = make_model_config(config, corpus.manifest.class_count)
    params = {k: v.copy() for k, v in encoder_params.items()}
    opt_state = _make_opt_state(config)
    runlog = RunLog(config.config_hash())
    for epoch in range(config.epochs):
        tick = time.time()
        refs = sample_balanced_epoch(
            corpus.manifest, split, config.per_class_per_epoch, [config.seed, _SAMPLE_STREAM, epoch]
        )
        aug_rng = _stream_rng(config.seed, _AUGMENT_STREAM, epoch)
        losses = []
        for step, batch_refs in enumerate(_epoch_batches(refs, config.batch_size)):
            x, y = augmented_batch(corpus, batch_refs, aug_rng, config)
            features = model_lib.encoder_forward(params, x, model_config, training=False)
            loss, grads = head_step(params, features, y)
            if not np.isfinite(loss):
                raise TrainingError(f"non-finite loss at epoch {epoch} step {step}")
            optimizer_step(config.optimizer, params, grads, opt_state)
            losses.append(loss)
        runlog.append(epoch, float(np.mean(losses)), opt_state.lr, time.time() - tick)
    if out_path:
        save_checkpoint(out_path, params, opt_state, runlog, config, config.epochs, model_config)
    return params, runlog


# --- evaluation over a section set ------------------------------------------


def evaluate_on_sections(
    params: dict[str, np.ndarray],
    model_config: ModelConfig,
    corpus: Corpus,
    sections,
    patch_side: int,
    batch_size: int = 64,
):
    """Natural-frequency evaluation on all patches of the given sections.

    Returns (MetricBlock, features, labels, brain_ids); features are the
    eval-mode encoder outputs used downstream for clustering.
    """
    section_set = set(sections)
    indices = [
        i for i, e in enumerate(corpus.manifest.entries) if e.section_id in section_set
    ]
    if not indices:
        raise ConfigError("no patches in the requested sections")
    feature_blocks = []
    logit_blocks = []
    for b in range(0, len(indices), batch_size):
        x, _ = eval_batch(corpus, indices[b : b + batch_size], patch_side)
        features = model_lib.encoder_forward(params, x, model_config, training=False)
        feature_blocks.append(features)
        logit_blocks.append(model_lib.linear_head_forward(params, features))
    features = np.concatenate(feature_blocks)
    logits = np.concatenate(logit_blocks)
    labels = np.array([corpus.manifest.entries[i].label for i in indices], dtype=np.int64)
    brains = np.array([corpus.manifest.entries[i].brain_id for i in indices], dtype=np.int64)
    return compute_metrics(logits, labels), features, labels, brains


# --- checkpointing ----------------------------------------------------------


def save_checkpoint(
    path: str,
    params: dict[str, np.ndarray],
    opt_state: OptimState,
    runlog: RunLog,
    config: TrainConfig,
    epoch: int,
    model_config: ModelConfig,
) -> None:
    tensors = dict(params)
    for name, buf in opt_state.buffers.items():
        tensors[f"optim.{name}"] = buf
    meta = {
        "train_config": config.to_text(),
        "config_hash": config.config_hash(),
        "model_config": model_config.to_dict(),
        "epoch": epoch,
        "optim": {
            "lr": opt_state.lr,
            "momentum": opt_state.momentum,
            "weight_decay": opt_state.weight_decay,
            "step_count": opt_state.step_count,
        },
        "runlog_rows": [list(row) for row in runlog.rows],
    }
    model_lib.save_tensors(path, tensors, meta)


def load_checkpoint(path: str):
    """Returns (params, opt_state, runlog, config, epoch, model_config)."""
    tensors, meta = model_lib.load_tensors(path)
    params = {k: v for k, v in tensors.items() if not k.startswith("optim.")}
    config = parse_config_text(meta["train_config"])
    opt_meta = meta["optim"]
    opt_state = OptimState(
        lr=opt_meta["lr"],
        momentum=opt_meta["momentum"],
        weight_decay=opt_meta["weight_decay"],
        step_count=opt_meta["step_count"],
        buffers={k[len("optim.") :]: v for k, v in tensors.items() if k.startswith("optim.")},
    )
    runlog = RunLog(meta["config_hash"])
    for row in meta["runlog_rows"]:
        runlog.append(int(row[0]), float(row[1]), float(row[2]), float(row[3]))
    model_config = ModelConfig.from_dict(meta["model_config"])
    return params, opt_state, runlog, config, int(meta["epoch"]), model_config


def _init_or_resume(config: TrainConfig, model_config: ModelConfig, resume_from: str | None):
    if resume_from is None:
        params = model_lib.init_params(model_config, config.init_seed)
        return params, _make_opt_state(config), RunLog(config.config_hash()), 0
    params, opt_state, runlog, saved_config, epoch, saved_model = load_checkpoint(resume_from)
    if saved_config.config_hash() != config.config_hash():
        raise TrainingError(
            f"checkpoint {resume_from} was written by a different config "
            f"({saved_config.config_hash()[:12]} != {config.config_hash()[:12]}); refusing to resume"
        )
    if saved_model != model_config:
        raise TrainingError(f"checkpoint {resume_from} model config does not match")
    return params, opt_state, runlog, epoch


# --- paired desk experiment --------------------------------------------------


def run_experiment(
    corpus: Corpus,
    split: SplitSpec,
    out_dir: str,
    *,
    pretrain_epochs: int = 10,
    probe_epochs: int = 5,
    batch_size: int = 64,
    patch_side: int = 64,
    per_class_per_epoch: int = 192,
    temperature: float = 0.07,
    workers: int = 1,
    seed: int = 0,
):
    """Run the contrastive-vs-scratch comparison with matched iteration counts.

    The scratch arm trains for pretrain_epochs + probe_epochs. Writes
    ``metrics.csv`` (model,dataset,f1,top1,top3 layout) plus run logs under
    ``out_dir`` and returns a result dict with metric blocks and the
    contrastive encoder's test-set features for cluster analysis.
    """
    os.makedirs(out_dir, exist_ok=True)
    common = dict(
        batch_size=batch_size,
        per_class_per_epoch=per_class_per_epoch,
        patch_side=patch_side,
        temperature=temperature,
        workers=workers,
        seed=seed,
    )
    pre_cfg = TrainConfig(arm="contrastive", epochs=pretrain_epochs, **common)
    probe_cfg = TrainConfig(arm="probe", epochs=probe_epochs, **common)
    scratch_cfg = TrainConfig(arm="scratch", epochs=pretrain_epochs + probe_epochs, **common)

    pre_params, pre_log = pretrain_contrastive(
        pre_cfg, corpus, split, out_path=os.path.join(out_dir, "contrastive.ckpt")
    )
    probe_params, probe_log = train_probe(
        probe_cfg, corpus, split, pre_params, out_path=os.path.join(out_dir, "probe.ckpt")
    )
    scratch_params, scratch_log = train_scratch(
        scratch_cfg, corpus, split, out_path=os.path.join(out_dir, "scratch.ckpt")
    )

    model_config = make_model_config(pre_cfg, corpus.manifest.class_count)
    results = {"logs": {"contrastive": pre_log, "probe": probe_log, "scratch": scratch_log}}
    rows = []
    eval_sets = [("X_te", sorted(split.test_sections))]
    if split.holdout_brain is not None:
        holdout = sorted(corpus.manifest.sections_of_brain(split.holdout_brain))
        if holdout:
            eval_sets.append(("X_un", holdout))
    for dataset, sections in eval_sets:
        probe_block, features, labels, brains = evaluate_on_sections(
            probe_params, model_config, corpus, sections, patch_side, batch_size
        )
        scratch_block, _, _, _ = evaluate_on_sections(
            scratch_params, model_config, corpus, sections, patch_side, batch_size
        )
        rows.append(("contrastive", dataset, probe_block))
        rows.append(("scratch", dataset, scratch_block))
        results[dataset] = {
            "contrastive": probe_block,
            "scratch": scratch_block,
            "features": features,
            "labels": labels,
            "brains": brains,
        }
    write_metrics_csv(os.path.join(out_dir, "metrics.csv"), rows)
    for name, log in results["logs"].items():
        with open(os.path.join(out_dir, f"runlog_{name}.csv"), "w") as f:
            f.write(log.to_csv_text())
    return results
