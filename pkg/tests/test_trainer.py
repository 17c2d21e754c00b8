import numpy as np
import pytest

from patchcontrast import model as M
from patchcontrast import trainer
from patchcontrast.corpus import SplitSpec
from patchcontrast.errors import ConfigError, OptimError, TrainingError
from patchcontrast.losses import supervised_contrastive_loss
from patchcontrast.optim import OptimState
from patchcontrast.trainer import (
    TrainConfig,
    canonical_config,
    data_parallel_step,
    desk_config,
    evaluate_on_sections,
    fit_linear_head,
    load_checkpoint,
    parse_config_text,
    pretrain_contrastive,
    save_checkpoint,
    train_probe,
    train_scratch,
)

TINY = dict(
    epochs=2,
    batch_size=12,
    per_class_per_epoch=8,
    patch_side=32,
    workers=1,
    seed=0,
)


def tiny_config(arm="contrastive", **overrides):
    merged = {**TINY, **overrides}
    return TrainConfig(arm=arm, **merged)


def params_digest(params):
    return {k: v.tobytes() for k, v in params.items()}


class TestConfig:
    def test_text_round_trip(self):
        config = tiny_config(temperature=0.5, bn_sync=True)
        parsed = parse_config_text(config.to_text())
        assert parsed == config
        assert parsed.config_hash() == config.config_hash()

    def test_unknown_key_rejected(self):
        with pytest.raises(ConfigError, match="bogus"):
            parse_config_text("bogus=1\n")

    def test_flag_value_coercion(self):
        parsed = parse_config_text("epochs=7\nbn_sync=true\ntemperature=0.2\narm=scratch\n")
        assert parsed.epochs == 7
        assert parsed.bn_sync is True
        assert parsed.temperature == 0.2
        assert parsed.arm == "scratch"

    def test_validation(self):
        with pytest.raises(ConfigError):
            tiny_config(batch_size=10, workers=4).validate()
        with pytest.raises(ConfigError):
            tiny_config(arm="other").validate()
        with pytest.raises(ConfigError):
            tiny_config(temperature=0.0).validate()

    def test_canonical_iteration_matching(self):
        pre = canonical_config("contrastive")
        probe = canonical_config("probe")
        scratch = canonical_config("scratch")
        assert scratch.epochs == pre.epochs + probe.epochs
        assert pre.batch_size == 4096 and pre.workers == 32
        assert pre.temperature == 0.07
        assert pre.resolved_lr() == 0.32

    def test_desk_iteration_matching(self):
        assert desk_config("scratch").epochs == desk_config("contrastive").epochs + desk_config("probe").epochs


class TestDataParallelStep:
    def setup_method(self):
        self.model_config = M.ModelConfig(
            encoder=M.EncoderConfig(input_side=32, filters=(4, 8)),
            projection=M.ProjectionConfig(hidden_dim=8, output_dim=8),
            num_classes=3,
        )
        self.plan = M.encoder_plan(self.model_config.encoder) + M.projection_plan()
        rng = np.random.default_rng(0)
        self.x = rng.uniform(0, 1, size=(8, 1, 32, 32)).astype(np.float32)
        self.y = np.array([0, 1, 2, 0, 1, 2, 0, 1])

    def loss_fn(self, z):
        result = supervised_contrastive_loss(z, self.y, 0.2)
        return result.value, result.grad

    def fresh_params(self):
        return M.init_params(self.model_config, seed=3)

    def test_indivisible_batch_rejected(self):
        with pytest.raises(ConfigError):
            data_parallel_step(self.plan, self.fresh_params(), self.x, self.loss_fn, 3)

    def test_k1_matches_plain_path(self):
        params_a = self.fresh_params()
        loss_a, grads_a = data_parallel_step(self.plan, params_a, self.x, self.loss_fn, 1)
        params_b = self.fresh_params()
        z, caches = M.run_forward(self.plan, params_b, self.x, training=True, update_running=False)
        loss_b, dz = self.loss_fn(z)
        _, grads_b = M.run_backward(self.plan, caches, dz)
        assert loss_a == loss_b
        for name in grads_b:
            np.testing.assert_array_equal(grads_a[name], grads_b[name])

    def as_float64(self, params):
        return {k: v.astype(np.float64) for k, v in params.items()}

    def test_identical_shards_match_single_worker(self):
        # float64 isolates the reduction semantics from accumulation noise
        half = self.x[:4].astype(np.float64)
        doubled = np.concatenate([half, half])
        self.y = np.array([0, 1, 2, 0] * 2)
        params_a = self.as_float64(self.fresh_params())
        _, grads_k2 = data_parallel_step(self.plan, params_a, doubled, self.loss_fn, 2)
        params_b = self.as_float64(self.fresh_params())
        _, grads_k1 = data_parallel_step(self.plan, params_b, doubled, self.loss_fn, 1)
        for name in grads_k1:
            np.testing.assert_allclose(grads_k2[name], grads_k1[name], atol=1e-6)
        for name in ("encoder.block1.bn1", "projection.bn"):
            np.testing.assert_allclose(
                params_a[f"{name}.running_mean"], params_b[f"{name}.running_mean"], atol=1e-9
            )

    def test_reduced_gradient_equals_serial_shard_mean(self):
        workers = 4
        x = self.x.astype(np.float64)
        params = self.as_float64(self.fresh_params())
        loss, grads = data_parallel_step(self.plan, params, x, self.loss_fn, workers)

        # serial recomputation: each worker independently, shard-local BN stats
        shards = np.split(x, workers)
        serial_params = self.as_float64(self.fresh_params())
        outputs, caches = [], []
        for shard in shards:
            z, cache = M.run_forward(self.plan, serial_params, shard, training=True, update_running=False)
            outputs.append(z)
            caches.append(cache)
        _, dz = self.loss_fn(np.concatenate(outputs))
        shard_grads = []
        for w, cache in enumerate(caches):
            upstream = workers * dz[w * 2 : (w + 1) * 2]
            _, g = M.run_backward(self.plan, cache, upstream)
            shard_grads.append(g)
        for name in shard_grads[0]:
            mean = sum(g[name] for g in shard_grads) / workers
            np.testing.assert_allclose(grads[name], mean, atol=1e-6)

    def test_sync_mode_k4_equals_k1_after_three_steps(self):
        def run(workers):
            params = self.fresh_params()
            state = OptimState(lr=0.01)
            for _ in range(3):
                _, grads = data_parallel_step(
                    self.plan, params, self.x, self.loss_fn, workers, bn_sync=True
                )
                trainer.optimizer_step("lars", params, grads, state)
            return params

        p1, p4 = run(1), run(4)
        worst = max(np.abs(p1[k] - p4[k]).max() for k in p1)
        assert worst < 1e-5

    def test_local_mode_diverges_from_sync(self):
        params_local = self.fresh_params()
        _, grads_local = data_parallel_step(self.plan, params_local, self.x, self.loss_fn, 4, bn_sync=False)
        params_sync = self.fresh_params()
        _, grads_sync = data_parallel_step(self.plan, params_sync, self.x, self.loss_fn, 4, bn_sync=True)
        diffs = [np.abs(grads_local[k] - grads_sync[k]).max() for k in grads_local]
        assert max(diffs) > 1e-6  # shard-local statistics genuinely change the step


class TestArms:
    def test_zero_epochs_returns_initial_params(self, small_corpus, small_split):
        config = tiny_config(epochs=0)
        params, runlog = pretrain_contrastive(config, small_corpus, small_split)
        model_config = trainer.make_model_config(config, small_corpus.manifest.class_count)
        np.testing.assert_array_equal(
            params["encoder.block1.conv1.weight"],
            M.init_params(model_config, config.init_seed)["encoder.block1.conv1.weight"],
        )
        assert runlog.rows == []

    def test_pretrain_smoke_and_determinism(self, small_corpus, small_split):
        config = tiny_config()
        _, log_a = pretrain_contrastive(config, small_corpus, small_split)
        _, log_b = pretrain_contrastive(config, small_corpus, small_split)
        assert log_a.content_hash() == log_b.content_hash()
        assert len(log_a.rows) == 2
        assert all(np.isfinite(row[1]) for row in log_a.rows)

    def test_probe_freezes_encoder(self, small_corpus, small_split):
        pre_config = tiny_config(epochs=1)
        params, _ = pretrain_contrastive(pre_config, small_corpus, small_split)
        before = params_digest(params)
        probe_config = tiny_config(arm="probe", epochs=1)
        probed, _ = train_probe(probe_config, small_corpus, small_split, params)
        after = params_digest(probed)
        for name in before:
            if name.startswith("head."):
                continue
            assert before[name] == after[name], name
        assert before["head.weight"] != after["head.weight"]

    def test_probe_zero_epochs_keeps_head_at_init(self, small_corpus, small_split):
        pre_config = tiny_config(epochs=0)
        params, _ = pretrain_contrastive(pre_config, small_corpus, small_split)
        probed, runlog = train_probe(
            tiny_config(arm="probe", epochs=0), small_corpus, small_split, params
        )
        np.testing.assert_array_equal(probed["head.weight"], params["head.weight"])
        assert runlog.rows == []

    def test_scratch_smoke(self, small_corpus, small_split):
        config = tiny_config(arm="scratch", epochs=2)
        params, runlog = train_scratch(config, small_corpus, small_split)
        assert len(runlog.rows) == 2
        model_config = trainer.make_model_config(config, small_corpus.manifest.class_count)
        block, features, labels, brains = evaluate_on_sections(
            params, model_config, small_corpus, small_split.test_sections, config.patch_side
        )
        assert features.shape[1] == 128
        assert 0.0 <= block.top1 <= 1.0
        assert block.top3 >= block.top1

    def test_missing_class_propagates(self):
        # 2 patches/class over 8 sections: class 1 never lands in section 0
        from patchcontrast.corpus import CorpusConfig, generate_synthetic_corpus

        sparse = generate_synthetic_corpus(
            CorpusConfig(
                classes=2, patches_per_class=2, side=96, brains=1,
                sections_per_brain=8, seed=4, resolution_um=8.0,
            )
        )
        bad_split = SplitSpec(frozenset({0}), frozenset({2}))
        with pytest.raises(ConfigError, match="class_1"):
            pretrain_contrastive(tiny_config(epochs=1), sparse, bad_split)

    def test_batch_larger_than_epoch_sample(self, small_corpus, small_split):
        config = tiny_config(epochs=1, batch_size=512, per_class_per_epoch=4)
        with pytest.raises(ConfigError, match="batch"):
            pretrain_contrastive(config, small_corpus, small_split)

    def test_undersized_store_rejected(self, small_corpus, small_split):
        config = tiny_config(patch_side=96)  # store side 96 lacks rotation margin
        with pytest.raises(ConfigError, match="side"):
            pretrain_contrastive(config, small_corpus, small_split)


class TestSeparableFeatureFixture:
    def test_probe_reaches_perfect_train_accuracy(self):
        rng = np.random.default_rng(0)
        centers = np.eye(4) * 8.0
        features = np.concatenate([centers[c] + 0.1 * rng.normal(size=(30, 4)) for c in range(4)])
        labels = np.repeat(np.arange(4), 30).astype(np.int64)
        params = {
            "head.weight": 0.01 * rng.normal(size=(4, 4)).astype(np.float64),
            "head.bias": np.zeros(4),
        }
        state = OptimState(lr=0.5, momentum=0.9)
        fit_linear_head(features, labels, params, epochs=40, batch_size=30, opt_state=state, optimizer="sgd")
        logits = features @ params["head.weight"] + params["head.bias"]
        assert (logits.argmax(axis=1) == labels).mean() == 1.0


class TestCheckpointing:
    def test_save_load_round_trip(self, tmp_path, small_corpus, small_split):
        config = tiny_config(epochs=1)
        path = str(tmp_path / "run.ckpt")
        params, runlog = pretrain_contrastive(config, small_corpus, small_split, out_path=path)
        loaded_params, opt_state, loaded_log, loaded_config, epoch, model_config = load_checkpoint(path)
        assert epoch == 1
        assert loaded_config == config
        assert loaded_log.rows == runlog.rows
        assert params_digest(loaded_params) == params_digest(params)

    def test_resume_equals_uninterrupted_bitwise(self, tmp_path, small_corpus, small_split):
        config = tiny_config(epochs=4)
        full_params, full_log = pretrain_contrastive(config, small_corpus, small_split)

        path = str(tmp_path / "partial.ckpt")
        pretrain_contrastive(config, small_corpus, small_split, out_path=path, stop_after_epoch=2)
        resumed_params, resumed_log = pretrain_contrastive(
            config, small_corpus, small_split, resume_from=path
        )
        assert params_digest(resumed_params) == params_digest(full_params)
        assert resumed_log.content_hash() == full_log.content_hash()

    def test_mismatched_config_refused(self, tmp_path, small_corpus, small_split):
        config = tiny_config(epochs=1)
        path = str(tmp_path / "run.ckpt")
        pretrain_contrastive(config, small_corpus, small_split, out_path=path)
        other = tiny_config(epochs=1, seed=99)
        with pytest.raises(TrainingError, match="config"):
            pretrain_contrastive(other, small_corpus, small_split, resume_from=path)

    def test_scratch_resume_bitwise(self, tmp_path, small_corpus, small_split):
        config = tiny_config(arm="scratch", epochs=3)
        full_params, _ = train_scratch(config, small_corpus, small_split)
        path = str(tmp_path / "scratch.ckpt")
        train_scratch(config, small_corpus, small_split, out_path=path, stop_after_epoch=1)
        resumed_params, _ = train_scratch(config, small_corpus, small_split, resume_from=path)
        assert params_digest(resumed_params) == params_digest(full_params)


class TestRunLog:
    def test_csv_shape(self):
        log = trainer.RunLog("abc")
        log.append(0, 1.5, 0.01, 2.0)
        log.append(1, 1.2, 0.01, 2.1)
        lines = log.to_csv_text().strip().splitlines()
        assert lines[0] == "epoch,loss,lr,seconds"
        assert len(lines) == 3

    def test_content_hash_ignores_timing(self):
        a = trainer.RunLog("h")
        b = trainer.RunLog("h")
        a.append(0, 1.0, 0.1, 5.0)
        b.append(0, 1.0, 0.1, 99.0)
        assert a.content_hash() == b.content_hash()


def test_nonfinite_gradient_raises_named_error():
    params = {"layer.weight": np.ones(2, dtype=np.float32)}
    grads = {"layer.weight": np.array([np.inf, 0.0], dtype=np.float32)}
    with pytest.raises(OptimError, match="layer.weight"):
        trainer.optimizer_step("lars", params, grads, OptimState(lr=0.1))
