import numpy as np
import pytest

from chatkpe.corpus import annotate_corpus
from chatkpe.errors import ConfigError, NumericError
from chatkpe.evaluation import synth_corpus
from chatkpe.model import init_model
from chatkpe.tokenizer import build_vocab
from chatkpe.training import (
    OptimizerState,
    TrainConfig,
    clip_global_norm,
    grad_check,
    lr_at,
    optimizer_step,
    prepare_training_samples,
    train,
)


def small_setup(seed=0, n_docs=4, doc_len=(40, 90), d=8, epochs=3, peak_lr=1e-3):
    docs = synth_corpus(seed=seed, n_docs=n_docs, doc_len=doc_len, planted=(2, 4))
    annotate_corpus(docs)
    vocab = build_vocab(docs)
    samples = prepare_training_samples(docs, vocab)
    params = init_model(vocab.size, d=d, seed=seed)
    cfg = TrainConfig(epochs=epochs, seed=seed, peak_lr=peak_lr)
    return docs, vocab, samples, params, cfg


class TestLrSchedule:
    CFG = TrainConfig(peak_lr=5e-5, warmup_fraction=0.1, epochs=1)

    def test_ramp_start_zero(self):
        assert lr_at(0, 1000, self.CFG) == 0.0

    def test_peak_at_warmup_end(self):
        assert lr_at(100, 1000, self.CFG) == 5e-5

    def test_zero_at_total(self):
        assert abs(lr_at(1000, 1000, self.CFG)) <= 1e-12

    def test_continuity(self):
        total = 777
        values = [lr_at(s, total, self.CFG) for s in range(total + 1)]
        diffs = np.abs(np.diff(values))
        assert diffs.max() < 2 * self.CFG.peak_lr / (self.CFG.warmup_fraction * total)
        assert max(values) == pytest.approx(5e-5)

    def test_step_out_of_range(self):
        with pytest.raises(ConfigError):
            lr_at(1001, 1000, self.CFG)

    def test_monotone_after_peak(self):
        total = 500
        warm = int(self.CFG.warmup_fraction * total)
        values = [lr_at(s, total, self.CFG) for s in range(warm, total + 1)]
        assert all(a >= b for a, b in zip(values, values[1:]))


class TestOptimizerStep:
    def _scalar_params(self, value=1.0):
        params = init_model(6, d=2, k_max=1, seed=0)
        for _, t in params.named_parameters().items():
            t[:] = 0
        params.heads.rank_b[0] = value
        return params

    def test_zero_grad_zero_decay_is_fixed_point(self):
        params = self._scalar_params()
        before = {k: v.copy() for k, v in params.named_parameters().items()}
        state = OptimizerState.for_params(params)
        cfg = TrainConfig(weight_decay=0.0, epochs=1)
        grads = {k: np.zeros_like(v) for k, v in params.named_parameters().items()}
        optimizer_step(params, grads, state, lr=0.1, cfg=cfg)
        assert state.step == 1
        for k, v in params.named_parameters().items():
            np.testing.assert_array_equal(v, before[k])

    def test_decoupled_decay_formula(self):
        params = self._scalar_params(1.0)
        state = OptimizerState.for_params(params)
        cfg = TrainConfig(weight_decay=0.01, epochs=1)
        grads = {k: np.zeros_like(v) for k, v in params.named_parameters().items()}
        optimizer_step(params, grads, state, lr=0.1, cfg=cfg)
        assert params.heads.rank_b[0] == pytest.approx(0.999, abs=1e-15)

    def test_decay_product_exact_over_steps(self):
        params = self._scalar_params(1.0)
        state = OptimizerState.for_params(params)
        cfg = TrainConfig(weight_decay=0.02, epochs=1)
        grads = {k: np.zeros_like(v) for k, v in params.named_parameters().items()}
        lrs = [0.1, 0.05, 0.2, 0.01]
        expected = 1.0
        for lr in lrs:
            optimizer_step(params, grads, state, lr=lr, cfg=cfg)
            expected = expected * (1.0 - lr * cfg.weight_decay)
        assert params.heads.rank_b[0] == expected  # product-exact

    def test_clipping_scales_update(self):
        g = {"a": np.array([6.0, 8.0])}  # norm 10
        norm = clip_global_norm(g, 1.0)
        assert norm == pytest.approx(10.0)
        np.testing.assert_allclose(g["a"], [0.6, 0.8])

    def test_nonfinite_gradient_names_tensor(self):
        g = {"kernel_3": np.array([np.nan])}
        with pytest.raises(NumericError, match="kernel_3"):
            clip_global_norm(g, 1.0)


class TestTrain:
    def test_step_count(self):
        docs, vocab, samples, params, cfg = small_setup(epochs=1, n_docs=3)
        res = train(samples[:3], params, cfg)
        assert res.total_steps == 3
        assert res.state.step == 3
        assert len(res.log_lines) == 3

    def test_determinism_bitwise_logs(self):
        _, _, samples, params, cfg = small_setup(seed=4, epochs=2)
        res1 = train(samples, params, cfg)
        _, _, samples2, params2, cfg2 = small_setup(seed=4, epochs=2)
        res2 = train(samples2, params2, cfg2)
        assert res1.log_lines == res2.log_lines
        for k, v in res1.params.named_parameters().items():
            np.testing.assert_array_equal(v, res2.params.named_parameters()[k])

    def test_loss_decreases_on_planted_corpus(self):
        _, _, samples, params, cfg = small_setup(seed=7, n_docs=6, epochs=12, peak_lr=2e-3)
        res = train(samples, params, cfg)
        assert res.epoch_means[-1].loss_kpe < res.epoch_means[0].loss_kpe

    def test_requires_gold_sample(self):
        docs, vocab, samples, params, cfg = small_setup()
        for s in samples:
            s.gold_group_ids = np.array([], dtype=np.int64)
        with pytest.raises(ConfigError):
            train(samples, params, cfg)

    def test_loss_log_file(self, tmp_path):
        _, _, samples, params, cfg = small_setup(epochs=1, n_docs=3)
        log = tmp_path / "loss.csv"
        train(samples[:2], params, cfg, log_path=log)
        lines = log.read_text().splitlines()
        assert len(lines) == 2
        epoch, step, lr_r, lr_c, lr_k, lr = lines[0].split(",")
        assert epoch == "0" and step == "1"
        assert float(lr_k) == pytest.approx(float(lr_r) + float(lr_c))

    def test_divergence_aborts_keeping_checkpoint(self, tmp_path):
        _, _, samples, params, cfg = small_setup(epochs=3, n_docs=3)
        ckpt = tmp_path / "model.ckpe"
        res = train(samples, params, cfg, checkpoint_path=ckpt)
        good_bytes = ckpt.read_bytes()
        # poison the params: next run diverges on its first loss evaluation
        params.heads.rank_w[:] = np.nan
        with pytest.raises(NumericError, match="diverged"):
            train(samples, params, cfg, checkpoint_path=ckpt)
        assert ckpt.read_bytes() == good_bytes

    def test_checkpoint_written_per_epoch(self, tmp_path):
        _, _, samples, params, cfg = small_setup(epochs=2, n_docs=3)
        ckpt = tmp_path / "model.ckpe"
        train(samples, params, cfg, checkpoint_path=ckpt)
        assert ckpt.exists()
        from chatkpe.model_io import load_model

        loaded, state = load_model(ckpt, with_optimizer=True)
        assert state.step == len(samples) * 2


class TestGradCheck:
    def test_small_model_passes(self):
        docs, vocab, samples, params, _ = small_setup(seed=11, n_docs=2, d=4)
        params.encoder.embedding_table *= 8
        report = grad_check(params, samples[0], neg_sample_cap=12, neg_seed=1)
        assert report.ok
        assert report.max_rel_error <= 1e-4

    def test_corrupted_gradient_detected_and_named(self):
        from chatkpe.model import sample_loss_and_grads

        docs, vocab, samples, params, _ = small_setup(seed=12, n_docs=2, d=4)
        params.encoder.embedding_table *= 8

        def corrupted(p, s):
            _, grads = sample_loss_and_grads(s, p, neg_sample_cap=12, seed=1)
            grads["kernel_2"] *= 2.0
            return grads

        report = grad_check(params, samples[0], neg_sample_cap=12, neg_seed=1,
                            gradient_fn=corrupted)
        assert not report.ok
        assert report.worst_tensor == "kernel_2"

    def test_zero_heads_rank_bias_gradient_zero(self):
        docs, vocab, samples, params, _ = small_setup(seed=13, n_docs=2, d=4)
        params.heads.rank_w[:] = 0.0
        params.heads.chunk_w[:] = 0.0
        from chatkpe.model import sample_loss_and_grads

        _, grads = sample_loss_and_grads(samples[0], params, neg_sample_cap=8, seed=0)
        # all global scores equal rank_b: shift invariance makes its gradient 0
        assert grads["rank_b"][0] == pytest.approx(0.0, abs=1e-15)
