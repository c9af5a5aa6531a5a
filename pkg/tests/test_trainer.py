"""
Tests for dcmr.trainer module
"""

import dataclasses
import json
import math

import numpy as np
import pytest

from dcmr.checkpoint import OptimizerState, checkpoint_roundtrip, encode_checkpoint
from dcmr.config import LossConfig, SynthConfig, TrainConfig
from dcmr.dataset import LanguageSampler, batch_iter
from dcmr.exceptions import ContractError, DatasetError, NumericError
from dcmr.model import LOGIT_SCALE, init_params
from dcmr.synth import synth_generate
from dcmr.trainer import (
    adamw_step, cosine_lr, init_training_params, log_lines, train_run, train_step,
)


def first_batch(dataset, languages=("fr",), mode="sample", size=4):
    sampler = LanguageSampler(list(languages), mode)
    return next(batch_iter(dataset, "train", size, sampler, seed=0, epoch=0))


@pytest.mark.unit
class TestCosineLr:
    """Test the learning-rate schedule"""

    def test_endpoints(self):
        assert cosine_lr(0, 100, 1e-4, 1e-6) == pytest.approx(1e-4, abs=1e-18)
        assert cosine_lr(100, 100, 1e-4, 1e-6) == pytest.approx(1e-6, abs=1e-18)

    def test_midpoint(self):
        assert cosine_lr(50, 100, 1e-4, 1e-6) == pytest.approx((1e-4 + 1e-6) / 2, abs=1e-15)

    def test_monotone_and_bounded(self):
        values = [cosine_lr(s, 37, 2e-3, 1e-5) for s in range(38)]
        assert all(a >= b for a, b in zip(values, values[1:]))
        assert all(1e-5 - 1e-18 <= v <= 2e-3 + 1e-18 for v in values)

    def test_out_of_range(self):
        with pytest.raises(ContractError):
            cosine_lr(11, 10, 1.0, 0.0)
        with pytest.raises(ContractError):
            cosine_lr(-1, 10, 1.0, 0.0)
        with pytest.raises(ContractError):
            cosine_lr(0, 0, 1.0, 0.0)


@pytest.mark.unit
class TestAdamW:
    """Test the optimizer step"""

    def test_zero_gradient_no_decay(self, small_params):
        """Test parameters do not move"""
        config = TrainConfig(weight_decay=0.0)
        updated, state = adamw_step(small_params, {}, OptimizerState.zeros(small_params), 0.1, config)
        assert updated == small_params
        assert state.step == 1

    def test_pure_decay(self, small_params):
        """Test wd 0.1 at lr 0.01 scales every weight by 0.999"""
        config = TrainConfig(weight_decay=0.1)
        updated, _ = adamw_step(small_params, {}, OptimizerState.zeros(small_params), 0.01, config)
        for name in small_params.names():
            assert np.allclose(updated.array(name), 0.999 * small_params.array(name), rtol=0, atol=1e-15)

    def test_matches_hand_rolled_adam(self, small_params):
        """Test one step from zero state with g = 0.5 everywhere"""
        config = TrainConfig(weight_decay=0.01)
        lr, g = 1e-3, 0.5
        grads = {n: np.full(small_params.array(n).shape, g) for n in small_params.names()}
        updated, state = adamw_step(small_params, grads, OptimizerState.zeros(small_params), lr, config)

        b1, b2, eps = config.adam_beta1, config.adam_beta2, config.adam_eps
        m = (1 - b1) * g
        v = (1 - b2) * g * g
        m_hat = m / (1 - b1)
        v_hat = v / (1 - b2)
        for name in small_params.names():
            theta = small_params.array(name)
            expected = theta - lr * config.weight_decay * theta - lr * m_hat / (math.sqrt(v_hat) + eps)
            assert np.allclose(updated.array(name), expected, rtol=0, atol=1e-12)
            assert np.allclose(state.m[name], m, rtol=0, atol=1e-15)
            assert np.allclose(state.v[name], v, rtol=0, atol=1e-15)

    def test_step_counter(self, small_params):
        state = OptimizerState.zeros(small_params)
        params = small_params
        for _ in range(3):
            params, state = adamw_step(params, {}, state, 0.01, TrainConfig())
        assert state.step == 3

    def test_non_finite_gradient(self, small_params):
        name = small_params.names()[0]
        grads = {name: np.full(small_params.array(name).shape, np.nan)}
        with pytest.raises(NumericError, match=name):
            adamw_step(small_params, grads, OptimizerState.zeros(small_params), 0.01, TrainConfig())

    def test_wrong_shape(self, small_params):
        name = small_params.names()[0]
        with pytest.raises(ContractError):
            adamw_step(small_params, {name: np.zeros(1)}, OptimizerState.zeros(small_params), 0.01,
                       TrainConfig())


@pytest.mark.unit
class TestTrainStep:
    """Test one forward/backward pass"""

    def test_gradients_for_every_parameter(self, synth_dataset, tiny_dcm):
        params = init_params(tiny_dcm, 0)
        value, grads = train_step(first_batch(synth_dataset), params, LossConfig(), seed=0, epoch=0, step=0)
        assert value > 0
        assert set(grads) == set(params.names())
        assert all(np.isfinite(g).all() for g in grads.values())

    def test_seeded(self, synth_dataset, tiny_dcm):
        params = init_params(tiny_dcm, 0)
        batch = first_batch(synth_dataset)
        a = train_step(batch, params, LossConfig(), 1, 0, 0)
        b = train_step(batch, params, LossConfig(), 1, 0, 0)
        assert a[0] == b[0]
        assert all(np.array_equal(a[1][n], b[1][n]) for n in params.names())

    def test_dropout_depends_on_step(self, synth_dataset, tiny_dcm):
        params = init_params(tiny_dcm, 0)
        batch = first_batch(synth_dataset)
        assert train_step(batch, params, LossConfig(), 1, 0, 0)[0] != \
            train_step(batch, params, LossConfig(), 1, 0, 1)[0]

    def test_zero_multilingual_weight(self, synth_dataset, tiny_dcm):
        """Test branch M gets exactly zero gradient when its loss is off"""
        params = init_params(tiny_dcm, 0)
        _, grads = train_step(first_batch(synth_dataset), params, LossConfig(weight_m=0.0), 0, 0, 0)
        m_grads = [g for n, g in grads.items() if n.startswith("M.")]
        e_grads = [g for n, g in grads.items() if n.startswith("E.")]
        assert m_grads and not any(g.any() for g in m_grads)
        assert any(g.any() for g in e_grads)

    def test_cross_conditioning_and_all_languages(self, synth_dataset, tiny_dcm):
        params = init_params(tiny_dcm, 0)
        batch = first_batch(synth_dataset, ("fr", "de"), "sum-all")
        value, grads = train_step(batch, params, LossConfig(conditioning="cross"), 0, 0, 0)
        assert math.isfinite(value)
        assert any(grads[n].any() for n in params.names() if n.startswith("M."))

    def test_learned_temperature(self, synth_dataset, tiny_dcm):
        loss = LossConfig(learn_temperature=True, temperature=0.5, normalize=True)
        params = init_training_params(tiny_dcm, loss, 0)
        assert params.array(LOGIT_SCALE)[0] == pytest.approx(math.log(2.0))
        _, grads = train_step(first_batch(synth_dataset), params, loss, 0, 0, 0)
        assert grads[LOGIT_SCALE].shape == (1,)
        assert grads[LOGIT_SCALE].any()


@pytest.mark.integration
class TestTrainRun:
    """Test full training runs"""

    def test_outputs(self, synth_dataset, tiny_dcm, tiny_train, tmp_path):
        checkpoint, records = train_run(synth_dataset, tiny_dcm, tiny_train,
                                        checkpoint_path=tmp_path / "c.dcmc", log_path=tmp_path / "log.jsonl")
        assert [r.epoch for r in records] == [1, 2]
        assert checkpoint.epoch == 2
        assert checkpoint.step == 6
        assert checkpoint.rng == {"seed": 5, "generator": "philox", "epoch": 2}
        assert (tmp_path / "c.dcmc").exists()
        logged = [json.loads(line) for line in (tmp_path / "log.jsonl").read_text().splitlines()]
        assert [entry["epoch"] for entry in logged] == [1, 2]
        assert set(logged[0]) == {"epoch", "mean_loss", "lr", "wall_ms"}

    def test_zero_learning_rate(self, synth_dataset, tiny_dcm, tiny_train):
        """Test no-op training keeps the initial parameters bit for bit"""
        frozen = dataclasses.replace(tiny_train, lr_max=0.0, lr_min=0.0)
        checkpoint, _ = train_run(synth_dataset, tiny_dcm, frozen)
        assert checkpoint.params == init_params(tiny_dcm, frozen.seed)

    def test_deterministic(self, synth_dataset, tiny_dcm, tiny_train):
        """Test the same seed gives identical checkpoints and logs"""
        a, log_a = train_run(synth_dataset, tiny_dcm, tiny_train)
        b, log_b = train_run(synth_dataset, tiny_dcm, tiny_train)
        assert encode_checkpoint(a) == encode_checkpoint(b)
        assert log_lines(log_a, with_wall_time=False) == log_lines(log_b, with_wall_time=False)

    def test_seed_matters(self, synth_dataset, tiny_dcm, tiny_train):
        a, _ = train_run(synth_dataset, tiny_dcm, tiny_train)
        b, _ = train_run(synth_dataset, tiny_dcm, dataclasses.replace(tiny_train, seed=6))
        assert a.params != b.params

    def test_resume_matches_uninterrupted(self, synth_dataset, tiny_dcm, tiny_train, tmp_path):
        """Test stopping after one epoch and resuming reproduces the full run"""
        full, full_log = train_run(synth_dataset, tiny_dcm, tiny_train)
        half, first_log = train_run(synth_dataset, tiny_dcm, tiny_train, stop_epoch=1)
        assert half.epoch == 1
        restored = checkpoint_roundtrip(half, tmp_path / "half.dcmc")
        resumed, second_log = train_run(synth_dataset, tiny_dcm, tiny_train, resume=restored)
        assert resumed.params == full.params
        assert resumed.step == full.step
        assert log_lines(first_log + second_log, False) == log_lines(full_log, False)

    def test_languages_argument(self, synth_dataset, tiny_dcm, tiny_train):
        checkpoint, _ = train_run(synth_dataset, tiny_dcm, tiny_train, languages=["de"])
        assert checkpoint.train.languages == ["de"]

    def test_missing_language(self, synth_dataset, tiny_dcm, tiny_train):
        with pytest.raises(DatasetError):
            train_run(synth_dataset, tiny_dcm, tiny_train, languages=["es"])

    def test_english_only(self, synth_dataset, tiny_dcm, tiny_train):
        """Test the no-multilingual setting trains with no extra language"""
        _, records = train_run(synth_dataset, tiny_dcm, tiny_train, languages=[],
                               loss=LossConfig(weight_m=0.0))
        assert len(records) == 2

    def test_log_lines(self, synth_dataset, tiny_dcm, tiny_train):
        _, records = train_run(synth_dataset, tiny_dcm, tiny_train)
        assert "wall_ms" in json.loads(log_lines(records)[0])
        assert "wall_ms" not in json.loads(log_lines(records, with_wall_time=False)[0])


@pytest.mark.slow
class TestLearning:
    """Test that training reduces the loss"""

    def test_second_epoch_lower(self, tiny_dcm):
        dataset = synth_generate(SynthConfig(n_items=64, n_test=0, latent_dim=4, model_dim=8,
                                             frames_per_video=4, caption_languages=["fr"], seed=1))
        drops = []
        for seed in range(5):
            train = TrainConfig(batch_size=8, epochs=2, lr_max=1e-2, lr_min=1e-3, seed=seed, languages=["fr"])
            _, records = train_run(dataset, tiny_dcm, train)
            drops.append(records[0].mean_loss - records[1].mean_loss)
        assert float(np.median(drops)) > 0
