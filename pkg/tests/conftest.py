"""
Pytest configuration and fixtures
"""

import numpy as np
import pytest

from dcmr.config import DcmConfig, LossConfig, SynthConfig, TrainConfig
from dcmr.logger import Logger
from dcmr.model import init_params
from dcmr.models import FrameEmbeddings, TextEmbedding
from dcmr.synth import synth_generate, write_dataset


def pytest_configure(config):
    """Configure custom markers"""
    config.addinivalue_line(
        "markers", "unit: fast test of a single module"
    )
    config.addinivalue_line(
        "markers", "integration: test that runs several modules through files or the CLI"
    )
    config.addinivalue_line(
        "markers", "slow: training run that checks learning behaviour"
    )


@pytest.fixture(autouse=True)
def isolated_environment(monkeypatch, tmp_path):
    """Keep the logger, cache and backend settings away from the real environment"""
    for name in ("DCMR_LOG_LEVEL", "DCMR_LOG_FILE", "DCM_MT_ENDPOINT", "DCM_MT_TOKEN",
                 "XDG_CACHE_HOME"):
        monkeypatch.delenv(name, raising=False)
    monkeypatch.setenv("DCMR_CACHE_DIR", str(tmp_path / "cache"))
    Logger.reset()
    yield
    Logger.reset()


@pytest.fixture
def small_dcm():
    """Four-dimensional, two-head block"""
    return DcmConfig(model_dim=4, num_heads=2, fc_dim=4, dropout_rate=0.0)


@pytest.fixture
def small_params(small_dcm):
    return init_params(small_dcm, seed=7)


@pytest.fixture
def small_synth():
    """Tiny synthetic set: 12 train items, 6 test items, two extra languages"""
    return SynthConfig(n_items=12, n_val=0, n_test=6, latent_dim=4, model_dim=8,
                       frames_per_video=3, noise_scale=0.1, caption_languages=["fr", "de"],
                       seed=3)


@pytest.fixture
def synth_dataset(small_synth):
    return synth_generate(small_synth)


@pytest.fixture
def synth_manifest(synth_dataset, tmp_path):
    """Synthetic dataset written to disk; returns the manifest path"""
    return write_dataset(synth_dataset, tmp_path / "data")


@pytest.fixture
def tiny_dcm():
    """Block sized for the synthetic fixture"""
    return DcmConfig(model_dim=8, num_heads=2, fc_dim=8, dropout_rate=0.1)


@pytest.fixture
def tiny_train():
    return TrainConfig(batch_size=4, epochs=2, lr_max=1e-2, lr_min=1e-4, seed=5, languages=["fr"])


@pytest.fixture
def default_loss():
    return LossConfig()


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def make_frames(rng, video_id="v1", n_frames=3, dim=4):
    """Random frame matrix wrapped as FrameEmbeddings"""
    return FrameEmbeddings(video_id, rng.standard_normal((n_frames, dim)))


def make_caption(rng, caption_id="c1", language="en", dim=4):
    return TextEmbedding(caption_id, language, rng.standard_normal(dim))
