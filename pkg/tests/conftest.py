"""Session fixtures: the full corpus and both trained models.

Training is expensive (minutes, not seconds), so everything here is
session-scoped and built lazily; only the tests that actually need a
trained model trigger the cost.
"""

import time

import pytest

from zoomdet.config import RunConfig
from zoomdet.detector import train_detector
from zoomdet.spn import train_spn
from zoomdet.synthgen import DatasetConfig, sample_dataset


@pytest.fixture(scope="session")
def run_config():
    return RunConfig()


@pytest.fixture(scope="session")
def corpus(run_config):
    """(train, test) splits of the standard mixed-scale corpus."""
    cfg = run_config
    return sample_dataset(cfg.dataset, seed=cfg.seeds.dataset)


@pytest.fixture(scope="session")
def core_octave_scenes(run_config):
    """Test-only scenes whose faces sit inside the detector's covered core."""
    dz = run_config.det.deadzone_octaves
    rng = run_config.drange
    lo = rng.smin * 2.0 ** dz
    hi = rng.smax * 2.0 ** -dz
    cfg = DatasetConfig(train_count=0, test_count=200,
                        size_min=lo + 0.5, size_max=hi - 0.5)
    _, test = sample_dataset(cfg, seed=777)
    return test


@pytest.fixture(scope="session")
def trained_spn(run_config, corpus):
    """(network, loss log, wall seconds) for the default SPN recipe."""
    train, _ = corpus
    t0 = time.monotonic()
    net, losses = train_spn(run_config.spn, train, seed=run_config.seeds.spn)
    return net, losses, time.monotonic() - t0


@pytest.fixture(scope="session")
def trained_detector(run_config, corpus):
    train, _ = corpus
    t0 = time.monotonic()
    net, losses = train_detector(train, run_config.det, seed=run_config.seeds.detector)
    return net, losses, time.monotonic() - t0
