"""Shared fixtures: tiny float64 configs and one small generated dataset per session."""

import numpy as np
import pytest

from services.config import config
from services.schemas import RunConfig
from services.dataset import build_samples
from services.synthdata import generate_dataset
from services.training import pretrain, train


@pytest.fixture
def rng():
    return np.random.default_rng(42)


@pytest.fixture
def tiny_cfg() -> RunConfig:
    """Smallest model that still has every layer: crop 32, 2-channel backbone, D=4."""
    return RunConfig(
        dtype="float64",
        crop_size=32,
        widths=[2, 2, 3, 3, 4],
        code_dim=4,
        hidden=[6, 4],
        batch_size=4,
        steps=3,
        log_every=1,
        ae_epochs=5,
        gen_width=96,
        gen_height=64,
        gen_duration_s=40,
        gen_voxels=24,
        gen_networks=4,
        gen_objects=2,
        gen_subjects=2,
        gen_segment_s=4,
        sweep_steps=2,
        threads=2,
        prefetch=False,
    )


@pytest.fixture(scope="session")
def dataset_cfg() -> RunConfig:
    return config(
        dtype="float64",
        crop_size=32,
        widths=[2, 2, 3, 3, 4],
        code_dim=4,
        hidden=[6, 4],
        batch_size=4,
        steps=2,
        ae_epochs=3,
        gen_width=96,
        gen_height=64,
        gen_duration_s=40,
        gen_voxels=24,
        gen_networks=4,
        gen_objects=2,
        gen_subjects=2,
        gen_segment_s=4,
        gen_delay_s=4.0,
        sweep_steps=2,
        threads=2,
    )


@pytest.fixture(scope="session")
def tiny_dataset(tmp_path_factory, dataset_cfg):
    """(manifest, cfg) for a 40 s, 96x64, two-subject synthetic dataset."""
    out = tmp_path_factory.mktemp("dataset")
    return generate_dataset(dataset_cfg, 7, out), dataset_cfg


# ---- desk scale, only pulled in by tests marked slow ----

@pytest.fixture(scope="session")
def desk_cfg() -> RunConfig:
    """Default desk config (320x180, crop 64, V=256, D=64, G=8, 10 min) with a planted 4 s delay."""
    return config(gen_delay_s=4.0, delay_s=4.0, steps=20000, sweep_steps=2000)


@pytest.fixture(scope="session")
def desk_dataset(tmp_path_factory, desk_cfg):
    return generate_dataset(desk_cfg, 11, tmp_path_factory.mktemp("desk"))


@pytest.fixture(scope="session")
def desk_ae(desk_dataset, desk_cfg):
    return pretrain(desk_dataset, desk_cfg)


@pytest.fixture(scope="session")
def desk_samples(desk_dataset, desk_cfg):
    samples, _ = build_samples(desk_dataset, desk_cfg)
    return samples


@pytest.fixture(scope="session")
def desk_run(desk_dataset, desk_cfg, desk_ae, desk_samples):
    """TrainResult of the full joint run, autoencoder-initialised."""
    return train(desk_samples, desk_cfg, desk_dataset.n_voxels, ae=desk_ae)
