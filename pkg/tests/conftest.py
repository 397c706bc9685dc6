"""Shared fixtures and hypothesis profile for the test suite."""

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from xstereo.config import TrainConfig
from xstereo.data import SyntheticSceneSpec, nir_like_spectral_spec, render_scene
from xstereo.networks import build_networks

settings.register_profile(
    "suite",
    max_examples=25,
    deadline=None,
    suppress_health_check=[HealthCheck.too_slow, HealthCheck.data_too_large],
)
settings.load_profile("suite")


@pytest.fixture
def rng():
    return np.random.default_rng(0)


def make_tiny_config(**overrides) -> TrainConfig:
    """16x16, two matcher scales, four-wide nets: fast enough for unit tests."""
    cfg = TrainConfig()
    cfg.image_height = cfg.image_width = 16
    cfg.batch_size = 2
    cfg.eta = 0.2
    cfg.warmup_epochs = 1
    cfg.joint_epochs = 1
    cfg.network.base_width = 4
    cfg.network.num_residual_blocks = 1
    cfg.network.num_smn_scales = 2
    for key, value in overrides.items():
        if hasattr(cfg, key):
            setattr(cfg, key, value)
        elif hasattr(cfg.network, key):
            setattr(cfg.network, key, value)
        else:
            raise AttributeError(key)
    return cfg


@pytest.fixture
def tiny_cfg():
    return make_tiny_config()


@pytest.fixture
def tiny_nets(tiny_cfg):
    return build_networks(tiny_cfg.network, tiny_cfg.input_mode, seed=0,
                          use_stn=tiny_cfg.use_stn)


@pytest.fixture(scope="session")
def tiny_scenes():
    """Four 16x16 scenes: two identity-transform, two under the band shift.

    Session-scoped and treated as read-only by every test.
    """
    out = []
    for i in range(2):
        out.append(render_scene(
            SyntheticSceneSpec(texture_seed=40 + i, layer_disparities=(1.0 + i,)),
            (16, 16)))
    for i in range(2):
        out.append(render_scene(
            nir_like_spectral_spec(60 + i, (1.0, 2.5)), (16, 16)))
    return out


@pytest.fixture(scope="session")
def tiny_pairs(tiny_scenes):
    return [s.pair for s in tiny_scenes]
