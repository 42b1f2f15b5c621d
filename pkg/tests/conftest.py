import numpy as np
import pytest
import torch

from raydiance.config import EncoderConfig, RunConfig
from raydiance.scene_io import default_sphere_scene


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def scene():
    return default_sphere_scene()


@pytest.fixture
def tiny_config():
    """A config small enough for double-precision gradient checks."""
    cfg = RunConfig()
    cfg.encoder = EncoderConfig(width=8, updown_layers=2, kernel=3, depth_total=4)
    cfg.sampling.d_coarse = 8
    cfg.sampling.d_fine = 8
    cfg.sampling.freq_position = 2
    cfg.sampling.freq_direction = 1
    cfg.heads.gru_hidden = 8
    cfg.heads.geo_hidden = 8
    cfg.train.batch_rays = 4
    return cfg.validate()


@pytest.fixture
def desk_config():
    cfg = RunConfig()
    cfg.encoder = EncoderConfig(width=64, updown_layers=4, kernel=3, depth_total=8)
    return cfg.validate()


def finite_difference_grads(loss_fn, params, indices, step=1e-4):
    """Central finite differences of loss_fn at selected flat parameter slots.

    ``params`` is a list of double-precision tensors that loss_fn reads;
    ``indices`` is a list of (param_idx, flat_idx) pairs.
    """
    grads = []
    for pi, fi in indices:
        flat = params[pi].detach().reshape(-1)
        orig = flat[fi].item()
        with torch.no_grad():
            flat[fi] = orig + step
            up = float(loss_fn())
            flat[fi] = orig - step
            down = float(loss_fn())
            flat[fi] = orig
        grads.append((up - down) / (2 * step))
    return grads


def relative_error(a, b, floor=1e-8):
    return abs(a - b) / max(abs(a), abs(b), floor)
