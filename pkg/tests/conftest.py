"""Shared fixtures: small deterministic configs and weight builders."""

import numpy as np
import pytest

from hintstream.attention import AttentionLayerWeights
from hintstream.config import EngineConfig
from hintstream.tensor import derive_seed, gaussian_init


@pytest.fixture
def small_config():
    """Tiny geometry: 2 latent frames x 16 tokens, 4 blocks, 2 steps."""
    return EngineConfig(
        num_blocks=4, model_dim=32, heads=2, injection_map=(0, 2), denoise_steps=2,
        chunk_frames=8, temporal_factor=4, frame_height=8, frame_width=8,
        grid_height=4, grid_width=4).validate()


def make_attention_weights(seed, dim=64, scale=0.05):
    def w(part):
        return gaussian_init((dim, dim), derive_seed(seed, f"test.attn.{part}"), scale)

    return AttentionLayerWeights(wq=w("wq"), wk=w("wk"), wv=w("wv"), wo=w("wo"))


def make_video(seed, frames, config, name="test.video"):
    return gaussian_init(
        (frames, config.frame_height, config.frame_width, config.frame_channels),
        derive_seed(seed, name), 1.0)


def make_refs(seed, count, config, name="test.refs"):
    return gaussian_init(
        (count, config.frame_height, config.frame_width, config.frame_channels),
        derive_seed(seed, name), 1.0)


def half_frame_mask(frames, config):
    mask = np.zeros((frames, config.frame_height, config.frame_width), dtype=np.float32)
    mask[:, :, config.frame_width // 2:] = 1.0
    return mask


def extension_mask(frames, config):
    mask = np.ones((frames, config.frame_height, config.frame_width), dtype=np.float32)
    mask[0] = 0.0
    return mask
