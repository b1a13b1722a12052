"""Diffusion-transformer stack: blocks, hint injection, denoising loop.

Each block is pre-norm residual attention followed by a residual MLP.
Conditioning hints enter as ``x + alpha * (hint @ w_proj)`` right after
their target block; the projections start at exact zero so a fresh
adapter cannot perturb the stack. The KV cache is written only on the
final denoising step, keeping cached history one entry per generated
token.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .attention import AttentionLayerWeights, KVCache, RoPEParams, attend_chunk
from .config import EngineConfig
from .errors import ConfigError, ShapeError
from .tensor import FP32, Tensor, derive_seed, gaussian_init, gelu, matmul, rmsnorm

# Hint set: target block index -> [chunk_tokens, model_dim] hint tensor.
HintSet = dict[int, Tensor]


@dataclass(frozen=True)
class NoiseSchedule:
    """Strictly decreasing sigma ladder, one entry per denoising step."""

    sigmas: tuple[float, ...]

    def __post_init__(self):
        if len(self.sigmas) < 1:
            raise ConfigError("schedule needs at least one sigma")
        if any(b >= a for a, b in zip(self.sigmas, self.sigmas[1:])):
            raise ConfigError(f"sigmas must strictly decrease: {self.sigmas}")
        if self.sigmas[-1] < 0:
            raise ConfigError("last sigma must be >= 0")


def linear_schedule(config: EngineConfig) -> NoiseSchedule:
    """Linear sigmas from sigma_start down to sigma_end."""
    if config.denoise_steps == 1:
        return NoiseSchedule((config.sigma_start,))
    sigmas = np.linspace(config.sigma_start, config.sigma_end, config.denoise_steps)
    return NoiseSchedule(tuple(float(s) for s in sigmas))


@dataclass
class BlockWeights:
    """One transformer block: norms, attention projections, MLP."""

    norm1_gain: Tensor
    attn: AttentionLayerWeights
    norm2_gain: Tensor
    mlp_w1: Tensor
    mlp_w2: Tensor


def init_block_weights(seed: int, name: str, config: EngineConfig) -> BlockWeights:
    """Seeded block weights; norm gains start at one."""
    d, m = config.model_dim, config.mlp_dim
    scale = config.init_scale

    def w(part, shape):
        return gaussian_init(shape, derive_seed(seed, f"{name}.{part}"), scale)

    return BlockWeights(
        norm1_gain=np.ones(d, dtype=FP32),
        attn=AttentionLayerWeights(
            wq=w("wq", (d, d)), wk=w("wk", (d, d)), wv=w("wv", (d, d)), wo=w("wo", (d, d))),
        norm2_gain=np.ones(d, dtype=FP32),
        mlp_w1=w("mlp_w1", (d, m)),
        mlp_w2=w("mlp_w2", (m, d)),
    )


def timestep_embedding(sigma: float, dim: int) -> Tensor:
    """Sinusoidal features of the step's sigma, added to every token."""
    half = dim // 2
    freqs = np.power(10000.0, np.arange(half, dtype=np.float64) / half)
    angles = float(sigma) * freqs
    emb = np.empty(dim, dtype=FP32)
    emb[0::2] = np.sin(angles).astype(FP32, copy=False)
    emb[1::2] = np.cos(angles).astype(FP32, copy=False)
    return emb


def dit_block_forward(x: Tensor, block_index: int, cache: KVCache, weights: BlockWeights,
                      config: EngineConfig, start_position: int | None = None, *,
                      within_chunk_causal: bool = True, update_cache: bool = True,
                      provenance: np.ndarray | None = None) -> Tensor:
    """Residual attention + residual MLP; shape preserved."""
    if x.ndim != 2 or x.shape[1] != config.model_dim:
        raise ShapeError(f"dit_block_forward: expected [tokens, {config.model_dim}], got {x.shape}")
    rope = RoPEParams(config.head_dim, config.rope_base)
    attn_out = attend_chunk(
        rmsnorm(x, weights.norm1_gain), cache, block_index, weights.attn, config.heads,
        rope, start_position, within_chunk_causal=within_chunk_causal,
        update_cache=update_cache, provenance=provenance)
    x = x + attn_out
    mlp_out = matmul(gelu(matmul(rmsnorm(x, weights.norm2_gain), weights.mlp_w1)), weights.mlp_w2)
    return (x + mlp_out).astype(FP32, copy=False)


def inject_hint(x: Tensor, hint: Tensor, w_proj: Tensor, alpha: float) -> Tensor:
    """Add the projected hint to the residual stream: x + alpha * (hint @ w_proj)."""
    if hint.shape != x.shape:
        raise ShapeError(f"inject_hint: hint {hint.shape} vs stream {x.shape}")
    return (x + FP32(alpha) * matmul(hint, w_proj)).astype(FP32, copy=False)


def denoise_chunk(noisy_latents: Tensor, hints: HintSet | None, projections: dict[int, Tensor] | None,
                  schedule: NoiseSchedule, cache: KVCache, blocks: list[BlockWeights],
                  config: EngineConfig, *, alpha: float = 1.0, start_position: int | None = None,
                  within_chunk_causal: bool = True,
                  provenance: np.ndarray | None = None) -> Tensor:
    """Run the denoising loop for one chunk and return its clean latents.

    The same hint set is injected at every step at the blocks listed in
    the injection map. Each step applies ``x <- x - sigma * stack(x)``
    (explicit Euler-style update); only the final step writes the KV
    cache, so cached history reflects the clean-side pass.
    """
    if len(schedule.sigmas) != config.denoise_steps:
        raise ConfigError(
            f"schedule has {len(schedule.sigmas)} sigmas, config wants {config.denoise_steps}")
    hints = hints or {}
    if hints and projections is None:
        raise ConfigError("hints given without injection projections")
    for block_index, hint in hints.items():
        if block_index not in config.injection_map:
            raise ConfigError(f"hint targets block {block_index} outside injection map")
        if hint.shape != noisy_latents.shape:
            raise ShapeError(f"hint for block {block_index}: {hint.shape} vs {noisy_latents.shape}")

    x = np.asarray(noisy_latents, dtype=FP32)
    if start_position is None:
        start_position = cache.next_position(0)
    last = len(schedule.sigmas) - 1
    for step, sigma in enumerate(schedule.sigmas):
        h = (x + timestep_embedding(sigma, config.model_dim)).astype(FP32, copy=False)
        write = step == last
        for block_index in range(config.num_blocks):
            h = dit_block_forward(
                h, block_index, cache, blocks[block_index], config, start_position,
                within_chunk_causal=within_chunk_causal, update_cache=write,
                provenance=provenance)
            if block_index in hints:
                h = inject_hint(h, hints[block_index], projections[block_index], alpha)
        x = (x - FP32(sigma) * h).astype(FP32, copy=False)
    return x
