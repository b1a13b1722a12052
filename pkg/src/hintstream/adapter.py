"""Parallel conditioning pathway producing additive hints.

A stack of transformer blocks (one per injection target) consumes encoded
conditioning and emits its per-depth activations as hints; the hints enter
the main stack through zero-initialised projections, so a freshly built
adapter is inert. Reference images are encoded exactly once per session:
pooled across references, broadcast across the chunk's latent frames, and
pushed through the stack with a throwaway cache so they never enter the
streaming context history.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .attention import KVCache
from .conditioning import TemporalEncoder, encode_stream
from .config import EngineConfig
from .dit import BlockWeights, HintSet, dit_block_forward, init_block_weights
from .errors import InvalidInputError, ShapeError
from .tensor import FP32, Tensor, derive_seed, gaussian_init, matmul


@dataclass
class ContextBlockStack:
    """Context blocks plus their zero-initialised output projections.

    Block j emits the hint for the j-th entry of the injection map.
    """

    input_proj: Tensor                 # [2 * model_dim, model_dim]
    blocks: list[BlockWeights]
    projections: dict[int, Tensor]     # target block -> [model_dim, model_dim]
    config: EngineConfig

    def fresh_cache(self, track_provenance: bool = False) -> KVCache:
        cfg = self.config
        return KVCache(len(self.blocks), cfg.heads, cfg.head_dim,
                       cfg.cache_capacity_tokens, track_provenance)


def init_context_stack(seed: int, config: EngineConfig, *,
                       zero_projections: bool = True) -> ContextBlockStack:
    """Build the adapter stack; ``zero_projections=False`` is the
    fault-injection path used by negative-control tests."""
    d = config.model_dim
    blocks = [init_block_weights(seed, f"context.block{j}", config)
              for j in range(len(config.injection_map))]
    projections = {}
    for target in config.injection_map:
        if zero_projections:
            projections[target] = np.zeros((d, d), dtype=FP32)
        else:
            projections[target] = gaussian_init(
                (d, d), derive_seed(seed, f"context.proj{target}"), config.init_scale)
    return ContextBlockStack(
        input_proj=gaussian_init((2 * d, d), derive_seed(seed, "context.input_proj"),
                                 config.init_scale),
        blocks=blocks,
        projections=projections,
        config=config,
    )


@dataclass
class ReferenceHintCache:
    """Hints computed once per session, plus an instrumentation counter."""

    hints: HintSet
    compute_count: int = 1


def compute_hints(conditioning_latents: Tensor, stack: ContextBlockStack, cache: KVCache,
                  start_position: int | None = None, *, update_cache: bool = True) -> HintSet:
    """Run conditioning through the context stack; one hint per target block.

    The stack keeps its own causal KV cache across chunks, mirroring the
    main pathway. Input channels must be twice the latent width (inactive
    and reactive streams concatenated).
    """
    cond = np.asarray(conditioning_latents, dtype=FP32)
    cfg = stack.config
    if cond.ndim != 2 or cond.shape[1] != 2 * cfg.model_dim:
        raise ShapeError(
            f"compute_hints: expected [tokens, {2 * cfg.model_dim}], got {cond.shape}")
    x = matmul(cond, stack.input_proj)
    hints: HintSet = {}
    for j, target in enumerate(cfg.injection_map):
        x = dit_block_forward(x, j, cache, stack.blocks[j], cfg, start_position,
                              update_cache=update_cache)
        hints[target] = x
    return hints


def encode_references_once(refs: Tensor, stack: ContextBlockStack,
                           encoder: TemporalEncoder) -> ReferenceHintCache:
    """Encode reference frames through the temporal encoder and context
    blocks exactly once, yielding chunk-shaped hints.

    Each reference fills one temporal group (replicated ``c`` times) and is
    encoded from a fresh carry; the per-reference latents are mean-pooled
    per spatial location and broadcast across the chunk's latent frames, so
    hint shape is independent of the reference count.
    """
    refs = np.asarray(refs, dtype=FP32)
    if refs.ndim != 4 or refs.shape[0] == 0:
        raise InvalidInputError("encode_references_once: need a non-empty [refs, H, W, C] array")
    cfg = stack.config

    ref_latents = []
    for ref in refs:
        frames = np.repeat(ref[None, ...], cfg.temporal_factor, axis=0)
        latents, _ = encode_stream(frames, encoder, None)  # [1, gh, gw, D]
        ref_latents.append(latents[0])
    pooled = np.mean(np.stack(ref_latents), axis=0, dtype=np.float64).astype(FP32, copy=False)

    per_frame = np.broadcast_to(
        pooled, (cfg.latent_frames_per_chunk,) + pooled.shape)  # [F, gh, gw, D]
    tokens = np.ascontiguousarray(per_frame.reshape(cfg.chunk_tokens, cfg.model_dim))
    # references ride the inactive slot; the reactive slot stays zero
    cond = np.concatenate([tokens, np.zeros_like(tokens)], axis=-1)
    hints = compute_hints(cond, stack, stack.fresh_cache(), 0)
    return ReferenceHintCache(hints=hints, compute_count=1)


def merge_hints(reference_hints: HintSet | None, chunk_hints: HintSet | None) -> HintSet:
    """Per-block sum when both present; pass-through otherwise."""
    if reference_hints is None and chunk_hints is None:
        raise InvalidInputError("merge_hints: both hint sets absent")
    if reference_hints is None:
        return dict(chunk_hints)
    if chunk_hints is None:
        return dict(reference_hints)
    merged: HintSet = {}
    for block in set(reference_hints) | set(chunk_hints):
        a = reference_hints.get(block)
        b = chunk_hints.get(block)
        merged[block] = a if b is None else b if a is None else (a + b).astype(FP32, copy=False)
    return merged
