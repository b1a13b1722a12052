"""Per-chunk generation sessions in two architectures.

ADAPTED keeps the diffusion sequence at a fixed chunk size: references and
control streams run through the parallel context pathway and enter the
main stack only as additive hints. LEGACY reproduces the concatenation
pattern: reference latents are prepended to the first chunk's sequence
(bidirectional within that block), denoised jointly, stripped from the
output afterwards - and left behind in the KV cache.
"""

from __future__ import annotations

import enum
import json
import time
from dataclasses import dataclass

import numpy as np

from .adapter import (ReferenceHintCache, compute_hints, encode_references_once,
                      merge_hints)
from .attention import KVCache, REFERENCE, VIDEO
from .conditioning import (CacheStrategy, ConditioningInputs, EncoderCachePair, Mode,
                           cache_strategy_for, encode_stream, infer_mode,
                           prepare_chunk_conditioning, stream_mode)
from .config import EngineConfig
from .dit import HintSet, NoiseSchedule, denoise_chunk, linear_schedule
from .errors import InvalidInputError, ShapeError
from .tensor import FP32, Tensor, derive_seed, gaussian_init, matmul
from .weights import EngineWeights, TemporalDecoder, build_weights


class Architecture(enum.Enum):
    ADAPTED = "adapted"
    LEGACY = "legacy"


@dataclass
class ChunkTrace:
    chunk_index: int
    architecture: str
    mode: str
    dit_sequence_tokens: int
    cache_tokens: int
    hint_compute_count: int
    wall_latency_ms: float
    alpha: float

    def to_json(self) -> str:
        return json.dumps(self.__dict__, sort_keys=True)


@dataclass
class ChunkResult:
    frames: Tensor  # [chunk_frames, H, W, C]
    trace: ChunkTrace


@dataclass
class GenerationSession:
    config: EngineConfig
    weights: EngineWeights
    inputs: ConditioningInputs
    mode: Mode
    streams: Mode  # video/mask sub-mode driving per-chunk conditioning
    architecture: Architecture
    alpha: float
    schedule: NoiseSchedule
    dit_cache: KVCache
    ctx_cache: KVCache
    enc_caches: EncoderCachePair | None
    ref_hints: ReferenceHintCache | None = None
    anchor_hints: ReferenceHintCache | None = None  # extension-mode reuse
    pending_ref_tokens: Tensor | None = None        # legacy: queued ref latents
    pending_ref_cond: Tensor | None = None          # legacy: their context rows
    decode_carry: Tensor | None = None
    chunk_index: int = 0
    hint_computes: int = 0


def _legacy_ref_latents(refs: Tensor, weights: EngineWeights) -> Tensor:
    """Encode each reference into one latent frame's worth of tokens."""
    cfg = weights.config
    rows = []
    for ref in np.asarray(refs, dtype=FP32):
        frames = np.repeat(ref[None, ...], cfg.temporal_factor, axis=0)
        latents, _ = encode_stream(frames, weights.encoder, None)
        rows.append(latents[0].reshape(cfg.tokens_per_frame, cfg.model_dim))
    return np.concatenate(rows)


def open_session(config: EngineConfig, inputs: ConditioningInputs,
                 architecture: Architecture, seed: int, *, alpha: float = 1.0,
                 track_provenance: bool = False, zero_projections: bool = True,
                 fault_force_reactive_cache: bool = False) -> GenerationSession:
    """Infer the mode, build seeded weights and prime the caches.

    With references, ADAPTED encodes them through the context blocks here,
    exactly once; LEGACY queues their latents for first-chunk concatenation
    instead. ``zero_projections=False`` and ``fault_force_reactive_cache``
    are negative-control switches for the verification suites.
    """
    config.validate()
    mode = infer_mode(inputs)
    streams = stream_mode(inputs)
    weights = build_weights(seed, config, zero_projections=zero_projections)
    dit_cache = KVCache(config.num_blocks, config.heads, config.head_dim,
                        config.cache_capacity_tokens, track_provenance)

    enc_caches = None
    if streams in (Mode.V2V, Mode.MV2V, Mode.EXTENSION):
        strategy = cache_strategy_for(streams)
        if fault_force_reactive_cache:
            strategy = CacheStrategy(strategy.inactive_enabled, True)
        enc_caches = EncoderCachePair(strategy)

    session = GenerationSession(
        config=config, weights=weights, inputs=inputs, mode=mode, streams=streams,
        architecture=architecture, alpha=alpha, schedule=linear_schedule(config),
        dit_cache=dit_cache, ctx_cache=weights.context.fresh_cache(),
        enc_caches=enc_caches)

    if inputs.src_ref_images is not None:
        if architecture == Architecture.ADAPTED:
            session.ref_hints = encode_references_once(
                inputs.src_ref_images, weights.context, weights.encoder)
            session.hint_computes += 1
        else:
            ref_tokens = _legacy_ref_latents(inputs.src_ref_images, weights)
            session.pending_ref_tokens = ref_tokens
            # references ride the inactive slot of the legacy context input
            session.pending_ref_cond = np.concatenate(
                [ref_tokens, np.zeros_like(ref_tokens)], axis=-1)
    return session


def chunk_noise(seed: int, chunk_index: int, config: EngineConfig) -> Tensor:
    """The driver-side noise stream: independent of conditioning inputs."""
    return gaussian_init((config.chunk_tokens, config.model_dim),
                         derive_seed(seed, f"noise.chunk{chunk_index}"), 1.0)


def _slice_inputs(session: GenerationSession) -> tuple[Tensor, Tensor | None]:
    cfg = session.config
    lo = session.chunk_index * cfg.chunk_frames
    hi = lo + cfg.chunk_frames
    video = session.inputs.src_video
    if video is None or video.shape[0] < hi:
        raise InvalidInputError(
            f"source video exhausted: chunk {session.chunk_index} needs frames "
            f"[{lo}, {hi})")
    mask = session.inputs.src_mask
    return video[lo:hi], None if mask is None else mask[lo:hi]


def _chunk_hints(session: GenerationSession) -> HintSet | None:
    """Per-chunk conditioning hints; extension mode computes them once."""
    if session.streams not in (Mode.V2V, Mode.MV2V, Mode.EXTENSION):
        return None
    if session.streams == Mode.EXTENSION and session.anchor_hints is not None:
        return session.anchor_hints.hints
    video_chunk, mask_chunk = _slice_inputs(session)
    cond = prepare_chunk_conditioning(video_chunk, mask_chunk, session.streams,
                                      session.weights.encoder, session.enc_caches)
    hints = compute_hints(cond, session.weights.context, session.ctx_cache)
    session.hint_computes += 1
    if session.streams == Mode.EXTENSION:
        session.anchor_hints = ReferenceHintCache(hints, compute_count=1)
    return hints


def strip_references(output: Tensor, ref_token_count: int) -> Tensor:
    """Drop the leading reference rows from a denoised sequence."""
    if ref_token_count < 0 or output.shape[0] < ref_token_count:
        raise ShapeError(
            f"strip_references: cannot remove {ref_token_count} of {output.shape[0]} rows")
    return output[ref_token_count:]


def decode_chunk(latents: Tensor, decoder: TemporalDecoder,
                 decode_carry: Tensor | None) -> tuple[Tensor, Tensor]:
    """Causal temporal decode back to pixel frames.

    ``latents`` is ``[latent_frames, gh, gw, D]``; returns
    ``(frames [latent_frames * c, H, W, C], new_carry)``.
    """
    cfg = decoder.config
    expected = (cfg.latent_frames_per_chunk, cfg.grid_height, cfg.grid_width, cfg.model_dim)
    if latents.shape != expected:
        raise ShapeError(f"decode_chunk: latents {latents.shape} vs expected {expected}")
    gh, gw, d = expected[1:]
    s = cfg.spatial_factor
    if decode_carry is None:
        decode_carry = np.zeros((gh, gw, d), dtype=FP32)
    frames = np.empty((cfg.chunk_frames, cfg.frame_height, cfg.frame_width,
                       cfg.frame_channels), dtype=FP32)
    for t in range(cfg.latent_frames_per_chunk):
        current = latents[t].reshape(gh * gw, d)
        previous = (decode_carry if t == 0 else latents[t - 1]).reshape(gh * gw, d)
        for j in range(cfg.temporal_factor):
            feat = matmul(current, decoder.taps_current[j]) \
                + matmul(previous, decoder.taps_previous[j])
            grid = feat.reshape(gh, gw, d)
            up = np.repeat(np.repeat(grid, s, axis=0), s, axis=1)  # [H, W, D]
            pix = matmul(up.reshape(-1, d), decoder.out_proj)
            frames[t * cfg.temporal_factor + j] = pix.reshape(
                cfg.frame_height, cfg.frame_width, cfg.frame_channels)
    return frames, latents[-1].copy()


def generate_chunk(session: GenerationSession, noise: Tensor) -> ChunkResult:
    """Run one chunk through conditioning, denoising and decode."""
    cfg = session.config
    if noise.shape != (cfg.chunk_tokens, cfg.model_dim):
        raise ShapeError(f"noise {noise.shape} vs chunk {(cfg.chunk_tokens, cfg.model_dim)}")
    t0 = time.perf_counter()
    start = session.dit_cache.next_position(0)
    projections = session.weights.context.projections

    if session.architecture == Architecture.ADAPTED:
        chunk_hints = _chunk_hints(session)
        hints = None
        if session.ref_hints is not None or chunk_hints is not None:
            hints = merge_hints(
                session.ref_hints.hints if session.ref_hints else None, chunk_hints)
        latents = denoise_chunk(noise, hints, projections, session.schedule,
                                session.dit_cache, session.weights.dit_blocks, cfg,
                                alpha=session.alpha, start_position=start)
        seq_tokens = cfg.chunk_tokens
    else:
        first = session.chunk_index == 0
        ref_rows = 0
        sequence = noise
        provenance = None
        bidirectional = False
        if first and session.pending_ref_tokens is not None:
            ref_rows = session.pending_ref_tokens.shape[0]
            sequence = np.concatenate([session.pending_ref_tokens, noise])
            provenance = np.concatenate([
                np.full(ref_rows, REFERENCE, dtype=np.uint8),
                np.full(cfg.chunk_tokens, VIDEO, dtype=np.uint8)])
            bidirectional = True  # joint ref+video block attends freely

        hints = _legacy_hints(session, ref_rows)
        latents_full = denoise_chunk(
            sequence, hints, projections, session.schedule, session.dit_cache,
            session.weights.dit_blocks, cfg, alpha=session.alpha, start_position=start,
            within_chunk_causal=not bidirectional, provenance=provenance)
        latents = strip_references(latents_full, ref_rows)
        seq_tokens = sequence.shape[0]

    grid = latents.reshape(cfg.latent_frames_per_chunk, cfg.grid_height,
                           cfg.grid_width, cfg.model_dim)
    frames, session.decode_carry = decode_chunk(grid, session.weights.decoder,
                                                session.decode_carry)
    trace = ChunkTrace(
        chunk_index=session.chunk_index,
        architecture=session.architecture.value,
        mode=session.mode.value,
        dit_sequence_tokens=seq_tokens,
        cache_tokens=session.dit_cache.token_count(0),
        hint_compute_count=session.hint_computes,
        wall_latency_ms=(time.perf_counter() - t0) * 1e3,
        alpha=session.alpha,
    )
    session.chunk_index += 1
    return ChunkResult(frames=frames, trace=trace)


def _legacy_hints(session: GenerationSession, ref_rows: int) -> HintSet | None:
    """Original-style hints over the mixed (refs + video) sequence.

    The context input covers the same rows as the diffusion sequence: queued
    reference rows first, then this chunk's control streams (zeros when the
    chunk has none but references demand alignment).
    """
    cfg = session.config
    stream_cond = None
    if session.streams in (Mode.V2V, Mode.MV2V, Mode.EXTENSION):
        video_chunk, mask_chunk = _slice_inputs(session)
        stream_cond = prepare_chunk_conditioning(
            video_chunk, mask_chunk, session.streams, session.weights.encoder,
            session.enc_caches)
    if ref_rows:
        if stream_cond is None:
            stream_cond = np.zeros((cfg.chunk_tokens, 2 * cfg.model_dim), dtype=FP32)
        cond = np.concatenate([session.pending_ref_cond, stream_cond])
    else:
        cond = stream_cond
    if cond is None:
        return None
    hints = compute_hints(cond, session.weights.context, session.ctx_cache)
    session.hint_computes += 1
    return hints


def run_session(config: EngineConfig, inputs: ConditioningInputs,
                architecture: Architecture, seed: int, num_chunks: int, *,
                alpha: float = 1.0, track_provenance: bool = False,
                zero_projections: bool = True,
                fault_force_reactive_cache: bool = False
                ) -> tuple[list[Tensor], list[ChunkTrace], GenerationSession]:
    """Convenience driver: open a session and generate ``num_chunks`` chunks."""
    session = open_session(config, inputs, architecture, seed, alpha=alpha,
                           track_provenance=track_provenance,
                           zero_projections=zero_projections,
                           fault_force_reactive_cache=fault_force_reactive_cache)
    frames, traces = [], []
    for i in range(num_chunks):
        result = generate_chunk(session, chunk_noise(seed, i, config))
        frames.append(result.frames)
        traces.append(result.trace)
    return frames, traces, session
