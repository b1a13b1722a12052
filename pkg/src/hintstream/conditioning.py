"""Conditioning preparation: masks, dual streams, temporal encoding.

``src_video`` / ``src_mask`` / ``src_ref_images`` determine the generation
mode implicitly. Masked video splits into an inactive stream (preserved
regions) and a reactive stream (regions to generate); each stream runs
through a causal temporal autoencoder that carries state across chunks.
Whether a stream's carry is kept or reset every chunk depends on the mode.

Conventions: pixel frames are ``[frames, H, W, C]`` float32, masks are
``[frames, H, W]`` in [0, 1] with 1 = reactive.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .config import EngineConfig
from .errors import InvalidInputError, ShapeError
from .tensor import FP32, Tensor, derive_seed, gaussian_init, matmul


class Mode(enum.Enum):
    T2V_BASELINE = "t2v_baseline"
    V2V = "v2v"
    MV2V = "mv2v"
    R2V = "r2v"
    EXTENSION = "extension"
    COMPOSED = "composed"


@dataclass(frozen=True)
class ConditioningInputs:
    """Optional source video, mask and reference images for a session."""

    src_video: Tensor | None = None       # [frames, H, W, C]
    src_mask: Tensor | None = None        # [frames, H, W], 1 = reactive
    src_ref_images: Tensor | None = None  # [refs, H, W, C]

    def validate(self) -> "ConditioningInputs":
        if self.src_mask is not None:
            if self.src_video is None:
                raise InvalidInputError("mask provided without source video")
            if self.src_mask.shape != self.src_video.shape[:3]:
                raise InvalidInputError(
                    f"mask shape {self.src_mask.shape} does not match video "
                    f"{self.src_video.shape[:3]}")
            if self.src_mask.min() < 0 or self.src_mask.max() > 1:
                raise InvalidInputError("mask values must lie in [0, 1]")
        if self.src_ref_images is not None and len(self.src_ref_images) == 0:
            raise InvalidInputError("src_ref_images present but empty")
        return self


def _is_extension_pattern(mask: Tensor) -> bool:
    # Anchor pattern: first frame fully inactive, every later frame reactive.
    if mask.shape[0] < 2:
        return False
    return bool((mask[0] == 0).all() and (mask[1:] == 1).all())


def infer_mode(inputs: ConditioningInputs) -> Mode:
    """Map input presence to the generation mode; no explicit mode knob."""
    inputs.validate()
    has_video = inputs.src_video is not None
    has_mask = inputs.src_mask is not None
    has_refs = inputs.src_ref_images is not None
    if has_refs and (has_video or has_mask):
        return Mode.COMPOSED
    if has_refs:
        return Mode.R2V
    if has_video and has_mask:
        return Mode.EXTENSION if _is_extension_pattern(inputs.src_mask) else Mode.MV2V
    if has_video:
        return Mode.V2V
    return Mode.T2V_BASELINE


def stream_mode(inputs: ConditioningInputs) -> Mode:
    """The video/mask sub-mode, ignoring references (for cache strategy)."""
    return infer_mode(ConditioningInputs(inputs.src_video, inputs.src_mask, None))


def split_streams(video: Tensor, mask: Tensor) -> tuple[Tensor, Tensor]:
    """Split into (inactive, reactive) = (video * (1-mask), video * mask)."""
    video = np.asarray(video, dtype=FP32)
    mask = np.asarray(mask, dtype=FP32)
    if mask.shape != video.shape[:3]:
        raise ShapeError(f"split_streams: mask {mask.shape} vs video {video.shape}")
    m = mask[..., None]
    inactive = (video * (FP32(1.0) - m)).astype(FP32, copy=False)
    reactive = (video * m).astype(FP32, copy=False)
    return inactive, reactive


@dataclass
class TemporalEncoder:
    """Toy causal temporal autoencoder front end.

    Spatial mean-pool to the latent grid, a channel projection, then a
    causal temporal convolution whose carry is the last ``k-1`` projected
    frames of the previous chunk. Latent frame t aggregates pixel frames
    ``[t*c, t*c + c)``; it can only see earlier input.
    """

    chan_proj: Tensor   # [frame_channels, model_dim]
    taps: Tensor        # [kernel_span, model_dim, model_dim]
    config: EngineConfig

    @property
    def carry_frames(self) -> int:
        return self.config.encoder_kernel_span - 1


def init_temporal_encoder(seed: int, name: str, config: EngineConfig) -> TemporalEncoder:
    return TemporalEncoder(
        chan_proj=gaussian_init((config.frame_channels, config.model_dim),
                                derive_seed(seed, f"{name}.chan_proj"), config.init_scale),
        taps=gaussian_init((config.encoder_kernel_span, config.model_dim, config.model_dim),
                           derive_seed(seed, f"{name}.taps"), 0.5),
        config=config,
    )


def _project_frames(frames: Tensor, encoder: TemporalEncoder) -> Tensor:
    """Pixel frames -> per-frame latent-grid features [F, gh, gw, D]."""
    cfg = encoder.config
    f, h, w, c = frames.shape
    if (h, w, c) != (cfg.frame_height, cfg.frame_width, cfg.frame_channels):
        raise ShapeError(f"frames {frames.shape[1:]} vs configured "
                         f"({cfg.frame_height}, {cfg.frame_width}, {cfg.frame_channels})")
    s = cfg.spatial_factor
    pooled = frames.reshape(f, cfg.grid_height, s, cfg.grid_width, s, c).mean(axis=(2, 4))
    flat = pooled.reshape(f * cfg.grid_height * cfg.grid_width, c).astype(FP32, copy=False)
    return matmul(flat, encoder.chan_proj).reshape(f, cfg.grid_height, cfg.grid_width, -1)


def encode_stream(frames: Tensor, encoder: TemporalEncoder,
                  carry: Tensor | None) -> tuple[Tensor, Tensor]:
    """Encode one stream; ``carry=None`` starts from the zero state.

    Returns ``(latents [F/c, gh, gw, D], new_carry [k-1, gh, gw, D])``.
    """
    cfg = encoder.config
    frames = np.asarray(frames, dtype=FP32)
    if frames.shape[0] % cfg.temporal_factor != 0:
        raise InvalidInputError(
            f"frame count {frames.shape[0]} not divisible by temporal factor "
            f"{cfg.temporal_factor}")
    feats = _project_frames(frames, encoder)
    f, gh, gw, d = feats.shape
    span = cfg.encoder_kernel_span
    if carry is None:
        carry = np.zeros((span - 1, gh, gw, d), dtype=FP32)
    elif carry.shape != (span - 1, gh, gw, d):
        raise ShapeError(f"carry shape {carry.shape} vs expected {(span - 1, gh, gw, d)}")
    padded = np.concatenate([carry, feats]) if span > 1 else feats

    mixed = np.zeros_like(feats)
    for j in range(span):
        window = padded[j:j + f].reshape(f * gh * gw, d)
        mixed += matmul(window, encoder.taps[j]).reshape(f, gh, gw, d)

    groups = mixed.reshape(f // cfg.temporal_factor, cfg.temporal_factor, gh, gw, d)
    latents = groups.mean(axis=1).astype(FP32, copy=False)
    new_carry = feats[-(span - 1):].copy() if span > 1 else np.zeros((0, gh, gw, d), dtype=FP32)
    return latents, new_carry


@dataclass(frozen=True)
class CacheStrategy:
    inactive_enabled: bool
    reactive_enabled: bool


def cache_strategy_for(mode: Mode) -> CacheStrategy:
    """Per-stream carry policy. Composed sessions resolve their video/mask
    sub-mode first (see :func:`stream_mode`)."""
    if mode == Mode.V2V:
        return CacheStrategy(True, True)
    if mode in (Mode.MV2V, Mode.EXTENSION):
        return CacheStrategy(True, False)
    if mode in (Mode.T2V_BASELINE, Mode.R2V):
        return CacheStrategy(False, False)  # no per-chunk streams exist
    raise InvalidInputError("composed mode: derive the strategy from its stream sub-mode")


@dataclass
class EncoderCachePair:
    """Independent temporal carries for the inactive and reactive streams."""

    strategy: CacheStrategy
    inactive: Tensor | None = None
    reactive: Tensor | None = None


def prepare_chunk_conditioning(video_chunk: Tensor, mask_chunk: Tensor | None, mode: Mode,
                               encoder: TemporalEncoder,
                               caches: EncoderCachePair) -> Tensor:
    """Encode both streams for one chunk into a 2x-channel token tensor.

    A missing mask (plain structural control) is treated as all-reactive.
    Skipped streams encode from the zero carry every chunk and never update
    the stored state. Returns ``[chunk_tokens, 2 * model_dim]``; ``caches``
    is updated in place.
    """
    if mode in (Mode.T2V_BASELINE, Mode.R2V, Mode.COMPOSED):
        raise InvalidInputError(f"mode {mode.value} has no per-chunk streams")
    video_chunk = np.asarray(video_chunk, dtype=FP32)
    if mask_chunk is None:
        mask_chunk = np.ones(video_chunk.shape[:3], dtype=FP32)
    inactive_frames, reactive_frames = split_streams(video_chunk, mask_chunk)

    if caches.strategy.inactive_enabled:
        inactive_lat, caches.inactive = encode_stream(inactive_frames, encoder, caches.inactive)
    else:
        inactive_lat, _ = encode_stream(inactive_frames, encoder, None)
    if caches.strategy.reactive_enabled:
        reactive_lat, caches.reactive = encode_stream(reactive_frames, encoder, caches.reactive)
    else:
        reactive_lat, _ = encode_stream(reactive_frames, encoder, None)

    stacked = np.concatenate([inactive_lat, reactive_lat], axis=-1)  # [F, gh, gw, 2D]
    f, gh, gw, dd = stacked.shape
    return np.ascontiguousarray(stacked.reshape(f * gh * gw, dd))
