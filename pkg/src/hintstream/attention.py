"""Causal chunked self-attention over per-layer KV caches.

Keys are rotated (RoPE) before they are written to the cache, so absolute
positions are baked into the stored tensors. That is the property the
legacy concatenation mode exploits and the strip/renumber helper
deliberately breaks: removing cached rows cannot undo their rotations.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import CacheIntegrityError, ConfigError, ShapeError
from .tensor import FP32, Tensor, checksum, matmul

# Provenance codes carried per cached token when tracking is enabled.
VIDEO = 0
REFERENCE = 1


@dataclass(frozen=True)
class RoPEParams:
    """Rotary embedding parameters; rotation pairs dims (2i, 2i+1)."""

    head_dim: int
    base: float = 10000.0

    def __post_init__(self):
        if self.head_dim % 2 != 0:
            raise ConfigError(f"RoPE head_dim must be even, got {self.head_dim}")


def rope_apply(x: Tensor, start_position: int, params: RoPEParams) -> Tensor:
    """Rotate ``[tokens, heads, head_dim]`` by position-dependent angles.

    Token t is rotated for absolute position ``start_position + t``; each
    (2i, 2i+1) pair turns by ``pos / base**(2i/head_dim)`` radians.
    """
    x = np.asarray(x, dtype=FP32)
    if x.shape[-1] != params.head_dim:
        raise ConfigError(f"rope_apply: head_dim {x.shape[-1]} != params {params.head_dim}")
    tokens = x.shape[0]
    half = params.head_dim // 2
    positions = np.arange(start_position, start_position + tokens, dtype=np.float64)
    inv_freq = params.base ** (-2.0 * np.arange(half, dtype=np.float64) / params.head_dim)
    angles = positions[:, None] * inv_freq[None, :]  # [tokens, half]
    cos = np.cos(angles).astype(FP32, copy=False)[:, None, :]
    sin = np.sin(angles).astype(FP32, copy=False)[:, None, :]
    even = x[..., 0::2]
    odd = x[..., 1::2]
    out = np.empty_like(x)
    out[..., 0::2] = even * cos - odd * sin
    out[..., 1::2] = even * sin + odd * cos
    return out


@dataclass
class AttentionLayerWeights:
    """Square query/key/value/output projections for one layer."""

    wq: Tensor
    wk: Tensor
    wv: Tensor
    wo: Tensor


@dataclass
class _LayerSlot:
    keys: Tensor
    values: Tensor
    positions: np.ndarray  # claimed absolute position per token (may gap)
    provenance: np.ndarray | None
    next_position: int = 0


def _empty_slot(heads: int, head_dim: int, track: bool) -> _LayerSlot:
    return _LayerSlot(
        keys=np.zeros((0, heads, head_dim), dtype=FP32),
        values=np.zeros((0, heads, head_dim), dtype=FP32),
        positions=np.zeros((0,), dtype=np.int64),
        provenance=np.zeros((0,), dtype=np.uint8) if track else None,
    )


class KVCache:
    """Per-layer append-only key/value store with positions baked in.

    ``capacity`` bounds the token count per layer; overflow is handled by
    a sliding window that drops the oldest tokens. Retained tokens keep
    their absolute positions, so appends stay contiguous.
    """

    def __init__(self, num_layers: int, heads: int, head_dim: int, capacity: int,
                 track_provenance: bool = False):
        if capacity < 1:
            raise ConfigError("KVCache capacity must be >= 1")
        self.num_layers = num_layers
        self.heads = heads
        self.head_dim = head_dim
        self.capacity = capacity
        self.track_provenance = track_provenance
        self._layers = [_empty_slot(heads, head_dim, track_provenance) for _ in range(num_layers)]

    def token_count(self, layer: int) -> int:
        return self._layers[layer].keys.shape[0]

    def next_position(self, layer: int = 0) -> int:
        return self._layers[layer].next_position

    def kv(self, layer: int) -> tuple[Tensor, Tensor]:
        slot = self._layers[layer]
        return slot.keys, slot.values

    def append(self, layer: int, keys: Tensor, values: Tensor, start_position: int,
               provenance: np.ndarray | None = None) -> None:
        """Append rotated K/V; evicts the oldest tokens past capacity."""
        slot = self._layers[layer]
        if start_position != slot.next_position:
            raise CacheIntegrityError(
                f"layer {layer}: append at {start_position}, cache ends at {slot.next_position}")
        tokens = keys.shape[0]
        slot.keys = np.concatenate([slot.keys, keys.astype(FP32, copy=False)])
        slot.values = np.concatenate([slot.values, values.astype(FP32, copy=False)])
        slot.positions = np.concatenate(
            [slot.positions, np.arange(start_position, start_position + tokens, dtype=np.int64)])
        if self.track_provenance:
            if provenance is None:
                provenance = np.full((tokens,), VIDEO, dtype=np.uint8)
            slot.provenance = np.concatenate([slot.provenance, provenance.astype(np.uint8)])
        slot.next_position = start_position + tokens
        overflow = slot.keys.shape[0] - self.capacity
        if overflow > 0:
            slot.keys = slot.keys[overflow:]
            slot.values = slot.values[overflow:]
            slot.positions = slot.positions[overflow:]
            if slot.provenance is not None:
                slot.provenance = slot.provenance[overflow:]

    def strip(self, lo: int, hi: int) -> None:
        """Remove tokens with claimed position in ``[lo, hi)`` from every layer.

        Retained rows keep their original (now gapped) rotations and position
        labels, while the append counter is pulled back by the removed span:
        the stream continues as if the rows never existed, which is exactly
        the inconsistent state a renumber-without-recompute produces.
        """
        if lo > hi:
            raise ShapeError(f"strip: empty-inverted range [{lo}, {hi})")
        for layer, slot in enumerate(self._layers):
            if lo == hi:
                continue
            if slot.positions.size == 0:
                raise ShapeError(f"strip: layer {layer} cache is empty")
            if lo < slot.positions.min() or hi > slot.next_position:
                raise ShapeError(
                    f"strip: range [{lo}, {hi}) outside cache span "
                    f"[{slot.positions.min()}, {slot.next_position})")
            keep = (slot.positions < lo) | (slot.positions >= hi)
            slot.keys = slot.keys[keep]
            slot.values = slot.values[keep]
            slot.positions = slot.positions[keep]
            if slot.provenance is not None:
                slot.provenance = slot.provenance[keep]
            slot.next_position -= hi - lo

    def provenance_counts(self, layer: int) -> dict[int, int]:
        slot = self._layers[layer]
        if slot.provenance is None:
            raise ConfigError("provenance tracking disabled for this cache")
        return {
            VIDEO: int((slot.provenance == VIDEO).sum()),
            REFERENCE: int((slot.provenance == REFERENCE).sum()),
        }

    def dump(self) -> list[dict]:
        """Per-layer state summary used by tests and the verify suites."""
        out = []
        for slot in self._layers:
            pos_lo = int(slot.positions.min()) if slot.positions.size else None
            pos_hi = int(slot.positions.max()) if slot.positions.size else None
            out.append({
                "tokens": int(slot.keys.shape[0]),
                "position_range": (pos_lo, pos_hi),
                "next_position": slot.next_position,
                "k_crc32": checksum(slot.keys),
                "v_crc32": checksum(slot.values),
            })
        return out


def strip_cache_entries(cache: KVCache, lo: int, hi: int) -> KVCache:
    """Remove the cached rows claiming positions ``[lo, hi)``; see
    :meth:`KVCache.strip` for the (deliberately incorrect) semantics."""
    cache.strip(lo, hi)
    return cache


def _split_heads(x: Tensor, heads: int) -> Tensor:
    tokens, dim = x.shape
    return x.reshape(tokens, heads, dim // heads)


def _merge_heads(x: Tensor) -> Tensor:
    tokens, heads, head_dim = x.shape
    return np.ascontiguousarray(x.reshape(tokens, heads * head_dim))


def _masked_softmax(logits: Tensor, disallowed: np.ndarray) -> Tensor:
    # Same max-subtracted pattern as tensor.softmax_rows, with -inf masking;
    # every query row can attend to itself, so no row is fully masked.
    # Mutates ``logits`` in place (callers own the array).
    np.copyto(logits, FP32(-np.inf), where=disallowed)
    logits -= logits.max(axis=-1, keepdims=True)
    np.exp(logits, out=logits)
    logits /= logits.sum(axis=-1, keepdims=True)
    return logits


def attend_chunk(chunk_tokens: Tensor, cache: KVCache, layer: int,
                 weights: AttentionLayerWeights, heads: int, params: RoPEParams,
                 start_position: int | None = None, *, within_chunk_causal: bool = True,
                 update_cache: bool = True,
                 provenance: np.ndarray | None = None) -> Tensor:
    """Attend chunk queries over cached history plus the chunk itself.

    Query token t sees every cached token and in-chunk tokens <= t (or the
    whole chunk when ``within_chunk_causal`` is off). When ``update_cache``
    is set the chunk's rotated K/V are appended to the cache.
    """
    x = np.asarray(chunk_tokens, dtype=FP32)
    tokens = x.shape[0]
    if start_position is None:
        start_position = cache.next_position(layer)
    elif start_position != cache.next_position(layer):
        raise CacheIntegrityError(
            f"layer {layer}: chunk starts at {start_position}, cache ends at "
            f"{cache.next_position(layer)}")

    q = rope_apply(_split_heads(matmul(x, weights.wq), heads), start_position, params)
    k = rope_apply(_split_heads(matmul(x, weights.wk), heads), start_position, params)
    v = _split_heads(matmul(x, weights.wv), heads)

    cached_k, cached_v = cache.kv(layer)
    k_all = np.concatenate([cached_k, k])
    v_all = np.concatenate([cached_v, v])
    cache_len = cached_k.shape[0]

    # [heads, tokens, total]
    logits = matmul(q.transpose(1, 0, 2), k_all.transpose(1, 2, 0))
    logits *= FP32(1.0 / np.sqrt(params.head_dim))
    total = cache_len + tokens
    disallowed = np.zeros((tokens, total), dtype=bool)
    if within_chunk_causal:
        disallowed[:, cache_len:] = ~np.tril(np.ones((tokens, tokens), dtype=bool))
    attn = _masked_softmax(logits, disallowed[None, :, :])
    ctx = matmul(attn, v_all.transpose(1, 0, 2))  # [heads, tokens, head_dim]
    out = matmul(_merge_heads(ctx.transpose(1, 0, 2)), weights.wo)

    if update_cache:
        cache.append(layer, k, v, start_position, provenance)
    return out


def full_recompute_oracle(all_tokens: Tensor, weights: AttentionLayerWeights,
                          heads: int, params: RoPEParams) -> Tensor:
    """Single-pass lower-triangular attention over the whole sequence."""
    x = np.asarray(all_tokens, dtype=FP32)
    tokens = x.shape[0]
    q = rope_apply(_split_heads(matmul(x, weights.wq), heads), 0, params)
    k = rope_apply(_split_heads(matmul(x, weights.wk), heads), 0, params)
    v = _split_heads(matmul(x, weights.wv), heads)
    logits = matmul(q.transpose(1, 0, 2), k.transpose(1, 2, 0))
    logits *= FP32(1.0 / np.sqrt(params.head_dim))
    disallowed = ~np.tril(np.ones((tokens, tokens), dtype=bool))
    attn = _masked_softmax(logits, disallowed[None, :, :])
    ctx = matmul(attn, v.transpose(1, 0, 2))
    return matmul(_merge_heads(ctx.transpose(1, 0, 2)), weights.wo)
