"""Self-check suites: each claim the engine makes, exercised end to end.

Suites run on a small configuration so a full pass takes seconds. The two
fault-injection switches exist to prove the suites can fail: non-zero
adapter projections must break the zero-init claims, and force-enabling
the reactive encoder carry must break the cache-strategy claims.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .attention import (REFERENCE, AttentionLayerWeights, KVCache, RoPEParams,
                        attend_chunk, full_recompute_oracle)
from .conditioning import (CacheStrategy, ConditioningInputs, EncoderCachePair, Mode,
                           infer_mode, init_temporal_encoder,
                           prepare_chunk_conditioning)
from .config import EngineConfig
from .errors import InvalidInputError
from .pipeline import Architecture, run_session
from .tensor import derive_seed, gaussian_init

FAULTS = ("nonzero_proj", "reactive_cache")

# Small geometry keeps every suite comfortably inside a CI budget.
VERIFY_CONFIG = EngineConfig(
    num_blocks=4, model_dim=32, heads=2, injection_map=(0, 2), denoise_steps=2,
    chunk_frames=8, temporal_factor=4, frame_height=8, frame_width=8,
    grid_height=4, grid_width=4)


@dataclass
class ClaimResult:
    claim: str
    passed: bool
    detail: str = ""


def _attention_setup(seed: int, dim: int = 32, heads: int = 2):
    def w(part):
        return gaussian_init((dim, dim), derive_seed(seed, f"verify.attn.{part}"), 0.05)

    weights = AttentionLayerWeights(wq=w("wq"), wk=w("wk"), wv=w("wv"), wo=w("wo"))
    return weights, RoPEParams(dim // heads), heads, dim


def suite_cache_equivalence(fault: str | None) -> list[ClaimResult]:
    """Chunked attention over a sliding history equals a full causal pass."""
    results = []
    for seed in range(3):
        weights, rope, heads, dim = _attention_setup(seed)
        tokens = gaussian_init((24, dim), derive_seed(seed, "verify.tokens"), 1.0)
        expected = full_recompute_oracle(tokens, weights, heads, rope)
        for split in (1, 2, 4, 12):
            cache = KVCache(1, heads, dim // heads, capacity=64)
            outs = [attend_chunk(tokens[i:i + split], cache, 0, weights, heads, rope)
                    for i in range(0, 24, split)]
            diff = float(np.abs(np.concatenate(outs) - expected).max())
            results.append(ClaimResult(
                f"chunked attention (split {split:>2}, seed {seed}) matches full recompute",
                diff <= 1e-5, f"max-abs {diff:.2e}"))
    return results


def suite_zero_init(fault: str | None) -> list[ClaimResult]:
    """Fresh adapter projections leave every generation mode untouched."""
    cfg = VERIFY_CONFIG
    zero = fault != "nonzero_proj"
    results = []
    for seed in (0, 1):
        base_frames, _, _ = run_session(cfg, ConditioningInputs(), Architecture.ADAPTED,
                                        seed, 2)
        video = gaussian_init((2 * cfg.chunk_frames, cfg.frame_height, cfg.frame_width,
                               cfg.frame_channels), derive_seed(seed, "verify.video"), 1.0)
        refs = gaussian_init((2, cfg.frame_height, cfg.frame_width, cfg.frame_channels),
                             derive_seed(seed, "verify.refs"), 1.0)
        for label, inputs in (
                ("structural control", ConditioningInputs(src_video=video)),
                ("reference guidance", ConditioningInputs(src_ref_images=refs))):
            frames, _, _ = run_session(cfg, inputs, Architecture.ADAPTED, seed, 2,
                                       zero_projections=zero)
            same = all(np.array_equal(a, b) for a, b in zip(base_frames, frames))
            results.append(ClaimResult(
                f"zero-init projections: {label} output bit-equals baseline (seed {seed})",
                same))
    return results


def suite_contamination(fault: str | None) -> list[ClaimResult]:
    """Reference rows persist in the legacy cache and never enter the adapted one."""
    cfg = VERIFY_CONFIG
    refs = gaussian_init((2, cfg.frame_height, cfg.frame_width, cfg.frame_channels),
                         derive_seed(0, "verify.refs"), 1.0)
    inputs = ConditioningInputs(src_ref_images=refs)
    results = []

    _, traces, legacy = run_session(cfg, inputs, Architecture.LEGACY, 0, 2,
                                    track_provenance=True)
    counts = legacy.dit_cache.provenance_counts(0)
    expected_rows = 2 * cfg.tokens_per_frame
    results.append(ClaimResult(
        "legacy cache holds one tagged row per concatenated reference token",
        counts[REFERENCE] == expected_rows,
        f"{counts[REFERENCE]} tagged vs {expected_rows} expected"))
    results.append(ClaimResult(
        "legacy first chunk is oversized by the reference rows",
        traces[0].dit_sequence_tokens == cfg.chunk_tokens + expected_rows))

    _, traces, adapted = run_session(cfg, inputs, Architecture.ADAPTED, 0, 2,
                                     track_provenance=True)
    counts = adapted.dit_cache.provenance_counts(0)
    results.append(ClaimResult(
        "adapted cache stays free of reference rows",
        counts[REFERENCE] == 0, f"{counts[REFERENCE]} tagged"))
    results.append(ClaimResult(
        "adapted sequence length ignores the reference count",
        all(t.dit_sequence_tokens == cfg.chunk_tokens for t in traces)))
    return results


def _reactive_latents(cfg: EngineConfig, strategy: CacheStrategy, chunk_a, chunk_b,
                      mask) -> np.ndarray:
    encoder = init_temporal_encoder(7, "verify.encoder", cfg)
    caches = EncoderCachePair(strategy)
    prepare_chunk_conditioning(chunk_a, mask, Mode.MV2V, encoder, caches)
    cond = prepare_chunk_conditioning(chunk_b, mask, Mode.MV2V, encoder, caches)
    return cond[:, cfg.model_dim:]  # reactive half of the channel stack


def suite_cache_strategy(fault: str | None) -> list[ClaimResult]:
    """Per-mode encoder carry policy, exercised through two-chunk runs."""
    cfg = VERIFY_CONFIG
    shape = (cfg.chunk_frames, cfg.frame_height, cfg.frame_width, cfg.frame_channels)
    chunk_a = gaussian_init(shape, derive_seed(1, "verify.str.a"), 1.0)
    chunk_a2 = gaussian_init(shape, derive_seed(2, "verify.str.a2"), 1.0)
    chunk_b = gaussian_init(shape, derive_seed(3, "verify.str.b"), 1.0)
    mask = np.zeros(shape[:3], dtype=np.float32)
    mask[:, :, cfg.frame_width // 2:] = 1.0

    masked_strategy = CacheStrategy(True, fault == "reactive_cache")
    first = _reactive_latents(cfg, masked_strategy, chunk_a, chunk_b, mask)
    second = _reactive_latents(cfg, masked_strategy, chunk_a2, chunk_b, mask)
    results = [ClaimResult(
        "masked generation: reactive encoding ignores the previous chunk",
        np.array_equal(first, second),
        f"max-abs {float(np.abs(first - second).max()):.2e}")]

    live_strategy = CacheStrategy(True, True)
    first = _reactive_latents(cfg, live_strategy, chunk_a, chunk_b, mask)
    second = _reactive_latents(cfg, live_strategy, chunk_a2, chunk_b, mask)
    results.append(ClaimResult(
        "structural control: live reactive carry blends across chunks",
        float(np.abs(first - second).max()) > 0))
    return results


def suite_mode_table(fault: str | None) -> list[ClaimResult]:
    """Implicit mode inference over every input-presence combination."""
    cfg = VERIFY_CONFIG
    shape = (2 * cfg.chunk_frames, cfg.frame_height, cfg.frame_width, cfg.frame_channels)
    video = gaussian_init(shape, derive_seed(5, "verify.modes"), 1.0)
    mask = np.ones(shape[:3], dtype=np.float32)
    ext_mask = mask.copy()
    ext_mask[0] = 0.0
    refs = video[:1]
    cases = [
        (ConditioningInputs(), Mode.T2V_BASELINE),
        (ConditioningInputs(src_video=video), Mode.V2V),
        (ConditioningInputs(src_video=video, src_mask=mask), Mode.MV2V),
        (ConditioningInputs(src_video=video, src_mask=ext_mask), Mode.EXTENSION),
        (ConditioningInputs(src_ref_images=refs), Mode.R2V),
        (ConditioningInputs(src_video=video, src_ref_images=refs), Mode.COMPOSED),
    ]
    results = [ClaimResult(f"inputs map to {want.value}", infer_mode(inputs) == want)
               for inputs, want in cases]
    try:
        infer_mode(ConditioningInputs(src_mask=mask))
        rejected = False
    except InvalidInputError:
        rejected = True
    results.append(ClaimResult("mask without video is rejected", rejected))
    return results


SUITES = {
    "cache_equivalence": suite_cache_equivalence,
    "zero_init": suite_zero_init,
    "contamination": suite_contamination,
    "cache_strategy": suite_cache_strategy,
    "mode_table": suite_mode_table,
}


def run_verify(suite: str | None = None, fault: str | None = None,
               printer=print) -> bool:
    """Run one suite (or all) and print one line per claim; True iff green."""
    if fault is not None and fault not in FAULTS:
        raise InvalidInputError(f"unknown fault flag: {fault} (have {FAULTS})")
    if suite is not None and suite not in SUITES:
        raise InvalidInputError(f"unknown suite: {suite} (have {sorted(SUITES)})")
    names = [suite] if suite else list(SUITES)
    all_ok = True
    for name in names:
        results = SUITES[name](fault)
        for res in results:
            status = "PASS" if res.passed else "FAIL"
            detail = f" [{res.detail}]" if res.detail else ""
            printer(f"[{status}] {name}: {res.claim}{detail}")
        ok = all(r.passed for r in results)
        all_ok &= ok
        printer(f"suite {name}: {'ok' if ok else 'FAILED'}")
    return all_ok
