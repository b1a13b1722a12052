"""Deterministic streaming diffusion engine with a parallel hint pathway.

Chunks of latent frames are denoised causally over per-layer KV caches;
conditioning (control video, masks, reference images) enters through a
separate stack of context blocks whose hints land in the main stack via
zero-initialised projections. A legacy concatenation mode reproduces the
sequence-growth and cache-contamination behaviour the adapted pathway
avoids.
"""

from .attention import (KVCache, REFERENCE, RoPEParams, VIDEO, attend_chunk,
                        full_recompute_oracle, rope_apply, strip_cache_entries)
from .conditioning import (ConditioningInputs, EncoderCachePair, Mode,
                           cache_strategy_for, infer_mode, split_streams)
from .config import BenchConfig, EngineConfig, load_config
from .dit import HintSet, NoiseSchedule, denoise_chunk, inject_hint, linear_schedule
from .adapter import compute_hints, encode_references_once, merge_hints
from .pipeline import (Architecture, ChunkResult, ChunkTrace, GenerationSession,
                       chunk_noise, generate_chunk, open_session, run_session,
                       strip_references)
from .bench import BenchReport, predict_flop_ratio, run_benchmark
from .verify import run_verify

__version__ = "0.1.0"
