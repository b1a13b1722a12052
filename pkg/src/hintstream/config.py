"""Single configuration structure for the whole engine.

One dataclass covers the transformer stack, chunking, the temporal
autoencoder and spatial geometry, so sessions, benchmarks and the CLI all
read from the same place. Defaults are desk-scale: full oracle recomputes
run in milliseconds.
"""

from __future__ import annotations

import configparser
from dataclasses import dataclass, field, fields

from .errors import ConfigError


@dataclass(frozen=True)
class EngineConfig:
    # transformer stack
    num_blocks: int = 8
    model_dim: int = 64
    heads: int = 4
    mlp_ratio: float = 4.0
    injection_map: tuple[int, ...] = (0, 2, 4, 6)
    denoise_steps: int = 4
    rope_base: float = 10000.0
    # chunking
    chunk_frames: int = 12          # pixel frames generated per chunk
    temporal_factor: int = 4        # pixel frames per latent frame (c)
    cache_capacity_chunks: int = 4  # sliding-window history per layer
    # frame geometry
    frame_height: int = 16
    frame_width: int = 16
    frame_channels: int = 3
    grid_height: int = 8            # latent tokens per frame = grid_h * grid_w
    grid_width: int = 8
    # temporal autoencoder
    encoder_kernel_span: int = 3    # causal taps (k); carry = k - 1 frames
    # denoising schedule endpoints (linear in sigma)
    sigma_start: float = 1.0
    sigma_end: float = 0.25
    # weight init
    init_scale: float = 0.02

    @property
    def head_dim(self) -> int:
        return self.model_dim // self.heads

    @property
    def tokens_per_frame(self) -> int:
        return self.grid_height * self.grid_width

    @property
    def latent_frames_per_chunk(self) -> int:
        return self.chunk_frames // self.temporal_factor

    @property
    def chunk_tokens(self) -> int:
        return self.latent_frames_per_chunk * self.tokens_per_frame

    @property
    def cache_capacity_tokens(self) -> int:
        return self.cache_capacity_chunks * self.chunk_tokens

    @property
    def mlp_dim(self) -> int:
        return int(self.model_dim * self.mlp_ratio)

    @property
    def spatial_factor(self) -> int:
        return self.frame_height // self.grid_height

    def validate(self) -> "EngineConfig":
        if min(self.num_blocks, self.model_dim, self.heads, self.chunk_frames,
               self.temporal_factor, self.frame_height, self.frame_width,
               self.frame_channels, self.grid_height, self.grid_width) < 1:
            raise ConfigError("all structural sizes must be >= 1")
        if self.denoise_steps < 1:
            raise ConfigError("denoise_steps must be >= 1")
        if self.model_dim % self.heads != 0:
            raise ConfigError("model_dim must divide evenly into heads")
        if self.head_dim % 2 != 0:
            raise ConfigError("head_dim must be even for rotary embeddings")
        if any(not 0 <= b < self.num_blocks for b in self.injection_map):
            raise ConfigError(f"injection_map {self.injection_map} outside [0, {self.num_blocks})")
        if len(set(self.injection_map)) != len(self.injection_map):
            raise ConfigError("injection_map entries must be unique")
        if self.chunk_frames % self.temporal_factor != 0:
            raise ConfigError("chunk_frames must be divisible by temporal_factor")
        if self.encoder_kernel_span < 1:
            raise ConfigError("encoder_kernel_span must be >= 1")
        if (self.frame_height % self.grid_height or self.frame_width % self.grid_width
                or self.frame_height // self.grid_height != self.frame_width // self.grid_width):
            raise ConfigError("frame size must be a uniform multiple of the latent grid")
        if not self.sigma_start > self.sigma_end >= 0:
            raise ConfigError("need sigma_start > sigma_end >= 0")
        if self.cache_capacity_chunks < 1:
            raise ConfigError("cache_capacity_chunks must be >= 1")
        return self


@dataclass(frozen=True)
class BenchConfig:
    warmup_chunks: int = 3
    measured_chunks: int = 15
    scenarios: tuple[str, ...] = ("baseline", "depth", "inpaint", "extension")
    seed: int = 0
    engine: EngineConfig = field(default_factory=EngineConfig)

    def validate(self) -> "BenchConfig":
        if self.warmup_chunks < 0:
            raise ConfigError("warmup_chunks must be >= 0")
        if self.measured_chunks < 1:
            raise ConfigError("measured_chunks must be >= 1")
        unknown = set(self.scenarios) - {"baseline", "depth", "inpaint", "extension"}
        if unknown:
            raise ConfigError(f"unknown scenarios: {sorted(unknown)}")
        self.engine.validate()
        return self


def _parse_value(raw: str, kind):
    if kind is int:
        return int(raw)
    if kind is float:
        return float(raw)
    # tuple fields hold comma-separated entries
    parts = [p.strip() for p in raw.split(",") if p.strip()]
    return tuple(int(p) if p.lstrip("-").isdigit() else p for p in parts)


def load_config(path) -> BenchConfig:
    """Load ``[model]`` / ``[bench]`` sections from a key-value config file.

    Any field omitted keeps its default; unknown keys are rejected.
    """
    parser = configparser.ConfigParser()
    read = parser.read(path)
    if not read:
        raise ConfigError(f"config file not found: {path}")

    engine_kwargs = {}
    engine_fields = {f.name: str(f.type) for f in fields(EngineConfig)}
    if parser.has_section("model"):
        for key, raw in parser.items("model"):
            if key not in engine_fields:
                raise ConfigError(f"[model] unknown key: {key}")
            hint = engine_fields[key]
            kind = tuple if hint.startswith("tuple") else float if hint == "float" else int
            engine_kwargs[key] = _parse_value(raw, kind)
    engine = EngineConfig(**engine_kwargs)

    bench_kwargs = {}
    if parser.has_section("bench"):
        for key, raw in parser.items("bench"):
            if key in ("warmup_chunks", "measured_chunks", "seed"):
                bench_kwargs[key] = int(raw)
            elif key == "scenarios":
                bench_kwargs[key] = tuple(p.strip() for p in raw.split(",") if p.strip())
            else:
                raise ConfigError(f"[bench] unknown key: {key}")
    return BenchConfig(engine=engine, **bench_kwargs).validate()
